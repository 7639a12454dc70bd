//! Exact fractional Gaussian noise on a uniform grid.
//!
//! The increments `B^H_{(k+1)γ} − B^H_{kγ}` form a stationary centered Gaussian
//! sequence with autocovariance [`fgn_autocovariance`]. Their covariance matrix is
//! embedded in a symmetric circulant matrix of size `m = 2(n′ − 1)` whose
//! eigenvalues are obtained by FFT; one complex transform of
//! `sqrt(λ_k / m)·(Z_k + i Z′_k)` then yields two independent exact samples (real
//! and imaginary parts).
//!
//! `n′ ≥ n` is chosen so that `m` factors into 2, 3 and 5 only; the first `n`
//! values of an `n′`-sample are an exact `n`-sample.

use std::io::{BufRead, Write};
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{domain, Error, Result};
use crate::stats::{self, CompensatedSum};

/// Default cap on the number of increments per coordinate.
pub const DEFAULT_MAX_INCREMENTS: usize = 20_000_000;

/// Relative floor below which negative circulant eigenvalues are treated as
/// round-off and set to zero.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

/// Autocovariance of fGn with Hurst index `hurst` on a grid of step `step`:
/// `step^{2H}·½(|k+1|^{2H} − 2|k|^{2H} + |k−1|^{2H})`.
pub fn fgn_autocovariance(hurst: f64, step: f64, lag: usize) -> Result<f64> {
    check_hurst(hurst)?;
    check_step(step)?;
    Ok(step.powf(2.0 * hurst) * unit_autocovariance(hurst, lag))
}

fn unit_autocovariance(hurst: f64, lag: usize) -> f64 {
    if lag == 0 {
        return 1.0;
    }
    let h2 = 2.0 * hurst;
    let k = lag as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).powf(h2))
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return domain(format!("hurst must lie in (0,1), got {hurst}"));
    }
    Ok(())
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return domain(format!("step must be positive and finite, got {step}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgnConfig {
    pub hurst: f64,
    /// Grid step, the `γ` of the scheme.
    pub step: f64,
    /// Number of increments.
    pub count: usize,
    pub seed: u64,
}

impl FgnConfig {
    pub fn new(hurst: f64, step: f64, count: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            hurst,
            step,
            count,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_hurst(self.hurst)?;
        check_step(self.step)?;
        if self.count == 0 {
            return domain("count must be at least 1");
        }
        Ok(())
    }
}

/// Increments of a `dimension`-dimensional fBm with independent coordinates.
#[derive(Debug)]
pub struct FgnSequence {
    config: FgnConfig,
    increments: Vec<Vec<f64>>,
    path: OnceLock<Vec<Vec<f64>>>,
}

impl Clone for FgnSequence {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            increments: self.increments.clone(),
            path: OnceLock::new(),
        }
    }
}

impl PartialEq for FgnSequence {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.increments == other.increments
    }
}

impl FgnSequence {
    /// Wraps externally produced increments (one vector per coordinate).
    pub fn from_increments(config: FgnConfig, increments: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        if increments.is_empty() {
            return Err(Error::DimensionMismatch("no coordinates".into()));
        }
        if increments.iter().any(|c| c.len() != config.count) {
            return Err(Error::DimensionMismatch(format!(
                "every coordinate must hold {} increments",
                config.count
            )));
        }
        Ok(Self {
            config,
            increments,
            path: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &FgnConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.increments.len()
    }

    pub fn count(&self) -> usize {
        self.config.count
    }

    pub fn step(&self) -> f64 {
        self.config.step
    }

    pub fn coordinate(&self, j: usize) -> &[f64] {
        &self.increments[j]
    }

    pub fn coordinates(&self) -> &[Vec<f64>] {
        &self.increments
    }

    /// Sampled fBm path (cached), one vector of `count + 1` values per coordinate.
    pub fn path(&self) -> &[Vec<f64>] {
        self.path.get_or_init(|| cumulate(self))
    }

    /// Sums consecutive blocks of `factor` increments, giving the noise of the
    /// same fBm path on the grid of step `factor·step`. Trailing increments that
    /// do not fill a block are dropped.
    pub fn aggregate(&self, factor: usize) -> Result<FgnSequence> {
        if factor == 0 || factor > self.count() {
            return Err(Error::OutOfRange(format!(
                "aggregation factor {factor} for {} increments",
                self.count()
            )));
        }
        let count = self.count() / factor;
        let increments = self
            .increments
            .iter()
            .map(|c| {
                c.chunks_exact(factor)
                    .map(|b| b.iter().sum::<f64>())
                    .collect()
            })
            .collect();
        let config = FgnConfig {
            step: self.config.step * factor as f64,
            count,
            ..self.config
        };
        FgnSequence::from_increments(config, increments)
    }

    /// Increments `start..start + len` of every coordinate.
    pub fn slice(&self, start: usize, len: usize) -> Result<FgnSequence> {
        if len == 0 || start + len > self.count() {
            return Err(Error::OutOfRange(format!(
                "slice {start}..{} of {} increments",
                start + len,
                self.count()
            )));
        }
        let increments = self.increments.iter().map(|c| c[start..start + len].to_vec()).collect();
        FgnSequence::from_increments(FgnConfig { count: len, ..self.config }, increments)
    }

    /// Writes one column per coordinate after the provenance header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let c = &self.config;
        writeln!(
            out,
            "# fgn H={} gamma={} n={} seed={}",
            c.hurst, c.step, c.count, c.seed
        )?;
        for k in 0..c.count {
            let row: Vec<String> = self.increments.iter().map(|v| v[k].to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads back the format produced by [`FgnSequence::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<FgnSequence> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or(Error::EmptySample)?
            .map_err(|e| Error::Domain(e.to_string()))?;
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(key))
                .ok_or_else(|| Error::Domain(format!("header lacks {key}")))
        };
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| Error::Domain(e.to_string()));
        let hurst = parse_f(field("H=")?)?;
        let step = parse_f(field("gamma=")?)?;
        let count: usize = field("n=")?
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::Domain(e.to_string()))?;
        let seed: u64 = field("seed=")?
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::Domain(e.to_string()))?;
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Domain(e.to_string()))?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line.split(',').map(|s| parse_f(s.trim())).collect::<Result<_>>()?;
            if columns.is_empty() {
                columns = vec![Vec::with_capacity(count); row.len()];
            }
            if row.len() != columns.len() {
                return Err(Error::DimensionMismatch("ragged csv row".into()));
            }
            for (c, v) in columns.iter_mut().zip(row) {
                c.push(v);
            }
        }
        FgnSequence::from_increments(FgnConfig::new(hurst, step, count, seed)?, columns)
    }
}

/// Circulant embedding of a stationary covariance sequence.
pub struct CirculantEmbedding {
    /// Number of exact values per sample (`n′`).
    len: usize,
    /// `sqrt(λ_k / m)` for the `m = 2(len − 1)` circulant eigenvalues.
    scaled_root: Vec<f64>,
    min_eigenvalue: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantEmbedding")
            .field("len", &self.len)
            .field("size", &self.size())
            .field("min_eigenvalue", &self.min_eigenvalue)
            .finish()
    }
}

impl CirculantEmbedding {
    /// Embeds the covariance `acf[0..n′]`. Fails with [`Error::Embedding`] if an
    /// eigenvalue is below `−EIGENVALUE_FLOOR·max|λ|`.
    pub fn from_autocovariance(acf: &[f64]) -> Result<Self> {
        let len = acf.len();
        if len < 2 {
            return domain("embedding needs at least two covariance values");
        }
        let size = 2 * (len - 1);
        let mut row: Vec<Complex<f64>> = Vec::with_capacity(size);
        row.extend(acf.iter().map(|&c| Complex::new(c, 0.0)));
        row.extend(acf[1..len - 1].iter().rev().map(|&c| Complex::new(c, 0.0)));

        let fft = FftPlanner::new().plan_fft_forward(size);
        fft.process(&mut row);

        let scale = row.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
        let (index, min_eigenvalue) = row
            .iter()
            .enumerate()
            .map(|(i, z)| (i, z.re))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if min_eigenvalue < -EIGENVALUE_FLOOR * scale {
            return Err(Error::Embedding {
                min_eigenvalue,
                index,
            });
        }
        let m = size as f64;
        let scaled_root = row.iter().map(|z| (z.re.max(0.0) / m).sqrt()).collect();
        Ok(Self {
            len,
            scaled_root,
            min_eigenvalue,
            fft,
        })
    }

    /// Embedding for `count` fGn increments, padded so the circulant size is
    /// 5-smooth.
    pub fn for_fgn(hurst: f64, step: f64, count: usize) -> Result<Self> {
        check_hurst(hurst)?;
        check_step(step)?;
        let len = embedding_len(count);
        let var = step.powf(2.0 * hurst);
        let acf: Vec<f64> = (0..len).map(|k| var * unit_autocovariance(hurst, k)).collect();
        Self::from_autocovariance(&acf)
    }

    /// Number of exact values per sample.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Circulant size `m`.
    pub fn size(&self) -> usize {
        self.scaled_root.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Two independent exact samples of length `count ≤ len`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> (Vec<f64>, Vec<f64>) {
        assert!(count <= self.len, "requested {count} values from a {}-embedding", self.len);
        let mut buf: Vec<Complex<f64>> = self
            .scaled_root
            .iter()
            .map(|&r| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(r * a, r * b)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(count);
        buf.into_iter().map(|z| (z.re, z.im)).unzip()
    }
}

/// Smallest `n′ ≥ count` with `2(n′ − 1)` a product of 2, 3 and 5.
pub fn embedding_len(count: usize) -> usize {
    let target = 2 * count.max(2).saturating_sub(1);
    let mut m = target;
    while !is_5_smooth(m) {
        m += 2;
    }
    m / 2 + 1
}

fn is_5_smooth(mut m: usize) -> bool {
    if m == 0 {
        return false;
    }
    for p in [2, 3, 5] {
        while m % p == 0 {
            m /= p;
        }
    }
    m == 1
}

/// Deterministic per-pair generator: coordinates `2p` and `2p + 1` share the
/// ChaCha stream `p` of the seed.
fn pair_rng(seed: u64, pair: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(pair as u64);
    rng
}

/// Generates `dimension` independent fGn coordinates, capped at
/// [`DEFAULT_MAX_INCREMENTS`] increments.
pub fn generate_fgn(config: FgnConfig, dimension: usize) -> Result<FgnSequence> {
    generate_fgn_capped(config, dimension, DEFAULT_MAX_INCREMENTS)
}

pub fn generate_fgn_capped(
    config: FgnConfig,
    dimension: usize,
    max_increments: usize,
) -> Result<FgnSequence> {
    config.validate()?;
    if dimension == 0 {
        return domain("dimension must be at least 1");
    }
    if config.count > max_increments {
        return Err(Error::Resource {
            what: "fGn increments",
            requested: config.count,
            cap: max_increments,
        });
    }
    let n = config.count;
    let mut increments = Vec::with_capacity(dimension);
    if n == 1 {
        let sd = config.step.powf(config.hurst);
        for pair in 0..dimension.div_ceil(2) {
            let mut rng = pair_rng(config.seed, pair);
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            increments.push(vec![sd * a]);
            increments.push(vec![sd * b]);
        }
    } else {
        let emb = CirculantEmbedding::for_fgn(config.hurst, config.step, n)?;
        for pair in 0..dimension.div_ceil(2) {
            let mut rng = pair_rng(config.seed, pair);
            let (re, im) = emb.sample_pair(&mut rng, n);
            increments.push(re);
            increments.push(im);
        }
    }
    increments.truncate(dimension);
    FgnSequence::from_increments(config, increments)
}

/// Prefix sums of the increments starting at 0, accumulated with Neumaier
/// compensation.
pub fn cumulate(seq: &FgnSequence) -> Vec<Vec<f64>> {
    seq.coordinates()
        .iter()
        .map(|inc| {
            let mut out = Vec::with_capacity(inc.len() + 1);
            out.push(0.0);
            let mut acc = CompensatedSum::new();
            for &x in inc {
                acc.add(x);
                out.push(acc.value());
            }
            out
        })
        .collect()
}

/// Empirical autocovariance `(1/(n−k)) Σ x_i x_{i+k}` of a centered sequence.
pub fn empirical_autocovariance(xs: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|k| {
            if k >= xs.len() {
                return f64::NAN;
            }
            let s: f64 = xs.iter().zip(&xs[k..]).map(|(a, b)| a * b).sum();
            s / (xs.len() - k) as f64
        })
        .collect()
}

/// Per-lag comparison of the seed-averaged empirical autocovariance with
/// [`fgn_autocovariance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcfRow {
    pub lag: usize,
    pub analytic: f64,
    pub empirical: f64,
    /// Standard error of `empirical` across seeds.
    pub std_error: f64,
    pub z_score: f64,
}

/// Empirical autocovariance at lags `0..=max_lag`, averaged over one
/// unit-step sequence per seed, against the analytic covariance.
pub fn acf_check(hurst: f64, count: usize, seeds: &[u64], max_lag: usize) -> Result<Vec<AcfRow>> {
    if seeds.len() < 2 {
        return domain("at least two seeds are needed for a standard error");
    }
    if max_lag >= count {
        return domain(format!("max lag {max_lag} must be below count {count}"));
    }
    let per_seed: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&seed| {
            let seq = generate_fgn(FgnConfig::new(hurst, 1.0, count, seed)?, 1)?;
            Ok(empirical_autocovariance(seq.coordinate(0), max_lag))
        })
        .collect::<Result<_>>()?;
    (0..=max_lag)
        .map(|k| {
            let xs: Vec<f64> = per_seed.iter().map(|a| a[k]).collect();
            let empirical = stats::mean(&xs);
            let std_error = (stats::variance(&xs) / xs.len() as f64).sqrt();
            let analytic = fgn_autocovariance(hurst, 1.0, k)?;
            Ok(AcfRow {
                lag: k,
                analytic,
                empirical,
                std_error,
                z_score: (empirical - analytic) / std_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn autocovariance_examples() {
        assert_eq!(fgn_autocovariance(0.75, 1.0, 0).unwrap(), 1.0);
        assert_eq!(fgn_autocovariance(0.5, 1.0, 3).unwrap(), 0.0);
        let direct = 0.5 * (2f64.powf(1.5) - 2.0);
        assert!((fgn_autocovariance(0.75, 1.0, 1).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.41421).abs() < 1e-5);
    }

    #[test]
    fn autocovariance_rejects_bad_domain() {
        assert!(matches!(fgn_autocovariance(1.0, 1.0, 0), Err(Error::Domain(_))));
        assert!(matches!(fgn_autocovariance(0.0, 1.0, 0), Err(Error::Domain(_))));
        assert!(matches!(fgn_autocovariance(0.7, 0.0, 0), Err(Error::Domain(_))));
        assert!(matches!(fgn_autocovariance(0.7, -1.0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn scaling_law_is_exact_up_to_roundoff() {
        for h in [0.3, 0.5, 0.75, 0.9] {
            for g in [0.01, 0.05, 0.37] {
                for k in 0..25 {
                    let a = fgn_autocovariance(h, g, k).unwrap();
                    let b = g.powf(2.0 * h) * fgn_autocovariance(h, 1.0, k).unwrap();
                    assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn embedding_len_is_smooth_and_large_enough() {
        for n in [2, 3, 7, 100, 1000, 65_536, 1_000_000, 10_000_000] {
            let l = embedding_len(n);
            assert!(l >= n);
            assert!(is_5_smooth(2 * (l - 1)));
        }
        assert_eq!(embedding_len(10_000_000), 10_000_001);
    }

    #[test]
    fn eigenvalues_nonnegative_over_grid() {
        for h in [0.05, 0.3, 0.5, 0.55, 0.75, 0.9, 0.99] {
            for n in [2, 5, 64, 1000, 4097] {
                let e = CirculantEmbedding::for_fgn(h, 1.0, n).unwrap();
                assert!(e.min_eigenvalue() > -EIGENVALUE_FLOOR, "H={h} n={n}");
            }
        }
    }

    #[test]
    fn invalid_covariance_is_a_hard_error() {
        // Not positive definite: |corr| > 1.
        let err = CirculantEmbedding::from_autocovariance(&[1.0, 2.0, 0.0]).unwrap_err();
        match err {
            Error::Embedding { min_eigenvalue, .. } => assert!(min_eigenvalue < 0.0),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn deterministic_given_config() {
        let cfg = FgnConfig::new(0.75, 0.05, 1000, 42).unwrap();
        let a = generate_fgn(cfg, 3).unwrap();
        let b = generate_fgn(cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_fgn(FgnConfig { seed: 43, ..cfg }, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn coordinates_are_distinct_streams() {
        let cfg = FgnConfig::new(0.6, 1.0, 500, 1).unwrap();
        let s = generate_fgn(cfg, 4).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(s.coordinate(i), s.coordinate(j));
            }
        }
        // The first coordinates do not depend on how many are requested.
        let s1 = generate_fgn(cfg, 1).unwrap();
        assert_eq!(s1.coordinate(0), s.coordinate(0));
    }

    #[test]
    fn memory_cap_is_enforced() {
        let cfg = FgnConfig::new(0.75, 1.0, 1001, 0).unwrap();
        let err = generate_fgn_capped(cfg, 1, 1000).unwrap_err();
        assert!(matches!(err, Error::Resource { requested: 1001, cap: 1000, .. }));
    }

    #[test]
    fn single_increment_has_right_scale() {
        let cfg = FgnConfig::new(0.75, 0.01, 1, 5).unwrap();
        let s = generate_fgn(cfg, 2).unwrap();
        assert_eq!(s.count(), 1);
        assert!(s.coordinate(0)[0].is_finite());
    }

    #[test]
    fn cumulate_examples() {
        let cfg = FgnConfig::new(0.75, 1.0, 3, 0).unwrap();
        let s = FgnSequence::from_increments(cfg, vec![vec![1.0, 1.0, 1.0], vec![0.0; 3]]).unwrap();
        let p = cumulate(&s);
        assert_eq!(p[0], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(p[1], vec![0.0; 4]);
    }

    #[test]
    fn white_noise_lag_one_vanishes() {
        let cfg = FgnConfig::new(0.5, 1.0, 1 << 16, 9).unwrap();
        let s = generate_fgn(cfg, 1).unwrap();
        let acf = empirical_autocovariance(s.coordinate(0), 1);
        assert!((acf[0] - 1.0).abs() < 0.03);
        assert!(acf[1].abs() < 4.0 / (cfg.count as f64).sqrt());
    }

    #[test]
    fn increment_variance_matches_step_power() {
        let cfg = FgnConfig::new(0.75, 0.05, 1 << 15, 3).unwrap();
        let s = generate_fgn(cfg, 2).unwrap();
        let target = 0.05f64.powf(1.5);
        for j in 0..2 {
            let v = empirical_autocovariance(s.coordinate(j), 0)[0];
            assert!((v / target - 1.0).abs() < 0.05, "{v} vs {target}");
        }
    }

    #[test]
    fn aggregate_sums_blocks() {
        let cfg = FgnConfig::new(0.7, 0.5, 5, 0).unwrap();
        let s = FgnSequence::from_increments(cfg, vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let a = s.aggregate(2).unwrap();
        assert_eq!(a.coordinate(0), &[3.0, 7.0]);
        assert_eq!(a.step(), 1.0);
        assert!(s.aggregate(0).is_err());
        assert!(s.aggregate(6).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = FgnConfig::new(0.8, 0.125, 50, 11).unwrap();
        let s = generate_fgn(cfg, 2).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# fgn H=0.8 gamma=0.125 n=50 seed=11\n"));
        let back = FgnSequence::read_csv(&buf[..]).unwrap();
        assert_eq!(back, s);
    }
}
