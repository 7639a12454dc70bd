//! Continuous-time Euler scheme
//!
//! `X̄_t = X̄_{kγ} + (t − kγ) b(X̄_{kγ}) + σ(X̄_{kγ}) (B_t − B_{kγ})` for
//! `t ∈ [kγ, (k+1)γ)`.
//!
//! The driving noise is an [`FgnSequence`] of step `γ/m`; the grid recursion
//! uses the sum of each block of `m` fine increments, and the finer path is kept
//! for evaluating the interpolation between grid times.

use std::io::Write;
use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::fgn::{generate_fgn, FgnConfig, FgnSequence};
use crate::model::CoefficientModel;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct EulerConfig {
    pub gamma: f64,
    pub steps: usize,
    pub initial_state: Vec<f64>,
    /// Noise is supplied at step `gamma / fine_refinement`.
    pub fine_refinement: usize,
    /// Keep every `thinning`-th grid state.
    pub thinning: usize,
}

impl EulerConfig {
    pub fn new(gamma: f64, steps: usize, initial_state: Vec<f64>) -> Self {
        Self {
            gamma,
            steps,
            initial_state,
            fine_refinement: 1,
            thinning: 1,
        }
    }

    pub fn with_refinement(mut self, m: usize) -> Self {
        self.fine_refinement = m;
        self
    }

    pub fn with_thinning(mut self, stride: usize) -> Self {
        self.thinning = stride;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.gamma * self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return domain(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.steps == 0 {
            return domain("steps must be at least 1");
        }
        if self.fine_refinement == 0 || self.thinning == 0 {
            return domain("refinement and thinning must be at least 1");
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return domain("initial state must be finite");
        }
        Ok(())
    }
}

/// Euler path on the `γ`-grid together with its driving noise.
#[derive(Debug, Clone)]
pub struct Trajectory {
    gamma: f64,
    steps: usize,
    dim: usize,
    stride: usize,
    refinement: usize,
    /// Row-major `(steps / stride + 1) × dim`.
    states: Vec<f64>,
    model: CoefficientModel,
    noise: Arc<FgnSequence>,
}

fn close_to_integer(r: f64) -> Option<usize> {
    let k = r.round();
    ((r - k).abs() <= 1e-9 * r.abs().max(1.0) && k >= 0.0).then_some(k as usize)
}

/// Integer ratio `a / b`, or a grid error.
pub(crate) fn integer_ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    close_to_integer(a / b)
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::Grid(format!("{what}: {a} is not a positive multiple of {b}")))
}

/// Runs the scheme. The grid recursion is evaluated as
/// `(x + γ·b(x)) + σ(x)·ΔB`.
pub fn run_euler(model: &CoefficientModel, config: &EulerConfig, noise: Arc<FgnSequence>) -> Result<Trajectory> {
    config.validate()?;
    let d = model.dim_state();
    let q = model.dim_noise();
    if config.initial_state.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} coordinates, model state dimension is {d}",
            config.initial_state.len()
        )));
    }
    if noise.dimension() != q {
        return Err(Error::DimensionMismatch(format!(
            "noise has {} coordinates, model noise dimension is {q}",
            noise.dimension()
        )));
    }
    let m = config.fine_refinement;
    let fine_step = config.gamma / m as f64;
    if (noise.step() - fine_step).abs() > 1e-12 * fine_step {
        return Err(Error::Grid(format!(
            "noise step {} differs from gamma/m = {fine_step}",
            noise.step()
        )));
    }
    let needed = config.steps * m;
    if noise.count() < needed {
        return Err(Error::NoiseShortfall {
            needed,
            available: noise.count(),
        });
    }

    let gamma = config.gamma;
    let stride = config.thinning;
    let mut states = Vec::with_capacity((config.steps / stride + 1) * d);
    states.extend_from_slice(&config.initial_state);
    let mut x = config.initial_state.clone();

    if d == 1 && q == 1 {
        let inc = noise.coordinate(0);
        let mut b = [0.0];
        let mut s = [0.0];
        let mut xs = x[0];
        for k in 0..config.steps {
            let db = if m == 1 { inc[k] } else { inc[k * m..(k + 1) * m].iter().sum() };
            model.drift_into(&[xs], &mut b);
            model.diffusion_into(&[xs], &mut s);
            xs = (xs + gamma * b[0]) + s[0] * db;
            if !xs.is_finite() {
                return Err(Error::NonFinite { step: k + 1 });
            }
            if (k + 1) % stride == 0 {
                states.push(xs);
            }
        }
    } else {
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * q];
        let mut db = vec![0.0; q];
        for k in 0..config.steps {
            for (j, dbj) in db.iter_mut().enumerate() {
                let c = noise.coordinate(j);
                *dbj = if m == 1 { c[k] } else { c[k * m..(k + 1) * m].iter().sum() };
            }
            model.drift_into(&x, &mut b);
            model.diffusion_into(&x, &mut s);
            for i in 0..d {
                let noise_term: f64 = (0..q).map(|j| s[i * q + j] * db[j]).sum();
                x[i] = (x[i] + gamma * b[i]) + noise_term;
                if !x[i].is_finite() {
                    return Err(Error::NonFinite { step: k + 1 });
                }
            }
            if (k + 1) % stride == 0 {
                states.extend_from_slice(&x);
            }
        }
    }

    Ok(Trajectory {
        gamma,
        steps: config.steps,
        dim: d,
        stride,
        refinement: m,
        states,
        model: model.clone(),
        noise,
    })
}

/// Generates noise for `config` (step `γ/m`, `q` coordinates) and runs the scheme.
pub fn simulate(model: &CoefficientModel, config: &EulerConfig, hurst: f64, seed: u64) -> Result<Trajectory> {
    config.validate()?;
    let fgn = FgnConfig::new(
        hurst,
        config.gamma / config.fine_refinement as f64,
        config.steps * config.fine_refinement,
        seed,
    )?;
    let noise = generate_fgn(fgn, model.dim_noise())?;
    run_euler(model, config, Arc::new(noise))
}

/// The scheme at the finer step `fine_step` on the same noise path, used as a
/// stand-in for the exact solution in discretization studies.
pub fn reference_solution(
    model: &CoefficientModel,
    x0: &[f64],
    horizon: f64,
    fine_step: f64,
    noise: Arc<FgnSequence>,
) -> Result<Trajectory> {
    let m = integer_ratio(fine_step, noise.step(), "reference step vs noise step")?;
    let steps = integer_ratio(horizon, fine_step, "horizon vs reference step")?;
    let config = EulerConfig::new(fine_step, steps, x0.to_vec()).with_refinement(m);
    run_euler(model, &config, noise)
}

impl Trajectory {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn horizon(&self) -> f64 {
        self.gamma * self.steps as f64
    }

    pub fn model(&self) -> &CoefficientModel {
        &self.model
    }

    pub fn model_name(&self) -> &str {
        self.model.name()
    }

    pub fn noise(&self) -> &Arc<FgnSequence> {
        &self.noise
    }

    /// Number of stored states.
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Flattened stored states.
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// `i`-th stored state (grid index `i·stride`).
    pub fn stored(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// State at grid time `kγ`; `None` if out of range or thinned away.
    pub fn grid_value(&self, k: usize) -> Option<&[f64]> {
        (k <= self.steps && k % self.stride == 0).then(|| self.stored(k / self.stride))
    }

    /// Time of the `i`-th stored state.
    pub fn stored_time(&self, i: usize) -> f64 {
        (i * self.stride) as f64 * self.gamma
    }

    /// Value of the interpolated scheme at time `t`. Exact at fine-grid times;
    /// between fine-grid points `B_t` is linearly interpolated.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0 && t <= self.horizon() * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange(format!("t = {t} outside [0, {}]", self.horizon())));
        }
        if self.stride != 1 {
            return Err(Error::OutOfRange("interpolation needs an unthinned trajectory".into()));
        }
        let r = t / self.gamma;
        if let Some(k) = close_to_integer(r) {
            if k <= self.steps {
                return Ok(self.stored(k).to_vec());
            }
        }
        let k = (r.floor() as usize).min(self.steps - 1);
        let x = self.stored(k);
        let m = self.refinement;
        let fine = self.gamma / m as f64;
        let u = t / fine;
        let path = self.noise.path();
        let base = k * m;
        let q = self.model.dim_noise();
        let db: Vec<f64> = (0..q)
            .map(|j| {
                let p = &path[j];
                let bt = match close_to_integer(u) {
                    Some(i) => p[i],
                    None => {
                        let i = u.floor() as usize;
                        let w = u - i as f64;
                        p[i] + w * (p[i + 1] - p[i])
                    }
                };
                bt - p[base]
            })
            .collect();
        let b = self.model.drift(x);
        let s = self.model.diffusion(x);
        let dt = t - k as f64 * self.gamma;
        Ok((0..self.dim)
            .map(|i| {
                let noise_term: f64 = (0..q).map(|j| s[i * q + j] * db[j]).sum();
                (x[i] + dt * b[i]) + noise_term
            })
            .collect())
    }

    /// Stored states at the multiples of `coarse_gamma`.
    pub fn restrict(&self, coarse_gamma: f64) -> Result<Vec<Vec<f64>>> {
        let f = integer_ratio(coarse_gamma, self.gamma * self.stride as f64, "restriction")?;
        Ok((0..self.len()).step_by(f).map(|i| self.stored(i).to_vec()).collect())
    }

    /// Writes `t,x_1..x_d` rows of every `stride`-th stored state.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &str, stride: usize) -> std::io::Result<()> {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        let cols: Vec<String> = (1..=self.dim).map(|i| format!("x_{i}")).collect();
        writeln!(out, "t,{}", cols.join(","))?;
        for i in (0..self.len()).step_by(stride.max(1)) {
            write!(out, "{}", self.stored_time(i))?;
            for v in self.stored(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `max_k |coarse(kγ_c) − fine(kγ_c)|` over the shared grid of `coarse`.
pub fn grid_sup_distance(coarse: &Trajectory, fine: &Trajectory) -> Result<f64> {
    let fine_states = fine.restrict(coarse.gamma() * coarse.stride() as f64)?;
    let n = coarse.len().min(fine_states.len());
    Ok((0..n)
        .map(|i| {
            coarse
                .stored(i)
                .iter()
                .zip(&fine_states[i])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max))
}

/// Sup-errors of step-`γ` runs against step-`γ/ratio` runs on a shared noise
/// path, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationLadder {
    pub gammas: Vec<f64>,
    /// Seed-averaged sup-error per `γ`.
    pub mean_errors: Vec<f64>,
    /// Log-log slope of `mean_errors` against `gammas`.
    pub slope: f64,
}

/// For each seed, noise is generated once at step `min(γ)/ratio` on
/// `[0, horizon]` and aggregated for every coarser run.
pub fn discretization_ladder(
    model: &CoefficientModel,
    x0: &[f64],
    hurst: f64,
    gammas: &[f64],
    ratio: usize,
    horizon: f64,
    seeds: &[u64],
) -> Result<DiscretizationLadder> {
    if gammas.len() < 2 || seeds.is_empty() || ratio < 2 {
        return domain("ladder needs at least two gammas, one seed and ratio >= 2");
    }
    let finest = gammas.iter().copied().fold(f64::INFINITY, f64::min) / ratio as f64;
    let count = integer_ratio(horizon, finest, "ladder horizon")?;
    let mut sums = vec![0.0; gammas.len()];
    for &seed in seeds {
        let noise = Arc::new(generate_fgn(FgnConfig::new(hurst, finest, count, seed)?, model.dim_noise())?);
        for (g, sum) in gammas.iter().zip(sums.iter_mut()) {
            let coarse_steps = integer_ratio(horizon, *g, "ladder gamma")?;
            let m = integer_ratio(*g, finest, "ladder gamma vs noise")?;
            let coarse = run_euler(
                model,
                &EulerConfig::new(*g, coarse_steps, x0.to_vec()).with_refinement(m),
                noise.clone(),
            )?;
            let fine = reference_solution(model, x0, horizon, g / ratio as f64, noise.clone())?;
            *sum += grid_sup_distance(&coarse, &fine)?;
        }
    }
    let mean_errors: Vec<f64> = sums.iter().map(|s| s / seeds.len() as f64).collect();
    let slope = stats::loglog_slope(gammas, &mean_errors);
    Ok(DiscretizationLadder {
        gammas: gammas.to_vec(),
        mean_errors,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_toy_model;

    fn scalar(b: impl Fn(f64) -> f64 + Send + Sync + 'static, s: impl Fn(f64) -> f64 + Send + Sync + 'static) -> CoefficientModel {
        CoefficientModel::scalar("t", b, s, 10.0, 0.0).unwrap()
    }

    fn noise(h: f64, step: f64, n: usize, seed: u64) -> Arc<FgnSequence> {
        Arc::new(generate_fgn(FgnConfig::new(h, step, n, seed).unwrap(), 1).unwrap())
    }

    #[test]
    fn frozen_model_is_constant() {
        let m = scalar(|_| 0.0, |_| 0.0);
        let t = run_euler(&m, &EulerConfig::new(0.1, 50, vec![7.0]), noise(0.7, 0.1, 50, 1)).unwrap();
        assert!(t.states().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn deterministic_decay_is_geometric() {
        let m = scalar(|x| -x, |_| 0.0);
        let t = run_euler(&m, &EulerConfig::new(0.1, 40, vec![1.0]), noise(0.7, 0.1, 40, 1)).unwrap();
        for k in 0..=40 {
            let want = 0.9f64.powi(k as i32);
            assert!((t.grid_value(k).unwrap()[0] - want).abs() <= 1e-14 * want.max(1e-300) * 10.0);
        }
    }

    #[test]
    fn pure_noise_reproduces_fbm() {
        let m = scalar(|_| 0.0, |_| 1.0);
        let n = noise(0.75, 0.05, 500, 3);
        let t = run_euler(&m, &EulerConfig::new(0.05, 500, vec![0.0]), n.clone()).unwrap();
        let path = &n.path()[0];
        for k in 0..=500 {
            assert!((t.grid_value(k).unwrap()[0] - path[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_recursion_is_bit_exact() {
        let (m, _) = builtin_toy_model();
        let n = noise(0.75, 0.025, 400, 5);
        let cfg = EulerConfig::new(0.05, 200, vec![0.3]).with_refinement(2);
        let t = run_euler(&m, &cfg, n.clone()).unwrap();
        let inc = n.coordinate(0);
        for k in 0..200 {
            let x = t.grid_value(k).unwrap()[0];
            let db: f64 = inc[2 * k..2 * k + 2].iter().sum();
            let next = (x + 0.05 * (-x)) + (4.0 + x.cos()) * db;
            assert_eq!(next.to_bits(), t.grid_value(k + 1).unwrap()[0].to_bits());
        }
    }

    #[test]
    fn flow_property_on_grid() {
        let (m, _) = builtin_toy_model();
        let n = noise(0.75, 0.05, 300, 8);
        let full = run_euler(&m, &EulerConfig::new(0.05, 300, vec![1.0]), n.clone()).unwrap();
        let first = run_euler(&m, &EulerConfig::new(0.05, 120, vec![1.0]), Arc::new(n.slice(0, 120).unwrap())).unwrap();
        let mid = first.grid_value(120).unwrap().to_vec();
        let second = run_euler(&m, &EulerConfig::new(0.05, 180, mid), Arc::new(n.slice(120, 180).unwrap())).unwrap();
        for k in 0..=180 {
            assert_eq!(second.grid_value(k), full.grid_value(120 + k));
        }
    }

    #[test]
    fn errors_are_reported() {
        let (m, _) = builtin_toy_model();
        let n = noise(0.75, 0.05, 10, 1);
        let e = run_euler(&m, &EulerConfig::new(0.05, 11, vec![0.0]), n.clone()).unwrap_err();
        assert_eq!(e, Error::NoiseShortfall { needed: 11, available: 10 });
        let e = run_euler(&m, &EulerConfig::new(0.05, 5, vec![0.0, 1.0]), n.clone()).unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch(_)));
        let e = run_euler(&m, &EulerConfig::new(0.1, 5, vec![0.0]), n.clone()).unwrap_err();
        assert!(matches!(e, Error::Grid(_)));
        let two = Arc::new(generate_fgn(FgnConfig::new(0.75, 0.05, 10, 1).unwrap(), 2).unwrap());
        assert!(matches!(
            run_euler(&m, &EulerConfig::new(0.05, 5, vec![0.0]), two).unwrap_err(),
            Error::DimensionMismatch(_)
        ));
        let blow = scalar(|x| x * x * x, |_| 1.0);
        let e = run_euler(&blow, &EulerConfig::new(0.05, 10, vec![100.0]), n).unwrap_err();
        assert!(matches!(e, Error::NonFinite { step } if step >= 1));
    }

    #[test]
    fn value_at_grid_and_midpoints() {
        let (m, _) = builtin_toy_model();
        let n = noise(0.75, 0.025, 200, 2);
        let t = run_euler(&m, &EulerConfig::new(0.05, 100, vec![0.5]).with_refinement(2), n.clone()).unwrap();
        for k in [0usize, 1, 17, 100] {
            let tk = k as f64 * 0.05;
            assert_eq!(t.value_at(tk).unwrap(), t.grid_value(k).unwrap());
        }
        let p = &n.path()[0];
        for k in [0usize, 3, 50, 99] {
            let x = t.grid_value(k).unwrap()[0];
            let want = x + 0.025 * (-x) + (4.0 + x.cos()) * (p[2 * k + 1] - p[2 * k]);
            let got = t.value_at(k as f64 * 0.05 + 0.025).unwrap()[0];
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!(t.value_at(-0.1).is_err());
        assert!(t.value_at(5.1).is_err());
    }

    #[test]
    fn value_at_pure_noise_is_fbm_on_fine_grid() {
        let m = scalar(|_| 0.0, |_| 1.0);
        let n = noise(0.75, 0.01, 400, 9);
        let t = run_euler(&m, &EulerConfig::new(0.04, 100, vec![0.0]).with_refinement(4), n.clone()).unwrap();
        let p = &n.path()[0];
        for i in [1usize, 2, 3, 5, 201, 399] {
            assert!((t.value_at(i as f64 * 0.01).unwrap()[0] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_solution_is_exact_for_additive_noise() {
        let m = scalar(|_| 0.0, |_| 2.0);
        let n = noise(0.7, 0.01, 400, 4);
        let fine = reference_solution(&m, &[1.0], 4.0, 0.01, n.clone()).unwrap();
        let coarse = run_euler(&m, &EulerConfig::new(0.08, 50, vec![1.0]).with_refinement(8), n).unwrap();
        assert!(grid_sup_distance(&coarse, &fine).unwrap() < 1e-12);
    }

    #[test]
    fn deterministic_euler_error_is_first_order() {
        let m = scalar(|x| -x, |_| 0.0);
        let n = noise(0.7, 1.0 / 1024.0, 1024, 1);
        let fine = reference_solution(&m, &[1.0], 1.0, 1.0 / 1024.0, n.clone()).unwrap();
        let mut errs = Vec::new();
        let gammas = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
        for g in gammas {
            let steps = (1.0 / g) as usize;
            let c = run_euler(&m, &EulerConfig::new(g, steps, vec![1.0]).with_refinement(1024 / steps), n.clone()).unwrap();
            errs.push(grid_sup_distance(&c, &fine).unwrap());
        }
        let slope = stats::loglog_slope(&gammas, &errs);
        assert!((slope - 1.0).abs() < 0.15, "slope {slope}");
    }

    #[test]
    fn toy_sup_error_shrinks_along_ladder() {
        let (m, _) = builtin_toy_model();
        let gammas = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let seeds: Vec<u64> = (0..8).collect();
        let l = discretization_ladder(&m, &[0.0], 0.75, &gammas, 16, 1.0, &seeds).unwrap();
        for w in l.mean_errors.windows(2) {
            assert!(w[1] < w[0], "{:?}", l.mean_errors);
        }
    }

    #[test]
    fn thinning_keeps_every_stride() {
        let (m, _) = builtin_toy_model();
        let n = noise(0.75, 0.05, 100, 1);
        let full = run_euler(&m, &EulerConfig::new(0.05, 100, vec![0.0]), n.clone()).unwrap();
        let thin = run_euler(&m, &EulerConfig::new(0.05, 100, vec![0.0]).with_thinning(10), n).unwrap();
        assert_eq!(thin.len(), 11);
        for i in 0..11 {
            assert_eq!(thin.stored(i), full.grid_value(10 * i).unwrap());
            assert_eq!(thin.grid_value(10 * i), full.grid_value(10 * i));
        }
        assert!(thin.grid_value(5).is_none());
        assert!(thin.value_at(0.01).is_err());
    }

    #[test]
    fn csv_export_layout() {
        let m = scalar(|x| -x, |_| 0.0);
        let t = run_euler(&m, &EulerConfig::new(0.5, 4, vec![1.0]), noise(0.7, 0.5, 4, 1)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, "trajectory model=t", 2).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "# trajectory model=t\nt,x_1\n0,1\n1,0.25\n2,0.0625\n");
    }
}
