//! Regularity functionals of sampled paths: Hölder seminorm and modulus,
//! p-variation, the squared-increment sum `Q_γ` and left-point Young sums.
//!
//! A path is known only at its samples; every functional is a supremum or a sum
//! over sample points, with `0/0 = 0` when fewer than two samples are involved.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{domain, Error, Result};

/// Sample times of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Times<'a> {
    Uniform { start: f64, step: f64 },
    Explicit(&'a [f64]),
}

/// Borrowed path: `len` samples of dimension `dim`, values row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathView<'a> {
    times: Times<'a>,
    values: &'a [f64],
    dim: usize,
}

impl<'a> PathView<'a> {
    pub fn uniform(start: f64, step: f64, values: &'a [f64], dim: usize) -> Result<Self> {
        if !(step > 0.0) || dim == 0 || values.len() % dim != 0 {
            return domain("uniform path needs step > 0 and values a multiple of dim");
        }
        Ok(Self {
            times: Times::Uniform { start, step },
            values,
            dim,
        })
    }

    pub fn explicit(times: &'a [f64], values: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || values.len() != times.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} times and {} values for dimension {dim}",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("times must be strictly increasing");
        }
        Ok(Self {
            times: Times::Explicit(times),
            values,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        match self.times {
            Times::Uniform { start, step } => start + i as f64 * step,
            Times::Explicit(t) => t[i],
        }
    }

    #[inline]
    pub fn value(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn uniform_step(&self) -> Option<f64> {
        match self.times {
            Times::Uniform { step, .. } => Some(step),
            Times::Explicit(_) => None,
        }
    }

    fn tolerance(&self) -> f64 {
        let span = if self.len() > 1 {
            self.time(self.len() - 1) - self.time(0)
        } else {
            1.0
        };
        1e-9 * span.abs().max(1e-300) / self.len().max(1) as f64
    }

    /// Index range `lo..=hi` of the samples in `[s, t]`.
    fn index_range(&self, s: f64, t: f64) -> Result<(usize, usize)> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let tol = self.tolerance();
        let (first, last) = (self.time(0), self.time(n - 1));
        if !(s <= t) || s < first - tol || t > last + tol {
            return Err(Error::OutOfRange(format!(
                "interval [{s}, {t}] outside path range [{first}, {last}]"
            )));
        }
        let lo = self.partition_point(|x| x < s - tol);
        let hi = self.partition_point(|x| x <= t + tol);
        Ok((lo, hi.saturating_sub(1).max(lo)))
    }

    fn partition_point(&self, pred: impl Fn(f64) -> bool) -> usize {
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if pred(self.time(mid)) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Value at a sample time, or a grid error if `t` is not a sample time.
    pub fn value_at_sample(&self, t: f64) -> Result<&'a [f64]> {
        let tol = self.tolerance().max(1e-12 * t.abs());
        let i = match self.times {
            Times::Uniform { start, step } => ((t - start) / step).round().max(0.0) as usize,
            Times::Explicit(_) => self.partition_point(|x| x < t - tol),
        };
        if i < self.len() && (self.time(i) - t).abs() <= tol {
            Ok(self.value(i))
        } else {
            Err(Error::Grid(format!("no sample at t = {t}")))
        }
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.value(i), self.value(j));
        if self.dim == 1 {
            return (a[0] - b[0]).abs();
        }
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

/// Owned sampled path.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    times: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
    uniform_step: Option<f64>,
}

impl SampledPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        PathView::explicit(&times, &values, dim)?;
        let uniform_step = detect_uniform(&times);
        Ok(Self {
            times,
            values,
            dim,
            uniform_step,
        })
    }

    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(times, values, 1)
    }

    pub fn uniform(start: f64, step: f64, values: Vec<f64>, dim: usize) -> Result<Self> {
        PathView::uniform(start, step, &values, dim)?;
        let times = (0..values.len() / dim).map(|i| start + i as f64 * step).collect();
        Ok(Self {
            times,
            values,
            dim,
            uniform_step: Some(step),
        })
    }

    /// `f` sampled at `n + 1` uniform points of `[a, b]`.
    pub fn from_fn(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let step = (b - a) / n as f64;
        let values = (0..=n).map(|i| f(a + i as f64 * step)).collect();
        Self::uniform(a, step, values, 1).expect("valid grid")
    }

    pub fn uniform_step(&self) -> Option<f64> {
        self.uniform_step
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn view(&self) -> PathView<'_> {
        match self.uniform_step {
            Some(step) => PathView::uniform(self.times[0], step, &self.values, self.dim).expect("validated"),
            None => PathView::explicit(&self.times, &self.values, self.dim).expect("validated"),
        }
    }
}

fn detect_uniform(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let step = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let tol = 1e-12 * (times[0].abs() + times[times.len() - 1].abs()).max(step);
    times
        .iter()
        .enumerate()
        .all(|(i, t)| (t - (times[0] + i as f64 * step)).abs() <= tol)
        .then_some(step)
}

impl<'a> From<&'a SampledPath> for PathView<'a> {
    fn from(p: &'a SampledPath) -> Self {
        p.view()
    }
}

/// Result of a Hölder seminorm or modulus computation.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderReport {
    pub theta: f64,
    pub interval: (f64, f64),
    /// Largest sampled ratio found.
    pub seminorm: f64,
    /// Times `(u, v)` attaining `seminorm`; `None` when no pair exists.
    pub argmax_pair: Option<(f64, f64)>,
    /// Certified upper bound on the sampled supremum (equals `seminorm` in
    /// exact mode).
    pub upper_bound: f64,
    pub exact: bool,
}

/// How the sampled supremum is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HolderMode {
    /// Exact up to [`EXACT_PAIR_LIMIT`] samples, hierarchical beyond.
    Auto,
    /// All index pairs.
    Exact,
    /// Branch-and-bound over blocks; stops once the remaining bound is within
    /// relative tolerance `rel_tol` of the best pair found.
    Hierarchical { rel_tol: f64 },
}

/// Sample count up to which [`HolderMode::Auto`] enumerates all pairs.
pub const EXACT_PAIR_LIMIT: usize = 10_000;
const AUTO_REL_TOL: f64 = 1e-9;

/// `sup_{s ≤ u < v ≤ t} |f(v) − f(u)| / (v − u)^θ` over sample pairs.
pub fn holder_seminorm<'a>(path: impl Into<PathView<'a>>, theta: f64, s: f64, t: f64) -> Result<HolderReport> {
    holder_sup(path.into(), theta, s, t, f64::INFINITY, HolderMode::Auto)
}

pub fn holder_seminorm_with<'a>(
    path: impl Into<PathView<'a>>,
    theta: f64,
    s: f64,
    t: f64,
    mode: HolderMode,
) -> Result<HolderReport> {
    holder_sup(path.into(), theta, s, t, f64::INFINITY, mode)
}

/// Modulus `ω_{θ,T}(f, δ)`: the sup over sample pairs in `[t_0, T]` with
/// `0 < v − u ≤ δ`.
pub fn holder_modulus<'a>(path: impl Into<PathView<'a>>, theta: f64, horizon: f64, delta: f64) -> Result<f64> {
    let p = path.into();
    if !(delta > 0.0) {
        return domain(format!("delta must be positive, got {delta}"));
    }
    if p.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(holder_sup(p, theta, p.time(0), horizon, delta, HolderMode::Auto)?.seminorm)
}

pub fn holder_modulus_report<'a>(
    path: impl Into<PathView<'a>>,
    theta: f64,
    s: f64,
    t: f64,
    delta: f64,
    mode: HolderMode,
) -> Result<HolderReport> {
    if !(delta > 0.0) {
        return domain(format!("delta must be positive, got {delta}"));
    }
    holder_sup(path.into(), theta, s, t, delta, mode)
}

fn holder_sup(p: PathView<'_>, theta: f64, s: f64, t: f64, delta: f64, mode: HolderMode) -> Result<HolderReport> {
    if !(theta > 0.0 && theta < 1.0) {
        return domain(format!("theta must lie in (0,1), got {theta}"));
    }
    let (lo, hi) = p.index_range(s, t)?;
    let n = hi + 1 - lo;
    let exact = match mode {
        HolderMode::Exact => true,
        HolderMode::Auto => n <= EXACT_PAIR_LIMIT,
        HolderMode::Hierarchical { .. } => false,
    };
    let rel_tol = match mode {
        HolderMode::Hierarchical { rel_tol } => rel_tol.max(0.0),
        _ => AUTO_REL_TOL,
    };
    let mut best = Best::default();
    if n >= 2 {
        if exact {
            exact_pairs(&p, theta, delta, lo..hi + 1, lo..hi + 1, &mut best);
        } else {
            let upper = BlockSearch::new(&p, theta, delta, lo, hi + 1).run(&mut best, rel_tol);
            return Ok(best.report(&p, theta, (s, t), upper, false));
        }
    }
    let value = best.value;
    Ok(best.report(&p, theta, (s, t), value, true))
}

#[derive(Debug, Default)]
struct Best {
    value: f64,
    pair: Option<(usize, usize)>,
}

impl Best {
    fn offer(&mut self, v: f64, i: usize, j: usize) {
        if v > self.value || (self.pair.is_none() && v >= self.value) {
            self.value = v;
            self.pair = Some((i, j));
        }
    }

    fn report(self, p: &PathView<'_>, theta: f64, interval: (f64, f64), upper: f64, exact: bool) -> HolderReport {
        HolderReport {
            theta,
            interval,
            seminorm: self.value,
            argmax_pair: self.pair.map(|(i, j)| (p.time(i), p.time(j))),
            upper_bound: upper.max(self.value),
            exact,
        }
    }
}

/// All pairs `u ∈ a`, `v ∈ b`, `u < v`, `t_v − t_u ≤ delta`.
fn exact_pairs(
    p: &PathView<'_>,
    theta: f64,
    delta: f64,
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
    best: &mut Best,
) {
    for i in a {
        let ti = p.time(i);
        for j in b.start.max(i + 1)..b.end {
            let gap = p.time(j) - ti;
            if gap > delta {
                break;
            }
            best.offer(p.dist(i, j) / gap.powf(theta), i, j);
        }
    }
}

const LEAF: usize = 32;

struct Node {
    start: usize,
    end: usize,
    min: Vec<f64>,
    max: Vec<f64>,
    min_spacing: f64,
    children: Option<(usize, usize)>,
}

#[derive(Debug, PartialEq)]
struct Candidate {
    bound: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound)
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Branch-and-bound over pairs of dyadic index blocks. For disjoint blocks
/// `I < J` the ratio is bounded by the coordinate-wise value spread across the
/// blocks over `gap^θ`; for a block paired with itself by its value range over
/// its smallest sample spacing to the power `θ`.
struct BlockSearch<'p, 'a> {
    p: &'p PathView<'a>,
    theta: f64,
    delta: f64,
    nodes: Vec<Node>,
}

impl<'p, 'a> BlockSearch<'p, 'a> {
    fn new(p: &'p PathView<'a>, theta: f64, delta: f64, start: usize, end: usize) -> Self {
        let mut s = Self {
            p,
            theta,
            delta,
            nodes: Vec::new(),
        };
        s.build(start, end);
        s
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let d = self.p.dim();
        if end - start <= LEAF {
            let mut min = vec![f64::INFINITY; d];
            let mut max = vec![f64::NEG_INFINITY; d];
            for i in start..end {
                for (c, v) in self.p.value(i).iter().enumerate() {
                    min[c] = min[c].min(*v);
                    max[c] = max[c].max(*v);
                }
            }
            let min_spacing = (start + 1..end)
                .map(|i| self.p.time(i) - self.p.time(i - 1))
                .fold(f64::INFINITY, f64::min);
            self.nodes.push(Node {
                start,
                end,
                min,
                max,
                min_spacing,
                children: None,
            });
            return self.nodes.len() - 1;
        }
        let mid = start + (end - start) / 2;
        let l = self.build(start, mid);
        let r = self.build(mid, end);
        let (nl, nr) = (&self.nodes[l], &self.nodes[r]);
        let min = nl.min.iter().zip(&nr.min).map(|(a, b)| a.min(*b)).collect();
        let max = nl.max.iter().zip(&nr.max).map(|(a, b)| a.max(*b)).collect();
        let junction = self.p.time(mid) - self.p.time(mid - 1);
        let min_spacing = nl.min_spacing.min(nr.min_spacing).min(junction);
        self.nodes.push(Node {
            start,
            end,
            min,
            max,
            min_spacing,
            children: Some((l, r)),
        });
        self.nodes.len() - 1
    }

    fn bound(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        if a == b {
            if na.end - na.start < 2 {
                return 0.0;
            }
            let spread: f64 = na.min.iter().zip(&na.max).map(|(lo, hi)| (hi - lo).powi(2)).sum();
            return spread.sqrt() / na.min_spacing.powf(self.theta);
        }
        let gap = self.p.time(nb.start) - self.p.time(na.end - 1);
        if gap > self.delta {
            return f64::NEG_INFINITY;
        }
        let spread: f64 = (0..na.min.len())
            .map(|c| (nb.max[c] - na.min[c]).max(na.max[c] - nb.min[c]).max(0.0).powi(2))
            .sum();
        spread.sqrt() / gap.powf(self.theta)
    }

    /// Returns a certified upper bound on the sampled supremum.
    fn run(&self, best: &mut Best, rel_tol: f64) -> f64 {
        let root = self.nodes.len() - 1;
        let n = self.nodes[root].end - self.nodes[root].start;
        let s = self.nodes[root].start;
        // Seed with consecutive pairs.
        for i in s..s + n - 1 {
            let gap = self.p.time(i + 1) - self.p.time(i);
            if gap <= self.delta {
                best.offer(self.p.dist(i, i + 1) / gap.powf(self.theta), i, i + 1);
            }
        }
        let mut heap = BinaryHeap::new();
        heap.push(Candidate {
            bound: self.bound(root, root),
            a: root,
            b: root,
        });
        while let Some(c) = heap.pop() {
            if c.bound <= best.value * (1.0 + rel_tol) {
                return c.bound.max(best.value);
            }
            let (na, nb) = (&self.nodes[c.a], &self.nodes[c.b]);
            if (na.end - na.start) * (nb.end - nb.start) <= LEAF * LEAF
                || (na.children.is_none() && nb.children.is_none())
            {
                exact_pairs(self.p, self.theta, self.delta, na.start..na.end, nb.start..nb.end, best);
                continue;
            }
            let push = |a: usize, b: usize, heap: &mut BinaryHeap<Candidate>| {
                let bound = self.bound(a, b);
                if bound > best.value * (1.0 + rel_tol) {
                    heap.push(Candidate { bound, a, b });
                }
            };
            if c.a == c.b {
                let (l, r) = na.children.expect("non-leaf");
                push(l, l, &mut heap);
                push(l, r, &mut heap);
                push(r, r, &mut heap);
            } else {
                let split_a = match (na.children, nb.children) {
                    (Some(_), None) => true,
                    (None, Some(_)) => false,
                    _ => na.end - na.start >= nb.end - nb.start,
                };
                if split_a {
                    let (l, r) = na.children.expect("non-leaf");
                    push(l, c.b, &mut heap);
                    push(r, c.b, &mut heap);
                } else {
                    let (l, r) = nb.children.expect("non-leaf");
                    push(c.a, l, &mut heap);
                    push(c.a, r, &mut heap);
                }
            }
        }
        best.value
    }
}

/// Sample count cap for [`p_variation`].
pub const P_VARIATION_LIMIT: usize = 10_000;

/// `V_p(f, u, v) = (sup Σ |f(t_i) − f(t_{i−1})|^p)^{1/p}` over subdivisions
/// through sample points, by dynamic programming.
pub fn p_variation<'a>(path: impl Into<PathView<'a>>, p: f64, u: f64, v: f64) -> Result<f64> {
    let path = path.into();
    if !(p >= 1.0 && p.is_finite()) {
        return domain(format!("p must be >= 1, got {p}"));
    }
    let (lo, hi) = path.index_range(u, v)?;
    let n = hi + 1 - lo;
    if n > P_VARIATION_LIMIT {
        return Err(Error::Resource {
            what: "p-variation samples",
            requested: n,
            cap: P_VARIATION_LIMIT,
        });
    }
    let mut best = vec![0.0f64; n];
    for j in 1..n {
        best[j] = (0..j)
            .map(|i| best[i] + path.dist(lo + i, lo + j).powf(p))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(best[n - 1].powf(1.0 / p))
}

/// `Q_γ(w) = Σ_{k=1}^{⌊T/γ⌋} |w(kγ) − w((k−1)γ)|²` on a uniform path of step `γ`
/// (times measured from the first sample).
pub fn quadratic_functional<'a>(path: impl Into<PathView<'a>>, horizon: f64) -> Result<f64> {
    let p = path.into();
    let gamma = p
        .uniform_step()
        .ok_or_else(|| Error::Grid("quadratic functional needs a uniform grid".into()))?;
    let k = (horizon / gamma + 1e-9).floor();
    if !(k >= 0.0) {
        return Err(Error::OutOfRange(format!("horizon {horizon} is negative")));
    }
    let k = k as usize;
    if k >= p.len() {
        return Err(Error::OutOfRange(format!(
            "horizon {horizon} exceeds the path range {}",
            gamma * (p.len() - 1) as f64
        )));
    }
    Ok((1..=k).map(|i| p.dist(i, i - 1).powi(2)).sum())
}

/// Left-point Young sum `Σ_k f(kγ)·(β((k+1)γ ∧ t) − β(kγ))` over `[t_0, t]`.
///
/// `integrand` samples a `r × q` matrix (row-major, `r·q` values per sample),
/// `driver` a `q`-vector; the result has `r` coordinates. Both paths must have
/// samples at every multiple of `γ` up to `t` (and `driver` at `t`).
pub fn young_discrete_integral<'a, 'b>(
    integrand: impl Into<PathView<'a>>,
    driver: impl Into<PathView<'b>>,
    gamma: f64,
    t: f64,
) -> Result<Vec<f64>> {
    let (f, beta) = (integrand.into(), driver.into());
    if !(gamma > 0.0) {
        return domain("gamma must be positive");
    }
    if f.is_empty() || beta.is_empty() {
        return Err(Error::EmptySample);
    }
    let q = beta.dim();
    if f.dim() % q != 0 {
        return Err(Error::DimensionMismatch(format!(
            "integrand dimension {} is not a multiple of driver dimension {q}",
            f.dim()
        )));
    }
    let r = f.dim() / q;
    let t0 = beta.time(0);
    if !(t >= t0) {
        return Err(Error::OutOfRange(format!("t = {t} before path start {t0}")));
    }
    let full = ((t - t0) / gamma + 1e-9).floor() as usize;
    let mut acc = vec![0.0; r];
    let mut add = |from: f64, to: f64| -> Result<()> {
        let fv = f.value_at_sample(from)?;
        let (b0, b1) = (beta.value_at_sample(from)?, beta.value_at_sample(to)?);
        for (i, a) in acc.iter_mut().enumerate() {
            for j in 0..q {
                *a += fv[i * q + j] * (b1[j] - b0[j]);
            }
        }
        Ok(())
    };
    for k in 0..full {
        add(t0 + k as f64 * gamma, t0 + (k + 1) as f64 * gamma)?;
    }
    let last = t0 + full as f64 * gamma;
    if t - last > 1e-9 * gamma {
        add(last, t)?;
    }
    Ok(acc)
}
