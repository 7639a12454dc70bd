//! Marginal densities: kernel estimates of `P₀^(n,γ)` and oracle densities.
//!
//! The Gaussian kernel is written `K_h(x) = exp(−x²/(2h)) / (√(2π)·h)`, i.e. `h`
//! enters the exponent as a variance. That kernel has total mass `1/√h`, so
//! [`KernelMode`] offers it literally ([`KernelMode::Printed`]), with the same
//! exponent and a unit-mass prefactor ([`KernelMode::Variance`], the default),
//! or with `h` as a standard deviation ([`KernelMode::StdDev`]).
//!
//! For `H = 1/2` the invariant law of a one-dimensional diffusion is the
//! normalized speed measure
//! `M(dx) = σ(x)^{-2} exp(∫_0^x 2b(u)/σ(u)² du) dx`.

use std::io::Write;

use rayon::prelude::*;

use crate::ergodic::MarginalOccupation;
use crate::error::{domain, Error, Result};
use crate::model::CoefficientModel;

/// Uniform evaluation grid `start + i·step`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

/// Default number of grid points, `2^10 + 1`.
pub const DEFAULT_GRID_POINTS: usize = 1025;

impl Grid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if len < 2 || !(step > 0.0) || !start.is_finite() || !step.is_finite() {
            return domain("grid needs at least two points and a positive finite step");
        }
        Ok(Self { start, step, len })
    }

    /// `points` equally spaced points on `[−halfwidth, halfwidth]`.
    pub fn symmetric(halfwidth: f64, points: usize) -> Result<Self> {
        if !(halfwidth > 0.0) {
            return domain(format!("grid halfwidth must be positive, got {halfwidth}"));
        }
        Self::new(-halfwidth, 2.0 * halfwidth / (points.max(2) - 1) as f64, points)
    }

    /// Symmetric grid of halfwidth `6·sd` of the sample.
    pub fn for_sample(states: &[f64], points: usize) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::EmptySample);
        }
        let sd = crate::stats::variance(states).sqrt();
        if !(sd > 0.0) {
            return domain("sample has zero spread; give the grid halfwidth explicitly");
        }
        Self::symmetric(6.0 * sd, points)
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.point(i)).collect()
    }

    pub fn end(&self) -> f64 {
        self.point(self.len - 1)
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            start: self.start + c,
            ..*self
        }
    }

    fn same_as(&self, other: &Grid) -> bool {
        let tol = 1e-12 * (self.start.abs() + self.end().abs()).max(self.step);
        self.len == other.len && (self.start - other.start).abs() <= tol && (self.step - other.step).abs() <= 1e-12 * self.step
    }
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelMode {
    /// `exp(−x²/(2h)) / (√(2π)·h)`; mass `1/√h`.
    Printed,
    /// `exp(−x²/(2h)) / √(2πh)`; `h` is the kernel variance.
    #[default]
    Variance,
    /// `exp(−x²/(2h²)) / (√(2π)·h)`; `h` is the kernel standard deviation.
    StdDev,
}

impl std::str::FromStr for KernelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(Self::Printed),
            "variance" => Ok(Self::Variance),
            "stddev" => Ok(Self::StdDev),
            _ => domain(format!("unknown kernel mode {s:?} (printed, variance, stddev)")),
        }
    }
}

impl std::fmt::Display for KernelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Printed => "printed",
            Self::Variance => "variance",
            Self::StdDev => "stddev",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub bandwidth: f64,
    pub mode: KernelMode,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, mode: KernelMode) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return domain(format!("bandwidth must be positive, got {bandwidth}"));
        }
        Ok(Self { bandwidth, mode })
    }

    /// Standard deviation of the kernel shape.
    pub fn shape_sd(&self) -> f64 {
        match self.mode {
            KernelMode::Printed | KernelMode::Variance => self.bandwidth.sqrt(),
            KernelMode::StdDev => self.bandwidth,
        }
    }

    fn prefactor(&self) -> f64 {
        let h = self.bandwidth;
        let s2pi = (2.0 * std::f64::consts::PI).sqrt();
        match self.mode {
            KernelMode::Printed | KernelMode::StdDev => 1.0 / (s2pi * h),
            KernelMode::Variance => 1.0 / (s2pi * h.sqrt()),
        }
    }

    /// `−1/(2·shape variance)`.
    fn exponent_scale(&self) -> f64 {
        let s = self.shape_sd();
        -0.5 / (s * s)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.prefactor() * (self.exponent_scale() * x * x).exp()
    }

    /// Total mass of the kernel.
    pub fn mass(&self) -> f64 {
        match self.mode {
            KernelMode::Printed => 1.0 / self.bandwidth.sqrt(),
            _ => 1.0,
        }
    }
}

/// Density values on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// KDE bandwidth; `None` for oracle densities.
    pub bandwidth: Option<f64>,
    /// Trapezoid integral of `values` over the grid.
    pub normalization: f64,
}

impl DensityEstimate {
    fn new(grid: Grid, values: Vec<f64>, bandwidth: Option<f64>) -> Self {
        let normalization = trapezoid(&values, grid.step);
        Self {
            grid,
            values,
            bandwidth,
            normalization,
        }
    }

    /// Grid point with the largest value.
    pub fn argmax(&self) -> f64 {
        let i = (0..self.values.len())
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))
            .expect("nonempty grid");
        self.grid.point(i)
    }

    /// Trapezoid mass outside `[−r, r]`, relative to the grid mass.
    pub fn tail_mass(&self, r: f64) -> f64 {
        let inside: Vec<f64> = (0..self.grid.len)
            .map(|i| if self.grid.point(i).abs() <= r { self.values[i] } else { 0.0 })
            .collect();
        1.0 - trapezoid(&inside, self.grid.step) / self.normalization
    }

    /// `x,density` rows after `#` provenance lines.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &str) -> std::io::Result<()> {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "x,density")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.grid.point(i), v)?;
        }
        Ok(())
    }
}

/// States contribute to grid points within this many kernel standard
/// deviations (the neglected tail is below `e^{-32}` of the peak).
pub const KDE_CUTOFF_SDS: f64 = 8.0;
const KDE_CHUNK: usize = 1 << 16;
/// Grid points per recurrence run before recomputing exactly.
const KDE_REANCHOR: usize = 64;

/// `values[i] = (1/n) Σ_k K_h(x_i − state_k)` for a one-dimensional marginal.
pub fn kde(marg: &MarginalOccupation<'_>, kernel: KernelSpec, grid: Grid) -> Result<DensityEstimate> {
    if marg.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "kernel density estimate needs a one-dimensional marginal, got {}",
            marg.dim()
        )));
    }
    kde_states(marg.states(), kernel, grid)
}

/// Each state is scattered onto the grid points within the cutoff, with the
/// Gaussian values along the grid generated by a multiplicative recurrence.
/// Chunk partials are summed in chunk order, so the result does not depend on
/// the thread count.
pub fn kde_states(states: &[f64], kernel: KernelSpec, grid: Grid) -> Result<DensityEstimate> {
    if states.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(x) = states.iter().find(|x| !x.is_finite()) {
        return domain(format!("non-finite state {x}"));
    }
    let c = kernel.exponent_scale();
    let cut = KDE_CUTOFF_SDS * kernel.shape_sd();
    let (x0, dx, len) = (grid.start, grid.step, grid.len);
    let q = (2.0 * c * dx * dx).exp();
    let scatter = |chunk: &[f64]| {
        let mut acc = vec![0.0; len];
        for &s in chunk {
            let lo = ((s - cut - x0) / dx).ceil().max(0.0);
            let hi = ((s + cut - x0) / dx).floor().min((len - 1) as f64);
            if lo > hi {
                continue;
            }
            let (lo, hi) = (lo as usize, hi as usize);
            for (b, block) in acc[lo..=hi].chunks_mut(KDE_REANCHOR).enumerate() {
                let u = x0 + (lo + b * KDE_REANCHOR) as f64 * dx - s;
                let mut v = (c * u * u).exp();
                let mut r = (c * (2.0 * u * dx + dx * dx)).exp();
                for a in block {
                    *a += v;
                    v *= r;
                    r *= q;
                }
            }
        }
        acc
    };
    let partials: Vec<Vec<f64>> = states.par_chunks(KDE_CHUNK).map(scatter).collect();
    let scale = kernel.prefactor() / states.len() as f64;
    let values = (0..len).map(|i| scale * partials.iter().map(|p| p[i]).sum::<f64>()).collect();
    Ok(DensityEstimate::new(grid, values, Some(kernel.bandwidth)))
}

/// Default inner quadrature step.
pub const ORACLE_QUAD_STEP: f64 = 1e-3;
/// Largest estimated probability mass allowed outside the grid.
pub const ORACLE_MAX_TRUNCATION: f64 = 1e-6;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, max_step: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut k = ((b - a).abs() / max_step).ceil() as usize;
    k = (k.max(2) + 1) & !1;
    let h = (b - a) / k as f64;
    let mut s = f(a) + f(b);
    for i in 1..k {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `log` of the unnormalized speed-measure density on `points` (sorted),
/// integrating `2b/σ²` from 0 outward with composite Simpson of step at most
/// `quad_step`.
fn log_speed_density(model: &CoefficientModel, points: &[f64], quad_step: f64) -> Result<Vec<f64>> {
    let ratio = |u: f64| {
        let s = model.diffusion_scalar(u);
        2.0 * model.drift_scalar(u) / (s * s)
    };
    let mut log_m = vec![0.0; points.len()];
    let split = points.partition_point(|&x| x < 0.0);
    // Nonnegative points, increasing.
    let (mut acc, mut prev) = (0.0, 0.0);
    for i in split..points.len() {
        acc += simpson(&ratio, prev, points[i], quad_step);
        prev = points[i];
        log_m[i] = acc;
    }
    // Negative points, decreasing.
    let (mut acc, mut prev) = (0.0, 0.0);
    for i in (0..split).rev() {
        acc += simpson(&ratio, prev, points[i], quad_step);
        prev = points[i];
        log_m[i] = acc;
    }
    for (lm, &x) in log_m.iter_mut().zip(points) {
        let s = model.diffusion_scalar(x);
        if !(s != 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("diffusion vanishes at x = {x}")));
        }
        *lm -= 2.0 * s.abs().ln();
    }
    if log_m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Normalization("non-finite speed density (diffusion vanishes?)".into()));
    }
    Ok(log_m)
}

/// Normalized invariant density of the `H = 1/2` diffusion of a scalar model.
pub fn oracle_density_h_half(model: &CoefficientModel, grid: Grid) -> Result<DensityEstimate> {
    oracle_density_h_half_with(model, grid, ORACLE_QUAD_STEP)
}

pub fn oracle_density_h_half_with(model: &CoefficientModel, grid: Grid, quad_step: f64) -> Result<DensityEstimate> {
    if !model.is_scalar() {
        return Err(Error::DimensionMismatch("the speed-measure oracle needs d = q = 1".into()));
    }
    if !(quad_step > 0.0) {
        return domain("quadrature step must be positive");
    }
    let pts = grid.points();
    let log_m = log_speed_density(model, &pts, quad_step)?;
    let top = log_m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_m.iter().map(|l| (l - top).exp()).collect();
    let z = trapezoid(&unnorm, grid.step);
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Normalization(format!("total mass {z}")));
    }
    // Tail beyond each end ≈ m(L)/|d log m/dx|(L).
    let n = pts.len();
    let mut tail = 0.0;
    for (edge, inner) in [(0, 1), (n - 1, n - 2)] {
        let decay = (log_m[inner] - log_m[edge]) / grid.step;
        if !(decay > 0.0) {
            return Err(Error::Normalization(format!(
                "density is not decaying at the grid edge x = {}",
                pts[edge]
            )));
        }
        tail += unnorm[edge] / decay;
    }
    if tail / z > ORACLE_MAX_TRUNCATION {
        return Err(Error::Normalization(format!(
            "grid [{}, {}] truncates an estimated mass {:.2e}",
            grid.start,
            grid.end(),
            tail / z
        )));
    }
    let values = unnorm.iter().map(|v| v / z).collect();
    Ok(DensityEstimate::new(grid, values, None))
}

/// Smallest multiple of 0.5 at which the unnormalized speed density has fallen
/// below `1e-12` of its value at 0 on both sides.
pub fn oracle_halfwidth(model: &CoefficientModel) -> Result<f64> {
    let mut l = 0.5f64;
    while l <= 1e4 {
        let log_m = log_speed_density(model, &[-l, 0.0, l], ORACLE_QUAD_STEP)?;
        if log_m[0] - log_m[1] < -27.631 && log_m[2] - log_m[1] < -27.631 {
            return Ok(l);
        }
        l += 0.5;
    }
    Err(Error::Normalization("speed density does not decay within |x| <= 1e4".into()))
}

/// Centered Gaussian density of the given variance on `grid`.
pub fn gaussian_density(variance: f64, grid: Grid) -> Result<DensityEstimate> {
    if !(variance > 0.0) {
        return domain("variance must be positive");
    }
    let c = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
    let values = grid.points().iter().map(|x| c * (-x * x / (2.0 * variance)).exp()).collect();
    Ok(DensityEstimate::new(grid, values, None))
}

/// Stationary variance of `dX = −λX dt + σ₀ dB^H` (`H ∈ [1/2, 1)`), i.e. the
/// variance of `σ₀ ∫_{−∞}^0 e^{λs} dB^H_s`, by double quadrature of
/// `σ₀² H(2H−1) ∫∫_{[0,∞)²} e^{−λ(u+v)} |u−v|^{2H−2} du dv`.
pub fn fou_stationary_variance(hurst: f64, lambda: f64, sigma0: f64) -> Result<f64> {
    if !(hurst >= 0.5 && hurst < 1.0) {
        return domain(format!("fOU variance oracle needs H in [1/2, 1), got {hurst}"));
    }
    if !(lambda > 0.0) {
        return domain("lambda must be positive");
    }
    if hurst == 0.5 {
        return Ok(sigma0 * sigma0 / (2.0 * lambda));
    }
    let p = 2.0 * hurst - 2.0;
    let big_u = 40.0 / lambda;
    // J(u) = ∫_0^∞ e^{−λv}|u − v|^p dv with s = |u − v| on each side of v = u.
    let above = tanh_sinh_from_zero(|s| (-lambda * s).exp() * s.powf(p), big_u);
    let inner = |u: f64| {
        let below = tanh_sinh_from_zero(|s| (-lambda * (u - s)).exp() * s.powf(p), u);
        (-lambda * u).exp() * above + below
    };
    let split = 1.0 / lambda;
    let outer = |u: f64| (-lambda * u).exp() * inner(u);
    let head = tanh_sinh_from_zero(outer, split);
    let tail = tanh_sinh_from_zero(|s| outer(split + s), big_u - split);
    Ok(sigma0 * sigma0 * hurst * (2.0 * hurst - 1.0) * (head + tail))
}

/// Double-exponential quadrature of `f` over `(0, len]`, resolving an
/// integrable singularity at 0. Nodes are `len / (1 + e^{−π sinh t})`.
fn tanh_sinh_from_zero(f: impl Fn(f64) -> f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    const STEP: f64 = 1.0 / 64.0;
    const T_MAX: f64 = 6.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut sum = 0.0;
    let n = (T_MAX / STEP) as i64;
    for k in -n..=n {
        let t = k as f64 * STEP;
        let arg = half_pi * t.sinh();
        let c = arg.cosh();
        let w = len * half_pi * t.cosh() / (2.0 * c * c);
        if w == 0.0 || !w.is_finite() {
            continue;
        }
        let x = len / (1.0 + (-2.0 * arg).exp());
        if x <= 0.0 || x >= len {
            continue;
        }
        sum += w * f(x);
    }
    sum * STEP
}

fn check_same_grid(a: &DensityEstimate, b: &DensityEstimate) -> Result<()> {
    if !a.grid.same_as(&b.grid) || a.values.len() != b.values.len() {
        return Err(Error::Grid(format!("grids differ: {:?} vs {:?}", a.grid, b.grid)));
    }
    Ok(())
}

/// Trapezoid integral of `|a − b|`.
pub fn l1_distance(a: &DensityEstimate, b: &DensityEstimate) -> Result<f64> {
    check_same_grid(a, b)?;
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect();
    Ok(trapezoid(&diff, a.grid.step))
}

/// `max_i |a_i − b_i|`.
pub fn linf_distance(a: &DensityEstimate, b: &DensityEstimate) -> Result<f64> {
    check_same_grid(a, b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}
