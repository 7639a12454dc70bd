//! SDE coefficients, Lyapunov functions and sampled checks of the long-time
//! stability assumption:
//!
//! * `σ` bounded and Lipschitz,
//! * `V` essentially quadratic (`V > 0`, `liminf V(x)/|x|² > 0`, `|∇V| ≤ C√V`,
//!   bounded Hessian),
//! * `|b(x)|² ≤ V(x)` and `⟨∇V(x), b(x)⟩ ≤ β − αV(x)`.
//!
//! The assumption is global; here it is only checked on sampled points. The
//! Hölder-type norm of the coefficient derivatives is not checked.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};

/// `x ↦ out`, with `out` preallocated by the caller.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Drift `b: R^d → R^d` and diffusion `σ: R^d → R^{d×q}` (row-major).
#[derive(Clone)]
pub struct CoefficientModel {
    name: String,
    dim_state: usize,
    dim_noise: usize,
    drift: VectorField,
    diffusion: VectorField,
    /// Declared `sup_x ‖σ(x)‖` (Frobenius).
    pub sigma_bound: f64,
    pub lipschitz_sigma: f64,
}

impl fmt::Debug for CoefficientModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientModel")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("sigma_bound", &self.sigma_bound)
            .field("lipschitz_sigma", &self.lipschitz_sigma)
            .finish()
    }
}

impl CoefficientModel {
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        drift: VectorField,
        diffusion: VectorField,
        sigma_bound: f64,
        lipschitz_sigma: f64,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return domain("state and noise dimensions must be positive");
        }
        if !(sigma_bound >= 0.0) || !(lipschitz_sigma >= 0.0) {
            return domain("sigma bound and Lipschitz constant must be nonnegative");
        }
        Ok(Self {
            name: name.into(),
            dim_state,
            dim_noise,
            drift,
            diffusion,
            sigma_bound,
            lipschitz_sigma,
        })
    }

    /// One-dimensional model from scalar coefficient functions.
    pub fn scalar<B, S>(name: impl Into<String>, b: B, sigma: S, sigma_bound: f64, lipschitz_sigma: f64) -> Result<Self>
    where
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            name,
            1,
            1,
            Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = b(x[0])),
            Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = sigma(x[0])),
            sigma_bound,
            lipschitz_sigma,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    /// Row-major `d × q` matrix.
    #[inline]
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.drift_into(x, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion_into(x, &mut out);
        out
    }

    pub(crate) fn is_scalar(&self) -> bool {
        self.dim_state == 1 && self.dim_noise == 1
    }

    pub fn drift_scalar(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.drift_into(&[x], &mut out);
        out[0]
    }

    pub fn diffusion_scalar(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.diffusion_into(&[x], &mut out);
        out[0]
    }
}

/// Lyapunov function `V` with gradient and the constants `(α, β)` of the
/// dissipativity condition.
#[derive(Clone)]
pub struct LyapunovSpec {
    value: ScalarField,
    gradient: VectorField,
    pub alpha: f64,
    pub beta: f64,
    pub hessian_bound: f64,
}

impl fmt::Debug for LyapunovSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovSpec")
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("hessian_bound", &self.hessian_bound)
            .finish()
    }
}

impl LyapunovSpec {
    pub fn new(value: ScalarField, gradient: VectorField, alpha: f64, beta: f64, hessian_bound: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return domain(format!("alpha must be positive, got {alpha}"));
        }
        if !beta.is_finite() || !(hessian_bound >= 0.0) {
            return domain("beta must be finite and the Hessian bound nonnegative");
        }
        Ok(Self {
            value,
            gradient,
            alpha,
            beta,
            hessian_bound,
        })
    }

    pub fn scalar<V, G>(value: V, gradient: G, alpha: f64, beta: f64, hessian_bound: f64) -> Result<Self>
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            Arc::new(move |x: &[f64]| value(x[0])),
            Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = gradient(x[0])),
            alpha,
            beta,
            hessian_bound,
        )
    }

    /// `V(x) = c·(1 + |x|²)`.
    pub fn quadratic(scale: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(
            Arc::new(move |x: &[f64]| scale * (1.0 + x.iter().map(|v| v * v).sum::<f64>())),
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * scale * v;
                }
            }),
            alpha,
            beta,
            2.0 * scale,
        )
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.gradient_into(x, &mut out);
        out
    }
}

/// Outcome of a sampled check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub check: &'static str,
    pub passed: bool,
    pub points_checked: usize,
    /// Check-specific worst statistic (ratio, excess, or relative error).
    pub worst_value: f64,
    pub worst_point: Option<Vec<f64>>,
    /// Every violating point.
    pub violations: Vec<Vec<f64>>,
}

impl CheckReport {
    fn new(check: &'static str) -> Self {
        Self {
            check,
            passed: true,
            points_checked: 0,
            worst_value: f64::NEG_INFINITY,
            worst_point: None,
            violations: Vec::new(),
        }
    }

    fn observe(&mut self, x: &[f64], value: f64, violated: bool) {
        self.points_checked += 1;
        if value > self.worst_value || self.worst_point.is_none() {
            self.worst_value = value;
            self.worst_point = Some(x.to_vec());
        }
        if violated {
            self.passed = false;
            self.violations.push(x.to_vec());
        }
    }
}

/// Relative slack allowed in the inequality checks for floating-point round-off.
pub const CHECK_REL_TOL: f64 = 1e-10;

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// `|b(x)|² ≤ V(x)`. The reported statistic is the max of `|b|²/V`.
pub fn check_drift_bound(model: &CoefficientModel, lyap: &LyapunovSpec, points: &[Vec<f64>]) -> CheckReport {
    let mut report = CheckReport::new("drift_bound");
    let mut b = vec![0.0; model.dim_state()];
    for x in points {
        model.drift_into(x, &mut b);
        let bb = norm_sq(&b);
        let v = lyap.value(x);
        report.observe(x, bb / v, bb > v * (1.0 + CHECK_REL_TOL));
    }
    report
}

/// `⟨∇V(x), b(x)⟩ ≤ β − αV(x)`. The reported statistic is the max excess.
pub fn check_dissipativity(model: &CoefficientModel, lyap: &LyapunovSpec, points: &[Vec<f64>]) -> CheckReport {
    let mut report = CheckReport::new("dissipativity");
    let d = model.dim_state();
    let (mut b, mut g) = (vec![0.0; d], vec![0.0; d]);
    for x in points {
        model.drift_into(x, &mut b);
        lyap.gradient_into(x, &mut g);
        let lhs: f64 = g.iter().zip(&b).map(|(a, c)| a * c).sum();
        let v = lyap.value(x);
        let rhs = lyap.beta - lyap.alpha * v;
        let slack = CHECK_REL_TOL * (lhs.abs() + lyap.beta.abs() + lyap.alpha * v.abs());
        report.observe(x, lhs - rhs, lhs - rhs > slack);
    }
    report
}

/// Pass threshold on the relative gradient discrepancy.
pub const GRADIENT_TOL: f64 = 1e-4;

/// Compares the declared gradient with central differences of `V`, using the
/// step `h·max(1, |x_i|)` in coordinate `i`. The statistic is the max of
/// `|∇V − FD| / max(1, |FD|)` over coordinates and points.
pub fn check_gradient(lyap: &LyapunovSpec, points: &[Vec<f64>], h: f64) -> CheckReport {
    let mut report = CheckReport::new("gradient");
    for x in points {
        let g = lyap.gradient(x);
        let mut xp = x.clone();
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let hi = h * x[i].abs().max(1.0);
            xp[i] = x[i] + hi;
            let up = lyap.value(&xp);
            xp[i] = x[i] - hi;
            let down = lyap.value(&xp);
            xp[i] = x[i];
            let fd = (up - down) / (2.0 * hi);
            worst = worst.max((g[i] - fd).abs() / fd.abs().max(1.0));
        }
        report.observe(x, worst, !(worst <= GRADIENT_TOL));
    }
    report
}

/// `‖σ(x)‖ ≤ sigma_bound`. The statistic is the max Frobenius norm.
pub fn check_sigma_bound(model: &CoefficientModel, points: &[Vec<f64>]) -> CheckReport {
    let mut report = CheckReport::new("sigma_bound");
    let mut s = vec![0.0; model.dim_state() * model.dim_noise()];
    for x in points {
        model.diffusion_into(x, &mut s);
        let n = norm_sq(&s).sqrt();
        report.observe(x, n, n > model.sigma_bound * (1.0 + CHECK_REL_TOL));
    }
    report
}

/// Sampled shape of `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovShape {
    pub min_value: f64,
    /// `min V(x)/|x|²` over sampled points with `|x| ≥ radius`.
    pub min_quadratic_ratio: f64,
    /// Empirical `max |∇V(x)| / √V(x)`.
    pub gradient_constant: f64,
    pub passed: bool,
}

/// Checks positivity, quadratic growth beyond `radius` and estimates the
/// constant `C` in `|∇V| ≤ C√V`.
pub fn check_lyapunov_shape(lyap: &LyapunovSpec, points: &[Vec<f64>], radius: f64) -> LyapunovShape {
    let mut min_value = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut c = 0.0f64;
    for x in points {
        let v = lyap.value(x);
        min_value = min_value.min(v);
        let r2 = norm_sq(x);
        if r2.sqrt() >= radius && r2 > 0.0 {
            min_ratio = min_ratio.min(v / r2);
        }
        let g = norm_sq(&lyap.gradient(x)).sqrt();
        c = c.max(g / v.sqrt());
    }
    LyapunovShape {
        min_value,
        min_quadratic_ratio: min_ratio,
        gradient_constant: c,
        passed: min_value > 0.0 && min_ratio > 0.0 && c.is_finite(),
    }
}

/// Sampling box `[−halfwidth, halfwidth]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBox {
    pub halfwidth: f64,
    pub per_axis: usize,
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            halfwidth: 50.0,
            per_axis: 1001,
        }
    }
}

impl SampleBox {
    /// Tensor grid for `d ≤ 2`, Latin hypercube with `per_axis` points beyond.
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let n = self.per_axis.max(2);
        let axis: Vec<f64> = (0..n)
            .map(|i| -self.halfwidth + 2.0 * self.halfwidth * i as f64 / (n - 1) as f64)
            .collect();
        match dim {
            0 => Vec::new(),
            1 => axis.iter().map(|&a| vec![a]).collect(),
            2 => axis
                .iter()
                .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
                .collect(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let w = 2.0 * self.halfwidth / n as f64;
                let cols: Vec<Vec<f64>> = (0..dim)
                    .map(|_| {
                        let mut idx: Vec<usize> = (0..n).collect();
                        idx.shuffle(&mut rng);
                        idx.into_iter()
                            .map(|i| -self.halfwidth + w * (i as f64 + rng.random::<f64>()))
                            .collect()
                    })
                    .collect();
                (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
            }
        }
    }
}

/// All sampled checks for a model and its Lyapunov function.
pub fn validate(model: &CoefficientModel, lyap: &LyapunovSpec, points: &[Vec<f64>]) -> Vec<CheckReport> {
    vec![
        check_sigma_bound(model, points),
        check_drift_bound(model, lyap, points),
        check_dissipativity(model, lyap, points),
        check_gradient(lyap, points, 1e-5),
    ]
}

/// `dX = −X dt + (4 + cos X) dB^H` with `V = 1 + x²`, `α = β = 2`.
pub fn builtin_toy_model() -> (CoefficientModel, LyapunovSpec) {
    let model = CoefficientModel::scalar("toy", |x| -x, |x| 4.0 + x.cos(), 5.0, 1.0).expect("valid");
    let lyap = LyapunovSpec::quadratic(1.0, 2.0, 2.0).expect("valid");
    (model, lyap)
}

/// Fractional Ornstein–Uhlenbeck `dX = −λX dt + σ₀ dB^H` with
/// `V = c(1 + x²)`, `c = max(1, λ²)`, `α = 2λ`, `β = 2cλ`.
pub fn fou_model(lambda: f64, sigma0: f64) -> Result<(CoefficientModel, LyapunovSpec)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return domain(format!("fou: lambda must be positive, got {lambda}"));
    }
    if !sigma0.is_finite() {
        return domain("fou: sigma must be finite");
    }
    let model = CoefficientModel::scalar("fou", move |x| -lambda * x, move |_| sigma0, sigma0.abs(), 0.0)?;
    let c = lambda.powi(2).max(1.0);
    let lyap = LyapunovSpec::quadratic(c, 2.0 * lambda, 2.0 * c * lambda)?;
    Ok((model, lyap))
}

/// Named numeric parameters of a registered model.
pub type ModelParams = BTreeMap<String, f64>;

type Factory = Arc<dyn Fn(&ModelParams) -> Result<(CoefficientModel, LyapunovSpec)> + Send + Sync>;

/// Name → model factory. [`ModelRegistry::with_builtins`] knows `toy` and `fou`
/// (parameters `lambda`, `sigma`, both defaulting to 1).
#[derive(Clone, Default)]
pub struct ModelRegistry {
    factories: HashMap<String, Factory>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register("toy", |p: &ModelParams| {
            if let Some(k) = p.keys().next() {
                return domain(format!("toy model takes no parameters, got {k}"));
            }
            Ok(builtin_toy_model())
        });
        r.register("fou", |p: &ModelParams| {
            for k in p.keys() {
                if k != "lambda" && k != "sigma" {
                    return domain(format!("fou: unknown parameter {k}"));
                }
            }
            fou_model(
                p.get("lambda").copied().unwrap_or(1.0),
                p.get("sigma").copied().unwrap_or(1.0),
            )
        });
        r
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&ModelParams) -> Result<(CoefficientModel, LyapunovSpec)> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Arc::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.factories.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    pub fn build(&self, name: &str, params: &ModelParams) -> Result<(CoefficientModel, LyapunovSpec)> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::Domain(format!("unknown model {name:?}; known: {:?}", self.names())))?;
        f(params)
    }
}
