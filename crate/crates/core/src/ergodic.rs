//! Occupation measures of the Euler scheme.
//!
//! `P^(n,γ) = (1/n) Σ_{k=1..n} δ_{X̄_{γ(k−1)+·}}` puts equal weight on the `n`
//! shifted paths; its time-0 marginal `P₀^(n,γ)` on the states `X̄_{γ(k−1)}`.
//! Both are views into a [`Trajectory`]; nothing is copied. Weak convergence is
//! observed through equal-weight averages of functionals, with batch-means
//! standard errors since the atoms are long-range dependent.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::euler::Trajectory;
use crate::model::LyapunovSpec;
use crate::pathspace::{holder_modulus, PathView};
use crate::stats::{self, DEFAULT_BATCHES};

/// Equal-weight measure over atoms indexed `0..len()`.
pub trait Occupation<'a>: Sync {
    type Atom;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn atom(&self, k: usize) -> Self::Atom;
}

/// Time-0 marginal: the states at stored indices `start..start + n`.
#[derive(Debug, Clone, Copy)]
pub struct MarginalOccupation<'a> {
    states: &'a [f64],
    dim: usize,
    gamma: f64,
    start: usize,
    n: usize,
}

/// `n` atoms starting at the first stored state.
pub fn marginal_occupation(traj: &Trajectory, n: usize) -> Result<MarginalOccupation<'_>> {
    marginal_occupation_from(traj, 0, n)
}

/// `n` atoms starting at stored index `start` (burn-in).
pub fn marginal_occupation_from(traj: &Trajectory, start: usize, n: usize) -> Result<MarginalOccupation<'_>> {
    if n == 0 || start + n > traj.len() {
        return Err(Error::OutOfRange(format!(
            "{n} atoms from index {start} of a trajectory with {} states",
            traj.len()
        )));
    }
    Ok(MarginalOccupation {
        states: traj.states(),
        dim: traj.dim(),
        gamma: traj.gamma() * traj.stride() as f64,
        start,
        n,
    })
}

impl<'a> MarginalOccupation<'a> {
    /// Marginal over raw states (row-major, `dim` per state).
    pub fn from_states(states: &'a [f64], dim: usize, gamma: f64) -> Result<Self> {
        if dim == 0 || states.is_empty() || states.len() % dim != 0 {
            return Err(Error::EmptySample);
        }
        Ok(Self {
            states,
            dim,
            gamma,
            start: 0,
            n: states.len() / dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state(&self, k: usize) -> &'a [f64] {
        let i = (self.start + k) * self.dim;
        &self.states[i..i + self.dim]
    }

    /// Flattened atoms.
    pub fn states(&self) -> &'a [f64] {
        &self.states[self.start * self.dim..(self.start + self.n) * self.dim]
    }

    /// Drops the first `k` atoms.
    pub fn skip(&self, k: usize) -> Result<Self> {
        if k >= self.n {
            return Err(Error::OutOfRange(format!("cannot drop {k} of {} atoms", self.n)));
        }
        Ok(Self {
            start: self.start + k,
            n: self.n - k,
            ..*self
        })
    }

    /// First `k` atoms.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n {
            return Err(Error::OutOfRange(format!("prefix {k} of {} atoms", self.n)));
        }
        Ok(Self { n: k, ..*self })
    }
}

impl<'a> Occupation<'a> for MarginalOccupation<'a> {
    type Atom = &'a [f64];

    fn len(&self) -> usize {
        self.n
    }

    fn atom(&self, k: usize) -> &'a [f64] {
        self.state(k)
    }
}

/// Window occupation: atom `k` is the stored path on `[kγ, kγ + T]`, shifted to
/// start at time 0.
#[derive(Debug, Clone, Copy)]
pub struct OccupationMeasureView<'a> {
    states: &'a [f64],
    dim: usize,
    gamma: f64,
    start: usize,
    n: usize,
    window_samples: usize,
}

/// `n` windows of horizon `window_horizon`, the first starting at time 0.
pub fn window_occupation(traj: &Trajectory, n: usize, window_horizon: f64) -> Result<OccupationMeasureView<'_>> {
    window_occupation_from(traj, 0, n, window_horizon)
}

pub fn window_occupation_from(
    traj: &Trajectory,
    start: usize,
    n: usize,
    window_horizon: f64,
) -> Result<OccupationMeasureView<'_>> {
    let step = traj.gamma() * traj.stride() as f64;
    if !(window_horizon >= 0.0) {
        return domain("window horizon must be nonnegative");
    }
    let span = (window_horizon / step + 1e-9).floor() as usize;
    if n == 0 || start + n - 1 + span >= traj.len() {
        return Err(Error::OutOfRange(format!(
            "{n} windows of horizon {window_horizon} from index {start} need {} states, trajectory has {}",
            start + n + span,
            traj.len()
        )));
    }
    Ok(OccupationMeasureView {
        states: traj.states(),
        dim: traj.dim(),
        gamma: step,
        start,
        n,
        window_samples: span + 1,
    })
}

impl<'a> OccupationMeasureView<'a> {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn window_horizon(&self) -> f64 {
        (self.window_samples - 1) as f64 * self.gamma
    }

    pub fn window(&self, k: usize) -> PathView<'a> {
        let i = (self.start + k) * self.dim;
        let values = &self.states[i..i + self.window_samples * self.dim];
        PathView::uniform(0.0, self.gamma, values, self.dim).expect("valid window")
    }

    /// Time-0 marginal of the windows.
    pub fn marginal(&self) -> MarginalOccupation<'a> {
        MarginalOccupation {
            states: self.states,
            dim: self.dim,
            gamma: self.gamma,
            start: self.start,
            n: self.n,
        }
    }

    pub fn skip(&self, k: usize) -> Result<Self> {
        if k >= self.n {
            return Err(Error::OutOfRange(format!("cannot drop {k} of {} windows", self.n)));
        }
        Ok(Self {
            start: self.start + k,
            n: self.n - k,
            ..*self
        })
    }
}

impl<'a> Occupation<'a> for OccupationMeasureView<'a> {
    type Atom = PathView<'a>;

    fn len(&self) -> usize {
        self.n
    }

    fn atom(&self, k: usize) -> PathView<'a> {
        self.window(k)
    }
}

/// Equal-weight average of a functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalAverage {
    pub value: f64,
    /// Batch-means standard error; `NaN` with fewer atoms than batches.
    pub batch_se: f64,
}

fn evaluations<'a, O, F>(occ: &O, f: F) -> Result<Vec<f64>>
where
    O: Occupation<'a>,
    F: Fn(O::Atom) -> f64 + Sync,
{
    let values: Vec<f64> = (0..occ.len()).into_par_iter().map(|k| f(occ.atom(k))).collect();
    if let Some(atom) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFunctional { atom });
    }
    Ok(values)
}

/// `(1/n) Σ F(atom_k)`, reduced by pairwise summation in atom order.
pub fn evaluate_functional<'a, O, F>(occ: &O, f: F) -> Result<FunctionalAverage>
where
    O: Occupation<'a>,
    F: Fn(O::Atom) -> f64 + Sync,
{
    if occ.is_empty() {
        return Err(Error::EmptySample);
    }
    let v = evaluations(occ, f)?;
    Ok(FunctionalAverage {
        value: stats::mean(&v),
        batch_se: stats::batch_means_se(&v, DEFAULT_BATCHES),
    })
}

/// Partial averages `a_m = (1/m) Σ_{k<m} F(atom_k)` at increasing checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAverageSeries {
    pub functional_id: String,
    pub checkpoints: Vec<usize>,
    pub averages: Vec<f64>,
    pub batch_se: Vec<f64>,
}

impl TimeAverageSeries {
    fn from_values(functional_id: impl Into<String>, values: &[f64], checkpoints: &[usize]) -> Result<Self> {
        if checkpoints.is_empty() {
            return domain("at least one checkpoint is required");
        }
        if checkpoints.windows(2).any(|w| w[1] <= w[0]) || checkpoints[0] == 0 {
            return domain("checkpoints must be positive and strictly increasing");
        }
        if *checkpoints.last().expect("nonempty") > values.len() {
            return Err(Error::OutOfRange(format!(
                "checkpoint {} beyond {} atoms",
                checkpoints.last().expect("nonempty"),
                values.len()
            )));
        }
        let averages = checkpoints.iter().map(|&m| stats::mean(&values[..m])).collect();
        let batch_se = checkpoints
            .iter()
            .map(|&m| stats::batch_means_se(&values[..m], DEFAULT_BATCHES))
            .collect();
        Ok(Self {
            functional_id: functional_id.into(),
            checkpoints: checkpoints.to_vec(),
            averages,
            batch_se,
        })
    }

    pub fn last(&self) -> f64 {
        *self.averages.last().expect("nonempty series")
    }

    /// `|a_last − a_i| / |a_last|` for the checkpoint `i` closest to half of the
    /// last one.
    pub fn last_half_drift(&self) -> f64 {
        let half = self.checkpoints.last().expect("nonempty") / 2;
        let i = (0..self.checkpoints.len())
            .min_by_key(|&i| self.checkpoints[i].abs_diff(half))
            .expect("nonempty");
        let a = self.last();
        (a - self.averages[i]).abs() / a.abs()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header: &str) -> std::io::Result<()> {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "m,average,batch_se")?;
        for ((m, a), se) in self.checkpoints.iter().zip(&self.averages).zip(&self.batch_se) {
            writeln!(out, "{m},{a},{se}")?;
        }
        Ok(())
    }
}

/// Checkpointed partial averages of `F`.
pub fn evaluate_series<'a, O, F>(occ: &O, functional_id: &str, f: F, checkpoints: &[usize]) -> Result<TimeAverageSeries>
where
    O: Occupation<'a>,
    F: Fn(O::Atom) -> f64 + Sync,
{
    let v = evaluations(occ, f)?;
    TimeAverageSeries::from_values(functional_id, &v, checkpoints)
}

/// Partial averages of `V^p` along all stored grid states.
pub fn lyapunov_average(traj: &Trajectory, lyap: &LyapunovSpec, p: f64, checkpoints: &[usize]) -> Result<TimeAverageSeries> {
    lyapunov_average_over(&marginal_occupation(traj, traj.len())?, lyap, p, checkpoints)
}

pub fn lyapunov_average_over(
    marg: &MarginalOccupation<'_>,
    lyap: &LyapunovSpec,
    p: f64,
    checkpoints: &[usize],
) -> Result<TimeAverageSeries> {
    if !(p >= 1.0) {
        return domain(format!("p must be >= 1, got {p}"));
    }
    evaluate_series(marg, &format!("lyapunov^{p}"), |x: &[f64]| lyap.value(x).powf(p), checkpoints)
}

/// Fraction of atoms with `|x| > threshold`.
pub fn tail_mass(marg: &MarginalOccupation<'_>, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return domain(format!("threshold must be positive, got {threshold}"));
    }
    let t2 = threshold * threshold;
    let hits = (0..marg.len())
        .filter(|&k| marg.state(k).iter().map(|v| v * v).sum::<f64>() > t2)
        .count();
    Ok(hits as f64 / marg.len() as f64)
}

/// `n` checkpoints spaced geometrically up to `total`, always including
/// `total / 2` and `total`.
pub fn geometric_checkpoints(total: usize, count: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (1..=count.max(1))
        .map(|i| ((total as f64).powf(i as f64 / count.max(1) as f64)).round() as usize)
        .filter(|&m| m >= 1)
        .collect();
    v.push(total / 2);
    v.push(total);
    v.retain(|&m| m >= 1 && m <= total);
    v.sort_unstable();
    v.dedup();
    v
}

/// Ready-made functionals for window atoms.
pub mod functionals {
    use super::*;

    /// `sup_t V(path_t)`.
    pub fn sup_lyapunov(lyap: &LyapunovSpec) -> impl Fn(PathView<'_>) -> f64 + Sync + '_ {
        move |w: PathView<'_>| (0..w.len()).map(|i| lyap.value(w.value(i))).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `ω_{θ,T}(path, δ)` over the whole window.
    pub fn holder_modulus_of(theta: f64, delta: f64) -> impl Fn(PathView<'_>) -> f64 + Sync {
        move |w: PathView<'_>| {
            let horizon = w.time(w.len() - 1);
            holder_modulus(w, theta, horizon, delta).unwrap_or(f64::NAN)
        }
    }

    /// First coordinate at time 0.
    pub fn initial_value(w: PathView<'_>) -> f64 {
        w.value(0)[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::euler::{run_euler, simulate, EulerConfig};
    use crate::fgn::{generate_fgn, FgnConfig};
    use crate::model::{builtin_toy_model, CoefficientModel};
    use std::sync::Arc;

    fn frozen(x0: f64, steps: usize) -> Trajectory {
        let m = CoefficientModel::scalar("frozen", |_| 0.0, |_| 0.0, 0.0, 0.0).unwrap();
        let n = Arc::new(generate_fgn(FgnConfig::new(0.7, 0.1, steps, 0).unwrap(), 1).unwrap());
        run_euler(&m, &EulerConfig::new(0.1, steps, vec![x0]), n).unwrap()
    }

    fn toy(steps: usize, seed: u64) -> Trajectory {
        let (m, _) = builtin_toy_model();
        simulate(&m, &EulerConfig::new(0.05, steps, vec![0.0]), 0.75, seed).unwrap()
    }

    #[test]
    fn marginal_examples() {
        let t = toy(100, 1);
        let one = marginal_occupation(&t, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.state(0), &[0.0]);
        let f = frozen(5.0, 20);
        let m = marginal_occupation(&f, 21).unwrap();
        let avg = evaluate_functional(&m, |x: &[f64]| x[0].sin()).unwrap();
        assert!((avg.value - 5f64.sin()).abs() < 1e-15);
        assert!(marginal_occupation(&f, 22).is_err());
        assert!(marginal_occupation(&f, 0).is_err());
    }

    #[test]
    fn marginal_states_follow_grid() {
        let t = toy(50, 2);
        let m = marginal_occupation_from(&t, 5, 30).unwrap();
        for k in 0..30 {
            assert_eq!(m.state(k), t.grid_value(5 + k).unwrap());
        }
    }

    #[test]
    fn functional_examples() {
        let t = toy(500, 3);
        let m = marginal_occupation(&t, 400).unwrap();
        assert_eq!(evaluate_functional(&m, |_: &[f64]| 1.0).unwrap().value, 1.0);
        let w = window_occupation(&t, 400, 1.0).unwrap();
        let a = evaluate_functional(&w, functionals::initial_value).unwrap().value;
        let b = stats::mean(m.states());
        assert_eq!(a, b);
    }

    #[test]
    fn nonfinite_functional_reports_atom() {
        let f = frozen(1.0, 10);
        let m = marginal_occupation(&f, 5).unwrap();
        let e = evaluate_functional(&m, |_: &[f64]| f64::NAN).unwrap_err();
        assert_eq!(e, Error::NonFiniteFunctional { atom: 0 });
    }

    #[test]
    fn linear_and_permutation_invariant() {
        let t = toy(2000, 4);
        let m = marginal_occupation(&t, 2001).unwrap();
        let f = |x: &[f64]| x[0].cos();
        let g = |x: &[f64]| x[0] * x[0];
        let fa = evaluate_functional(&m, f).unwrap().value;
        let ga = evaluate_functional(&m, g).unwrap().value;
        let ha = evaluate_functional(&m, |x: &[f64]| 2.0 * f(x) - 3.0 * g(x)).unwrap().value;
        assert!((ha - (2.0 * fa - 3.0 * ga)).abs() < 1e-10 * ha.abs().max(1.0));

        let mut shuffled = m.states().to_vec();
        shuffled.reverse();
        shuffled.swap(3, 1000);
        let p = MarginalOccupation::from_states(&shuffled, 1, 0.05).unwrap();
        let pa = evaluate_functional(&p, g).unwrap().value;
        assert!((pa - ga).abs() < 1e-12 * ga);
    }

    #[test]
    fn marginal_equals_window_time_zero() {
        let t = toy(300, 5);
        for horizon in [0.0, 0.5, 2.0] {
            let w = window_occupation(&t, 200, horizon).unwrap();
            let m = marginal_occupation(&t, 200).unwrap();
            assert_eq!(w.marginal().states(), m.states());
        }
    }

    #[test]
    fn shift_consistency() {
        let t = toy(5000, 6);
        let n = 4000;
        let w = window_occupation(&t, n, 1.0).unwrap();
        let f = |p: PathView<'_>| (0..p.len()).map(|i| p.value(i)[0].tanh()).sum::<f64>() / p.len() as f64;
        let a = evaluate_functional(&w, f).unwrap().value;
        let b = evaluate_functional(&w.skip(1).unwrap(), f).unwrap().value;
        assert!((a - b).abs() <= 2.0 * 1.0 / n as f64);
    }

    #[test]
    fn window_examples() {
        let t = toy(40, 7);
        let w = window_occupation(&t, 1, t.horizon()).unwrap();
        let atom = w.window(0);
        assert_eq!(atom.len(), t.len());
        assert!(window_occupation(&t, 2, t.horizon()).is_err());
        let f = frozen(2.0, 30);
        let w = window_occupation(&f, 10, 1.0).unwrap();
        for k in 0..10 {
            assert_eq!(w.window(k), w.window(0));
        }
    }

    #[test]
    fn lyapunov_average_examples() {
        let one = LyapunovSpec::scalar(|_| 1.0, |_| 0.0, 1.0, 1.0, 0.0).unwrap();
        let t = toy(100, 8);
        let s = lyapunov_average(&t, &one, 2.0, &[1, 50, 101]).unwrap();
        assert_eq!(s.averages, vec![1.0, 1.0, 1.0]);

        let m = CoefficientModel::scalar("decay", |x| -x, |_| 0.0, 0.0, 0.0).unwrap();
        let n = Arc::new(generate_fgn(FgnConfig::new(0.7, 0.1, 400, 0).unwrap(), 1).unwrap());
        let t = run_euler(&m, &EulerConfig::new(0.1, 400, vec![10.0]), n).unwrap();
        let v = LyapunovSpec::quadratic(1.0, 2.0, 2.0).unwrap();
        let cps = [1, 10, 50, 100, 200, 401];
        let s = lyapunov_average(&t, &v, 1.0, &cps).unwrap();
        // Closed form: x_k = 10·0.9^k.
        for (m, a) in cps.iter().zip(&s.averages) {
            let want: f64 = (0..*m).map(|k| 1.0 + 100.0 * 0.81f64.powi(k as i32)).sum::<f64>() / *m as f64;
            assert!((a - want).abs() < 1e-9 * want);
        }
        for w in s.averages.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(s.last() > 1.0);
        assert!(lyapunov_average(&t, &v, 0.5, &cps).is_err());
        assert!(lyapunov_average(&t, &v, 1.0, &[5, 5]).is_err());
        assert!(lyapunov_average(&t, &v, 1.0, &[402]).is_err());
    }

    #[test]
    fn tail_mass_examples() {
        let zeros = [0.0; 10];
        let m = MarginalOccupation::from_states(&zeros, 1, 1.0).unwrap();
        assert_eq!(tail_mass(&m, 0.1).unwrap(), 0.0);
        let pm = [-2.0, 2.0];
        let m = MarginalOccupation::from_states(&pm, 1, 1.0).unwrap();
        assert_eq!(tail_mass(&m, 1.0).unwrap(), 1.0);
        assert!(tail_mass(&m, 0.0).is_err());
    }

    #[test]
    fn series_csv() {
        let t = toy(100, 9);
        let v = LyapunovSpec::quadratic(1.0, 2.0, 2.0).unwrap();
        let s = lyapunov_average(&t, &v, 1.0, &[10, 101]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf, "series").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# series\nm,average,batch_se\n10,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn checkpoints_are_sorted_and_contain_half() {
        let c = geometric_checkpoints(1000, 3);
        assert_eq!(c, vec![10, 100, 500, 1000]);
    }
}
