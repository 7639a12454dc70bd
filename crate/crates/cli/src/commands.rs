//! Subcommand pipelines: noise → Euler → occupation → density/diagnostics.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use fbm_ergodic::density::{
    kde_states, l1_distance, linf_distance, oracle_density_h_half, oracle_halfwidth, DensityEstimate, Grid,
    KernelSpec,
};
use fbm_ergodic::ergodic::{
    evaluate_functional, functionals, geometric_checkpoints, lyapunov_average_over, marginal_occupation_from,
    tail_mass, window_occupation_from, MarginalOccupation, Occupation,
};
use fbm_ergodic::euler::{discretization_ladder, run_euler, EulerConfig};
use fbm_ergodic::fgn::{acf_check, embedding_len, generate_fgn_capped, FgnConfig};
use fbm_ergodic::model::{self, SampleBox};
use fbm_ergodic::pathspace::{holder_seminorm, quadratic_functional, PathView};
use fbm_ergodic::stats::{self, median};
use fbm_ergodic::{CoefficientModel, LyapunovSpec, ModelRegistry, Trajectory};
use rayon::prelude::*;

use crate::config::{Command, ExperimentConfig};
use crate::error::CliError;
use crate::manifest::{ArtifactWriter, RunManifest};

/// A validated configuration with its model built.
pub struct Context {
    pub command: Command,
    pub config: ExperimentConfig,
    pub model: Option<(CoefficientModel, LyapunovSpec)>,
}

impl Context {
    /// Validates every field, builds the model and applies the memory guard.
    /// Nothing is written before this succeeds.
    pub fn prepare(config: ExperimentConfig, command: Command, registry: &ModelRegistry) -> Result<Self, CliError> {
        config.validate(command)?;
        let model = if command == Command::FgnTest {
            None
        } else {
            let built = registry
                .build(&config.model, &config.params)
                .map_err(|e| CliError::Config(format!("model: {e}")))?;
            if command == Command::Density && config.density.oracle && (built.0.dim_state() != 1 || built.0.dim_noise() != 1) {
                return Err(CliError::Config("density.oracle: the oracle needs a one-dimensional model".into()));
            }
            Some(built)
        };
        let ctx = Self { command, config, model };
        ctx.check_resources()?;
        Ok(ctx)
    }

    fn model(&self) -> &CoefficientModel {
        &self.model.as_ref().expect("model built for this command").0
    }

    fn lyapunov(&self) -> &LyapunovSpec {
        &self.model.as_ref().expect("model built for this command").1
    }

    /// Noise, FFT workspace and stored states of one simulation of `steps`.
    fn simulation_bytes(&self, steps: usize) -> u64 {
        let (q, d) = self
            .model
            .as_ref()
            .map_or((1, 1), |(m, _)| (m.dim_noise() as u64, m.dim_state() as u64));
        let embedding = 2 * embedding_len(steps) as u64;
        let noise = steps as u64 * q * 8;
        let fft = embedding * (2 * 16 + 8);
        let states = (steps / self.config.thin + 1) as u64 * d * 8;
        noise + fft + states
    }

    pub fn estimated_bytes(&self) -> u64 {
        let c = &self.config;
        match self.command {
            Command::FgnTest => 2 * embedding_len(c.fgn_test.count) as u64 * (2 * 16 + 8) + c.fgn_test.count as u64 * 8,
            Command::Compare => {
                let (hs, ns) = c.compare_axes();
                let n_max = *ns.iter().max().expect("validated");
                let groups = (hs.len() * c.compare.seeds) as u64;
                let concurrent = groups.min(c.jobs as u64);
                let kept: u64 = ns.iter().map(|n| (n / c.thin + 1) as u64 * 8).sum();
                concurrent * self.simulation_bytes(n_max) + groups * kept
            }
            _ => self.simulation_bytes(c.steps),
        }
    }

    fn check_resources(&self) -> Result<(), CliError> {
        let c = &self.config;
        let largest = match self.command {
            Command::FgnTest => c.fgn_test.count,
            Command::Compare => *c.compare_axes().1.iter().max().expect("validated"),
            _ => c.steps,
        };
        if largest > c.max_increments {
            return Err(CliError::Resource(format!(
                "max_increments: {largest} noise increments requested, cap is {}",
                c.max_increments
            )));
        }
        let bytes = self.estimated_bytes();
        let cap = c.max_memory_mb.saturating_mul(1 << 20);
        if bytes > cap {
            return Err(CliError::Resource(format!(
                "max_memory_mb: estimated footprint {} MiB exceeds the cap of {} MiB",
                bytes >> 20,
                c.max_memory_mb
            )));
        }
        Ok(())
    }

    fn simulate(&self, hurst: f64, steps: usize, seed: u64) -> Result<Trajectory, CliError> {
        let c = &self.config;
        let model = self.model();
        let noise = generate_fgn_capped(FgnConfig::new(hurst, c.gamma, steps, seed)?, model.dim_noise(), c.max_increments)?;
        let euler = EulerConfig::new(c.gamma, steps, vec![c.initial_state; model.dim_state()]).with_thinning(c.thin);
        Ok(run_euler(model, &euler, Arc::new(noise))?)
    }

    fn header(&self, extra: &str) -> String {
        let c = &self.config;
        let mut h = format!(
            "fbm-ergodic {} {}\nmodel={} params={:?} gamma={} seed={} x0={} burn_in={} thin={}",
            env!("CARGO_PKG_VERSION"),
            self.command.name(),
            c.model,
            c.params,
            c.gamma,
            c.seed,
            c.initial_state,
            c.burn_in,
            c.thin
        );
        if !extra.is_empty() {
            h.push('\n');
            h.push_str(extra);
        }
        h
    }
}

/// Stored states after discarding the burn-in fraction.
fn post_burn_in(traj: &Trajectory, burn_in: f64) -> Result<MarginalOccupation<'_>, CliError> {
    let len = traj.len();
    let start = ((burn_in * len as f64).floor() as usize).min(len - 1);
    Ok(marginal_occupation_from(traj, start, len - start)?)
}

fn grid_for(config: &ExperimentConfig, samples: &[&[f64]]) -> Result<Grid, CliError> {
    if let Some(l) = config.grid_halfwidth {
        return Ok(Grid::symmetric(l, config.grid_points)?);
    }
    let mut l = 0.0f64;
    for s in samples {
        if s.len() >= 2 {
            l = l.max(6.0 * stats::variance(s).sqrt());
        }
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(CliError::Config(
            "grid_halfwidth: the sample has no spread; set the grid halfwidth explicitly".into(),
        ));
    }
    Ok(Grid::symmetric(l, config.grid_points)?)
}

fn finish(
    ctx: &Context,
    writer: ArtifactWriter,
    metrics: BTreeMap<String, f64>,
    mut notes: Vec<String>,
    started: Instant,
) -> Result<RunManifest, CliError> {
    let mut finite = BTreeMap::new();
    for (k, v) in metrics {
        if v.is_finite() {
            finite.insert(k, v);
        } else {
            notes.push(format!("{k} = {v}"));
        }
    }
    writer.finish(ctx.command.name(), &ctx.config, finite, notes, started.elapsed().as_secs_f64())
}

fn open_writer(ctx: &Context) -> Result<ArtifactWriter, CliError> {
    let mut w = ArtifactWriter::create(&ctx.config.out_dir)?;
    let toml = ctx.config.to_toml();
    w.write("config.toml", |out| out.write_all(toml.as_bytes()))?;
    Ok(w)
}

/// Runs `ctx.command` on a pool of `jobs` threads.
pub fn execute(ctx: &Context) -> Result<RunManifest, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.jobs)
        .build()
        .map_err(|e| CliError::Resource(format!("jobs: cannot start worker threads: {e}")))?;
    pool.install(|| match ctx.command {
        Command::Simulate => cmd_simulate(ctx),
        Command::Density => cmd_density(ctx),
        Command::Compare => cmd_compare(ctx),
        Command::Diagnose => cmd_diagnose(ctx),
        Command::FgnTest => cmd_fgn_test(ctx),
    })
}

pub fn cmd_simulate(ctx: &Context) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let c = &ctx.config;
    let traj = ctx.simulate(c.hurst, c.steps, c.seed)?;
    let mut w = open_writer(ctx)?;
    let header = ctx.header(&format!("hurst={} steps={}", c.hurst, c.steps));
    w.write("trajectory.csv", |out| traj.write_csv(out, &header, 1))?;
    let mut metrics = BTreeMap::new();
    metrics.insert("stored_states".into(), traj.len() as f64);
    metrics.insert("horizon".into(), traj.horizon());
    for (j, x) in traj.stored(traj.len() - 1).iter().enumerate() {
        metrics.insert(format!("final_state[{}]", j + 1), *x);
    }
    finish(ctx, w, metrics, vec![], started)
}

pub fn cmd_density(ctx: &Context) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let c = &ctx.config;
    let traj = ctx.simulate(c.hurst, c.steps, c.seed)?;
    let marg = post_burn_in(&traj, c.burn_in)?;
    if marg.dim() != 1 {
        return Err(CliError::Config("model: density estimation needs a one-dimensional state".into()));
    }
    let mut grid = grid_for(c, &[marg.states()])?;
    if c.density.oracle && c.grid_halfwidth.is_none() {
        let l = oracle_halfwidth(ctx.model())?.max(-grid.start);
        grid = Grid::symmetric(l, c.grid_points)?;
    }
    let kernel = KernelSpec::new(c.bandwidth, c.kernel_mode()?)?;
    let est = kde_states(marg.states(), kernel, grid)?;
    let oracle = if c.density.oracle {
        Some(oracle_density_h_half(ctx.model(), grid)?)
    } else {
        None
    };
    let mut w = open_writer(ctx)?;
    let base = format!(
        "hurst={} steps={} states={} kernel={} h={}",
        c.hurst,
        c.steps,
        marg.len(),
        c.kernel,
        c.bandwidth
    );
    let header = ctx.header(&base);
    w.write("density.csv", |out| est.write_csv(out, &header))?;
    let mut metrics = BTreeMap::new();
    metrics.insert("states".into(), marg.len() as f64);
    metrics.insert("grid_halfwidth".into(), grid.end());
    metrics.insert("kde_normalization".into(), est.normalization);
    if let Some(o) = &oracle {
        let header = ctx.header("hurst=0.5 oracle");
        w.write("oracle.csv", |out| o.write_csv(out, &header))?;
        metrics.insert("l1_to_oracle".into(), l1_distance(&est, o)?);
        metrics.insert("linf_to_oracle".into(), linf_distance(&est, o)?);
    }
    finish(ctx, w, metrics, vec![], started)
}

/// One comparison cell: a burn-in-trimmed prefix of a trajectory.
#[derive(Debug, Clone)]
pub struct CompareCell {
    pub hurst: f64,
    pub n: usize,
    pub seed: u64,
    pub states: Vec<f64>,
}

impl CompareCell {
    pub fn id(&self) -> String {
        format!("H{}_n{}_s{}", self.hurst, self.n, self.seed)
    }
}

/// Cells with the same `(H, seed)` are prefixes of one trajectory of the
/// largest `n`; burn-in is taken as a fraction of each cell's own states.
pub fn compare_cells(ctx: &Context) -> Result<Vec<CompareCell>, CliError> {
    let c = &ctx.config;
    let (hs, ns) = c.compare_axes();
    let n_max = *ns.iter().max().expect("validated");
    let groups: Vec<(f64, u64)> = hs
        .iter()
        .flat_map(|&h| (0..c.compare.seeds as u64).map(move |i| (h, c.seed + i)))
        .collect();
    let per_group: Vec<Vec<CompareCell>> = groups
        .par_iter()
        .map(|&(h, seed)| {
            let traj = ctx.simulate(h, n_max, seed)?;
            if traj.dim() != 1 {
                return Err(CliError::Config("model: comparison needs a one-dimensional state".into()));
            }
            let all = traj.states();
            Ok(ns
                .iter()
                .map(|&n| {
                    let stored = (n / c.thin + 1).min(all.len());
                    let start = ((c.burn_in * stored as f64).floor() as usize).min(stored - 1);
                    CompareCell {
                        hurst: h,
                        n,
                        seed,
                        states: all[start..stored].to_vec(),
                    }
                })
                .collect())
        })
        .collect::<Result<_, CliError>>()?;
    Ok(per_group.into_iter().flatten().collect())
}

pub fn cmd_compare(ctx: &Context) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let c = &ctx.config;
    let cells = compare_cells(ctx)?;
    let samples: Vec<&[f64]> = cells.iter().map(|cell| cell.states.as_slice()).collect();
    let grid = grid_for(c, &samples)?;
    let kernel = KernelSpec::new(c.bandwidth, c.kernel_mode()?)?;
    let densities: Vec<DensityEstimate> = cells
        .iter()
        .map(|cell| kde_states(&cell.states, kernel, grid))
        .collect::<Result<_, _>>()?;
    let tails: Vec<f64> = cells
        .iter()
        .map(|cell| {
            let m = MarginalOccupation::from_states(&cell.states, 1, c.gamma * c.thin as f64)?;
            tail_mass(&m, c.compare.tail_threshold)
        })
        .collect::<Result<_, _>>()?;
    let n_max = cells.iter().map(|cell| cell.n).max().expect("cells");
    let largest = |cell: &CompareCell| {
        cells
            .iter()
            .position(|o| o.n == n_max && o.hurst == cell.hurst && o.seed == cell.seed)
            .expect("largest cell exists")
    };
    let mut to_largest = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let j = largest(cell);
        to_largest.push((l1_distance(&densities[i], &densities[j])?, linf_distance(&densities[i], &densities[j])?));
    }

    let mut w = open_writer(ctx)?;
    let header = ctx.header(&format!(
        "kernel={} h={} tail_threshold={} cells={}",
        c.kernel,
        c.bandwidth,
        c.compare.tail_threshold,
        cells.len()
    ));
    w.write("densities.csv", |out| {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        let ids: Vec<String> = cells.iter().map(CompareCell::id).collect();
        writeln!(out, "x,{}", ids.join(","))?;
        for i in 0..grid.len {
            write!(out, "{}", grid.point(i))?;
            for d in &densities {
                write!(out, ",{}", d.values[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    })?;
    w.write("cells.csv", |out| {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "cell,hurst,n,seed,states,tail_mass,normalization,l1_to_largest_n,linf_to_largest_n")?;
        for (i, cell) in cells.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                cell.id(),
                cell.hurst,
                cell.n,
                cell.seed,
                cell.states.len(),
                tails[i],
                densities[i].normalization,
                to_largest[i].0,
                to_largest[i].1
            )?;
        }
        Ok(())
    })?;
    let mut pairs = Vec::new();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            pairs.push((i, j, l1_distance(&densities[i], &densities[j])?, linf_distance(&densities[i], &densities[j])?));
        }
    }
    w.write("distances.csv", |out| {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "cell_a,cell_b,l1,linf")?;
        for (i, j, l1, linf) in &pairs {
            writeln!(out, "{},{},{l1},{linf}", cells[*i].id(), cells[*j].id())?;
        }
        Ok(())
    })?;

    let (hs, ns) = c.compare_axes();
    let mut metrics = BTreeMap::new();
    let mut notes = Vec::new();
    for &h in &hs {
        let t: Vec<f64> = (0..cells.len()).filter(|&i| cells[i].hurst == h && cells[i].n == n_max).map(|i| tails[i]).collect();
        metrics.insert(format!("tail_mass_median[H={h}]"), median(&t));
        for &n in ns.iter().filter(|&&n| n != n_max) {
            let d: Vec<f64> = (0..cells.len())
                .filter(|&i| cells[i].hurst == h && cells[i].n == n)
                .map(|i| to_largest[i].1)
                .collect();
            metrics.insert(format!("linf_to_largest_median[H={h},n={n}]"), median(&d));
        }
    }
    if hs.len() >= 2 {
        let order: Vec<String> = hs
            .iter()
            .map(|h| format!("H={h}: {:.6}", metrics[&format!("tail_mass_median[H={h}]")]))
            .collect();
        notes.push(format!("tail mass beyond {} (median over seeds): {}", c.compare.tail_threshold, order.join(", ")));
    }
    finish(ctx, w, metrics, notes, started)
}

struct Row {
    functional: String,
    parameters: String,
    value: f64,
    batch_se: Option<f64>,
}

pub fn cmd_diagnose(ctx: &Context) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let c = &ctx.config;
    let d = &c.diagnose;
    let wants = |name: &str| d.functionals.iter().any(|f| f == name);
    let (model, lyap) = (ctx.model(), ctx.lyapunov());
    let traj = ctx.simulate(c.hurst, c.steps, c.seed)?;
    let marg = post_burn_in(&traj, c.burn_in)?;
    let start = traj.len() - marg.len();
    let step = c.gamma * c.thin as f64;
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut series_csv = None;

    if wants("checks") {
        let sample = SampleBox::default();
        for r in model::validate(model, lyap, &sample.points(model.dim_state())) {
            rows.push(Row {
                functional: format!("check_{}", r.check),
                parameters: format!("box={};per_axis={}", sample.halfwidth, sample.per_axis),
                value: if r.passed { 1.0 } else { 0.0 },
                batch_se: None,
            });
            if !r.passed {
                notes.push(format!(
                    "check {} failed at {} of {} points (worst {} at {:?})",
                    r.check,
                    r.violations.len(),
                    r.points_checked,
                    r.worst_value,
                    r.worst_point
                ));
            }
        }
    }
    if wants("lyapunov") {
        let p = d.lyapunov_power;
        let series = lyapunov_average_over(&marg, lyap, p, &geometric_checkpoints(marg.len(), d.checkpoints))?;
        rows.push(Row {
            functional: "lyapunov_average".into(),
            parameters: format!("p={p}"),
            value: series.last(),
            batch_se: series.batch_se.last().copied(),
        });
        rows.push(Row {
            functional: "lyapunov_last_half_drift".into(),
            parameters: format!("p={p}"),
            value: series.last_half_drift(),
            batch_se: None,
        });
        series_csv = Some(series);
    }
    if wants("tail") {
        rows.push(Row {
            functional: "tail_mass".into(),
            parameters: format!("threshold={}", d.tail_threshold),
            value: tail_mass(&marg, d.tail_threshold)?,
            batch_se: None,
        });
    }
    if wants("sup_lyapunov") || wants("holder") {
        let span = (d.window / step + 1e-9).floor() as usize;
        if start + span < traj.len() {
            let n = traj.len() - start - span;
            let windows = window_occupation_from(&traj, start, n, d.window)?;
            if wants("sup_lyapunov") {
                let avg = evaluate_functional(&windows, functionals::sup_lyapunov(lyap))?;
                rows.push(Row {
                    functional: "sup_lyapunov_window".into(),
                    parameters: format!("window={}", d.window),
                    value: avg.value,
                    batch_se: Some(avg.batch_se),
                });
            }
            if wants("holder") {
                let avg = evaluate_functional(&windows, functionals::holder_modulus_of(d.theta, d.delta))?;
                rows.push(Row {
                    functional: "holder_modulus_window".into(),
                    parameters: format!("theta={};delta={};window={}", d.theta, d.delta, d.window),
                    value: avg.value,
                    batch_se: Some(avg.batch_se),
                });
            }
        } else {
            notes.push(format!("window {} is longer than the post-burn-in run; window functionals skipped", d.window));
        }
    }
    let noise = traj.noise();
    let path = &noise.path()[0];
    if wants("holder") {
        let samples = path.len().min(fbm_ergodic::pathspace::EXACT_PAIR_LIMIT);
        let view = PathView::uniform(0.0, c.gamma, &path[..samples], 1)?;
        let t = c.gamma * (samples - 1) as f64;
        let r = holder_seminorm(view, d.theta, 0.0, t)?;
        rows.push(Row {
            functional: "holder_seminorm_noise".into(),
            parameters: format!("theta={};t={t}", d.theta),
            value: r.seminorm,
            batch_se: None,
        });
    }
    if wants("quadratic") {
        let view = PathView::uniform(0.0, c.gamma, path, 1)?;
        let horizon = traj.horizon();
        rows.push(Row {
            functional: "quadratic_noise".into(),
            parameters: format!("gamma={};t={horizon}", c.gamma),
            value: quadratic_functional(view, horizon)?,
            batch_se: None,
        });
    }
    if wants("young_ladder") {
        let seeds: Vec<u64> = (0..d.ladder_seeds as u64).map(|i| c.seed + i).collect();
        let x0 = vec![c.initial_state; model.dim_state()];
        let ladder = discretization_ladder(model, &x0, c.hurst, &d.ladder_gammas, d.ladder_ratio, d.ladder_horizon, &seeds)?;
        for (g, e) in ladder.gammas.iter().zip(&ladder.mean_errors) {
            rows.push(Row {
                functional: "young_ladder_error".into(),
                parameters: format!("gamma={g};ratio={};t={}", d.ladder_ratio, d.ladder_horizon),
                value: *e,
                batch_se: None,
            });
        }
        rows.push(Row {
            functional: "young_ladder_slope".into(),
            parameters: format!("ratio={};seeds={};t={}", d.ladder_ratio, d.ladder_seeds, d.ladder_horizon),
            value: ladder.slope,
            batch_se: None,
        });
    }

    let mut w = open_writer(ctx)?;
    let header = ctx.header(&format!("hurst={} steps={} states={}", c.hurst, c.steps, marg.len()));
    w.write("diagnostics.csv", |out| {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "functional,parameters,value,batch_se")?;
        for r in &rows {
            let se = r.batch_se.map(|s| s.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{se}", r.functional, r.parameters, r.value)?;
        }
        Ok(())
    })?;
    if let Some(series) = &series_csv {
        w.write("lyapunov_series.csv", |out| series.write_csv(out, &header))?;
    }
    let metrics = rows
        .iter()
        .map(|r| (format!("{}[{}]", r.functional, r.parameters), r.value))
        .collect();
    finish(ctx, w, metrics, notes, started)
}

pub fn cmd_fgn_test(ctx: &Context) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let c = &ctx.config;
    let s = &c.fgn_test;
    let seeds: Vec<u64> = (0..s.seeds as u64).map(|i| c.seed + i).collect();
    let rows = acf_check(c.hurst, s.count, &seeds, s.max_lag)?;
    let mut w = open_writer(ctx)?;
    let header = format!(
        "fbm-ergodic {} fgn-test\nhurst={} step=1 count={} seeds={}..{} max_lag={}",
        env!("CARGO_PKG_VERSION"),
        c.hurst,
        s.count,
        c.seed,
        c.seed + s.seeds as u64 - 1,
        s.max_lag
    );
    w.write("fgn_test.csv", |out| {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "lag,analytic,empirical,z_score")?;
        for r in &rows {
            writeln!(out, "{},{},{},{}", r.lag, r.analytic, r.empirical, r.z_score)?;
        }
        Ok(())
    })?;
    let max_z = rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    let mut metrics = BTreeMap::new();
    metrics.insert("max_abs_z".into(), max_z);
    finish(ctx, w, metrics, vec![], started)
}
