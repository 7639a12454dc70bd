//! Command-line flags. Every flag is optional and overrides the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Command, ExperimentConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fbm-ergodic", version, about = "Euler-scheme experiments for SDEs driven by fractional Brownian motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Simulate one trajectory and write it as CSV.
    Simulate(CommonArgs),
    /// Kernel density estimate of the marginal occupation measure.
    Density(DensityArgs),
    /// Densities for a grid of step counts and Hurst indices, with distances.
    Compare(CompareArgs),
    /// Path-space and ergodic diagnostics.
    Diagnose(DiagnoseArgs),
    /// Empirical fGn autocovariance against the analytic one.
    FgnTest(FgnTestArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Registered model name (`toy`, `fou`).
    #[arg(long)]
    pub model: Option<String>,
    /// Model parameter as `name=value`; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long)]
    pub hurst: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub initial_state: Option<f64>,
    /// Fraction of stored states discarded before statistics.
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Keep every N-th state.
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Kernel convention: variance, printed or stddev.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub grid_halfwidth: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub max_increments: Option<usize>,
    #[arg(long)]
    pub max_memory_mb: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Compare with the H = 1/2 speed-measure density.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated step counts.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Comma-separated Hurst indices.
    #[arg(long, value_delimiter = ',')]
    pub h_list: Option<Vec<f64>>,
    /// Number of seeds per cell.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub tail_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated subset of: checks, lyapunov, tail, sup_lyapunov,
    /// holder, quadratic, young_ladder.
    #[arg(long, value_delimiter = ',')]
    pub functionals: Option<Vec<String>>,
    #[arg(long)]
    pub lyapunov_power: Option<f64>,
    #[arg(long)]
    pub checkpoints: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long)]
    pub tail_threshold: Option<f64>,
    #[arg(long)]
    pub ladder_seeds: Option<usize>,
    #[arg(long)]
    pub ladder_ratio: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FgnTestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of independent seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Increments per seed.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub max_lag: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        set(&mut c.model, self.model.clone());
        for p in &self.params {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("param: expected NAME=VALUE, got {p:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("param: {k} value {v:?} is not a number")))?;
            c.params.insert(k.trim().to_string(), v);
        }
        set(&mut c.hurst, self.hurst);
        set(&mut c.gamma, self.gamma);
        set(&mut c.steps, self.steps);
        set(&mut c.seed, self.seed);
        set(&mut c.initial_state, self.initial_state);
        set(&mut c.burn_in, self.burn_in);
        set(&mut c.thin, self.thin);
        set(&mut c.bandwidth, self.bandwidth);
        set(&mut c.kernel, self.kernel.clone());
        set(&mut c.grid_points, self.grid_points);
        if self.grid_halfwidth.is_some() {
            c.grid_halfwidth = self.grid_halfwidth;
        }
        set(&mut c.jobs, self.jobs);
        set(&mut c.out_dir, self.out_dir.clone());
        set(&mut c.max_increments, self.max_increments);
        set(&mut c.max_memory_mb, self.max_memory_mb);
        Ok(c)
    }
}

impl CliCommand {
    /// The subcommand and its resolved configuration.
    pub fn resolve(&self) -> Result<(Command, ExperimentConfig), CliError> {
        Ok(match self {
            CliCommand::Simulate(a) => (Command::Simulate, a.load()?),
            CliCommand::Density(a) => {
                let mut c = a.common.load()?;
                if a.oracle {
                    c.density.oracle = true;
                }
                (Command::Density, c)
            }
            CliCommand::Compare(a) => {
                let mut c = a.common.load()?;
                set(&mut c.compare.n_list, a.n_list.clone());
                set(&mut c.compare.h_list, a.h_list.clone());
                set(&mut c.compare.seeds, a.seeds);
                set(&mut c.compare.tail_threshold, a.tail_threshold);
                (Command::Compare, c)
            }
            CliCommand::Diagnose(a) => {
                let mut c = a.common.load()?;
                let d = &mut c.diagnose;
                set(&mut d.functionals, a.functionals.clone());
                set(&mut d.lyapunov_power, a.lyapunov_power);
                set(&mut d.checkpoints, a.checkpoints);
                set(&mut d.theta, a.theta);
                set(&mut d.delta, a.delta);
                set(&mut d.window, a.window);
                set(&mut d.tail_threshold, a.tail_threshold);
                set(&mut d.ladder_seeds, a.ladder_seeds);
                set(&mut d.ladder_ratio, a.ladder_ratio);
                (Command::Diagnose, c)
            }
            CliCommand::FgnTest(a) => {
                let mut c = a.common.load()?;
                set(&mut c.fgn_test.seeds, a.seeds);
                set(&mut c.fgn_test.count, a.count);
                set(&mut c.fgn_test.max_lag, a.max_lag);
                (Command::FgnTest, c)
            }
        })
    }
}
