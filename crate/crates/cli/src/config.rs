//! Experiment configuration: TOML file with a common block and one section
//! per subcommand. Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use fbm_ergodic::density::KernelMode;
use fbm_ergodic::fgn::DEFAULT_MAX_INCREMENTS;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub hurst: f64,
    pub gamma: f64,
    /// Euler steps `n`.
    pub steps: usize,
    pub seed: u64,
    pub initial_state: f64,
    /// Fraction of stored states discarded before occupation statistics.
    pub burn_in: f64,
    /// Keep every `thin`-th state.
    pub thin: usize,
    pub bandwidth: f64,
    /// `variance` (default), `printed` or `stddev`.
    pub kernel: String,
    pub grid_points: usize,
    /// Grid is `[−L, L]`; automatic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_halfwidth: Option<f64>,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub max_increments: usize,
    pub max_memory_mb: u64,
    pub params: BTreeMap<String, f64>,
    pub density: DensitySection,
    pub compare: CompareSection,
    pub diagnose: DiagnoseSection,
    pub fgn_test: FgnTestSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "toy".into(),
            hurst: 0.75,
            gamma: 0.05,
            steps: 100_000,
            seed: 0,
            initial_state: 0.0,
            burn_in: 0.1,
            thin: 1,
            bandwidth: 0.2,
            kernel: KernelMode::default().to_string(),
            grid_points: fbm_ergodic::density::DEFAULT_GRID_POINTS,
            grid_halfwidth: None,
            jobs: 1,
            out_dir: PathBuf::from("out"),
            max_increments: DEFAULT_MAX_INCREMENTS,
            max_memory_mb: 4096,
            params: BTreeMap::new(),
            density: DensitySection::default(),
            compare: CompareSection::default(),
            diagnose: DiagnoseSection::default(),
            fgn_test: FgnTestSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    /// Also emit the `H = 1/2` speed-measure density and distances to it.
    pub oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Step counts per cell; `[steps]` when empty.
    pub n_list: Vec<usize>,
    /// Hurst indices per cell; `[hurst]` when empty.
    pub h_list: Vec<f64>,
    /// Seeds `seed, seed+1, …` per (n, H).
    pub seeds: usize,
    pub tail_threshold: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            n_list: Vec::new(),
            h_list: Vec::new(),
            seeds: 1,
            tail_threshold: 8.0,
        }
    }
}

pub const DIAGNOSE_FUNCTIONALS: [&str; 7] = [
    "checks",
    "lyapunov",
    "tail",
    "sup_lyapunov",
    "holder",
    "quadratic",
    "young_ladder",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub functionals: Vec<String>,
    pub lyapunov_power: f64,
    pub checkpoints: usize,
    pub theta: f64,
    pub delta: f64,
    /// Window length `T` of path-space atoms.
    pub window: f64,
    pub tail_threshold: f64,
    pub ladder_gammas: Vec<f64>,
    pub ladder_ratio: usize,
    pub ladder_seeds: usize,
    pub ladder_horizon: f64,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            functionals: DIAGNOSE_FUNCTIONALS.iter().map(|s| s.to_string()).collect(),
            lyapunov_power: 1.0,
            checkpoints: 20,
            theta: 0.6,
            delta: 0.25,
            window: 1.0,
            tail_threshold: 8.0,
            ladder_gammas: (4..=9).map(|k| 2f64.powi(-k)).collect(),
            ladder_ratio: 16,
            ladder_seeds: 20,
            ladder_horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgnTestSection {
    pub seeds: usize,
    pub count: usize,
    pub max_lag: usize,
}

impl Default for FgnTestSection {
    fn default() -> Self {
        Self {
            seeds: 30,
            count: 1 << 16,
            max_lag: 20,
        }
    }
}

/// Which subcommand a configuration is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Density,
    Compare,
    Diagnose,
    FgnTest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Density => "density",
            Command::Compare => "compare",
            Command::Diagnose => "diagnose",
            Command::FgnTest => "fgn-test",
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

fn check(ok: bool, name: &str, msg: impl std::fmt::Display) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(field(name, msg))
    }
}

fn open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn kernel_mode(&self) -> Result<KernelMode, CliError> {
        self.kernel.parse().map_err(|e| field("kernel", e))
    }

    /// Cells of a comparison as `(hurst, n)`, H-major.
    pub fn compare_axes(&self) -> (Vec<f64>, Vec<usize>) {
        let hs = if self.compare.h_list.is_empty() {
            vec![self.hurst]
        } else {
            self.compare.h_list.clone()
        };
        let ns = if self.compare.n_list.is_empty() {
            vec![self.steps]
        } else {
            self.compare.n_list.clone()
        };
        (hs, ns)
    }

    /// Range checks for every field `command` reads. The model itself is
    /// built (and its parameters checked) separately.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        check(!self.model.is_empty(), "model", "must not be empty")?;
        for (k, v) in &self.params {
            check(v.is_finite(), &format!("params.{k}"), format!("must be finite, got {v}"))?;
        }
        check(
            self.seed <= i64::MAX as u64,
            "seed",
            format!("must be at most {}, got {}", i64::MAX, self.seed),
        )?;
        check(self.jobs >= 1, "jobs", "must be at least 1")?;
        check(self.max_increments >= 1, "max_increments", "must be at least 1")?;
        check(self.max_memory_mb >= 1, "max_memory_mb", "must be at least 1")?;
        if command == Command::FgnTest {
            check(open_unit(self.hurst), "hurst", format!("must be in (0, 1), got {}", self.hurst))?;
            let s = &self.fgn_test;
            check(s.seeds >= 2, "fgn_test.seeds", format!("must be at least 2, got {}", s.seeds))?;
            check(s.count >= 2, "fgn_test.count", format!("must be at least 2, got {}", s.count))?;
            check(
                s.max_lag < s.count,
                "fgn_test.max_lag",
                format!("must be below fgn_test.count = {}, got {}", s.count, s.max_lag),
            )?;
            return Ok(());
        }
        let (hs, ns) = self.compare_axes();
        if command == Command::Compare {
            for h in &hs {
                check(open_unit(*h), "compare.h_list", format!("entries must be in (0, 1), got {h}"))?;
            }
            for n in &ns {
                check(*n >= 1, "compare.n_list", "entries must be at least 1")?;
            }
            check(self.compare.seeds >= 1, "compare.seeds", "must be at least 1")?;
            check(
                hs.len() * ns.len() * self.compare.seeds >= 2,
                "compare",
                "needs at least two cells (n_list × h_list × seeds)",
            )?;
            check(
                positive(self.compare.tail_threshold),
                "compare.tail_threshold",
                format!("must be positive, got {}", self.compare.tail_threshold),
            )?;
        } else {
            check(open_unit(self.hurst), "hurst", format!("must be in (0, 1), got {}", self.hurst))?;
            check(self.steps >= 1, "steps", "must be at least 1")?;
        }
        check(positive(self.gamma), "gamma", format!("must be positive, got {}", self.gamma))?;
        check(
            self.initial_state.is_finite(),
            "initial_state",
            format!("must be finite, got {}", self.initial_state),
        )?;
        check(
            (0.0..1.0).contains(&self.burn_in),
            "burn_in",
            format!("must be in [0, 1), got {}", self.burn_in),
        )?;
        check(self.thin >= 1, "thin", "must be at least 1")?;
        if matches!(command, Command::Density | Command::Compare) {
            check(positive(self.bandwidth), "bandwidth", format!("must be positive, got {}", self.bandwidth))?;
            self.kernel_mode()?;
            check(
                self.grid_points >= 2,
                "grid_points",
                format!("must be at least 2, got {}", self.grid_points),
            )?;
            if let Some(l) = self.grid_halfwidth {
                check(positive(l), "grid_halfwidth", format!("must be positive, got {l}"))?;
            }
        }
        if command == Command::Density && self.density.oracle {
            check(
                self.hurst == 0.5,
                "density.oracle",
                format!("the speed-measure oracle needs hurst = 0.5, got {}", self.hurst),
            )?;
        }
        if command == Command::Diagnose {
            let d = &self.diagnose;
            for f in &d.functionals {
                check(
                    DIAGNOSE_FUNCTIONALS.contains(&f.as_str()),
                    "diagnose.functionals",
                    format!("unknown functional {f:?}; known: {}", DIAGNOSE_FUNCTIONALS.join(", ")),
                )?;
            }
            check(
                d.lyapunov_power >= 1.0 && d.lyapunov_power.is_finite(),
                "diagnose.lyapunov_power",
                format!("must be >= 1, got {}", d.lyapunov_power),
            )?;
            check(d.checkpoints >= 1, "diagnose.checkpoints", "must be at least 1")?;
            check(
                d.theta > 0.0 && d.theta <= 1.0,
                "diagnose.theta",
                format!("must be in (0, 1], got {}", d.theta),
            )?;
            check(positive(d.delta), "diagnose.delta", format!("must be positive, got {}", d.delta))?;
            check(positive(d.window), "diagnose.window", format!("must be positive, got {}", d.window))?;
            check(
                positive(d.tail_threshold),
                "diagnose.tail_threshold",
                format!("must be positive, got {}", d.tail_threshold),
            )?;
            if d.functionals.iter().any(|f| f == "young_ladder") {
                check(d.ladder_gammas.len() >= 2, "diagnose.ladder_gammas", "needs at least two entries")?;
                for g in &d.ladder_gammas {
                    check(positive(*g), "diagnose.ladder_gammas", format!("entries must be positive, got {g}"))?;
                }
                check(d.ladder_ratio >= 2, "diagnose.ladder_ratio", "must be at least 2")?;
                check(d.ladder_seeds >= 1, "diagnose.ladder_seeds", "must be at least 1")?;
                check(
                    positive(d.ladder_horizon),
                    "diagnose.ladder_horizon",
                    format!("must be positive, got {}", d.ladder_horizon),
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_for_every_command() {
        let c = ExperimentConfig::default();
        for cmd in [Command::Simulate, Command::Density, Command::Diagnose, Command::FgnTest] {
            c.validate(cmd).unwrap();
        }
        // A single cell is not a comparison.
        assert!(c.validate(Command::Compare).is_err());
    }

    #[test]
    fn messages_name_the_field() {
        let mut c = ExperimentConfig::default();
        c.hurst = 1.5;
        let msg = c.validate(Command::Simulate).unwrap_err().to_string();
        assert!(msg.contains("hurst"), "{msg}");
        let mut c = ExperimentConfig::default();
        c.burn_in = 1.0;
        assert!(c.validate(Command::Density).unwrap_err().to_string().contains("burn_in"));
        let mut c = ExperimentConfig::default();
        c.kernel = "box".into();
        assert!(c.validate(Command::Density).unwrap_err().to_string().contains("kernel"));
        let mut c = ExperimentConfig::default();
        c.density.oracle = true;
        assert!(c.validate(Command::Density).unwrap_err().to_string().contains("density.oracle"));
    }

    #[test]
    fn toml_round_trip_of_defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("hurts = 0.5").is_err());
        assert!(ExperimentConfig::from_toml("[density]\noracel = true").is_err());
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::from_toml(
            "model = \"fou\"\nhurst = 0.6\n[params]\nlambda = 2.0\n[compare]\nn_list = [10, 20]\n",
        )
        .unwrap();
        assert_eq!(c.model, "fou");
        assert_eq!(c.params["lambda"], 2.0);
        assert_eq!(c.compare.n_list, vec![10, 20]);
        assert_eq!(c.gamma, 0.05);
    }
}
