//! Pipeline settings from a TOML file merged with command-line flags.

use std::path::{Path, PathBuf};

use pathprune_fuzz::campaign::Mode;
use serde::{Deserialize, Serialize};

use crate::args::PipelineArgs;
use crate::load::read_text;
use crate::{CliError, Result};

pub const DEFAULT_BUDGET_STEPS: u64 = 2_000_000;
pub const DEFAULT_PER_RUN_BUDGET: u64 = 20_000;
pub const DEFAULT_TRIALS: u64 = 10;

/// Keys accepted in a `--config` file. Paths are relative to the file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub program: Option<PathBuf>,
    pub scenario: Option<String>,
    pub targets: Option<Vec<String>>,
    pub modes: Option<Vec<Mode>>,
    pub budget_steps: Option<u64>,
    pub per_run_budget: Option<u64>,
    pub trials: Option<u64>,
    pub rng_seeds: Option<Vec<u64>>,
    pub seed_inputs: Option<Vec<String>>,
    pub distance_energy: Option<bool>,
    pub no_signature_matching: Option<bool>,
    pub wall_clock_secs: Option<f64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::parse(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut c.program, &mut c.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramSource {
    Path(PathBuf),
    Scenario(String),
}

/// Fully resolved pipeline settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub program: ProgramSource,
    /// Empty means the program's own `targets` line.
    pub targets: Vec<String>,
    pub modes: Vec<Mode>,
    pub budget_steps: u64,
    pub per_run_budget: u64,
    pub rng_seeds: Vec<u64>,
    pub seed_inputs: Vec<String>,
    pub distance_energy: bool,
    pub signature_matching: bool,
    pub wall_clock_secs: Option<f64>,
    pub out: PathBuf,
    pub jobs: usize,
}

impl PipelineConfig {
    /// A config with defaults for everything but the program and output.
    pub fn new(program: ProgramSource, out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            program,
            targets: Vec::new(),
            modes: vec![Mode::Pruning, Mode::Minimization],
            budget_steps: DEFAULT_BUDGET_STEPS,
            per_run_budget: DEFAULT_PER_RUN_BUDGET,
            rng_seeds: (0..DEFAULT_TRIALS).collect(),
            seed_inputs: Vec::new(),
            distance_energy: false,
            signature_matching: true,
            wall_clock_secs: None,
            out: out.into(),
            jobs: 1,
        }
    }

    /// Flags win over the file, the file over defaults.
    pub fn resolve(args: &PipelineArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let program = match (&args.program.program, &args.program.scenario) {
            (Some(p), _) => ProgramSource::Path(p.clone()),
            (None, Some(s)) => ProgramSource::Scenario(s.clone()),
            (None, None) => match (file.program, file.scenario) {
                (Some(p), None) => ProgramSource::Path(p),
                (None, Some(s)) => ProgramSource::Scenario(s),
                (Some(_), Some(_)) => {
                    return Err(CliError::Usage("config sets both program and scenario".into()))
                }
                (None, None) => {
                    return Err(CliError::Usage("one of --program or --scenario is required".into()))
                }
            },
        };
        let out = args
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| CliError::Usage("--out is required".into()))?;
        let mut cfg = PipelineConfig::new(program, out);
        let c = &args.campaign;
        cfg.targets = nonempty(&args.program.targets).or(file.targets).unwrap_or_default();
        cfg.modes = nonempty(&args.modes).or(file.modes).unwrap_or(cfg.modes);
        cfg.budget_steps = c.budget_steps.or(file.budget_steps).unwrap_or(cfg.budget_steps);
        cfg.per_run_budget = c.per_run_budget.or(file.per_run_budget).unwrap_or(cfg.per_run_budget);
        cfg.rng_seeds = match (nonempty(&args.rng_seeds), args.trials) {
            (Some(s), _) => s,
            (None, Some(n)) => (0..n).collect(),
            (None, None) => file
                .rng_seeds
                .or(file.trials.map(|n| (0..n).collect()))
                .unwrap_or(cfg.rng_seeds),
        };
        cfg.seed_inputs = nonempty(&c.seed_inputs).or(file.seed_inputs).unwrap_or_default();
        cfg.distance_energy = c.distance_energy || file.distance_energy.unwrap_or(false);
        cfg.signature_matching =
            !(c.no_signature_matching || file.no_signature_matching.unwrap_or(false));
        cfg.wall_clock_secs = c.wall_clock_secs.or(file.wall_clock_secs);
        cfg.jobs = args.jobs.or(file.jobs).unwrap_or(1).max(1);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(CliError::Usage("no modes given".into()));
        }
        if self.rng_seeds.is_empty() {
            return Err(CliError::Usage("no trials given".into()));
        }
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        if modes.len() != self.modes.len() {
            return Err(CliError::Usage("modes must be distinct".into()));
        }
        let mut seeds = self.rng_seeds.clone();
        seeds.sort();
        seeds.dedup();
        if seeds.len() != self.rng_seeds.len() {
            return Err(CliError::Usage("rng seeds must be distinct".into()));
        }
        Ok(())
    }
}

fn nonempty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}
