//! Run settings: defaults, overridden by a flat key-value config file,
//! overridden by command-line flags.

use std::fmt;
use std::path::Path;

use ggmc_core::trainer::{default_init_scale, TrainConfig};

use crate::CliError;

/// Execution mode for `train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Gossip,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode, CliError> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "gossip" => Ok(Mode::Gossip),
            other => Err(CliError::Usage(format!(
                "mode must be `sequential` or `gossip`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Sequential => write!(f, "sequential"),
            Mode::Gossip => write!(f, "gossip"),
        }
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub train: TrainConfig,
    pub mode: Mode,
    pub test_fraction: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            train: TrainConfig::default(),
            mode: Mode::Sequential,
            test_fraction: 0.2,
        }
    }
}

/// Values provided by one layer (config file or flags); `None` defers to
/// the layer below.
#[derive(Debug, Clone, Default)]
pub struct PartialConfig {
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub rank: Option<usize>,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub max_iters: Option<u64>,
    pub eval_every: Option<u64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub init_scale: Option<f64>,
    pub mode: Option<Mode>,
    pub test_fraction: Option<f64>,
}

impl PartialConfig {
    fn apply(&self, settings: &mut RunSettings, init_scale_set: &mut bool) {
        let t = &mut settings.train;
        if let Some(v) = self.rho {
            t.rho = v;
        }
        if let Some(v) = self.lambda {
            t.lambda = v;
        }
        if let Some(v) = self.rank {
            t.rank = v;
        }
        if let Some(v) = self.p {
            t.p = v;
        }
        if let Some(v) = self.q {
            t.q = v;
        }
        if let Some(v) = self.a {
            t.a = v;
        }
        if let Some(v) = self.b {
            t.b = v;
        }
        if let Some(v) = self.max_iters {
            t.max_iters = v;
        }
        if let Some(v) = self.eval_every {
            t.eval_every = v;
        }
        if let Some(v) = self.tol {
            t.tol = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.init_scale {
            t.init_scale = v;
            *init_scale_set = true;
        }
        if let Some(v) = self.mode {
            settings.mode = v;
        }
        if let Some(v) = self.test_fraction {
            settings.test_fraction = v;
        }
    }
}

/// Merge defaults <- config file <- flags. When init_scale is never set
/// explicitly it tracks the resolved rank as 1/sqrt(rank).
pub fn resolve(file: Option<PartialConfig>, flags: PartialConfig) -> RunSettings {
    let mut settings = RunSettings::default();
    let mut init_scale_set = false;
    if let Some(f) = file {
        f.apply(&mut settings, &mut init_scale_set);
    }
    flags.apply(&mut settings, &mut init_scale_set);
    if !init_scale_set {
        settings.train.init_scale = default_init_scale(settings.train.rank);
    }
    settings
}

/// Parse the flat `key = value` config format: one pair per line, `#`
/// starts a comment, unknown keys are rejected.
pub fn parse_config_file(path: &Path) -> Result<PartialConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut cfg = PartialConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{line_no}: expected `key = value`, got `{raw}`",
                path.display()
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str, e: &dyn fmt::Display| {
            CliError::Usage(format!(
                "{}:{line_no}: bad {what} value `{value}`: {e}",
                path.display()
            ))
        };
        match key {
            "rho" => cfg.rho = Some(value.parse().map_err(|e| bad("rho", &e))?),
            "lambda" => cfg.lambda = Some(value.parse().map_err(|e| bad("lambda", &e))?),
            "rank" => cfg.rank = Some(value.parse().map_err(|e| bad("rank", &e))?),
            "p" => cfg.p = Some(value.parse().map_err(|e| bad("p", &e))?),
            "q" => cfg.q = Some(value.parse().map_err(|e| bad("q", &e))?),
            "a" => cfg.a = Some(value.parse().map_err(|e| bad("a", &e))?),
            "b" => cfg.b = Some(value.parse().map_err(|e| bad("b", &e))?),
            "max_iters" => cfg.max_iters = Some(value.parse().map_err(|e| bad("max_iters", &e))?),
            "eval_every" => {
                cfg.eval_every = Some(value.parse().map_err(|e| bad("eval_every", &e))?)
            }
            "tol" => cfg.tol = Some(value.parse().map_err(|e| bad("tol", &e))?),
            "seed" => cfg.seed = Some(value.parse().map_err(|e| bad("seed", &e))?),
            "init_scale" => {
                cfg.init_scale = Some(value.parse().map_err(|e| bad("init_scale", &e))?)
            }
            "mode" => cfg.mode = Some(Mode::parse(value)?),
            "test_fraction" => {
                cfg.test_fraction = Some(value.parse().map_err(|e| bad("test_fraction", &e))?)
            }
            other => {
                return Err(CliError::Usage(format!(
                    "{}:{line_no}: unknown config key `{other}`",
                    path.display()
                )))
            }
        }
    }
    Ok(cfg)
}
