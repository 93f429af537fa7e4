//! Flat `key = value` experiment configuration. `#` starts a comment; blank
//! lines are ignored; every key may appear at most once.

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::design::Backend;
use crate::explore::{Method, Replacement};
use crate::rage::Aggregator;

/// A configuration problem, tied to a line when one is responsible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSpec {
    Hard { d: usize, n_actions: usize },
    Random { d: usize, n_contexts: usize, n_actions: usize },
    Tabular { features: PathBuf, rewards: PathBuf },
}

impl InstanceSpec {
    /// Short label used in CSV output.
    pub fn label(&self) -> String {
        match self {
            InstanceSpec::Hard { d, n_actions } => format!("hard_d{d}_A{n_actions}"),
            InstanceSpec::Random {
                d,
                n_contexts,
                n_actions,
            } => format!("random_d{d}_X{n_contexts}_A{n_actions}"),
            InstanceSpec::Tabular { features, .. } => format!(
                "tabular_{}",
                features.file_stem().and_then(|s| s.to_str()).unwrap_or("data")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub noise_std: f64,
    pub methods: Vec<Method>,
    pub t_grid: Vec<usize>,
    pub trials: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub seed: u64,
    pub replacement: Replacement,
    pub delta: f64,
    /// When set, Active-SCLB plans on the empirical distribution of this many context draws.
    pub empirical_p: Option<usize>,
    pub backend: Backend,
    /// Horizon of the designs reported in `designs.csv`; defaults to the largest budget.
    pub design_t: Option<usize>,
    pub barrier_t: Vec<usize>,
    pub barrier_trials: usize,
    pub barrier_lambda: f64,
    pub rage_epsilon: f64,
    pub rage_delta: f64,
    pub rage_runs: usize,
    pub rage_aggregator: Aggregator,
}

/// Ten log-spaced budgets from 100 to 10,000.
pub fn default_t_grid() -> Vec<usize> {
    (0..10)
        .map(|i| (100.0 * 100f64.powf(i as f64 / 9.0)).round() as usize)
        .collect()
}

pub const KEYS: &[&str] = &[
    "instance",
    "d",
    "A",
    "contexts",
    "features",
    "rewards",
    "noise_std",
    "methods",
    "T_grid",
    "trials",
    "lambda",
    "alpha",
    "seed",
    "replacement",
    "delta",
    "empirical_p",
    "backend",
    "design_T",
    "barrier_T",
    "barrier_trials",
    "barrier_lambda",
    "rage_epsilon",
    "rage_delta",
    "rage_runs",
    "rage_aggregator",
];

struct Entries(HashMap<String, (usize, String)>);

impl Entries {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::at(*line, format!("cannot parse {key} = '{v}'"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, key: &str, instance: &str) -> Result<T, ConfigError> {
        self.get(key)?
            .ok_or_else(|| ConfigError::global(format!("instance = {instance} requires key '{key}'")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| ConfigError::at(*line, format!("cannot parse '{}' in {key}", s.trim())))
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.0.get(key).map(|e| e.0).unwrap_or(0)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|e| e.1.as_str())
    }
}

impl ExperimentConfig {
    /// Parses configuration text. Relative dataset paths are kept as written.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected 'key = value', got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::at(line, format!("unknown key '{key}'")));
            }
            if value.is_empty() {
                return Err(ConfigError::at(line, format!("key '{key}' has no value")));
            }
            if let Some((first, _)) = map.insert(key.to_owned(), (line, value.to_owned())) {
                return Err(ConfigError::at(line, format!("key '{key}' already set on line {first}")));
            }
        }
        let e = Entries(map);

        let kind = e.raw("instance").unwrap_or("hard");
        let instance = match kind {
            "hard" => InstanceSpec::Hard {
                d: e.required("d", kind)?,
                n_actions: e.required("A", kind)?,
            },
            "random" => InstanceSpec::Random {
                d: e.required("d", kind)?,
                n_contexts: e.required("contexts", kind)?,
                n_actions: e.required("A", kind)?,
            },
            "tabular" => InstanceSpec::Tabular {
                features: e.required("features", kind)?,
                rewards: e.required("rewards", kind)?,
            },
            other => {
                return Err(ConfigError::at(
                    e.line("instance"),
                    format!("unknown instance '{other}' (expected hard, random or tabular)"),
                ))
            }
        };

        let methods = match e.raw("methods") {
            None => Method::ALL.to_vec(),
            Some(v) => v
                .split(',')
                .map(|s| {
                    Method::parse(s.trim()).ok_or_else(|| {
                        ConfigError::at(e.line("methods"), format!("unknown method '{}'", s.trim()))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };

        let replacement = match e.raw("replacement").unwrap_or("with") {
            "with" => Replacement::With,
            "without" => Replacement::Without,
            other => {
                return Err(ConfigError::at(
                    e.line("replacement"),
                    format!("replacement must be 'with' or 'without', got '{other}'"),
                ))
            }
        };
        let backend = match e.raw("backend").unwrap_or("first_order") {
            "first_order" => Backend::FirstOrder,
            "sdp" => Backend::Sdp,
            other => {
                return Err(ConfigError::at(
                    e.line("backend"),
                    format!("backend must be 'first_order' or 'sdp', got '{other}'"),
                ))
            }
        };
        let rage_aggregator = match e.raw("rage_aggregator").unwrap_or("mean") {
            "mean" => Aggregator::Mean,
            "catoni" => Aggregator::Catoni,
            other => {
                return Err(ConfigError::at(
                    e.line("rage_aggregator"),
                    format!("rage_aggregator must be 'mean' or 'catoni', got '{other}'"),
                ))
            }
        };

        let config = Self {
            instance,
            noise_std: e.or("noise_std", 1.0)?,
            methods,
            t_grid: e.list("T_grid")?.unwrap_or_else(default_t_grid),
            trials: e.or("trials", 100)?,
            lambda: e.or("lambda", 1e-6)?,
            alpha: e.or("alpha", 0.0)?,
            seed: e.or("seed", 0)?,
            replacement,
            delta: e.or("delta", 0.1)?,
            empirical_p: e.get("empirical_p")?,
            backend,
            design_t: e.get("design_T")?,
            barrier_t: e.list("barrier_T")?.unwrap_or_else(|| vec![1000]),
            barrier_trials: e.or("barrier_trials", 200)?,
            barrier_lambda: e.or("barrier_lambda", 1e-8)?,
            rage_epsilon: e.or("rage_epsilon", 0.05)?,
            rage_delta: e.or("rage_delta", 0.1)?,
            rage_runs: e.or("rage_runs", 200)?,
            rage_aggregator,
        };
        config.check(&e)?;
        Ok(config)
    }

    fn check(&self, e: &Entries) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::at(e.line(key), format!("{key}: {msg}")));
        if let InstanceSpec::Hard { d, n_actions } | InstanceSpec::Random { d, n_actions, .. } = self.instance {
            if d == 0 {
                return bad("d", "must be at least 1");
            }
            if n_actions == 0 {
                return bad("A", "must be at least 1");
            }
        }
        if self.methods.is_empty() {
            return bad("methods", "list is empty");
        }
        if self.t_grid.is_empty() || self.t_grid.contains(&0) {
            return bad("T_grid", "budgets must be positive");
        }
        if self.trials == 0 {
            return bad("trials", "must be positive");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", "must lie in [0, 1]");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", "must lie in (0, 1)");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std", "must be nonnegative");
        }
        if self.empirical_p == Some(0) {
            return bad("empirical_p", "must be positive");
        }
        if self.design_t == Some(0) {
            return bad("design_T", "must be positive");
        }
        if self.barrier_t.is_empty() || self.barrier_t.contains(&0) || self.barrier_trials == 0 {
            return bad("barrier_T", "budgets and trials must be positive");
        }
        if !(self.barrier_lambda > 0.0) {
            return bad("barrier_lambda", "must be positive");
        }
        if !(self.rage_epsilon > 0.0 && self.rage_epsilon < 1.0) {
            return bad("rage_epsilon", "must lie in (0, 1)");
        }
        if !(self.rage_delta > 0.0 && self.rage_delta < 1.0) {
            return bad("rage_delta", "must lie in (0, 1)");
        }
        if self.rage_runs == 0 {
            return bad("rage_runs", "must be positive");
        }
        Ok(())
    }
}
