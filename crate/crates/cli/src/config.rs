//! Experiment config files: TOML with one section per concern.
//!
//! ```toml
//! seed = 7
//! out = "runs/demo"
//!
//! [data.synthetic]            # or: [data] csv_dir = "path/to/tasks"
//! tasks = 10
//! dim = 20
//! min_examples = 50
//! max_examples = 50
//! clusters = 2
//!
//! [method]
//! name = "mocha"
//!
//! [model]
//! kind = "mean_regularized"
//! lambda1 = 1.0
//! lambda2 = 1.0
//!
//! [solver]
//! loss = "squared"
//! rounds_per_update = 500
//! gap_tolerance = 1e-6
//!
//! [systems]
//! preset = "lte"
//! heterogeneity = "high"
//! ```
//!
//! The top-level `seed` is the only seed: it drives data generation, the
//! solvers and the systems scheduler, so `seed` is rejected inside
//! `[data.synthetic]` and `[solver]`.

use std::fmt;
use std::path::{Path, PathBuf};

use mocha_core::baselines::default_lambda_grid;
use mocha_core::data::SyntheticSpec;
use mocha_core::experiment::{Method, SimulationConfig};
use mocha_core::solver::SolverConfig;
use mocha_core::systems::{Heterogeneity, NetworkPreset, DEFAULT_CLOCK_RATE};
use mocha_core::OmegaModel;
use serde::{Deserialize, Serialize};

/// A config problem, located by the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_model")]
    pub model: OmegaModel,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub systems: SystemsSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub fault: FaultSection,
    #[serde(default)]
    pub theory: TheorySection,
}

fn default_method() -> Method {
    Method::Mocha { budget_scale: 1.0 }
}

fn default_model() -> OmegaModel {
    OmegaModel::MeanRegularized {
        lambda1: 1.0,
        lambda2: 1.0,
    }
}

/// Exactly one of `csv_dir` and `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

/// A named preset (`wifi`, `lte`, `3g`) or explicit network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PresetChoice {
    Named(String),
    Custom(NetworkPreset),
}

impl PresetChoice {
    pub fn resolve(&self) -> Option<NetworkPreset> {
        match self {
            PresetChoice::Named(name) => NetworkPreset::by_name(name),
            PresetChoice::Custom(p) => Some(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemsSection {
    pub preset: PresetChoice,
    /// FLOPs per millisecond on every node.
    pub clock_rate: f64,
    pub heterogeneity: Heterogeneity,
    /// Same drop probability on every node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drop_probability: Option<f64>,
    /// Per-node drop probabilities; missing nodes never drop.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub drop_probabilities: Vec<f64>,
}

impl Default for SystemsSection {
    fn default() -> Self {
        SystemsSection {
            preset: PresetChoice::Named("wifi".into()),
            clock_rate: DEFAULT_CLOCK_RATE,
            heterogeneity: Heterogeneity::None,
            drop_probability: None,
            drop_probabilities: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerName {
    Local,
    Global,
    Mtl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub shuffles: usize,
    pub train_fraction: f64,
    pub k_folds: usize,
    pub grid: Vec<f64>,
    pub standardize: bool,
    pub methods: Vec<TrainerName>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            shuffles: 10,
            train_fraction: 0.75,
            k_folds: 5,
            grid: default_lambda_grid(),
            standardize: false,
            methods: vec![TrainerName::Local, TrainerName::Global, TrainerName::Mtl],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Methods to run; the top-level `[method]` when empty.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<Method>,
    pub presets: Vec<PresetChoice>,
    pub heterogeneity: Vec<Heterogeneity>,
    /// Relative primal suboptimality reported as time-to-target.
    pub target: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            methods: Vec::new(),
            presets: ["wifi", "lte", "3g"].map(|s| PresetChoice::Named(s.into())).to_vec(),
            heterogeneity: vec![Heterogeneity::None, Heterogeneity::Low, Heterogeneity::High],
            target: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSection {
    pub probabilities: Vec<f64>,
    /// Adds the scenario where node 0 never responds.
    pub permanent_drop: bool,
    /// Gap reported as rounds-to-target.
    pub target: f64,
}

impl Default for FaultSection {
    fn default() -> Self {
        FaultSection {
            probabilities: (0..10).map(|k| k as f64 / 10.0).collect(),
            permanent_drop: true,
            target: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub epsilon: f64,
    pub theta_max: f64,
    pub p_max: f64,
    /// Initial dual suboptimality; the total example count when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_suboptimality: Option<f64>,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            epsilon: 1e-3,
            theta_max: 0.5,
            p_max: 0.0,
            initial_suboptimality: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates config text. Relative `csv_dir` paths are taken
    /// relative to `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::new("", e.to_string().trim_end().to_string()))?;
        for (section, path) in [("solver", "solver.seed"), ("data", "data.synthetic.seed")] {
            let mut node = table.get(section);
            if section == "data" {
                node = node.and_then(|d| d.get("synthetic"));
            }
            if node.and_then(|n| n.get("seed")).is_some() {
                return Err(ConfigError::new(path, "set the seed at the top level"));
            }
        }
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigError::new(path, e.into_inner().to_string())
        })?;
        if let Some(dir) = &cfg.data.csv_dir {
            if dir.is_relative() {
                cfg.data.csv_dir = Some(base_dir.join(dir));
            }
        }
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Sets the run seed everywhere it is consumed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.solver.seed = seed;
        if let Some(spec) = &mut self.data.synthetic {
            spec.seed = seed;
        }
    }

    /// TOML text that reproduces this run.
    pub fn to_toml(&self) -> String {
        let mut echo = self.clone();
        echo.out = None;
        // Seeds live at the top level only.
        let mut value = toml::Value::try_from(&echo).expect("config serializes");
        if let Some(t) = value.get_mut("solver").and_then(|v| v.as_table_mut()) {
            t.remove("seed");
        }
        if let Some(t) = value
            .get_mut("data")
            .and_then(|v| v.get_mut("synthetic"))
            .and_then(|v| v.as_table_mut())
        {
            t.remove("seed");
        }
        toml::to_string_pretty(&value).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.data.csv_dir, &self.data.synthetic) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(ConfigError::new("data", "set exactly one of `csv_dir` and `synthetic`"))
            }
            (Some(dir), None) if !dir.is_dir() => {
                return Err(ConfigError::new(
                    "data.csv_dir",
                    format!("{} is not a directory", dir.display()),
                ))
            }
            (None, Some(spec)) => spec
                .validate()
                .map_err(|e| ConfigError::new("data.synthetic", e.to_string()))?,
            _ => {}
        }
        self.solver
            .validate()
            .map_err(|e| ConfigError::new("solver", e.to_string()))?;
        self.model
            .validate()
            .map_err(|e| ConfigError::new("model", e.to_string()))?;
        validate_method(&self.method, "method")?;
        for (k, m) in self.bench.methods.iter().enumerate() {
            validate_method(m, &format!("bench.methods[{k}]"))?;
        }

        let sys = &self.systems;
        check_preset(&sys.preset, "systems.preset")?;
        if !(sys.clock_rate > 0.0 && sys.clock_rate.is_finite()) {
            return Err(ConfigError::new("systems.clock_rate", "must be positive"));
        }
        if sys.drop_probability.is_some() && !sys.drop_probabilities.is_empty() {
            return Err(ConfigError::new(
                "systems",
                "set at most one of `drop_probability` and `drop_probabilities`",
            ));
        }
        if let Some(p) = sys.drop_probability {
            check_probability(p, "systems.drop_probability")?;
        }
        for (k, &p) in sys.drop_probabilities.iter().enumerate() {
            check_probability(p, &format!("systems.drop_probabilities[{k}]"))?;
        }

        let c = &self.compare;
        if c.shuffles == 0 {
            return Err(ConfigError::new("compare.shuffles", "must be positive"));
        }
        if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
            return Err(ConfigError::new("compare.train_fraction", "must lie in (0, 1)"));
        }
        if c.k_folds < 2 {
            return Err(ConfigError::new("compare.k_folds", "must be at least 2"));
        }
        if c.grid.is_empty() || c.grid.iter().any(|l| !(*l > 0.0)) {
            return Err(ConfigError::new("compare.grid", "needs at least one positive value"));
        }
        if c.methods.is_empty() {
            return Err(ConfigError::new("compare.methods", "needs at least one method"));
        }

        for (k, p) in self.bench.presets.iter().enumerate() {
            check_preset(p, &format!("bench.presets[{k}]"))?;
        }
        if !(self.bench.target > 0.0) {
            return Err(ConfigError::new("bench.target", "must be positive"));
        }
        for (k, &p) in self.fault.probabilities.iter().enumerate() {
            check_probability(p, &format!("fault.probabilities[{k}]"))?;
        }
        if !(self.fault.target > 0.0) {
            return Err(ConfigError::new("fault.target", "must be positive"));
        }

        let t = &self.theory;
        if !(t.epsilon > 0.0) {
            return Err(ConfigError::new("theory.epsilon", "must be positive"));
        }
        check_probability(t.theta_max, "theory.theta_max")?;
        check_probability(t.p_max, "theory.p_max")?;
        if t.initial_suboptimality.is_some_and(|d| !(d > 0.0)) {
            return Err(ConfigError::new("theory.initial_suboptimality", "must be positive"));
        }
        Ok(())
    }

    /// Simulation settings for the top-level method.
    pub fn simulation(&self, num_tasks: usize) -> SimulationConfig {
        let sys = &self.systems;
        let drops = match sys.drop_probability {
            Some(p) => vec![p; num_tasks],
            None => sys.drop_probabilities.clone(),
        };
        SimulationConfig {
            solver: self.solver.clone(),
            model: self.model,
            preset: sys.preset.resolve().expect("validated preset"),
            clock_rate: sys.clock_rate,
            heterogeneity: sys.heterogeneity,
            drop_probabilities: drops,
        }
    }
}

fn check_probability(p: f64, path: &str) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("{p} is not in [0, 1]")))
    }
}

fn check_preset(p: &PresetChoice, path: &str) -> Result<(), ConfigError> {
    match p.resolve() {
        None => Err(ConfigError::new(
            path,
            format!("unknown preset {p:?}; expected wifi, lte, 3g or a {{ name, latency, bandwidth }} table"),
        )),
        Some(preset) => preset.validate().map_err(|e| ConfigError::new(path, e.to_string())),
    }
}

fn validate_method(m: &Method, path: &str) -> Result<(), ConfigError> {
    let bad = |field: &str, msg: &str| Err(ConfigError::new(format!("{path}.{field}"), msg));
    match *m {
        Method::Mocha { budget_scale } if !(budget_scale > 0.0) => bad("budget_scale", "must be positive"),
        Method::Cocoa { theta } if !(0.0..1.0).contains(&theta) => bad("theta", "must lie in [0, 1)"),
        Method::MbSgd { batch: 0, .. } | Method::MbSdca { batch: 0, .. } => bad("batch", "must be positive"),
        Method::MbSdca { beta, .. } if !(beta > 0.0) => bad("beta", "must be positive"),
        Method::Local { lambda } | Method::Global { lambda } if !(lambda > 0.0) => bad("lambda", "must be positive"),
        _ => Ok(()),
    }
}
