//! Run configuration: TOML with dotted sections, unknown keys rejected.
//!
//! Values are layered as file, then `SAMLAB_` environment overrides, then
//! command-line flags. An environment variable names a dotted key with
//! `__` for each dot, e.g. `SAMLAB_OPTIMIZER__RHO=0.1` sets `optimizer.rho`.
//! Its value is read as a TOML value, or as a string when it does not parse.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use samlab_core::attacks::{AttackBudget, Norm};
use samlab_core::models::Activation;
use samlab_core::optim::{AdamConfig, BaseOptimizer, SamConfig, SgdConfig};
use samlab_core::theory::FeatureModelSpec;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const ENV_PREFIX: &str = "SAMLAB_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Theory,
    Train,
    Attack,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_task")]
    pub task: TaskKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval: Vec<BudgetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_task() -> TaskKind {
    TaskKind::Train
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    FeatureModel {
        p: f64,
        eta: f64,
        n: usize,
        samples: usize,
        #[serde(default = "default_test_samples")]
        test_samples: usize,
    },
    Mixture2d {
        centers: Vec<CenterConfig>,
        spread: f64,
        samples: usize,
        #[serde(default = "default_test_samples")]
        test_samples: usize,
    },
    Delimited {
        path: PathBuf,
        features: usize,
        /// 0 for ±1 labels, otherwise the number of integer classes.
        #[serde(default)]
        classes: usize,
        /// Evaluated on the training file when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
    },
}

fn default_test_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterConfig {
    pub x: f64,
    pub y: f64,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Linear {
        #[serde(default)]
        bias: bool,
    },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: String,
    },
}

fn default_activation() -> String {
    "relu".into()
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Linear { bias: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Plain,
    Sam,
    Adversarial,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Sam => "sam",
            Mode::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub mode: Mode,
    pub base: BaseKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub rho: f64,
    pub grad_norm_floor: f64,
    /// Inner attack of adversarial training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<BudgetConfig>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Plain,
            base: BaseKind::Sgd,
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            rho: 0.05,
            grad_norm_floor: 1e-12,
            attack: None,
        }
    }
}

impl OptimizerConfig {
    pub fn base_optimizer(&self) -> BaseOptimizer {
        match self.base {
            BaseKind::Sgd => BaseOptimizer::Sgd(SgdConfig {
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            }),
            BaseKind::Adam => BaseOptimizer::Adam(AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps_hat: self.eps_hat,
                weight_decay: self.weight_decay,
            }),
        }
    }

    pub fn sam(&self) -> SamConfig {
        SamConfig {
            rho: self.rho,
            base: self.base_optimizer(),
            grad_norm_floor: self.grad_norm_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs at which the learning rate is multiplied by `decay`. When
    /// absent, `{20, 26}` scaled from 30 epochs to `epochs`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<usize>>,
    pub decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            milestones: None,
            decay: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn milestones(&self) -> Vec<usize> {
        match &self.milestones {
            Some(m) => m.clone(),
            None => {
                let mut m: Vec<usize> = [20usize, 26]
                    .iter()
                    .map(|&k| (k * self.epochs + 15) / 30)
                    .filter(|&k| k > 0 && k < self.epochs)
                    .collect();
                m.dedup();
                m
            }
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        let passed = self.milestones().iter().filter(|&&m| m <= epoch).count();
        base * self.decay.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default = "default_norm")]
    pub norm: String,
    pub epsilon: f64,
    /// Defaults to `epsilon / 4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub random_start: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen: Vec<usize>,
}

fn default_norm() -> String {
    "linf".into()
}

fn default_steps() -> usize {
    10
}

impl BudgetConfig {
    pub fn linf(epsilon: f64, steps: usize) -> Self {
        Self {
            norm: default_norm(),
            epsilon,
            alpha: None,
            steps,
            random_start: false,
            clip: None,
            frozen: Vec::new(),
        }
    }

    pub fn to_budget(&self) -> Result<AttackBudget, String> {
        let norm = Norm::parse(&self.norm).map_err(|e| e.to_string())?;
        let budget = AttackBudget {
            norm,
            epsilon: self.epsilon,
            alpha: self.alpha.unwrap_or(self.epsilon / 4.0),
            steps: self.steps,
            random_start: self.random_start,
            clip: self.clip.map(|[lo, hi]| (lo, hi)),
            frozen_features: self.frozen.clone(),
        };
        budget.validate().map_err(|e| e.to_string())?;
        Ok(budget)
    }

    /// Column label, e.g. `robust_linf_0.4`.
    pub fn label(&self) -> String {
        format!("robust_{}_{}", self.norm, self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub p: Vec<f64>,
    pub eta: Vec<f64>,
    pub n: Vec<usize>,
    pub eps: Vec<f64>,
}

impl TheoryConfig {
    pub fn specs(&self) -> Vec<FeatureModelSpec> {
        let mut out = Vec::new();
        for &p in &self.p {
            for &eta in &self.eta {
                for &n in &self.n {
                    out.push(FeatureModelSpec { p, eta, n });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Dotted config key to the values it takes. Points are the cartesian
    /// product in key order.
    pub grid: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Give replicate `r` of every grid point the same seed, so points
    /// differ only in their overrides.
    #[serde(default)]
    pub common_seeds: bool,
}

fn default_replicates() -> usize {
    1
}

/// Sets `path` (dotted) inside `root`, creating tables on the way.
pub fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), String> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed key `{path}`"));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("`{path}`: `{part}` is not a section"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a scalar or array written as TOML, falling back to a string.
pub fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// `SAMLAB_A__B` → `a.b`; `None` for variables without the prefix.
pub fn env_key(name: &str) -> Option<String> {
    let rest = name.strip_prefix(ENV_PREFIX)?;
    if rest.is_empty() {
        return None;
    }
    Some(rest.split("__").map(str::to_lowercase).collect::<Vec<_>>().join("."))
}

pub fn apply_env<I>(table: &mut toml::Table, vars: I) -> Result<(), HarnessError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut errors = Vec::new();
    let mut vars: Vec<(String, String)> = vars.into_iter().collect();
    vars.sort();
    for (name, raw) in vars {
        if let Some(key) = env_key(&name) {
            if let Err(e) = set_path(table, &key, parse_value(&raw)) {
                errors.push(format!("{name}: {e}"));
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Config(errors))
    }
}

pub fn from_table(table: toml::Table) -> Result<RunConfig, HarnessError> {
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Config(vec![e.message().to_string()]))?;
    Ok(cfg)
}

pub fn parse_table(text: &str, origin: &Path) -> Result<toml::Table, HarnessError> {
    text.parse::<toml::Table>()
        .map_err(|e| HarnessError::Config(vec![format!("{}: {}", origin.display(), e)]))
}

/// Reads and layers a config file with environment overrides. Does not
/// validate.
pub fn load<I>(path: &Path, env: I) -> Result<RunConfig, HarnessError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(vec![format!("{}: {e}", path.display())]))?;
    let mut table = parse_table(&text, path)?;
    apply_env(&mut table, env)?;
    from_table(table)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every problem with the config, not just the first.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errors = Vec::new();
        match self.task {
            TaskKind::Theory => self.validate_theory(&mut errors),
            TaskKind::Train => self.validate_training(&mut errors),
            TaskKind::Attack => {
                if self.attack.is_none() {
                    errors.push("task `attack` needs an [attack] section with `checkpoint`".into());
                }
                self.validate_data(&mut errors);
                self.validate_evals(&mut errors);
            }
            TaskKind::Sweep => {
                match &self.sweep {
                    None => errors.push("task `sweep` needs a [sweep] section".into()),
                    Some(s) => {
                        if s.replicates == 0 {
                            errors.push("sweep.replicates must be at least 1".into());
                        }
                        if s.grid.is_empty() {
                            errors.push("sweep.grid is empty".into());
                        }
                        for (k, v) in &s.grid {
                            if v.is_empty() {
                                errors.push(format!("sweep.grid.`{k}` has no values"));
                            }
                            if k == "task" || k == "seed" || k == "out" || k.starts_with("sweep") {
                                errors.push(format!("sweep.grid cannot vary `{k}`"));
                            }
                        }
                    }
                }
                self.validate_training(&mut errors);
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(errors))
        }
    }

    fn validate_theory(&self, errors: &mut Vec<String>) {
        let Some(t) = &self.theory else {
            errors.push("task `theory` needs a [theory] section".into());
            return;
        };
        for (name, empty) in [
            ("p", t.p.is_empty()),
            ("eta", t.eta.is_empty()),
            ("n", t.n.is_empty()),
            ("eps", t.eps.is_empty()),
        ] {
            if empty {
                errors.push(format!("theory.{name} is empty"));
            }
        }
        for spec in t.specs() {
            if let Err(e) = spec.validate() {
                errors.push(format!("theory spec (p={}, eta={}, n={}): {e}", spec.p, spec.eta, spec.n));
            }
        }
        for &eps in &t.eps {
            if !(eps >= 0.0) {
                errors.push(format!("theory.eps entry {eps} is negative"));
            }
            for &eta in &t.eta {
                if eps >= eta {
                    errors.push(format!("theory.eps entry {eps} is not below eta = {eta}"));
                }
            }
        }
    }

    fn validate_data(&self, errors: &mut Vec<String>) {
        let Some(data) = &self.data else {
            errors.push("missing [data] section".into());
            return;
        };
        match data {
            DataConfig::FeatureModel {
                p,
                eta,
                n,
                samples,
                test_samples,
            } => {
                if let Err(e) = FeatureModelSpec::new(*p, *eta, *n) {
                    errors.push(format!("data: {e}"));
                }
                if *samples == 0 || *test_samples == 0 {
                    errors.push("data.samples and data.test_samples must be positive".into());
                }
            }
            DataConfig::Mixture2d {
                centers,
                spread,
                samples,
                test_samples,
            } => {
                if centers.len() < 2 {
                    errors.push("data.centers needs at least two entries".into());
                }
                let classes = centers.iter().map(|c| c.class).max().map_or(0, |m| m + 1);
                for c in 0..classes {
                    if !centers.iter().any(|b| b.class == c) {
                        errors.push(format!("data.centers has no center for class {c}"));
                    }
                }
                if !(*spread > 0.0) {
                    errors.push(format!("data.spread = {spread} must be positive"));
                }
                if *samples == 0 || *test_samples == 0 {
                    errors.push("data.samples and data.test_samples must be positive".into());
                }
            }
            DataConfig::Delimited {
                features, classes, ..
            } => {
                if *features == 0 {
                    errors.push("data.features must be positive".into());
                }
                if *classes == 1 {
                    errors.push("data.classes must be 0 (binary ±1) or at least 2".into());
                }
            }
        }
    }

    fn validate_evals(&self, errors: &mut Vec<String>) {
        for (i, b) in self.eval.iter().enumerate() {
            if let Err(e) = b.to_budget() {
                errors.push(format!("eval[{i}]: {e}"));
            }
        }
    }

    fn validate_training(&self, errors: &mut Vec<String>) {
        self.validate_data(errors);
        self.validate_evals(errors);
        match &self.model {
            ModelConfig::Linear { .. } => {
                if let Some(DataConfig::Mixture2d { centers, .. }) = &self.data {
                    if centers.iter().any(|c| c.class > 1) {
                        errors.push("a linear model needs two classes".into());
                    }
                }
                if let Some(DataConfig::Delimited { classes, .. }) = &self.data {
                    if *classes > 2 {
                        errors.push("a linear model needs two classes".into());
                    }
                }
            }
            ModelConfig::Mlp { hidden, activation } => {
                if hidden.contains(&0) {
                    errors.push("model.hidden widths must be positive".into());
                }
                if let Err(e) = Activation::parse(activation) {
                    errors.push(format!("model.activation: {e}"));
                }
            }
        }

        let o = &self.optimizer;
        if let Err(e) = o.base_optimizer().validate() {
            errors.push(format!("optimizer: {e}"));
        }
        match o.mode {
            Mode::Sam => {
                if let Err(e) = o.sam().validate() {
                    errors.push(format!("optimizer: {e}"));
                }
            }
            Mode::Adversarial => match &o.attack {
                None => errors.push("optimizer.mode = \"adversarial\" needs [optimizer.attack]".into()),
                Some(b) => {
                    if let Err(e) = b.to_budget() {
                        errors.push(format!("optimizer.attack: {e}"));
                    }
                }
            },
            Mode::Plain => {}
        }

        let t = &self.train;
        if t.epochs == 0 {
            errors.push("train.epochs must be positive".into());
        }
        if t.batch_size == 0 {
            errors.push("train.batch_size must be at least 1".into());
        }
        if !(t.decay > 0.0 && t.decay <= 1.0) {
            errors.push(format!("train.decay = {} must lie in (0, 1]", t.decay));
        }
        let m = t.milestones();
        if m.windows(2).any(|w| w[0] >= w[1]) {
            errors.push(format!("train.milestones {m:?} must be strictly increasing"));
        }
        if m.iter().any(|&k| k >= t.epochs) {
            errors.push(format!("train.milestones {m:?} must be below epochs = {}", t.epochs));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_keys_map_to_dotted_paths() {
        assert_eq!(env_key("SAMLAB_OPTIMIZER__RHO").as_deref(), Some("optimizer.rho"));
        assert_eq!(env_key("SAMLAB_SEED").as_deref(), Some("seed"));
        assert_eq!(env_key("HOME"), None);
    }

    #[test]
    fn values_parse_as_toml_or_string() {
        assert_eq!(parse_value("0.5"), toml::Value::Float(0.5));
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("sam"), toml::Value::String("sam".into()));
        assert_eq!(parse_value("[1, 2]").as_array().map(Vec::len), Some(2));
    }

    #[test]
    fn default_milestones_scale_with_epochs() {
        let t = TrainConfig::default();
        assert_eq!(t.milestones(), vec![20, 26]);
        let t = TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        };
        assert_eq!(t.milestones(), vec![40, 52]);
        assert!((t.lr_at(0.1, 45) - 0.01).abs() < 1e-15);
        assert!((t.lr_at(0.1, 52) - 0.001).abs() < 1e-15);
    }
}
