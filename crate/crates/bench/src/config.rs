//! Experiment configuration files.
//!
//! A TOML document with `[data]`, `[problem]`, optional `[reference]` and
//! `[run]` tables plus an `[[optimizers]]` array. Any value can be replaced
//! from the command line with a dotted `key=value` override.

use std::path::{Path, PathBuf};

use drago_core::baselines::{ReferenceMethod, ReferenceOptions, DEFAULT_SGD_BATCH};
use drago_core::dualprox::UncertaintySpec;
use drago_core::drago::MemoryMode;
use drago_core::model::{DatasetMatrix, LossKind, ProblemSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::load_dataset;
use crate::error::{BenchError, Result};
use crate::synth::SyntheticSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub optimizers: Vec<OptimizerConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        standardize: bool,
        #[serde(default)]
        classes: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    #[default]
    SquaredError,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub loss: LossName,
    pub uncertainty: UncertaintySpec,
    pub mu: f64,
    pub nu: f64,
    /// Overrides the estimated Lipschitz constant.
    #[serde(default)]
    pub g: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default)]
    pub method: ReferenceMethod,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_ref_iters")]
    pub max_iters: u64,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_ref_iters() -> u64 {
    10_000_000
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig { method: ReferenceMethod::default(), tol: default_tol(), max_iters: default_ref_iters() }
    }
}

impl ReferenceConfig {
    pub fn options(&self) -> ReferenceOptions {
        ReferenceOptions { method: self.method, tol: self.tol, max_iters: self.max_iters, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Oracle-query budget per run.
    #[serde(default)]
    pub max_queries: Option<u64>,
    /// Iteration cap per run.
    #[serde(default)]
    pub max_iters: Option<u64>,
    #[serde(default)]
    pub gap_target: Option<f64>,
    /// Iterations between trace rows; one pass over the data when absent.
    #[serde(default)]
    pub eval_every: Option<u64>,
    /// Gap level for the queries-to-target column of the summary.
    #[serde(default = "default_report_target")]
    pub report_target: f64,
    /// Passes per grid point when tuning `auto` step sizes. Defaults to the
    /// query budget expressed in passes, or 50.
    #[serde(default)]
    pub tune_passes: Option<u64>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Write the final DRAGO state of each run as JSON.
    #[serde(default)]
    pub checkpoint: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_report_target() -> f64 {
    1e-6
}
fn default_jobs() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: default_seeds(),
            max_queries: None,
            max_iters: None,
            gap_target: None,
            eval_every: None,
            report_target: default_report_target(),
            tune_passes: None,
            jobs: default_jobs(),
            checkpoint: false,
            out: default_out(),
        }
    }
}

/// A step size given as a number, `"auto"` (grid search) or, for DRAGO only,
/// `"default"` (the theoretical value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Fixed(f64),
    Named(StepName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepName {
    Auto,
    Default,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnregularizedParams {
    pub mu1: f64,
    #[serde(default)]
    pub mu2: Option<f64>,
    #[serde(default)]
    pub nu1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Drago {
        #[serde(default)]
        label: Option<String>,
        batch: Option<usize>,
        #[serde(default = "default_alpha")]
        alpha: StepSize,
        #[serde(default = "one")]
        alpha_scale: f64,
        #[serde(default)]
        memory: MemoryMode,
        /// Switches to the schedule for `mu = 0`; `mu2` defaults to `mu1`.
        #[serde(default)]
        unregularized: Option<UnregularizedParams>,
    },
    BiasedSgd {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_sgd_batch")]
        batch: usize,
        #[serde(default = "auto")]
        learning_rate: StepSize,
    },
    Lsvrg {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        epoch_len: Option<usize>,
        #[serde(default = "auto")]
        learning_rate: StepSize,
    },
    FullBatchGd {
        #[serde(default)]
        label: Option<String>,
        /// Defaults to the inverse smoothness constant.
        #[serde(default)]
        learning_rate: Option<StepSize>,
    },
}

fn default_alpha() -> StepSize {
    StepSize::Named(StepName::Default)
}
fn auto() -> StepSize {
    StepSize::Named(StepName::Auto)
}
fn one() -> f64 {
    1.0
}
fn default_sgd_batch() -> usize {
    DEFAULT_SGD_BATCH
}

impl OptimizerConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OptimizerConfig::Drago { .. } => "drago",
            OptimizerConfig::BiasedSgd { .. } => "biased_sgd",
            OptimizerConfig::Lsvrg { .. } => "lsvrg",
            OptimizerConfig::FullBatchGd { .. } => "full_batch_gd",
        }
    }

    pub fn label(&self) -> String {
        let l = match self {
            OptimizerConfig::Drago { label, .. }
            | OptimizerConfig::BiasedSgd { label, .. }
            | OptimizerConfig::Lsvrg { label, .. }
            | OptimizerConfig::FullBatchGd { label, .. } => label,
        };
        l.clone().unwrap_or_else(|| self.kind_name().to_string())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_with(&text, overrides)?;
        // relative dataset paths are relative to the config file
        if let DataSource::Csv { path: data, .. } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.run.seeds.is_empty() {
            return bad("run.seeds must not be empty".into());
        }
        if self.run.eval_every == Some(0) {
            return bad("run.eval_every must be at least 1".into());
        }
        if self.run.jobs == 0 {
            return bad("run.jobs must be at least 1".into());
        }
        if self.run.max_queries.is_none() && self.run.max_iters.is_none() && !self.optimizers.is_empty() {
            return bad("set run.max_queries or run.max_iters".into());
        }
        let mut labels: Vec<String> = self.optimizers.iter().map(|o| o.label()).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("two optimizers share the label {:?}; set `label` to tell them apart", w[0]));
        }
        for o in &self.optimizers {
            let steps: Vec<StepSize> = match o {
                OptimizerConfig::Drago { alpha, batch, .. } => {
                    if *batch == Some(0) {
                        return bad("drago batch must be at least 1".into());
                    }
                    vec![*alpha]
                }
                OptimizerConfig::BiasedSgd { learning_rate, batch, .. } => {
                    if *batch == 0 {
                        return bad("biased_sgd batch must be at least 1".into());
                    }
                    vec![*learning_rate]
                }
                OptimizerConfig::Lsvrg { learning_rate, .. } => vec![*learning_rate],
                OptimizerConfig::FullBatchGd { learning_rate, .. } => learning_rate.iter().copied().collect(),
            };
            for s in steps {
                match s {
                    StepSize::Fixed(v) if !(v > 0.0 && v.is_finite()) => {
                        return bad(format!("{}: step size must be positive, got {v}", o.label()));
                    }
                    StepSize::Named(StepName::Default) if !matches!(o, OptimizerConfig::Drago { .. }) => {
                        return bad(format!("{}: `default` step size is only defined for drago", o.label()));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn load_data(&self) -> Result<DatasetMatrix> {
        match &self.data {
            DataSource::Synthetic(spec) => spec.generate(),
            DataSource::Csv { path, standardize, classes } => load_dataset(path, *standardize, *classes),
        }
    }

    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let data = self.load_data()?;
        self.problem.build(data)
    }
}

impl ProblemConfig {
    pub fn build(&self, data: DatasetMatrix) -> Result<ProblemSpec> {
        let kind = match (self.loss, data.labels()) {
            (LossName::SquaredError, _) => LossKind::SquaredError,
            (LossName::CrossEntropy, drago_core::model::Labels::Class { classes, .. }) => {
                LossKind::MultinomialCrossEntropy { classes: *classes }
            }
            (LossName::CrossEntropy, _) => {
                return Err(BenchError::Config("cross_entropy needs a dataset with a `label` column".into()))
            }
        };
        let problem = ProblemSpec::new(data, kind, self.uncertainty.clone(), self.mu, self.nu)?;
        Ok(match self.g {
            Some(g) => problem.with_g(g)?,
            None => problem,
        })
    }
}

/// Sets a dotted key in a TOML table. The value is parsed as TOML and kept as
/// a string if that fails. Numeric path segments index into arrays.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| BenchError::Config(format!("override {spec:?} is not of the form key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(BenchError::Config(format!("bad override key {key:?}")));
    }
    let mut cur: &mut toml::Value = doc
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    for part in &parts[1..] {
        cur = match cur {
            toml::Value::Table(t) => t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| BenchError::Config(format!("override {key:?}: {part:?} is not an array index")))?;
                let len = a.len();
                a.get_mut(i)
                    .ok_or_else(|| BenchError::Config(format!("override {key:?}: index {i} out of {len}")))?
            }
            _ => return Err(BenchError::Config(format!("override {key:?}: {part:?} is not inside a table"))),
        };
    }
    *cur = value;
    Ok(())
}
