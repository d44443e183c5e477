//! Experiment configuration, read from TOML.
//!
//! Unknown keys are rejected everywhere. Every random stage draws its seed from
//! the top-level `seed` through a named substream, so the file has no other
//! seed fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dfmerge::bayesopt::{AcquisitionKind, BoConfig, KernelFamily, DEFAULT_KAPPA};
use dfmerge::fisher::DEFAULT_FISHER_SAMPLES;
use dfmerge::harness::{LandscapeConfig, ObjectiveMethod, SweepAxis};
use dfmerge::merge::DEFAULT_TIES_KEEP;
use dfmerge::rng::derive_seed;
use dfmerge::toymodels::{ClassifierSpec, SplitSizes, SuiteConfig, SyntheticTask, TrainConfig};

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelSection,
    /// A generated family of related tasks. Exactly one of `suite` and
    /// `tasks` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<TaskSection>,
    /// Light training of the shared initialization on the task mixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<TrainSection>,
    pub finetune: TrainSection,
    /// Joint training on all tasks, the multitask reference model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multitask: Option<TrainSection>,
    #[serde(default)]
    pub merge: MergeSection,
    #[serde(default)]
    pub bo: BoSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub landscape: LandscapeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// 0 selects a linear softmax classifier.
    #[serde(default)]
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    pub num_tasks: usize,
    pub num_classes: usize,
    pub shared_dims: usize,
    pub private_dims: usize,
    pub separation: f64,
    #[serde(default = "one")]
    pub shared_weight: f64,
    pub conflict: f64,
    pub cov_scale: f64,
    pub split_sizes: SplitSizes,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub task_id: String,
    pub class_means: Vec<Vec<f64>>,
    pub cov_scale: f64,
    pub split_sizes: SplitSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            seed,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeSection {
    /// Method used by `merge` when `--method` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Per-model coefficients for `df` and `gta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    /// Shared coefficient for `ta`, `ties` and `dare`; grid-searched when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "default_keep")]
    pub keep_fraction: f64,
    /// DARE drop rate; grid-searched when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_rate: Option<f64>,
    /// Allows `lambdas` outside `[0, 1]`.
    #[serde(default)]
    pub unbounded: bool,
}

fn default_keep() -> f64 {
    DEFAULT_TIES_KEEP
}

impl Default for MergeSection {
    fn default() -> Self {
        Self { method: None, lambdas: None, lambda: None, keep_fraction: DEFAULT_TIES_KEEP, drop_rate: None, unbounded: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionName {
    #[default]
    Ei,
    Ucb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoSection {
    #[serde(default = "default_objective")]
    pub objective: ObjectiveMethod,
    #[serde(default = "default_init")]
    pub init_points: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub acquisition: AcquisitionName,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub kernel: KernelFamily,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_objective() -> ObjectiveMethod {
    ObjectiveMethod::Df
}
fn default_init() -> usize {
    dfmerge::bayesopt::DEFAULT_INIT_POINTS
}
fn default_iterations() -> usize {
    dfmerge::bayesopt::DEFAULT_ITERATIONS
}
fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_jitter() -> f64 {
    dfmerge::bayesopt::DEFAULT_JITTER
}

impl Default for BoSection {
    fn default() -> Self {
        Self {
            objective: ObjectiveMethod::Df,
            init_points: default_init(),
            iterations: default_iterations(),
            acquisition: AcquisitionName::Ei,
            kappa: DEFAULT_KAPPA,
            kernel: KernelFamily::Matern52,
            jitter: default_jitter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Fraction of each validation split used by the objective.
    #[serde(default = "one")]
    pub val_ratio: f64,
    #[serde(default = "default_fisher_samples")]
    pub fisher_samples: usize,
}

fn default_fisher_samples() -> usize {
    DEFAULT_FISHER_SAMPLES
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { val_ratio: 1.0, fisher_samples: DEFAULT_FISHER_SAMPLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Seed labels for every random stage.
pub mod streams {
    pub const DATA: &str = "data";
    pub const PRETRAIN: &str = "pretrain";
    pub const PRETRAIN_MIXTURE: &str = "pretrain-mixture";
    pub const MULTITASK: &str = "train/multitask";
    pub const EVAL: &str = "eval";
    pub const BO: &str = "bo";
    pub const DARE: &str = "dare";

    pub fn finetune(task: usize) -> String {
        format!("train/task-{task}")
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_toml_str(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError(msg));
        match (&self.suite, self.tasks.is_empty()) {
            (None, true) => return bad("no task spec: give either [suite] or at least one [[tasks]] entry".into()),
            (Some(_), false) => return bad("give either [suite] or [[tasks]], not both".into()),
            _ => {}
        }
        self.synthetic_tasks()?;
        self.classifier_spec()?.validate().map_err(|e| ConfigError(e.to_string()))?;
        for (name, section) in
            [("finetune", Some(&self.finetune)), ("pretrain", self.pretrain.as_ref()), ("multitask", self.multitask.as_ref())]
        {
            if let Some(s) = section {
                s.with_seed(0).validate().map_err(|e| ConfigError(format!("[{name}] {e}")))?;
            }
        }
        self.bo_config(1)?;
        if !(self.eval.val_ratio > 0.0 && self.eval.val_ratio <= 1.0) {
            return bad(format!("[eval] val_ratio must lie in (0, 1], got {}", self.eval.val_ratio));
        }
        if self.eval.fisher_samples == 0 {
            return bad("[eval] fisher_samples must be at least 1".into());
        }
        if !(self.merge.keep_fraction > 0.0 && self.merge.keep_fraction <= 1.0) {
            return bad(format!("[merge] keep_fraction must lie in (0, 1], got {}", self.merge.keep_fraction));
        }
        if let Some(m) = &self.merge.method {
            crate::commands::MergeMethod::parse(m)?;
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("[sweep] values must not be empty".into());
            }
        }
        if self.landscape.resolution == 0 {
            return bad("[landscape] resolution must be at least 1".into());
        }
        Ok(())
    }

    pub fn synthetic_tasks(&self) -> Result<Vec<SyntheticTask>, ConfigError> {
        let data_seed = derive_seed(self.seed, streams::DATA);
        let tasks = if let Some(s) = &self.suite {
            SuiteConfig {
                num_tasks: s.num_tasks,
                num_classes: s.num_classes,
                shared_dims: s.shared_dims,
                private_dims: s.private_dims,
                separation: s.separation,
                shared_weight: s.shared_weight,
                conflict: s.conflict,
                cov_scale: s.cov_scale,
                split_sizes: s.split_sizes,
                seed: data_seed,
            }
            .tasks()
            .map_err(|e| ConfigError(format!("[suite] {e}")))?
        } else {
            self.tasks
                .iter()
                .map(|t| SyntheticTask {
                    task_id: t.task_id.clone(),
                    input_dim: t.class_means.first().map_or(0, Vec::len),
                    num_classes: t.class_means.len(),
                    class_means: t.class_means.clone(),
                    cov_scale: t.cov_scale,
                    split_sizes: t.split_sizes,
                    seed: derive_seed(data_seed, &t.task_id),
                })
                .collect()
        };
        let mut names = std::collections::BTreeSet::new();
        for t in &tasks {
            t.validate().map_err(|e| ConfigError(format!("task `{}`: {e}", t.task_id)))?;
            if !names.insert(t.task_id.clone()) {
                return Err(ConfigError(format!("duplicate task id `{}`", t.task_id)));
            }
            if t.input_dim != tasks[0].input_dim || t.num_classes != tasks[0].num_classes {
                return Err(ConfigError(format!("task `{}` has a different input or class count", t.task_id)));
            }
        }
        Ok(tasks)
    }

    pub fn classifier_spec(&self) -> Result<ClassifierSpec, ConfigError> {
        let tasks = self.synthetic_tasks()?;
        let first = tasks.first().ok_or_else(|| ConfigError("no tasks".into()))?;
        Ok(ClassifierSpec { input_dim: first.input_dim, hidden_dim: self.model.hidden_dim, num_classes: first.num_classes })
    }

    pub fn bo_config(&self, num_models: usize) -> Result<BoConfig, ConfigError> {
        let acquisition = match self.bo.acquisition {
            AcquisitionName::Ei => AcquisitionKind::Ei,
            AcquisitionName::Ucb => AcquisitionKind::Ucb { kappa: self.bo.kappa },
        };
        let cfg = BoConfig {
            init_points: self.bo.init_points,
            iterations: self.bo.iterations,
            bounds: vec![(0.0, 1.0); num_models],
            seed: derive_seed(self.seed, streams::BO),
            acquisition,
            kernel: self.bo.kernel,
            jitter: self.bo.jitter,
        };
        cfg.validate().map_err(|e| ConfigError(format!("[bo] {e}")))?;
        Ok(cfg)
    }

    /// Canonical JSON of everything that determines the trained checkpoints.
    pub fn training_fingerprint(&self) -> String {
        serde_json::json!({
            "seed": self.seed,
            "model": self.model,
            "suite": self.suite,
            "tasks": self.tasks,
            "pretrain": self.pretrain,
            "finetune": self.finetune,
            "multitask": self.multitask,
        })
        .to_string()
    }
}
