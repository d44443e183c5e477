//! Data generation and training shared by every command.

use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use dfmerge::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use dfmerge::harness::EvalContext;
use dfmerge::merge::MergeInputs;
use dfmerge::rng::derive_seed;
use dfmerge::toymodels::{finetune, generate_task, multitask_finetune, pretrain_shared_init, ClassifierSpec, Dataset};

use crate::commands::Command;
use crate::config::{streams, ExperimentConfig};
use crate::manifest::{sha256_file, RunManifest};

/// Datasets and trained models for one configuration.
#[derive(Debug, Clone)]
pub struct Trained {
    pub spec: ClassifierSpec,
    pub datasets: Vec<Dataset>,
    pub pretrained: Checkpoint,
    pub fine_tuned: Vec<Checkpoint>,
    pub multitask: Option<Checkpoint>,
}

impl Trained {
    pub fn merge_inputs(&self) -> dfmerge::Result<MergeInputs> {
        MergeInputs::from_checkpoints(&self.pretrained, &self.fine_tuned)
    }

    pub fn eval_context(&self, cfg: &ExperimentConfig) -> dfmerge::Result<EvalContext> {
        EvalContext::new(
            self.spec,
            self.datasets.clone(),
            cfg.eval.val_ratio,
            cfg.eval.fisher_samples,
            derive_seed(cfg.seed, streams::EVAL),
        )
    }

    pub fn task_names(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.task_id.clone()).collect()
    }
}

/// Generates the data and trains every model in memory.
pub fn train(cfg: &ExperimentConfig) -> anyhow::Result<Trained> {
    let spec = cfg.classifier_spec()?;
    let datasets = cfg.synthetic_tasks()?.iter().map(generate_task).collect::<dfmerge::Result<Vec<_>>>()?;
    let mixture = cfg.pretrain.map(|p| p.with_seed(derive_seed(cfg.seed, streams::PRETRAIN_MIXTURE)));
    let pretrained = pretrain_shared_init(&spec, derive_seed(cfg.seed, streams::PRETRAIN), &datasets, mixture.as_ref())
        .context("pretraining the shared initialization")?;
    let fine_tuned = datasets
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let tc = cfg.finetune.with_seed(derive_seed(cfg.seed, &streams::finetune(i)));
            finetune(&pretrained.params, &spec, d, &tc)
        })
        .collect::<dfmerge::Result<Vec<_>>>()
        .context("fine-tuning")?;
    let multitask = match &cfg.multitask {
        Some(m) => Some(
            multitask_finetune(&pretrained.params, &spec, &datasets, &m.with_seed(derive_seed(cfg.seed, streams::MULTITASK)))
                .context("multitask training")?,
        ),
        None => None,
    };
    Ok(Trained { spec, datasets, pretrained, fine_tuned, multitask })
}

pub const TRAIN_MANIFEST: &str = "manifests/train.json";

pub fn dataset_path(task_id: &str) -> PathBuf {
    PathBuf::from("data").join(format!("{task_id}.dataset"))
}

pub fn checkpoint_path(name: &str) -> PathBuf {
    PathBuf::from("checkpoints").join(format!("{name}.ckpt"))
}

/// Relative paths of the files written by [`save_trained`].
pub fn trained_files(trained: &Trained) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = trained.datasets.iter().map(|d| dataset_path(&d.task_id)).collect();
    files.push(checkpoint_path("pretrained"));
    files.extend(trained.datasets.iter().map(|d| checkpoint_path(&d.task_id)));
    if trained.multitask.is_some() {
        files.push(checkpoint_path("multitask"));
    }
    files
}

pub fn save_trained(trained: &Trained, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out.join("data"))?;
    std::fs::create_dir_all(out.join("checkpoints"))?;
    for d in &trained.datasets {
        d.save(out.join(dataset_path(&d.task_id)))?;
    }
    save_checkpoint(&trained.pretrained, out.join(checkpoint_path("pretrained")))?;
    for (d, c) in trained.datasets.iter().zip(&trained.fine_tuned) {
        save_checkpoint(c, out.join(checkpoint_path(&d.task_id)))?;
    }
    if let Some(m) = &trained.multitask {
        save_checkpoint(m, out.join(checkpoint_path("multitask")))?;
    }
    Ok(trained_files(trained))
}

fn load_trained(cfg: &ExperimentConfig, out: &Path, manifest: &RunManifest) -> anyhow::Result<Trained> {
    let spec = cfg.classifier_spec()?;
    let tasks = cfg.synthetic_tasks()?;
    for (rel, sum) in &manifest.artifacts {
        let actual = sha256_file(&out.join(rel))?;
        if &actual != sum {
            anyhow::bail!(dfmerge::Error::MalformedHeader(format!("{rel} changed since training")));
        }
    }
    let datasets =
        tasks.iter().map(|t| Dataset::load(out.join(dataset_path(&t.task_id)))).collect::<dfmerge::Result<Vec<_>>>()?;
    let pretrained = load_checkpoint(out.join(checkpoint_path("pretrained")))?;
    let fine_tuned =
        tasks.iter().map(|t| load_checkpoint(out.join(checkpoint_path(&t.task_id)))).collect::<dfmerge::Result<Vec<_>>>()?;
    let multitask = match cfg.multitask {
        Some(_) => Some(load_checkpoint(out.join(checkpoint_path("multitask")))?),
        None => None,
    };
    Ok(Trained { spec, datasets, pretrained, fine_tuned, multitask })
}

/// Loads the trained artifacts under `out` when they were produced by the same
/// training configuration, otherwise trains and writes them (with their
/// manifest). Returns the models and the relative paths of the input files.
pub fn ensure_trained(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<(Trained, Vec<PathBuf>)> {
    let manifest_path = out.join(TRAIN_MANIFEST);
    if manifest_path.exists() {
        let manifest = RunManifest::load(&manifest_path)?;
        if manifest.fingerprint.as_deref() == Some(cfg.training_fingerprint().as_str()) {
            let trained = load_trained(cfg, out, &manifest)?;
            let files = trained_files(&trained);
            return Ok((trained, files));
        }
    }
    let (trained, files, _) = train_and_save(cfg, out)?;
    Ok((trained, files))
}

/// Trains, writes the datasets and checkpoints under `out`, and writes the
/// train manifest.
pub fn train_and_save(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<(Trained, Vec<PathBuf>, RunManifest)> {
    let trained = train(cfg)?;
    let files = save_trained(&trained, out)?;
    let mut manifest = RunManifest::new(&Command::Train, cfg);
    manifest.fingerprint = Some(cfg.training_fingerprint());
    manifest.record_artifacts(out, &files)?;
    manifest.report("tasks", trained.task_names());
    manifest.write(&out.join(TRAIN_MANIFEST))?;
    Ok((trained, files, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
seed = 5

[suite]
num_tasks = 2
num_classes = 2
shared_dims = 2
private_dims = 2
separation = 3.0
conflict = 0.3
cov_scale = 1.0
split_sizes = { train = 40, validation = 20, test = 20 }

[finetune]
learning_rate = 0.1
steps = 20
batch_size = 8
"#;

    #[test]
    fn saved_artifacts_are_reused_until_training_settings_change() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml_str(TEXT).unwrap();
        let (first, files) = ensure_trained(&cfg, dir.path()).unwrap();
        assert_eq!(files.len(), 2 + 1 + 2);
        let stamp = std::fs::metadata(dir.path().join(checkpoint_path("task-0"))).unwrap().modified().unwrap();
        let (again, _) = ensure_trained(&cfg, dir.path()).unwrap();
        assert_eq!(again.fine_tuned, first.fine_tuned);
        assert_eq!(again.datasets, first.datasets);
        assert_eq!(std::fs::metadata(dir.path().join(checkpoint_path("task-0"))).unwrap().modified().unwrap(), stamp);

        let mut changed = cfg.clone();
        changed.finetune.steps = 25;
        let (retrained, _) = ensure_trained(&changed, dir.path()).unwrap();
        assert_ne!(retrained.fine_tuned, first.fine_tuned);
        assert_eq!(retrained.fine_tuned[0].provenance.steps, 25);
    }

    #[test]
    fn edited_artifacts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml_str(TEXT).unwrap();
        ensure_trained(&cfg, dir.path()).unwrap();
        let path = dir.path().join(checkpoint_path("task-1"));
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(ensure_trained(&cfg, dir.path()).is_err());
    }

    #[test]
    fn merge_inputs_are_task_vectors_of_the_fine_tuned_models() {
        let cfg = ExperimentConfig::from_toml_str(TEXT).unwrap();
        let trained = train(&cfg).unwrap();
        let inputs = trained.merge_inputs().unwrap();
        assert_eq!(inputs.task_names(), trained.task_names());
        for (i, ft) in trained.fine_tuned.iter().enumerate() {
            let rebuilt = inputs.fine_tuned(i).unwrap();
            let gap = rebuilt.values().iter().zip(ft.params.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-12);
        }
    }
}
