//! The subcommands. Each one reads its settings from a resolved
//! [`ExperimentConfig`], writes its outputs under `output_dir`, and records a
//! [`RunManifest`] in `output_dir/manifests/<command>.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use dfmerge::bayesopt::write_trajectory_jsonl;
use dfmerge::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Provenance};
use dfmerge::harness::{self, EvalContext, EvalReport, GridPoint, LandscapeVariant, SweepAxis};
use dfmerge::merge::{self, CoefficientVector, MergeInputs};
use dfmerge::params::ParamVector;
use dfmerge::rng::derive_seed;
use dfmerge::toymodels::{generate_task, SplitKind};

use crate::config::{streams, ExperimentConfig};
use crate::error::{ChecksumMismatch, ConfigError};
use crate::manifest::RunManifest;
use crate::pipeline::{ensure_trained, train_and_save};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMethod {
    Averaging,
    Ta,
    Gta,
    Fisher,
    Df,
    Ties,
    Dare,
}

impl MergeMethod {
    pub const NAMES: [&'static str; 7] = ["averaging", "ta", "gta", "fisher", "df", "ties", "dare"];

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Ok(match name {
            "averaging" => Self::Averaging,
            "ta" => Self::Ta,
            "gta" => Self::Gta,
            "fisher" => Self::Fisher,
            "df" => Self::Df,
            "ties" => Self::Ties,
            "dare" => Self::Dare,
            other => {
                return Err(ConfigError(format!("unknown merge method `{other}`; valid methods: {}", Self::NAMES.join(", "))))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Averaging => "averaging",
            Self::Ta => "ta",
            Self::Gta => "gta",
            Self::Fisher => "fisher",
            Self::Df => "df",
            Self::Ties => "ties",
            Self::Dare => "dare",
        }
    }
}

/// A command as recorded in its manifest. Everything else it depends on is in
/// the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Command {
    Train,
    Merge,
    Optimize,
    Eval { checkpoint: PathBuf, split: SplitKind, ratio: f64 },
    Landscape,
    Ablate,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Merge => "merge",
            Self::Optimize => "optimize",
            Self::Eval { .. } => "eval",
            Self::Landscape => "landscape",
            Self::Ablate => "ablate",
            Self::Sweep => "sweep",
        }
    }
}

/// Runs `command` into `cfg.output_dir` and returns the manifest it wrote.
pub fn run(command: &Command, cfg: &ExperimentConfig) -> anyhow::Result<RunManifest> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if let Command::Train = command {
        return Ok(train_and_save(cfg, out)?.2);
    }
    let mut manifest = RunManifest::new(command, cfg);
    let artifacts = match command {
        Command::Train => unreachable!(),
        Command::Eval { checkpoint, split, ratio } => {
            manifest.record_external_input(checkpoint)?;
            eval(cfg, out, checkpoint, *split, *ratio, &mut manifest)?
        }
        _ => {
            let (trained, input_files) = ensure_trained(cfg, out)?;
            manifest.record_inputs(out, &input_files)?;
            let inputs = trained.merge_inputs()?;
            let ctx = trained.eval_context(cfg)?;
            match command {
                Command::Merge => merge_cmd(cfg, out, &inputs, &ctx, &mut manifest)?,
                Command::Optimize => optimize(cfg, out, &inputs, &ctx, &mut manifest)?,
                Command::Landscape => landscape(cfg, out, &inputs, &ctx, &mut manifest)?,
                Command::Ablate => ablate(cfg, out, &inputs, &ctx, &mut manifest)?,
                Command::Sweep => sweep(cfg, out, &inputs, &ctx, &mut manifest)?,
                Command::Train | Command::Eval { .. } => unreachable!(),
            }
        }
    };
    manifest.record_artifacts(out, &artifacts)?;
    manifest.write(&manifest.path_in(out))?;
    Ok(manifest)
}

/// Reruns the command recorded in `manifest_path` into `output_dir` (default
/// `<original output>/rerun`) and checks that every artifact has the recorded
/// checksum.
pub fn rerun(manifest_path: &Path, output_dir: Option<PathBuf>) -> anyhow::Result<RunManifest> {
    let original = RunManifest::load(manifest_path)?;
    let original_out = manifest_path.parent().and_then(Path::parent).unwrap_or(Path::new("."));
    let mut cfg = original.config.clone();
    cfg.output_dir = output_dir.unwrap_or_else(|| original_out.join("rerun"));
    let fresh = run(&original.command, &cfg)?;
    let mut differing: Vec<String> = original
        .artifacts
        .iter()
        .filter(|(rel, sum)| fresh.artifacts.get(*rel) != Some(*sum))
        .map(|(rel, _)| rel.clone())
        .collect();
    differing.extend(fresh.artifacts.keys().filter(|k| !original.artifacts.contains_key(*k)).cloned());
    if !differing.is_empty() {
        return Err(ChecksumMismatch(differing).into());
    }
    Ok(fresh)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn save_merged(out: &Path, rel: &Path, ctx: &EvalContext, params: ParamVector, provenance: Provenance) -> anyhow::Result<()> {
    if let Some(dir) = out.join(rel).parent() {
        std::fs::create_dir_all(dir)?;
    }
    let ckpt = Checkpoint::new(params, *ctx.spec(), provenance)?;
    save_checkpoint(&ckpt, out.join(rel))?;
    Ok(())
}

/// A merge and the hyperparameters it used.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub method: MergeMethod,
    pub merged: ParamVector,
    pub hyperparameters: BTreeMap<String, serde_json::Value>,
    /// Validation scores of every grid point, for grid-searched methods.
    pub grid: Vec<GridPoint>,
}

/// Merges with the hyperparameters in `cfg.merge`, grid-searching the shared
/// coefficient (and DARE drop rate) on validation data when absent.
pub fn merge_with(
    method: MergeMethod,
    inputs: &MergeInputs,
    ctx: &EvalContext,
    cfg: &ExperimentConfig,
) -> anyhow::Result<MergeOutcome> {
    let m = &cfg.merge;
    let mut hyper = BTreeMap::new();
    let mut grid = Vec::new();
    let mut note = |k: &str, v: serde_json::Value| {
        hyper.insert(k.to_string(), v);
    };
    let coefficients = || -> anyhow::Result<CoefficientVector> {
        let lambdas = m.lambdas.clone().ok_or_else(|| {
            ConfigError(format!("method `{}` needs per-model coefficients: pass --lambdas or set [merge] lambdas", method.name()))
        })?;
        if lambdas.len() != inputs.num_models() {
            return Err(ConfigError(format!("expected {} coefficients, got {}", inputs.num_models(), lambdas.len())).into());
        }
        let built = if m.unbounded { CoefficientVector::unbounded(lambdas) } else { CoefficientVector::bounded(lambdas) };
        Ok(built.map_err(|e| ConfigError(e.to_string()))?)
    };
    let merged = match method {
        MergeMethod::Averaging => merge::merge_averaging(inputs)?,
        MergeMethod::Fisher => harness::fisher_merge(inputs, ctx)?,
        MergeMethod::Gta => {
            let c = coefficients()?;
            note("lambdas", serde_json::json!(c.as_slice()));
            merge::merge_gta(inputs, &c)?
        }
        MergeMethod::Df => {
            let c = coefficients()?;
            note("lambdas", serde_json::json!(c.as_slice()));
            merge::merge_df(inputs, &c, &|i: usize, p: &ParamVector| ctx.fisher(i, p))?
        }
        MergeMethod::Ta | MergeMethod::Ties => {
            let ta = method == MergeMethod::Ta;
            if !ta {
                note("keep_fraction", serde_json::json!(m.keep_fraction));
            }
            match m.lambda {
                Some(l) => {
                    note("lambda", serde_json::json!(l));
                    if ta {
                        merge::merge_task_arithmetic(inputs, l)?
                    } else {
                        merge::merge_ties(inputs, m.keep_fraction, l)?
                    }
                }
                None => {
                    let r = if ta {
                        harness::grid_search_ta(inputs, &merge::ta_lambda_grid(), ctx)?
                    } else {
                        harness::grid_search_ties(inputs, m.keep_fraction, &merge::ties_lambda_grid(), ctx)?
                    };
                    note("lambda", serde_json::json!(r.best[0]));
                    grid = r.evaluated;
                    r.merged
                }
            }
        }
        MergeMethod::Dare => {
            let seed = derive_seed(cfg.seed, streams::DARE);
            let drops = m.drop_rate.map_or_else(merge::dare_drop_grid, |p| vec![p]);
            let lambdas = m.lambda.map_or_else(merge::ta_lambda_grid, |l| vec![l]);
            let r = harness::grid_search_dare(inputs, &drops, &lambdas, seed, ctx)?;
            note("drop_rate", serde_json::json!(r.best[0]));
            note("lambda", serde_json::json!(r.best[1]));
            if r.evaluated.len() > 1 {
                grid = r.evaluated;
            }
            r.merged
        }
    };
    Ok(MergeOutcome { method, merged, hyperparameters: hyper, grid })
}

fn reports_for(prefix: &Path, ctx: &EvalContext, model: &ParamVector) -> anyhow::Result<(EvalReport, EvalReport, Vec<PathBuf>)> {
    let validation = ctx.validation_report(model)?;
    let test = ctx.test_report(model)?;
    let v = prefix.with_file_name(format!("{}validation.json", file_prefix(prefix)));
    let t = prefix.with_file_name(format!("{}test.json", file_prefix(prefix)));
    Ok((validation, test, vec![v, t]))
}

fn file_prefix(prefix: &Path) -> String {
    prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn merge_cmd(
    cfg: &ExperimentConfig,
    out: &Path,
    inputs: &MergeInputs,
    ctx: &EvalContext,
    manifest: &mut RunManifest,
) -> anyhow::Result<Vec<PathBuf>> {
    let name = cfg.merge.method.as_deref().ok_or_else(|| {
        ConfigError(format!(
            "no merge method: pass --method or set [merge] method; valid methods: {}",
            MergeMethod::NAMES.join(", ")
        ))
    })?;
    let outcome = merge_with(MergeMethod::parse(name)?, inputs, ctx, cfg)?;
    let dir = PathBuf::from("merge");
    let ckpt = dir.join(format!("{name}.ckpt"));
    let mut provenance = Provenance::new("merged", cfg.seed, 0).with_note("method", name);
    for (k, v) in &outcome.hyperparameters {
        provenance = provenance.with_note(k, v);
    }
    save_merged(out, &ckpt, ctx, outcome.merged.clone(), provenance)?;
    let (validation, test, paths) = reports_for(&dir.join(format!("{name}_")), ctx, &outcome.merged)?;
    validation.write_json(out.join(&paths[0]))?;
    test.write_json(out.join(&paths[1]))?;
    let mut artifacts = vec![ckpt];
    artifacts.extend(paths);
    if !outcome.grid.is_empty() {
        let g = dir.join(format!("{name}_grid.json"));
        write_json(&out.join(&g), &outcome.grid)?;
        artifacts.push(g);
    }
    manifest.report("method", name);
    manifest.report("hyperparameters", &outcome.hyperparameters);
    manifest.report("validation_average", validation.average);
    manifest.report("test_average", test.average);
    Ok(artifacts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCoefficients {
    pub method: harness::ObjectiveMethod,
    pub acquisition: String,
    pub lambdas: Vec<f64>,
    pub validation: f64,
    pub test: f64,
}

fn optimize(
    cfg: &ExperimentConfig,
    out: &Path,
    inputs: &MergeInputs,
    ctx: &EvalContext,
    manifest: &mut RunManifest,
) -> anyhow::Result<Vec<PathBuf>> {
    let bo = cfg.bo_config(inputs.num_models())?;
    let method = cfg.bo.objective;
    let outcome = harness::run_optimize(inputs, ctx, method, &bo)?;
    let dir = PathBuf::from("optimize").join(serde_json::to_value(method)?.as_str().unwrap_or("df"));
    std::fs::create_dir_all(out.join(&dir))?;
    let trajectory = dir.join("trajectory.jsonl");
    write_trajectory_jsonl(out.join(&trajectory), &outcome.run.trajectory)?;
    let best = BestCoefficients {
        method,
        acquisition: bo.acquisition.label().to_string(),
        lambdas: outcome.best().lambdas.clone(),
        validation: outcome.best().value,
        test: outcome.test.average,
    };
    let best_path = dir.join("best.json");
    write_json(&out.join(&best_path), &best)?;
    let ckpt = dir.join("merged.ckpt");
    let provenance = Provenance::new("merged", bo.seed, outcome.run.trajectory.len())
        .with_note("method", method)
        .with_note("lambdas", &best.lambdas);
    save_merged(out, &ckpt, ctx, outcome.merged.clone(), provenance)?;
    let validation = dir.join("validation.json");
    let test = dir.join("test.json");
    outcome.validation.write_json(out.join(&validation))?;
    outcome.test.write_json(out.join(&test))?;
    manifest.trajectory = Some(trajectory.display().to_string().replace('\\', "/"));
    manifest.report("best", &best);
    Ok(vec![trajectory, best_path, ckpt, validation, test])
}

fn eval(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    split: SplitKind,
    ratio: f64,
    manifest: &mut RunManifest,
) -> anyhow::Result<Vec<PathBuf>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(ConfigError(format!("--ratio must lie in (0, 1], got {ratio}")).into());
    }
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let tasks = cfg.synthetic_tasks()?.iter().map(generate_task).collect::<dfmerge::Result<Vec<_>>>()?;
    let report = harness::evaluate(&ckpt.params, ckpt.spec(), &tasks, split, ratio, derive_seed(cfg.seed, streams::EVAL))?;
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let dir = PathBuf::from("eval");
    std::fs::create_dir_all(out.join(&dir))?;
    let json = dir.join(format!("{stem}_{split}.json"));
    let csv = dir.join(format!("{stem}_{split}.csv"));
    report.write_json(out.join(&json))?;
    report.write_csv(out.join(&csv))?;
    manifest.report("average", report.average);
    Ok(vec![json, csv])
}

fn landscape(
    cfg: &ExperimentConfig,
    out: &Path,
    inputs: &MergeInputs,
    ctx: &EvalContext,
    manifest: &mut RunManifest,
) -> anyhow::Result<Vec<PathBuf>> {
    let dir = PathBuf::from("landscape");
    std::fs::create_dir_all(out.join(&dir))?;
    let mut artifacts = Vec::new();
    for (variant, name) in [(LandscapeVariant::Gta, "gta"), (LandscapeVariant::Df, "df")] {
        let grid = harness::landscape(inputs, ctx, variant, &cfg.landscape)?;
        let csv = dir.join(format!("{name}.csv"));
        let json = dir.join(format!("{name}.json"));
        grid.write_csv(out.join(&csv))?;
        grid.write_json(out.join(&json))?;
        manifest.report(&format!("{name}_best_cell"), grid.best_cell());
        artifacts.extend([csv, json]);
    }
    Ok(artifacts)
}

fn ablate(
    cfg: &ExperimentConfig,
    out: &Path,
    inputs: &MergeInputs,
    ctx: &EvalContext,
    manifest: &mut RunManifest,
) -> anyhow::Result<Vec<PathBuf>> {
    let bo = cfg.bo_config(inputs.num_models())?;
    let rows = harness::ablate(inputs, ctx, &bo)?;
    let dir = PathBuf::from("ablate");
    std::fs::create_dir_all(out.join(&dir))?;
    let csv = dir.join("ablation.csv");
    let json = dir.join("ablation.json");
    harness::write_ablation_csv(out.join(&csv), &rows)?;
    write_json(&out.join(&json), &rows)?;
    let summary: BTreeMap<&str, f64> = rows.iter().map(|r| (r.method.as_str(), r.test)).collect();
    manifest.report("test_average", summary);
    Ok(vec![csv, json])
}

fn sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    inputs: &MergeInputs,
    ctx: &EvalContext,
    manifest: &mut RunManifest,
) -> anyhow::Result<Vec<PathBuf>> {
    let section = cfg.sweep.as_ref().ok_or_else(|| ConfigError("no sweep: pass --axis and --values or set [sweep]".into()))?;
    if section.values.is_empty() {
        return Err(ConfigError("sweep values must not be empty".into()).into());
    }
    let bo = cfg.bo_config(inputs.num_models())?;
    let method = cfg.bo.objective;
    let (rows, name) = match section.axis {
        SweepAxis::Iterations => {
            let counts = section
                .values
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                        Ok(v as usize)
                    } else {
                        Err(ConfigError(format!("iteration counts must be nonnegative integers, got {v}")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            (harness::sweep_iterations(inputs, ctx, method, &bo, &counts)?, "iterations")
        }
        SweepAxis::ValRatio => {
            if let Some(bad) = section.values.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
                return Err(ConfigError(format!("validation ratios must lie in (0, 1], got {bad}")).into());
            }
            let rows = harness::sweep_val_ratio(inputs, ctx, cfg.eval.fisher_samples, method, &bo, &section.values)?;
            (rows, "val_ratio")
        }
    };
    let dir = PathBuf::from("sweep");
    std::fs::create_dir_all(out.join(&dir))?;
    let csv = dir.join(format!("{name}.csv"));
    let json = dir.join(format!("{name}.json"));
    harness::write_sweep_csv(out.join(&csv), &rows)?;
    write_json(&out.join(&json), &rows)?;
    manifest.report("rows", rows.len());
    Ok(vec![csv, json])
}
