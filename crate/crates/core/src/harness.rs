//! Evaluation, the merge-then-evaluate objective, baseline grid searches,
//! ablations, sweeps and the 2-D coefficient landscape.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayesopt::{self, AcquisitionKind, BoConfig, BoRun, CoefficientPoint};
use crate::error::{Error, Result};
use crate::fisher::{empirical_fisher_diag, FisherDiagonal, DEFAULT_FISHER_SAMPLES};
use crate::merge::{self, CoefficientVector, MergeInputs};
use crate::params::{axpy_into_pretrained, ParamVector};
use crate::rng::substream;
use crate::toymodels::{predict, ClassifierSpec, Dataset, Split, SplitKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    pub accuracy: f64,
    pub correct: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: SplitKind,
    pub sample_ratio: f64,
    pub per_task: Vec<TaskAccuracy>,
    /// Unweighted mean over tasks.
    pub average: f64,
}

impl EvalReport {
    pub fn accuracy(&self, task: &str) -> Option<f64> {
        self.per_task.iter().find(|t| t.task == task).map(|t| t.accuracy)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    /// One row per task: `task,split,sample_ratio,samples,correct,accuracy`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["task", "split", "sample_ratio", "samples", "correct", "accuracy"])?;
        for t in &self.per_task {
            w.write_record([
                t.task.clone(),
                self.split.to_string(),
                self.sample_ratio.to_string(),
                t.samples.to_string(),
                t.correct.to_string(),
                t.accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_writer(path: impl AsRef<Path>) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        csv_error(e)
    }
}

fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Indices of the evaluated subset of `split` for the given ratio.
///
/// The order comes from a seeded permutation that does not depend on the
/// ratio, so a smaller ratio always selects a prefix of a larger one.
pub fn subset_indices(split: &Split, task_id: &str, kind: SplitKind, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("sample ratio must lie in (0, 1], got {ratio}")));
    }
    let n = split.len();
    let take = if ratio == 1.0 { n } else { (ratio * n as f64).floor() as usize };
    if take == 0 {
        return Err(Error::Empty("evaluation subset"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, &format!("eval-subset/{kind}/{task_id}")));
    order.truncate(take);
    Ok(order)
}

fn accuracy_on(model: &ParamVector, spec: &ClassifierSpec, split: &Split, indices: &[usize]) -> Result<usize> {
    let mut correct = 0;
    for &i in indices {
        if predict(model, spec, split.input(i))? == split.label(i) {
            correct += 1;
        }
    }
    Ok(correct)
}

fn report_from(
    model: &ParamVector,
    spec: &ClassifierSpec,
    tasks: &[Dataset],
    kind: SplitKind,
    ratio: f64,
    subsets: &[Vec<usize>],
) -> Result<EvalReport> {
    let mut per_task = Vec::with_capacity(tasks.len());
    for (task, idx) in tasks.iter().zip(subsets) {
        let correct = accuracy_on(model, spec, task.split(kind), idx)?;
        per_task.push(TaskAccuracy {
            task: task.task_id.clone(),
            accuracy: correct as f64 / idx.len() as f64,
            correct,
            samples: idx.len(),
        });
    }
    let average = per_task.iter().map(|t| t.accuracy).sum::<f64>() / per_task.len() as f64;
    Ok(EvalReport { split: kind, sample_ratio: ratio, per_task, average })
}

/// Accuracy of `model` on each task under the argmax prediction rule.
pub fn evaluate(
    model: &ParamVector,
    spec: &ClassifierSpec,
    tasks: &[Dataset],
    split: SplitKind,
    sample_ratio: f64,
    seed: u64,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::Empty("task list"));
    }
    let subsets = tasks
        .iter()
        .map(|t| subset_indices(t.split(split), &t.task_id, split, sample_ratio, seed))
        .collect::<Result<Vec<_>>>()?;
    report_from(model, spec, tasks, split, sample_ratio, &subsets)
}

/// Everything the objective needs besides the coefficients: the tasks, the
/// validation subset, and the fixed unlabeled inputs used for Fisher
/// estimation.
#[derive(Debug, Clone)]
pub struct EvalContext {
    spec: ClassifierSpec,
    tasks: Vec<Dataset>,
    val_ratio: f64,
    seed: u64,
    val_subsets: Vec<Vec<usize>>,
    fisher_indices: Vec<Vec<usize>>,
}

impl EvalContext {
    /// Fisher inputs for task `i` are `fisher_samples` validation inputs drawn
    /// from its evaluated validation subset (all of it when smaller).
    pub fn new(spec: ClassifierSpec, tasks: Vec<Dataset>, val_ratio: f64, fisher_samples: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if tasks.is_empty() {
            return Err(Error::Empty("task list"));
        }
        if fisher_samples == 0 {
            return Err(Error::InvalidArgument("fisher_samples must be at least 1".into()));
        }
        for t in &tasks {
            if t.input_dim != spec.input_dim || t.num_classes != spec.num_classes {
                return Err(Error::InvalidArgument(format!("task `{}` does not match the classifier spec", t.task_id)));
            }
        }
        let val_subsets = tasks
            .iter()
            .map(|t| subset_indices(&t.validation, &t.task_id, SplitKind::Validation, val_ratio, seed))
            .collect::<Result<Vec<_>>>()?;
        let fisher_indices = tasks
            .iter()
            .zip(&val_subsets)
            .map(|(t, subset)| {
                let mut pool = subset.clone();
                pool.sort_unstable();
                pool.shuffle(&mut substream(seed, &format!("fisher-batch/{}", t.task_id)));
                pool.truncate(fisher_samples);
                pool
            })
            .collect();
        Ok(Self { spec, tasks, val_ratio, seed, val_subsets, fisher_indices })
    }

    pub fn with_defaults(spec: ClassifierSpec, tasks: Vec<Dataset>, seed: u64) -> Result<Self> {
        Self::new(spec, tasks, 1.0, DEFAULT_FISHER_SAMPLES, seed)
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn tasks(&self) -> &[Dataset] {
        &self.tasks
    }

    pub fn val_ratio(&self) -> f64 {
        self.val_ratio
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fisher_inputs(&self, task: usize) -> Vec<&[f64]> {
        let split = &self.tasks[task].validation;
        self.fisher_indices[task].iter().map(|&i| split.input(i)).collect()
    }

    pub fn validation_subset(&self, task: usize) -> &[usize] {
        &self.val_subsets[task]
    }

    /// Diagonal Fisher of task `task`'s inputs at `point`.
    pub fn fisher(&self, task: usize, point: &ParamVector) -> Result<FisherDiagonal> {
        empirical_fisher_diag(point, &self.spec, &self.fisher_inputs(task))
    }

    pub fn validation_report(&self, model: &ParamVector) -> Result<EvalReport> {
        report_from(model, &self.spec, &self.tasks, SplitKind::Validation, self.val_ratio, &self.val_subsets)
    }

    pub fn test_report(&self, model: &ParamVector) -> Result<EvalReport> {
        evaluate(model, &self.spec, &self.tasks, SplitKind::Test, 1.0, self.seed)
    }

    fn check_inputs(&self, inputs: &MergeInputs) -> Result<()> {
        if inputs.num_models() != self.tasks.len() {
            return Err(Error::DimensionMismatch { expected: self.tasks.len(), actual: inputs.num_models() });
        }
        self.spec.layout().ensure_same(inputs.pretrained().layout())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMethod {
    /// Fisher-weighted merge with Fisher at the scaled points.
    Df,
    /// Plain weighted task arithmetic.
    Gta,
}

/// The merge for `method` at coefficients `lambdas`.
pub fn merged_model(inputs: &MergeInputs, ctx: &EvalContext, method: ObjectiveMethod, lambdas: &[f64]) -> Result<ParamVector> {
    ctx.check_inputs(inputs)?;
    let coeffs = CoefficientVector::bounded(lambdas.to_vec())?;
    match method {
        ObjectiveMethod::Df => merge::merge_df(inputs, &coeffs, &|i: usize, p: &ParamVector| ctx.fisher(i, p)),
        ObjectiveMethod::Gta => merge::merge_gta(inputs, &coeffs),
    }
}

/// `lambdas -> average validation accuracy` of the merged model.
pub fn objective_fn<'a>(
    inputs: &'a MergeInputs,
    ctx: &'a EvalContext,
    method: ObjectiveMethod,
) -> impl Fn(&[f64]) -> Result<f64> + Sync + 'a {
    move |lambdas: &[f64]| Ok(ctx.validation_report(&merged_model(inputs, ctx, method, lambdas)?)?.average)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub method: ObjectiveMethod,
    pub run: BoRun,
    pub merged: ParamVector,
    pub validation: EvalReport,
    pub test: EvalReport,
}

impl OptimizeOutcome {
    pub fn best(&self) -> &CoefficientPoint {
        &self.run.best
    }
}

/// Bayesian optimization of the merging coefficients, then the test report of
/// the best merge.
pub fn run_optimize(inputs: &MergeInputs, ctx: &EvalContext, method: ObjectiveMethod, bo: &BoConfig) -> Result<OptimizeOutcome> {
    ctx.check_inputs(inputs)?;
    let objective = objective_fn(inputs, ctx, method);
    let run = bayesopt::optimize(inputs.num_models(), &objective, bo)?;
    finish_outcome(inputs, ctx, method, run)
}

fn finish_outcome(inputs: &MergeInputs, ctx: &EvalContext, method: ObjectiveMethod, run: BoRun) -> Result<OptimizeOutcome> {
    let merged = merged_model(inputs, ctx, method, &run.best.lambdas)?;
    let validation = ctx.validation_report(&merged)?;
    let test = ctx.test_report(&merged)?;
    Ok(OptimizeOutcome { method, run, merged, validation, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: Vec<f64>,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    /// Best hyperparameters; ties go to the lexicographically smallest.
    pub best: Vec<f64>,
    pub merged: ParamVector,
    pub validation: EvalReport,
    pub evaluated: Vec<GridPoint>,
}

fn grid_search<F>(ctx: &EvalContext, points: Vec<Vec<f64>>, merge_at: F) -> Result<GridSearchResult>
where
    F: Fn(&[f64]) -> Result<ParamVector> + Sync,
{
    if points.is_empty() {
        return Err(Error::Empty("search grid"));
    }
    let evaluated = points
        .par_iter()
        .map(|p| Ok(GridPoint { params: p.clone(), validation: ctx.validation_report(&merge_at(p)?)?.average }))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, g) in evaluated.iter().enumerate().skip(1) {
        let b = &evaluated[best];
        let better = g.validation > b.validation
            || (g.validation == b.validation && g.params.iter().partial_cmp(b.params.iter()) == Some(std::cmp::Ordering::Less));
        if better {
            best = i;
        }
    }
    let best = evaluated[best].params.clone();
    let merged = merge_at(&best)?;
    let validation = ctx.validation_report(&merged)?;
    Ok(GridSearchResult { best, merged, validation, evaluated })
}

/// Task arithmetic with one shared coefficient chosen on validation data.
pub fn grid_search_ta(inputs: &MergeInputs, grid: &[f64], ctx: &EvalContext) -> Result<GridSearchResult> {
    ctx.check_inputs(inputs)?;
    grid_search(ctx, grid.iter().map(|&l| vec![l]).collect(), |p| merge::merge_task_arithmetic(inputs, p[0]))
}

pub fn grid_search_ties(inputs: &MergeInputs, keep_fraction: f64, grid: &[f64], ctx: &EvalContext) -> Result<GridSearchResult> {
    ctx.check_inputs(inputs)?;
    grid_search(ctx, grid.iter().map(|&l| vec![l]).collect(), |p| merge::merge_ties(inputs, keep_fraction, p[0]))
}

/// DARE over the `(drop_rate, lambda)` product grid.
pub fn grid_search_dare(
    inputs: &MergeInputs,
    drop_grid: &[f64],
    lambda_grid: &[f64],
    seed: u64,
    ctx: &EvalContext,
) -> Result<GridSearchResult> {
    ctx.check_inputs(inputs)?;
    let points = drop_grid.iter().flat_map(|&p| lambda_grid.iter().map(move |&l| vec![p, l])).collect();
    grid_search(ctx, points, |p| merge::merge_dare(inputs, p[0], p[1], seed))
}

/// Fisher merging with each model's Fisher taken at the fine-tuned weights.
pub fn fisher_merge(inputs: &MergeInputs, ctx: &EvalContext) -> Result<ParamVector> {
    ctx.check_inputs(inputs)?;
    let fishers = (0..inputs.num_models()).map(|i| ctx.fisher(i, &inputs.fine_tuned(i)?)).collect::<Result<Vec<_>>>()?;
    merge::merge_fisher(inputs, &fishers)
}

/// Orthonormal basis of the plane through `theta_pre` spanned by two task
/// vectors, built by Gram-Schmidt from the first.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeBasis {
    pub u: ParamVector,
    pub v: ParamVector,
    pub tau1_norm: f64,
    /// `<tau_2, u>`
    pub tau2_along_u: f64,
    /// Norm of the component of `tau_2` orthogonal to `u`.
    pub tau2_ortho_norm: f64,
}

impl LandscapeBasis {
    pub fn new(tau1: &ParamVector, tau2: &ParamVector) -> Result<Self> {
        tau1.layout().ensure_same(tau2.layout())?;
        let tau1_norm = tau1.norm();
        if tau1_norm == 0.0 {
            return Err(Error::DegenerateBasis("first task vector is zero".into()));
        }
        let u = tau1.scaled(1.0 / tau1_norm)?;
        let c = tau2.dot(&u)?;
        let ortho: Vec<f64> = tau2.values().iter().zip(u.values()).map(|(t, u)| t - c * u).collect();
        let ortho_norm = ortho.iter().map(|x| x * x).sum::<f64>().sqrt();
        if ortho_norm <= 1e-12 * tau2.norm().max(tau1_norm) {
            return Err(Error::DegenerateBasis("task vectors are parallel".into()));
        }
        let v = tau2.with_values(ortho.iter().map(|x| x / ortho_norm).collect())?;
        Ok(Self { u, v, tau1_norm, tau2_along_u: c, tau2_ortho_norm: ortho_norm })
    }

    /// `theta_pre + x u + y v`
    pub fn point(&self, pretrained: &ParamVector, x: f64, y: f64) -> Result<ParamVector> {
        axpy_into_pretrained(pretrained, &[(x, &self.u), (y, &self.v)])
    }

    /// Plane coordinates of `theta_pre + a tau_1 + b tau_2`.
    pub fn coordinates(&self, a: f64, b: f64) -> (f64, f64) {
        (a * self.tau1_norm + b * self.tau2_along_u, b * self.tau2_ortho_norm)
    }

    /// Inverse of [`coordinates`](Self::coordinates).
    pub fn coefficients(&self, x: f64, y: f64) -> (f64, f64) {
        let b = y / self.tau2_ortho_norm;
        ((x - b * self.tau2_along_u) / self.tau1_norm, b)
    }

    /// Axis ranges covering the coefficient square `[0, 1]^2` with a 20% margin.
    pub fn default_bounds(&self) -> [(f64, f64); 2] {
        let xs = [0.0, self.tau1_norm, self.tau2_along_u, self.tau1_norm + self.tau2_along_u];
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        [(1.2 * lo, 1.2 * hi), (0.0, 1.2 * self.tau2_ortho_norm)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeVariant {
    /// Models at `theta_pre + x u + y v`.
    Gta,
    /// The Fisher-weighted merge at the coefficients of `(x, y)`.
    Df,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// `[(x_lo, x_hi), (y_lo, y_hi)]`; defaults to [`LandscapeBasis::default_bounds`].
    #[serde(default)]
    pub bounds: Option<[(f64, f64); 2]>,
}

fn default_resolution() -> usize {
    21
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self { resolution: default_resolution(), bounds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeCell {
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    /// Task-vector coefficients of `(x, y)`.
    pub coeff1: f64,
    pub coeff2: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub variant: LandscapeVariant,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub tau1_norm: f64,
    pub tau2_along_u: f64,
    pub tau2_ortho_norm: f64,
    /// Row-major over `(iy, ix)`.
    pub cells: Vec<LandscapeCell>,
}

impl LandscapeGrid {
    /// The highest-accuracy cell; ties go to the first in row-major order.
    pub fn best_cell(&self) -> &LandscapeCell {
        let mut best = &self.cells[0];
        for c in &self.cells[1..] {
            if c.accuracy > best.accuracy {
                best = c;
            }
        }
        best
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    /// One row per cell.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv_writer(path)?;
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Average validation accuracy over a grid in the plane of two task vectors.
pub fn landscape(
    inputs: &MergeInputs,
    ctx: &EvalContext,
    variant: LandscapeVariant,
    cfg: &LandscapeConfig,
) -> Result<LandscapeGrid> {
    if inputs.num_models() != 2 {
        return Err(Error::InvalidArgument(format!("landscape needs exactly two models, got {}", inputs.num_models())));
    }
    ctx.check_inputs(inputs)?;
    if cfg.resolution == 0 {
        return Err(Error::InvalidArgument("landscape resolution must be at least 1".into()));
    }
    let basis = LandscapeBasis::new(&inputs.taus()[0], &inputs.taus()[1])?;
    let [(x0, x1), (y0, y1)] = cfg.bounds.unwrap_or_else(|| basis.default_bounds());
    let xs = linspace(x0, x1, cfg.resolution);
    let ys = linspace(y0, y1, cfg.resolution);
    let coords: Vec<(usize, usize)> = (0..ys.len()).flat_map(|iy| (0..xs.len()).map(move |ix| (ix, iy))).collect();
    let cells = coords
        .par_iter()
        .map(|&(ix, iy)| {
            let (x, y) = (xs[ix], ys[iy]);
            let (a, b) = basis.coefficients(x, y);
            let model = match variant {
                LandscapeVariant::Gta => basis.point(inputs.pretrained(), x, y)?,
                LandscapeVariant::Df => {
                    let coeffs = CoefficientVector::unbounded(vec![a, b])?;
                    merge::merge_df(inputs, &coeffs, &|i: usize, p: &ParamVector| ctx.fisher(i, p))?
                }
            };
            let accuracy = ctx.validation_report(&model)?.average;
            Ok(LandscapeCell { ix, iy, x, y, coeff1: a, coeff2: b, accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeGrid {
        variant,
        xs,
        ys,
        tau1_norm: basis.tau1_norm,
        tau2_along_u: basis.tau2_along_u,
        tau2_ortho_norm: basis.tau2_ortho_norm,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    /// Merging coefficients, when the row has any.
    pub lambdas: Option<Vec<f64>>,
    pub validation: f64,
    pub test: f64,
    pub test_per_task: Vec<TaskAccuracy>,
}

fn ablation_row(method: &str, lambdas: Option<Vec<f64>>, model: &ParamVector, ctx: &EvalContext) -> Result<AblationRow> {
    let validation = ctx.validation_report(model)?.average;
    let test = ctx.test_report(model)?;
    Ok(AblationRow { method: method.to_string(), lambdas, validation, test: test.average, test_per_task: test.per_task })
}

pub const ABLATION_METHODS: [&str; 5] = ["df_ei", "df_ucb", "without_fisher", "without_bo", "averaging"];

/// The five-way component ablation: the full method with each acquisition,
/// plain coefficients instead of Fisher weighting, Fisher merging without the
/// coefficient search, and simple averaging. `bo.acquisition` is overridden
/// per row; `without_fisher` uses EI.
pub fn ablate(inputs: &MergeInputs, ctx: &EvalContext, bo: &BoConfig) -> Result<Vec<AblationRow>> {
    ctx.check_inputs(inputs)?;
    let ei = BoConfig { acquisition: AcquisitionKind::Ei, ..bo.clone() };
    let ucb_kind = match bo.acquisition {
        k @ AcquisitionKind::Ucb { .. } => k,
        AcquisitionKind::Ei => AcquisitionKind::ucb(),
    };
    let ucb = BoConfig { acquisition: ucb_kind, ..bo.clone() };
    let df_ei = run_optimize(inputs, ctx, ObjectiveMethod::Df, &ei)?;
    let df_ucb = run_optimize(inputs, ctx, ObjectiveMethod::Df, &ucb)?;
    let gta = run_optimize(inputs, ctx, ObjectiveMethod::Gta, &ei)?;
    Ok(vec![
        ablation_row(ABLATION_METHODS[0], Some(df_ei.best().lambdas.clone()), &df_ei.merged, ctx)?,
        ablation_row(ABLATION_METHODS[1], Some(df_ucb.best().lambdas.clone()), &df_ucb.merged, ctx)?,
        ablation_row(ABLATION_METHODS[2], Some(gta.best().lambdas.clone()), &gta.merged, ctx)?,
        ablation_row(ABLATION_METHODS[3], None, &fisher_merge(inputs, ctx)?, ctx)?,
        ablation_row(ABLATION_METHODS[4], None, &merge::merge_averaging(inputs)?, ctx)?,
    ])
}

/// `method,lambdas,validation,test` with lambdas joined by `;`.
pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "lambdas", "validation", "test"])?;
    for r in rows {
        let lambdas =
            r.lambdas.as_ref().map(|l| l.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")).unwrap_or_default();
        w.write_record([r.method.clone(), lambdas, r.validation.to_string(), r.test.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Iterations,
    ValRatio,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterations" => Ok(SweepAxis::Iterations),
            "val_ratio" => Ok(SweepAxis::ValRatio),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis `{other}`; expected iterations or val_ratio"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub lambdas: Vec<f64>,
    /// Best validation objective found.
    pub validation: f64,
    pub test: f64,
}

/// Best result after each number of BO iterations in `values`.
///
/// A run's first `k` proposals do not depend on later ones, so one run of
/// `max(values)` iterations is read at each prefix.
pub fn sweep_iterations(
    inputs: &MergeInputs,
    ctx: &EvalContext,
    method: ObjectiveMethod,
    bo: &BoConfig,
    values: &[usize],
) -> Result<Vec<SweepRow>> {
    let max = *values.iter().max().ok_or(Error::Empty("sweep values"))?;
    let full = run_optimize(inputs, ctx, method, &BoConfig { iterations: max, ..bo.clone() })?;
    values
        .iter()
        .map(|&k| {
            let prefix = &full.run.trajectory[..bo.init_points + k];
            let best = prefix.iter().fold(&prefix[0], |b, r| if r.objective > b.objective { r } else { b });
            let merged = merged_model(inputs, ctx, method, &best.lambdas)?;
            Ok(SweepRow {
                axis: SweepAxis::Iterations,
                value: k as f64,
                lambdas: best.lambdas.clone(),
                validation: best.objective,
                test: ctx.test_report(&merged)?.average,
            })
        })
        .collect()
}

/// One full optimization per validation ratio; subsets are nested.
pub fn sweep_val_ratio(
    inputs: &MergeInputs,
    ctx: &EvalContext,
    fisher_samples: usize,
    method: ObjectiveMethod,
    bo: &BoConfig,
    ratios: &[f64],
) -> Result<Vec<SweepRow>> {
    if ratios.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    ratios
        .iter()
        .map(|&r| {
            let sub = EvalContext::new(*ctx.spec(), ctx.tasks().to_vec(), r, fisher_samples, ctx.seed())?;
            let out = run_optimize(inputs, &sub, method, bo)?;
            Ok(SweepRow {
                axis: SweepAxis::ValRatio,
                value: r,
                lambdas: out.best().lambdas.clone(),
                validation: out.best().value,
                test: out.test.average,
            })
        })
        .collect()
}

/// `axis,value,lambdas,validation,test`.
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["axis", "value", "lambdas", "validation", "test"])?;
    for r in rows {
        let axis = match r.axis {
            SweepAxis::Iterations => "iterations",
            SweepAxis::ValRatio => "val_ratio",
        };
        let lambdas = r.lambdas.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([axis.to_string(), r.value.to_string(), lambdas, r.validation.to_string(), r.test.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
