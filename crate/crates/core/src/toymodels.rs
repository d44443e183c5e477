//! Synthetic Gaussian-mixture tasks and tiny softmax classifiers with
//! hand-written gradients.
//!
//! The classifiers are either linear softmax (`hidden_dim == 0`) or one tanh
//! hidden layer followed by softmax. Parameters live in a flat
//! [`ParamVector`] whose layout is fixed by [`ClassifierSpec::layout`].

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, DatasetMeta, HeaderBody, Provenance};
use crate::error::{Error, Result};
use crate::params::{ParamVector, SegmentLayout};

/// Mean NLL above which training is treated as diverged. A model this wrong
/// assigns its labels probability below `e^-1000`.
pub const DIVERGENCE_LOSS: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    /// Zero selects a linear softmax classifier.
    #[serde(default)]
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ClassifierSpec {
    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        if h == 0 {
            c * d + c
        } else {
            h * d + h + c * h + c
        }
    }

    pub fn layout(&self) -> SegmentLayout {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        let parts: Vec<(&str, usize)> = if h == 0 {
            vec![("out.weight", c * d), ("out.bias", c)]
        } else {
            vec![("hidden.weight", h * d), ("hidden.bias", h), ("out.weight", c * h), ("out.bias", c)]
        };
        SegmentLayout::from_lengths(parts).expect("classifier layout is contiguous")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("num_classes must be at least 2".into()));
        }
        Ok(())
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        params.layout().ensure_same(&self.layout())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, actual: x.len() });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// A Gaussian-mixture classification task: class `c` draws inputs from
/// `N(class_means[c], cov_scale * I)`; labels are balanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub task_id: String,
    pub input_dim: usize,
    pub num_classes: usize,
    pub class_means: Vec<Vec<f64>>,
    /// Shared isotropic variance.
    pub cov_scale: f64,
    pub split_sizes: SplitSizes,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!("task `{}`: num_classes must be at least 2", self.task_id)));
        }
        let s = self.split_sizes;
        if s.train == 0 || s.validation == 0 || s.test == 0 {
            return Err(Error::InvalidArgument(format!("task `{}`: every split needs at least one sample", self.task_id)));
        }
        if !(self.cov_scale > 0.0) || !self.cov_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "task `{}`: covariance scale must be positive, got {}",
                self.task_id, self.cov_scale
            )));
        }
        if self.class_means.len() != self.num_classes {
            return Err(Error::DimensionMismatch { expected: self.num_classes, actual: self.class_means.len() });
        }
        for mean in &self.class_means {
            if mean.len() != self.input_dim {
                return Err(Error::DimensionMismatch { expected: self.input_dim, actual: mean.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        })
    }
}

/// Row-major inputs with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Split {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch { expected: dim * labels.len(), actual: inputs.len() });
        }
        Ok(Self { dim, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task_id: String,
    pub input_dim: usize,
    pub num_classes: usize,
    pub train: Split,
    pub validation: Split,
    pub test: Split,
}

impl Dataset {
    pub fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    fn payload(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for split in [&self.train, &self.validation, &self.test] {
            for i in 0..split.len() {
                out.extend_from_slice(split.input(i));
                out.push(split.label(i) as f64);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = DatasetMeta {
            task_id: self.task_id.clone(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            split_sizes: [self.train.len(), self.validation.len(), self.test.len()],
        };
        checkpoint::write_container(path, &HeaderBody::Dataset { dataset: meta }, &self.payload())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (body, values) = checkpoint::read_container(path)?;
        let meta = match body {
            HeaderBody::Dataset { dataset } => dataset,
            other => {
                return Err(Error::MalformedHeader(format!(
                    "expected a dataset container, found {}",
                    checkpoint::kind_name(&other)
                )))
            }
        };
        let row = meta.input_dim + 1;
        let rows: usize = meta.split_sizes.iter().sum();
        if values.len() != rows * row {
            return Err(Error::PayloadLength { declared: rows * row, actual: values.len() });
        }
        let mut chunks = values.chunks_exact(row);
        let mut take = |n: usize| -> Result<Split> {
            let mut inputs = Vec::with_capacity(n * meta.input_dim);
            let mut labels = Vec::with_capacity(n);
            for chunk in chunks.by_ref().take(n) {
                inputs.extend_from_slice(&chunk[..meta.input_dim]);
                let label = chunk[meta.input_dim];
                if label < 0.0 || label.fract() != 0.0 || label as usize >= meta.num_classes {
                    return Err(Error::MalformedHeader(format!("invalid label {label}")));
                }
                labels.push(label as usize);
            }
            Split::new(meta.input_dim, inputs, labels)
        };
        let train = take(meta.split_sizes[0])?;
        let validation = take(meta.split_sizes[1])?;
        let test = take(meta.split_sizes[2])?;
        Ok(Self { task_id: meta.task_id, input_dim: meta.input_dim, num_classes: meta.num_classes, train, validation, test })
    }
}

pub fn generate_task(spec: &SyntheticTask) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = spec.cov_scale.sqrt();
    let mut make = |n: usize| -> Split {
        let mut labels: Vec<usize> = (0..n).map(|i| i % spec.num_classes).collect();
        labels.shuffle(&mut rng);
        let mut inputs = Vec::with_capacity(n * spec.input_dim);
        for &y in &labels {
            for &m in &spec.class_means[y] {
                let z: f64 = rng.sample(StandardNormal);
                inputs.push(m + std * z);
            }
        }
        Split { dim: spec.input_dim, inputs, labels }
    };
    let train = make(spec.split_sizes.train);
    let validation = make(spec.split_sizes.validation);
    let test = make(spec.split_sizes.test);
    Ok(Dataset {
        task_id: spec.task_id.clone(),
        input_dim: spec.input_dim,
        num_classes: spec.num_classes,
        train,
        validation,
        test,
    })
}

/// Knobs for a family of related tasks over one shared input space.
///
/// Inputs are `shared_dims` common features followed by one private block of
/// `private_dims` features per task. Task `t` only places class signal on the
/// shared block and its own private block; other private blocks carry noise.
/// `conflict` interpolates the shared-block class prototypes between being
/// identical across tasks (0) and independent per task (1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub num_tasks: usize,
    pub num_classes: usize,
    pub shared_dims: usize,
    pub private_dims: usize,
    pub separation: f64,
    /// Relative strength of the shared block's class signal.
    #[serde(default = "default_shared_weight")]
    pub shared_weight: f64,
    pub conflict: f64,
    pub cov_scale: f64,
    pub split_sizes: SplitSizes,
    pub seed: u64,
}

fn default_shared_weight() -> f64 {
    1.0
}

impl SuiteConfig {
    pub fn input_dim(&self) -> usize {
        self.shared_dims + self.num_tasks * self.private_dims
    }

    pub fn tasks(&self) -> Result<Vec<SyntheticTask>> {
        if self.num_tasks == 0 {
            return Err(Error::Empty("task suite"));
        }
        if !(0.0..=1.0).contains(&self.conflict) {
            return Err(Error::InvalidArgument(format!("conflict must lie in [0, 1], got {}", self.conflict)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut prototype = |dims: usize| -> Vec<Vec<f64>> {
            (0..self.num_classes)
                .map(|_| {
                    let v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        };
        let common = prototype(self.shared_dims);
        type Prototypes = Vec<Vec<f64>>;
        let per_task: Vec<(Prototypes, Prototypes)> =
            (0..self.num_tasks).map(|_| (prototype(self.shared_dims), prototype(self.private_dims))).collect();
        let d = self.input_dim();
        let mut tasks = Vec::with_capacity(self.num_tasks);
        for (t, (own_shared, own_private)) in per_task.iter().enumerate() {
            let class_means = (0..self.num_classes)
                .map(|c| {
                    let mut mean = vec![0.0; d];
                    for k in 0..self.shared_dims {
                        let blend = (1.0 - self.conflict) * common[c][k] + self.conflict * own_shared[c][k];
                        mean[k] = self.separation * self.shared_weight * blend;
                    }
                    let start = self.shared_dims + t * self.private_dims;
                    for k in 0..self.private_dims {
                        mean[start + k] = self.separation * own_private[c][k];
                    }
                    mean
                })
                .collect();
            tasks.push(SyntheticTask {
                task_id: format!("task-{t}"),
                input_dim: d,
                num_classes: self.num_classes,
                class_means,
                cov_scale: self.cov_scale,
                split_sizes: self.split_sizes,
                seed: crate::rng::derive_seed(self.seed, &format!("data/task-{t}")),
            });
        }
        Ok(tasks)
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Activations {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn activations(w: &[f64], spec: &ClassifierSpec, x: &[f64]) -> Activations {
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let hidden: Vec<f64> = (0..h)
        .map(|j| {
            let row = &w[j * d..(j + 1) * d];
            (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[h * d + j]).tanh()
        })
        .collect();
    let (features, out_off) = if h == 0 { (x, 0) } else { (&hidden[..], h * d + h) };
    let fdim = features.len();
    let bias_off = out_off + c * fdim;
    let mut logits: Vec<f64> = (0..c)
        .map(|k| {
            let row = &w[out_off + k * fdim..out_off + (k + 1) * fdim];
            row.iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + w[bias_off + k]
        })
        .collect();
    softmax_in_place(&mut logits);
    Activations { hidden, probs: logits }
}

/// Adds `scale * d(loss)/d(params)` given `dlogits = d(loss)/d(logits)`.
fn accumulate_grad(
    w: &[f64],
    spec: &ClassifierSpec,
    x: &[f64],
    act: &Activations,
    dlogits: &[f64],
    scale: f64,
    grad: &mut [f64],
) {
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    if h == 0 {
        for k in 0..c {
            let g = scale * dlogits[k];
            for (gw, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                *gw += g * xi;
            }
            grad[c * d + k] += g;
        }
        return;
    }
    let out_off = h * d + h;
    let bias_off = out_off + c * h;
    let mut dhidden = vec![0.0; h];
    for k in 0..c {
        let g = scale * dlogits[k];
        for j in 0..h {
            grad[out_off + k * h + j] += g * act.hidden[j];
            dhidden[j] += g * w[out_off + k * h + j];
        }
        grad[bias_off + k] += g;
    }
    for j in 0..h {
        let dpre = dhidden[j] * (1.0 - act.hidden[j] * act.hidden[j]);
        for (gw, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
            *gw += dpre * xi;
        }
        grad[h * d + j] += dpre;
    }
}

/// Class probabilities `p(y | x, params)`.
pub fn forward(params: &ParamVector, spec: &ClassifierSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    Ok(activations(params.values(), spec, x).probs)
}

/// Argmax of the class probabilities, ties to the lowest class index.
pub fn predict(params: &ParamVector, spec: &ClassifierSpec, x: &[f64]) -> Result<usize> {
    Ok(argmax(&forward(params, spec, x)?))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// For one input: the predictive distribution and, for every label `y`, the
/// gradient of `-log p(y | x)`.
pub(crate) fn per_label_grads(w: &[f64], spec: &ClassifierSpec, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let act = activations(w, spec, x);
    let c = spec.num_classes;
    let grads = (0..c)
        .map(|y| {
            let mut dlogits = act.probs.clone();
            dlogits[y] -= 1.0;
            let mut g = vec![0.0; w.len()];
            accumulate_grad(w, spec, x, &act, &dlogits, 1.0, &mut g);
            g
        })
        .collect();
    (act.probs, grads)
}

pub(crate) fn check_for_fisher(params: &ParamVector, spec: &ClassifierSpec, inputs: &[&[f64]]) -> Result<()> {
    spec.check_params(params)?;
    if inputs.is_empty() {
        return Err(Error::Empty("input batch"));
    }
    inputs.iter().try_for_each(|x| spec.check_input(x))
}

fn nll_and_grad_raw(w: &[f64], spec: &ClassifierSpec, inputs: &[&[f64]], labels: &[usize]) -> (f64, Vec<f64>) {
    let n = inputs.len() as f64;
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let act = activations(w, spec, x);
        loss -= act.probs[y].ln();
        let mut dlogits = act.probs.clone();
        dlogits[y] -= 1.0;
        accumulate_grad(w, spec, x, &act, &dlogits, 1.0 / n, &mut grad);
    }
    (loss / n, grad)
}

/// Mean negative log-likelihood over the batch and its gradient.
pub fn nll_and_grad(
    params: &ParamVector,
    spec: &ClassifierSpec,
    inputs: &[&[f64]],
    labels: &[usize],
) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    if inputs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), actual: labels.len() });
    }
    for (x, &y) in inputs.iter().zip(labels) {
        spec.check_input(x)?;
        if y >= spec.num_classes {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {} classes", spec.num_classes)));
        }
    }
    let (loss, grad) = nll_and_grad_raw(params.values(), spec, inputs, labels);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    Ok((loss, params.with_values(grad)?))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Plain minibatch SGD with decoupled weight decay; step `s` draws its batch
/// from task `s % tasks.len()`.
fn train_sgd(start: &ParamVector, spec: &ClassifierSpec, tasks: &[&Dataset], cfg: &TrainConfig) -> Result<ParamVector> {
    spec.check_params(start)?;
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Empty("task list"));
    }
    for task in tasks {
        if task.input_dim != spec.input_dim || task.num_classes != spec.num_classes {
            return Err(Error::InvalidArgument(format!("task `{}` does not match the classifier spec", task.task_id)));
        }
        if task.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = start.values().to_vec();
    let mut inputs: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut labels = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        let split = &tasks[step % tasks.len()].train;
        inputs.clear();
        labels.clear();
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..split.len());
            inputs.push(split.input(i));
            labels.push(split.label(i));
        }
        let (loss, grad) = nll_and_grad_raw(&w, spec, &inputs, &labels);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { step });
        }
        for (p, g) in w.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * (g + cfg.weight_decay * *p);
        }
        if w.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { step });
        }
    }
    start.with_values(w)
}

pub fn finetune(pretrained: &ParamVector, spec: &ClassifierSpec, task: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    let params = train_sgd(pretrained, spec, &[task], cfg)?;
    Checkpoint::new(params, *spec, Provenance::new(task.task_id.clone(), cfg.seed, cfg.steps))
}

pub fn multitask_finetune(
    pretrained: &ParamVector,
    spec: &ClassifierSpec,
    tasks: &[Dataset],
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    let refs: Vec<&Dataset> = tasks.iter().collect();
    let params = train_sgd(pretrained, spec, &refs, cfg)?;
    let names: Vec<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    let provenance = Provenance::new("multitask", cfg.seed, cfg.steps).with_note("tasks", names);
    Checkpoint::new(params, *spec, provenance)
}

/// Random initialization (`N(0, 1/fan_in)` weights, zero biases), optionally
/// followed by light training on the mixture of `tasks`.
pub fn pretrain_shared_init(
    spec: &ClassifierSpec,
    seed: u64,
    tasks: &[Dataset],
    mixture: Option<&TrainConfig>,
) -> Result<Checkpoint> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = spec.layout();
    let mut values = vec![0.0; layout.total_len()];
    for seg in layout.segments() {
        if seg.name.ends_with(".bias") {
            continue;
        }
        let fan_in = if seg.name.starts_with("hidden") || spec.hidden_dim == 0 { spec.input_dim } else { spec.hidden_dim };
        let std = (1.0 / fan_in as f64).sqrt();
        for v in &mut values[seg.offset..seg.offset + seg.len] {
            let z: f64 = rng.sample(StandardNormal);
            *v = std * z;
        }
    }
    let mut params = ParamVector::new(layout, values)?;
    let mut steps = 0;
    if let Some(cfg) = mixture {
        if cfg.steps > 0 {
            let refs: Vec<&Dataset> = tasks.iter().collect();
            params = train_sgd(&params, spec, &refs, cfg)?;
            steps = cfg.steps;
        }
    }
    Checkpoint::new(params, *spec, Provenance::new("pretrained", seed, steps))
}
