//! Model merging through one unified rule:
//!
//! ```text
//! theta* = theta_pre + (sum_i C_i)^-1 (M * sum_i C_i lambda_i tau_i)
//! ```
//!
//! `C_i = I` gives averaging (`lambda_i = 1/M`) and general task arithmetic;
//! `C_i = diag(F_i)` gives Fisher merging (`lambda_i = 1/M`) and, with the
//! Fisher re-estimated at `theta_pre + lambda_i tau_i`, dynamic Fisher merging.
//! TIES and DARE preprocess task vectors before a task-arithmetic merge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fisher::{FisherDiagonal, FisherFull};
use crate::linalg;
use crate::params::{axpy_into_pretrained, task_vector, ParamVector};
use crate::rng::derive_seed;

/// Lower bound on the summed importance of a coordinate before division.
pub const IMPORTANCE_FLOOR: f64 = 1e-8;
/// Tikhonov term for the full-Fisher solve when the summed matrix is singular.
pub const FULL_SOLVE_RIDGE: f64 = 1e-8;

pub const DEFAULT_TIES_KEEP: f64 = 0.2;

/// TIES scaling grid: 0.8, 0.9, ..., 1.8.
pub fn ties_lambda_grid() -> Vec<f64> {
    (8..=18).map(|i| i as f64 / 10.0).collect()
}

/// Task-arithmetic scaling grid: 0.0, 0.1, ..., 1.0.
pub fn ta_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn dare_drop_grid() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

/// The pre-trained model and the task vectors of the models being merged.
#[derive(Debug, Clone)]
pub struct MergeInputs {
    pretrained: ParamVector,
    taus: Vec<ParamVector>,
    task_names: Vec<String>,
}

impl MergeInputs {
    pub fn new(pretrained: ParamVector, taus: Vec<ParamVector>, task_names: Vec<String>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Empty("task vector list"));
        }
        if task_names.len() != taus.len() {
            return Err(Error::DimensionMismatch { expected: taus.len(), actual: task_names.len() });
        }
        for tau in &taus {
            pretrained.layout().ensure_same(tau.layout())?;
        }
        Ok(Self { pretrained, taus, task_names })
    }

    /// Task vectors `theta_i - theta_pre` of fine-tuned checkpoints.
    pub fn from_checkpoints(pretrained: &Checkpoint, fine_tuned: &[Checkpoint]) -> Result<Self> {
        let taus = fine_tuned.iter().map(|c| task_vector(&c.params, &pretrained.params)).collect::<Result<Vec<_>>>()?;
        let names = fine_tuned.iter().map(|c| c.provenance.task.clone()).collect();
        Self::new(pretrained.params.clone(), taus, names)
    }

    pub fn pretrained(&self) -> &ParamVector {
        &self.pretrained
    }

    pub fn taus(&self) -> &[ParamVector] {
        &self.taus
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn num_models(&self) -> usize {
        self.taus.len()
    }

    /// `theta_pre + tau_i`.
    pub fn fine_tuned(&self, i: usize) -> Result<ParamVector> {
        axpy_into_pretrained(&self.pretrained, &[(1.0, &self.taus[i])])
    }

    /// `theta_pre + lambda * tau_i`.
    pub fn scaled_point(&self, i: usize, lambda: f64) -> Result<ParamVector> {
        axpy_into_pretrained(&self.pretrained, &[(lambda, &self.taus[i])])
    }
}

/// One merging coefficient per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    lambdas: Vec<f64>,
    #[serde(default)]
    unbounded: bool,
}

impl CoefficientVector {
    /// Coefficients in `[0, 1]`, as produced by the optimizer.
    pub fn bounded(lambdas: Vec<f64>) -> Result<Self> {
        if let Some(v) = lambdas.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("coefficient {v} outside [0, 1]")));
        }
        Ok(Self { lambdas, unbounded: false })
    }

    /// Any finite coefficients; the explicit override for user-supplied values.
    pub fn unbounded(lambdas: Vec<f64>) -> Result<Self> {
        if let Some(v) = lambdas.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coefficient {v}")));
        }
        Ok(Self { lambdas, unbounded: true })
    }

    pub fn uniform(m: usize, value: f64) -> Result<Self> {
        Self::unbounded(vec![value; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn is_unbounded(&self) -> bool {
        self.unbounded
    }
}

/// The `C_i` of the unified rule.
#[derive(Debug, Clone)]
pub enum ImportanceWeights {
    Identity,
    Diagonal(Vec<FisherDiagonal>),
}

pub fn unified_merge(inputs: &MergeInputs, coeffs: &CoefficientVector, weights: &ImportanceWeights) -> Result<ParamVector> {
    let m = inputs.num_models();
    if coeffs.len() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: coeffs.len() });
    }
    let lambdas = coeffs.as_slice();
    let mf = m as f64;
    let pre = inputs.pretrained.values();
    let d = pre.len();
    let values = match weights {
        ImportanceWeights::Identity => (0..d)
            .map(|k| {
                let num: f64 = inputs.taus.iter().zip(lambdas).map(|(t, l)| l * t.values()[k]).sum();
                pre[k] + (mf * num) / mf
            })
            .collect(),
        ImportanceWeights::Diagonal(fishers) => {
            if fishers.len() != m {
                return Err(Error::DimensionMismatch { expected: m, actual: fishers.len() });
            }
            for f in fishers {
                inputs.pretrained.layout().ensure_same(f.layout())?;
            }
            (0..d)
                .map(|k| {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for ((t, l), f) in inputs.taus.iter().zip(lambdas).zip(fishers) {
                        let c = f.values()[k];
                        num += c * l * t.values()[k];
                        den += c;
                    }
                    pre[k] + mf * num / den.max(IMPORTANCE_FLOOR)
                })
                .collect()
        }
    };
    inputs.pretrained.with_values(values)
}

pub fn merge_averaging(inputs: &MergeInputs) -> Result<ParamVector> {
    let m = inputs.num_models();
    unified_merge(inputs, &CoefficientVector::uniform(m, 1.0 / m as f64)?, &ImportanceWeights::Identity)
}

/// General task arithmetic: `theta_pre + sum_i lambda_i tau_i`.
pub fn merge_gta(inputs: &MergeInputs, coeffs: &CoefficientVector) -> Result<ParamVector> {
    unified_merge(inputs, coeffs, &ImportanceWeights::Identity)
}

/// One scaling coefficient applied to the sum of task vectors.
pub fn merge_task_arithmetic(inputs: &MergeInputs, lambda: f64) -> Result<ParamVector> {
    merge_gta(inputs, &CoefficientVector::uniform(inputs.num_models(), lambda)?)
}

pub fn merge_fisher(inputs: &MergeInputs, fishers: &[FisherDiagonal]) -> Result<ParamVector> {
    let m = inputs.num_models();
    unified_merge(inputs, &CoefficientVector::uniform(m, 1.0 / m as f64)?, &ImportanceWeights::Diagonal(fishers.to_vec()))
}

/// Fisher merging with dense matrices: solves `(sum F_i) delta = sum F_i tau_i`
/// and returns `theta_pre + delta`.
///
/// A singular sum is regularized with a small ridge and the solution polished
/// by iterative refinement against the unregularized system, which lands on
/// the minimum-norm `delta`.
pub fn merge_fisher_full(inputs: &MergeInputs, fishers: &[FisherFull], cap: usize) -> Result<ParamVector> {
    let m = inputs.num_models();
    if fishers.len() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: fishers.len() });
    }
    let d = inputs.pretrained.len();
    if d > cap {
        return Err(Error::DimensionCap { dim: d, cap });
    }
    for f in fishers {
        if f.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: f.dim() });
        }
    }
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for (f, tau) in fishers.iter().zip(&inputs.taus) {
        for (acc, v) in a.iter_mut().zip(f.matrix()) {
            *acc += v;
        }
        for (bi, fi) in b.iter_mut().zip(linalg::mat_vec(f.matrix(), d, tau.values())) {
            *bi += fi;
        }
    }
    let delta = match linalg::cholesky(&a, d) {
        Some(l) => refine(&a, &l, d, &b, linalg::cholesky_solve(&l, d, &b)),
        None => {
            let scale = (0..d).map(|i| a[i * d + i]).fold(0.0, f64::max).max(1.0);
            let mut ridge = FULL_SOLVE_RIDGE * scale;
            loop {
                let mut reg = a.clone();
                (0..d).for_each(|i| reg[i * d + i] += ridge);
                if let Some(l) = linalg::cholesky(&reg, d) {
                    let x0 = linalg::cholesky_solve(&l, d, &b);
                    break refine(&a, &l, d, &b, x0);
                }
                ridge *= 10.0;
                if ridge > 1e-2 * scale {
                    return Err(Error::NotPositiveDefinite { jitter: ridge });
                }
            }
        }
    };
    let values = inputs.pretrained.values().iter().zip(&delta).map(|(p, x)| p + x).collect();
    inputs.pretrained.with_values(values)
}

/// Iterative refinement of `a x = b` using an approximate factor `l`.
fn refine(a: &[f64], l: &[f64], d: usize, b: &[f64], mut x: Vec<f64>) -> Vec<f64> {
    let residual = |x: &[f64]| -> Vec<f64> { linalg::mat_vec(a, d, x).iter().zip(b).map(|(ax, b)| b - ax).collect() };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut r = residual(&x);
    let mut rn = norm(&r);
    for _ in 0..200 {
        let step = linalg::cholesky_solve(l, d, &r);
        let candidate: Vec<f64> = x.iter().zip(&step).map(|(x, s)| x + s).collect();
        let cr = residual(&candidate);
        let cn = norm(&cr);
        if !(cn < rn) {
            break;
        }
        x = candidate;
        r = cr;
        rn = cn;
    }
    x
}

/// Supplies the diagonal Fisher of model `task` evaluated at `point`.
pub trait FisherProvider {
    fn fisher(&self, task: usize, point: &ParamVector) -> Result<FisherDiagonal>;
}

impl<F> FisherProvider for F
where
    F: Fn(usize, &ParamVector) -> Result<FisherDiagonal>,
{
    fn fisher(&self, task: usize, point: &ParamVector) -> Result<FisherDiagonal> {
        self(task, point)
    }
}

/// Dynamic Fisher merging: the Fisher of model `i` is estimated at
/// `theta_pre + lambda_i tau_i`, then the unified rule is applied with the
/// same coefficients.
pub fn merge_df(inputs: &MergeInputs, coeffs: &CoefficientVector, provider: &dyn FisherProvider) -> Result<ParamVector> {
    let fishers = df_fishers(inputs, coeffs, provider)?;
    unified_merge(inputs, coeffs, &ImportanceWeights::Diagonal(fishers))
}

/// The per-model diagonals used by [`merge_df`].
pub fn df_fishers(
    inputs: &MergeInputs,
    coeffs: &CoefficientVector,
    provider: &dyn FisherProvider,
) -> Result<Vec<FisherDiagonal>> {
    if !coeffs.is_unbounded() {
        CoefficientVector::bounded(coeffs.as_slice().to_vec())?;
    }
    if coeffs.len() != inputs.num_models() {
        return Err(Error::DimensionMismatch { expected: inputs.num_models(), actual: coeffs.len() });
    }
    coeffs.as_slice().iter().enumerate().map(|(i, &lambda)| provider.fisher(i, &inputs.scaled_point(i, lambda)?)).collect()
}

/// Keeps the `keep_fraction` largest-magnitude entries; ties at the cut go
/// to the lower index.
pub fn ties_trim(tau: &ParamVector, keep_fraction: f64) -> Result<ParamVector> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep_fraction must lie in (0, 1], got {keep_fraction}")));
    }
    let n = tau.len();
    let keep = ((keep_fraction * n as f64).round() as usize).clamp(1.min(n), n);
    let mut order: Vec<usize> = (0..n).collect();
    let v = tau.values();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for &i in &order[..keep] {
        out[i] = v[i];
    }
    tau.with_values(out)
}

/// Sign election and disjoint mean over already-trimmed task vectors.
///
/// The elected sign of a coordinate is that of the entries' sum (positive on
/// a zero sum); the merged entry averages only the entries carrying it.
pub fn ties_elect_merge(trimmed: &[ParamVector]) -> Result<ParamVector> {
    let first = trimmed.first().ok_or(Error::Empty("task vector list"))?;
    for t in trimmed {
        first.layout().ensure_same(t.layout())?;
    }
    let values = (0..first.len())
        .map(|k| {
            let total: f64 = trimmed.iter().map(|t| t.values()[k]).sum();
            let positive = total >= 0.0;
            let (sum, count) = trimmed
                .iter()
                .map(|t| t.values()[k])
                .filter(|&v| if positive { v > 0.0 } else { v < 0.0 })
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect();
    first.with_values(values)
}

/// TIES merge: trim, elect, disjoint mean, then `theta_pre + lambda * merged`.
pub fn merge_ties(inputs: &MergeInputs, keep_fraction: f64, lambda: f64) -> Result<ParamVector> {
    let trimmed = inputs.taus.iter().map(|t| ties_trim(t, keep_fraction)).collect::<Result<Vec<_>>>()?;
    let merged = ties_elect_merge(&trimmed)?;
    axpy_into_pretrained(&inputs.pretrained, &[(lambda, &merged)])
}

/// Drops each entry with probability `drop_rate` and rescales survivors by
/// `1 / (1 - drop_rate)`.
pub fn dare_preprocess(tau: &ParamVector, drop_rate: f64, seed: u64) -> Result<ParamVector> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::InvalidArgument(format!("drop_rate must lie in [0, 1), got {drop_rate}")));
    }
    if drop_rate == 0.0 {
        return Ok(tau.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_scale = 1.0 / (1.0 - drop_rate);
    let values = tau.values().iter().map(|v| if rng.random::<f64>() < drop_rate { 0.0 } else { v * keep_scale }).collect();
    tau.with_values(values)
}

/// DARE on every task vector (seeded per model), then task arithmetic.
pub fn merge_dare(inputs: &MergeInputs, drop_rate: f64, lambda: f64, seed: u64) -> Result<ParamVector> {
    let taus = inputs
        .taus
        .iter()
        .enumerate()
        .map(|(i, t)| dare_preprocess(t, drop_rate, derive_seed(seed, &format!("dare/{i}"))))
        .collect::<Result<Vec<_>>>()?;
    let dropped = MergeInputs::new(inputs.pretrained.clone(), taus, inputs.task_names.clone())?;
    merge_task_arithmetic(&dropped, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SegmentLayout;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(SegmentLayout::single("w", values.len()), values.to_vec()).unwrap()
    }

    fn random_pv(d: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ParamVector {
        pv(&(0..d).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>())
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    fn inputs(pre: &[f64], taus: &[&[f64]]) -> MergeInputs {
        let names = (0..taus.len()).map(|i| format!("t{i}")).collect();
        MergeInputs::new(pv(pre), taus.iter().map(|t| pv(t)).collect(), names).unwrap()
    }

    fn fd(values: &[f64]) -> FisherDiagonal {
        FisherDiagonal::new(SegmentLayout::single("w", values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn identity_with_uniform_coefficients_is_averaging() {
        let mi = inputs(&[1.0, 2.0], &[&[0.3, -0.6], &[0.9, 0.3], &[-0.3, 0.0]]);
        let merged = merge_averaging(&mi).unwrap();
        assert!((merged.values()[0] - (1.0 + 0.9 / 3.0)).abs() <= 1e-12);
        assert!((merged.values()[1] - (2.0 - 0.3 / 3.0)).abs() <= 1e-12);
    }

    #[test]
    fn identity_weights_give_gta() {
        let mi = inputs(&[0.5, -1.0, 2.0], &[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 0.25]]);
        let c = CoefficientVector::unbounded(vec![0.7, -1.3]).unwrap();
        let merged = unified_merge(&mi, &c, &ImportanceWeights::Identity).unwrap();
        let expected = [0.5 + 0.7 + 1.3, -1.0 + 1.4 - 1.3 * 0.5, 2.0 + 2.1 - 1.3 * 0.25];
        for (a, b) in merged.values().iter().zip(expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_model_with_diagonal_weights_recovers_fine_tuned() {
        let mi = inputs(&[1.0, 2.0, 3.0], &[&[0.5, -0.25, 4.0]]);
        let c = CoefficientVector::bounded(vec![1.0]).unwrap();
        let merged = unified_merge(&mi, &c, &ImportanceWeights::Diagonal(vec![fd(&[0.3, 7.0, 1e-3])])).unwrap();
        assert_close(merged.values(), &[1.5, 1.75, 7.0]);
    }

    #[test]
    fn diagonal_merge_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pre = random_pv(10, &mut rng, -1.0, 1.0);
        let taus = vec![random_pv(10, &mut rng, -1.0, 1.0), random_pv(10, &mut rng, -1.0, 1.0)];
        let fishers = vec![
            fd(&(0..10).map(|_| rng.random_range(0.01..2.0)).collect::<Vec<_>>()),
            fd(&(0..10).map(|_| rng.random_range(0.01..2.0)).collect::<Vec<_>>()),
        ];
        let lambdas = [0.35, 0.8];
        let mi = MergeInputs::new(pre.clone(), taus.clone(), vec!["a".into(), "b".into()]).unwrap();
        let merged = unified_merge(
            &mi,
            &CoefficientVector::bounded(lambdas.to_vec()).unwrap(),
            &ImportanceWeights::Diagonal(fishers.clone()),
        )
        .unwrap();
        for k in 0..10 {
            let c0 = fishers[0].values()[k];
            let c1 = fishers[1].values()[k];
            let num = 2.0 * (c0 * lambdas[0] * taus[0].values()[k] + c1 * lambdas[1] * taus[1].values()[k]);
            let expected = pre.values()[k] + num / (c0 + c1);
            assert!((merged.values()[k] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_importance_coordinate_stays_finite() {
        let mi = inputs(&[1.0, 1.0], &[&[2.0, 3.0], &[4.0, 5.0]]);
        let merged = merge_fisher(&mi, &[fd(&[0.0, 1.0]), fd(&[0.0, 0.0])]).unwrap();
        assert!(merged.values().iter().all(|v| v.is_finite()));
        assert_eq!(merged.values()[0], 1.0);
        assert_eq!(merged.values()[1], 4.0);
    }

    #[test]
    fn averaging_examples() {
        let same = inputs(&[0.0, 1.0], &[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let merged = merge_averaging(&same).unwrap();
        for (a, b) in merged.values().iter().zip([1.0, 2.0]) {
            assert!((a - b).abs() <= 1e-15);
        }
        let opposite = inputs(&[0.5, -2.0], &[&[1.5, 3.0], &[-1.5, -3.0]]);
        assert_eq!(merge_averaging(&opposite).unwrap().values(), &[0.5, -2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pre = random_pv(6, &mut rng, -1.0, 1.0);
        let thetas: Vec<ParamVector> = (0..3).map(|_| random_pv(6, &mut rng, -2.0, 2.0)).collect();
        let taus = thetas.iter().map(|t| task_vector(t, &pre).unwrap()).collect();
        let mi = MergeInputs::new(pre, taus, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let merged = merge_averaging(&mi).unwrap();
        for k in 0..6 {
            let mean = thetas.iter().map(|t| t.values()[k]).sum::<f64>() / 3.0;
            assert!((merged.values()[k] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn task_arithmetic_reductions() {
        let mi = inputs(&[1.0, -1.0], &[&[0.5, 2.0], &[1.5, -4.0]]);
        assert_eq!(merge_task_arithmetic(&mi, 0.0).unwrap().values(), &[1.0, -1.0]);
        let single = inputs(&[1.0, -1.0], &[&[0.5, 2.0]]);
        assert_eq!(merge_task_arithmetic(&single, 1.0).unwrap().values(), &[1.5, 1.0]);
        let ta = merge_task_arithmetic(&mi, 0.3).unwrap();
        let gta = unified_merge(&mi, &CoefficientVector::uniform(2, 0.3).unwrap(), &ImportanceWeights::Identity).unwrap();
        assert_eq!(ta, gta);
        assert!((ta.values()[0] - (1.0 + 0.3 * 2.0)).abs() <= 1e-12);
        assert!((ta.values()[1] - (-1.0 + 0.3 * -2.0)).abs() <= 1e-12);
    }

    #[test]
    fn equal_fishers_reduce_to_averaging() {
        let mi = inputs(&[0.2, 0.4, 0.6], &[&[1.0, -1.0, 0.5], &[0.0, 3.0, -0.5]]);
        let f = fd(&[0.7, 0.7, 0.7]);
        let fisher = merge_fisher(&mi, &[f.clone(), f]).unwrap();
        let avg = merge_averaging(&mi).unwrap();
        for (a, b) in fisher.values().iter().zip(avg.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_hot_fisher_copies_the_dominant_model() {
        let mi = inputs(&[1.0, 1.0], &[&[2.0, -3.0], &[5.0, 7.0], &[-1.0, 0.5]]);
        let fishers = [fd(&[0.0, 0.0]), fd(&[1.0, 0.0]), fd(&[0.0, 1.0])];
        let merged = merge_fisher(&mi, &fishers).unwrap();
        assert!((merged.values()[0] - (1.0 + 5.0)).abs() <= 1e-12);
        assert!((merged.values()[1] - (1.0 + 0.5)).abs() <= 1e-12);
    }

    #[test]
    fn full_fisher_with_identity_is_averaging() {
        let mi = inputs(&[0.0, 1.0, 2.0], &[&[1.0, 2.0, 3.0], &[-3.0, 0.0, 1.0]]);
        let merged = merge_fisher_full(&mi, &[FisherFull::identity(3), FisherFull::identity(3)], 500).unwrap();
        let avg = merge_averaging(&mi).unwrap();
        for (a, b) in merged.values().iter().zip(avg.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_fisher_with_diagonal_matrices_matches_diagonal_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pre = random_pv(12, &mut rng, -1.0, 1.0);
        let taus: Vec<ParamVector> = (0..3).map(|_| random_pv(12, &mut rng, -1.0, 1.0)).collect();
        let diags: Vec<Vec<f64>> = (0..3).map(|_| (0..12).map(|_| rng.random_range(0.05..3.0)).collect()).collect();
        let mi = MergeInputs::new(pre, taus, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let full: Vec<FisherFull> = diags.iter().map(|d| FisherFull::from_diagonal(d)).collect();
        let diag: Vec<FisherDiagonal> = diags.iter().map(|d| fd(d)).collect();
        let a = merge_fisher_full(&mi, &full, 500).unwrap();
        let b = merge_fisher(&mi, &diag).unwrap();
        for (a, b) in a.values().iter().zip(b.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn singular_full_fisher_still_solves() {
        // Both models are blind to coordinate 1; it stays at the pre-trained value.
        let mi = inputs(&[1.0, 1.0], &[&[2.0, 5.0], &[4.0, -5.0]]);
        let f = FisherFull::from_diagonal(&[1.0, 0.0]);
        let merged = merge_fisher_full(&mi, &[f.clone(), f], 500).unwrap();
        assert!((merged.values()[0] - 4.0).abs() <= 1e-9);
        assert!((merged.values()[1] - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn full_fisher_respects_cap() {
        let mi = inputs(&[0.0; 4], &[&[1.0; 4]]);
        assert!(matches!(merge_fisher_full(&mi, &[FisherFull::identity(4)], 3), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn df_merge_reductions() {
        let mi = inputs(&[1.0, 2.0, 3.0], &[&[0.5, -1.0, 2.0]]);
        let provider =
            |_: usize, p: &ParamVector| FisherDiagonal::new(p.layout().clone(), p.values().iter().map(|v| v * v + 0.1).collect());
        let one = CoefficientVector::bounded(vec![1.0]).unwrap();
        assert_close(merge_df(&mi, &one, &provider).unwrap().values(), mi.fine_tuned(0).unwrap().values());

        // With a constant provider the Fisher weights cancel: plain GTA.
        let mi2 = inputs(&[0.0, 1.0], &[&[1.0, 2.0], &[-2.0, 0.5]]);
        let constant = |_: usize, p: &ParamVector| FisherDiagonal::constant(p.layout().clone(), 0.4);
        let c = CoefficientVector::bounded(vec![0.6, 0.4]).unwrap();
        let df = merge_df(&mi2, &c, &constant).unwrap();
        let gta = unified_merge(&mi2, &c, &ImportanceWeights::Identity).unwrap();
        for (a, b) in df.values().iter().zip(gta.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn df_merge_rejects_out_of_range_unless_overridden() {
        let mi = inputs(&[0.0], &[&[1.0]]);
        let constant = |_: usize, p: &ParamVector| FisherDiagonal::constant(p.layout().clone(), 1.0);
        assert!(CoefficientVector::bounded(vec![1.5]).is_err());
        let over = CoefficientVector::unbounded(vec![1.5]).unwrap();
        assert_eq!(merge_df(&mi, &over, &constant).unwrap().values(), &[1.5]);
    }

    #[test]
    fn ties_hand_example() {
        let merged = ties_elect_merge(&[pv(&[1.0, -2.0]), pv(&[3.0, 1.0])]).unwrap();
        assert_eq!(merged.values(), &[2.0, -2.0]);
    }

    #[test]
    fn ties_single_model_full_keep_is_identity() {
        let tau = pv(&[0.5, -1.0, 0.0, 2.0]);
        assert_eq!(ties_trim(&tau, 1.0).unwrap(), tau);
        let mi = inputs(&[1.0, 1.0, 1.0, 1.0], &[&[0.5, -1.0, 0.0, 2.0]]);
        assert_eq!(merge_ties(&mi, 1.0, 1.0).unwrap(), mi.fine_tuned(0).unwrap());
    }

    #[test]
    fn ties_trim_breaks_ties_by_lower_index() {
        let trimmed = ties_trim(&pv(&[1.0, -3.0, 3.0, 0.5, -3.0]), 0.4).unwrap();
        assert_eq!(trimmed.values(), &[0.0, -3.0, 3.0, 0.0, 0.0]);
        assert!(ties_trim(&pv(&[1.0]), 0.0).is_err());
        assert!(ties_trim(&pv(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn ties_zero_sum_elects_positive() {
        let merged = ties_elect_merge(&[pv(&[2.0]), pv(&[-2.0])]).unwrap();
        assert_eq!(merged.values(), &[2.0]);
    }

    #[test]
    fn dare_zero_drop_is_identity_and_range_checked() {
        let tau = pv(&[1.0, -2.0, 3.0]);
        assert_eq!(dare_preprocess(&tau, 0.0, 1).unwrap(), tau);
        assert!(dare_preprocess(&tau, 1.0, 1).is_err());
        assert!(dare_preprocess(&tau, 0.999, 1).is_ok());
        assert_eq!(dare_preprocess(&tau, 0.5, 4).unwrap(), dare_preprocess(&tau, 0.5, 4).unwrap());
    }

    #[test]
    fn dare_is_unbiased() {
        let tau = pv(&[1.7, -0.4]);
        let p = 0.3;
        let n = 10_000;
        let samples: Vec<f64> = (0..n).map(|s| dare_preprocess(&tau, p, s as u64).unwrap().values()[0]).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.7).abs() <= 3.0 * se, "mean {mean} se {se}");
    }
}
