//! Empirical Fisher information of the toy classifiers.
//!
//! The expectation over labels is taken exactly under the model's own
//! predictive distribution, so no labels enter the computation:
//!
//! ```text
//! F = 1/N * sum_j sum_y p(y | x_j) * g_jy g_jy^T,   g_jy = grad of -log p(y | x_j)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, HeaderBody, Provenance};
use crate::error::{Error, Result};
use crate::params::{axpy_into_pretrained, ParamVector, SegmentLayout};
use crate::toymodels::{check_for_fisher, per_label_grads, ClassifierSpec};

/// Unlabeled inputs per task used for each Fisher estimate.
pub const DEFAULT_FISHER_SAMPLES: usize = 30;
/// Largest parameter dimension for which the full matrix is formed.
pub const DEFAULT_FULL_CAP: usize = 500;

/// Per-parameter nonnegative importance, one entry per model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal {
    layout: SegmentLayout,
    values: Vec<f64>,
}

impl FisherDiagonal {
    pub fn new(layout: SegmentLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch { expected: layout.total_len(), actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite(format!("Fisher entry {i} is {}", values[i])));
        }
        Ok(Self { layout, values })
    }

    /// Constant importance `value` everywhere.
    pub fn constant(layout: SegmentLayout, value: f64) -> Result<Self> {
        let values = vec![value; layout.total_len()];
        Self::new(layout, values)
    }

    pub fn layout(&self) -> &SegmentLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean importance over the named segment.
    pub fn segment_mean(&self, name: &str) -> Option<f64> {
        let seg = self.layout.segment(name)?;
        let slice = &self.values[seg.offset..seg.offset + seg.len];
        Some(slice.iter().sum::<f64>() / slice.len().max(1) as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>, provenance: Provenance) -> Result<()> {
        let body = HeaderBody::Fisher { layout: self.layout.clone(), provenance };
        checkpoint::write_container(path, &body, &self.values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Provenance)> {
        match checkpoint::read_container(path)? {
            (HeaderBody::Fisher { layout, provenance }, values) => Ok((Self::new(layout, values)?, provenance)),
            (other, _) => {
                Err(Error::MalformedHeader(format!("expected a fisher container, found {}", checkpoint::kind_name(&other))))
            }
        }
    }
}

/// Dense symmetric positive-semidefinite Fisher matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherFull {
    dim: usize,
    matrix: Vec<f64>,
}

impl FisherFull {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, actual: matrix.len() });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Fisher matrix entry".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (matrix[i * dim + j], matrix[j * dim + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidArgument(format!("Fisher matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { dim, matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut matrix = vec![0.0; dim * dim];
        for (i, v) in diag.iter().enumerate() {
            matrix[i * dim + i] = *v;
        }
        Self { dim, matrix }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("Fisher gradient entry {i}"))),
        None => Ok(()),
    }
}

pub fn empirical_fisher_diag(params: &ParamVector, spec: &ClassifierSpec, inputs: &[&[f64]]) -> Result<FisherDiagonal> {
    check_for_fisher(params, spec, inputs)?;
    let w = params.values();
    let mut acc = vec![0.0; w.len()];
    for x in inputs {
        let (probs, grads) = per_label_grads(w, spec, x);
        for (p, g) in probs.iter().zip(&grads) {
            check_finite(g)?;
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += p * gi * gi;
            }
        }
    }
    let n = inputs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    FisherDiagonal::new(params.layout().clone(), acc)
}

pub fn empirical_fisher_full(params: &ParamVector, spec: &ClassifierSpec, inputs: &[&[f64]], cap: usize) -> Result<FisherFull> {
    let dim = params.len();
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    check_for_fisher(params, spec, inputs)?;
    let w = params.values();
    let mut acc = vec![0.0; dim * dim];
    for x in inputs {
        let (probs, grads) = per_label_grads(w, spec, x);
        for (p, g) in probs.iter().zip(&grads) {
            check_finite(g)?;
            for i in 0..dim {
                let pg = p * g[i];
                if pg == 0.0 {
                    continue;
                }
                // Upper triangle, mirrored below.
                for j in i..dim {
                    acc[i * dim + j] += pg * g[j];
                }
            }
        }
    }
    let n = inputs.len() as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = acc[i * dim + j] / n;
            acc[i * dim + j] = v;
            acc[j * dim + i] = v;
        }
    }
    Ok(FisherFull { dim, matrix: acc })
}

/// Diagonal Fisher at the interpolated point `pretrained + lambda * tau`.
pub fn fisher_at_scaled(
    pretrained: &ParamVector,
    tau: &ParamVector,
    lambda: f64,
    spec: &ClassifierSpec,
    inputs: &[&[f64]],
) -> Result<FisherDiagonal> {
    let point = axpy_into_pretrained(pretrained, &[(lambda, tau)])?;
    empirical_fisher_diag(&point, spec, inputs)
}
