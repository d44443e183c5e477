//! Gaussian-process Bayesian optimization over merging coefficients.
//!
//! The surrogate is a zero-noise GP with a constant prior mean (the mean of
//! the observations) and a stationary isotropic kernel. A small jitter,
//! relative to the kernel variance, is added to the diagonal so the Cholesky
//! factor exists. Hyperparameters are refit by maximizing the log marginal
//! likelihood before every proposal.
//!
//! Proposals maximize Expected Improvement or an upper confidence bound over
//! a shifted Halton candidate set, followed by coordinate-wise golden-section
//! refinement of the best candidates.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::derive_seed;

pub const DEFAULT_INIT_POINTS: usize = 10;
pub const DEFAULT_ITERATIONS: usize = 50;
pub const DEFAULT_KAPPA: f64 = 2.576;
pub const DEFAULT_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;
pub const CANDIDATES: usize = 4096;
pub const REFINE_STARTS: usize = 8;
/// Observations closer than this are treated as the same point.
pub const DUPLICATE_TOL: f64 = 1e-10;

const LENGTH_SCALE_RANGE: (f64, f64) = (1e-2, 1e1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Matern52,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub length_scale: f64,
    /// Prior standard deviation of the function; the kernel variance is its square.
    pub output_scale: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, length_scale: f64, output_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0 && length_scale.is_finite()) || !(output_scale > 0.0 && output_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel scales must be positive, got length {length_scale}, output {output_scale}"
            )));
        }
        Ok(Self { family, length_scale, output_scale })
    }

    pub fn variance(&self) -> f64 {
        self.output_scale * self.output_scale
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / (self.length_scale * self.length_scale);
        let shape = match self.family {
            KernelFamily::Rbf => (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let s = (5.0 * r2).sqrt();
                (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
            }
        };
        self.variance() * shape
    }
}

/// A fitted GP: observations, kernel, and the cached factorization.
#[derive(Debug, Clone)]
pub struct GpState {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    kernel: Kernel,
    /// Diagonal term relative to the kernel variance.
    jitter: f64,
    prior_mean: f64,
    chol: Vec<f64>,
    alpha: Vec<f64>,
}

impl GpState {
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    /// Lower Cholesky factor of `K + jitter * output_scale^2 * I`, row-major.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The dense matrix that `cholesky_factor` factors.
    pub fn kernel_matrix(&self) -> Vec<f64> {
        kernel_matrix(&self.points, &self.kernel, self.jitter)
    }

    /// Fits with fixed kernel hyperparameters. A `jitter` of zero requests a
    /// noiseless fit; it is escalated only if the factorization fails.
    pub fn fit_fixed(points: &[Vec<f64>], values: &[f64], kernel: Kernel, jitter: f64) -> Result<Self> {
        let (points, values) = prepare(points, values)?;
        let prior_mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut jitter = jitter.max(0.0);
        loop {
            if let Some(state) = factor(&points, &values, kernel, jitter, prior_mean) {
                return Ok(state);
            }
            jitter = if jitter == 0.0 { 1e-12 } else { jitter * 2.0 };
            if jitter > MAX_JITTER {
                return Err(Error::NotPositiveDefinite { jitter });
            }
        }
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        lml(&self.chol, &self.alpha, &self.values, self.prior_mean)
    }
}

fn prepare(points: &[Vec<f64>], values: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if points.is_empty() {
        return Err(Error::Empty("observation set"));
    }
    if points.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: points.len(), actual: values.len() });
    }
    let dim = points[0].len();
    let mut merged: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    for (p, &v) in points.iter().zip(values) {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: p.len() });
        }
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument(format!("observation {p:?} outside the unit cube")));
        }
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective { lambdas: p.clone() });
        }
        let near = merged
            .iter_mut()
            .find(|(q, _, _)| q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < DUPLICATE_TOL);
        match near {
            Some((_, sum, count)) => {
                *sum += v;
                *count += 1;
            }
            None => merged.push((p.clone(), v, 1)),
        }
    }
    Ok(merged.into_iter().map(|(p, s, c)| (p, s / c as f64)).unzip())
}

fn kernel_matrix(points: &[Vec<f64>], kernel: &Kernel, jitter: f64) -> Vec<f64> {
    let n = points.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&points[i], &points[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += jitter * kernel.variance();
    }
    k
}

fn factor(points: &[Vec<f64>], values: &[f64], kernel: Kernel, jitter: f64, prior_mean: f64) -> Option<GpState> {
    let n = points.len();
    let chol = linalg::cholesky(&kernel_matrix(points, &kernel, jitter), n)?;
    let centered: Vec<f64> = values.iter().map(|v| v - prior_mean).collect();
    let alpha = linalg::cholesky_solve(&chol, n, &centered);
    Some(GpState { points: points.to_vec(), values: values.to_vec(), kernel, jitter, prior_mean, chol, alpha })
}

fn lml(chol: &[f64], alpha: &[f64], values: &[f64], prior_mean: f64) -> f64 {
    let n = values.len();
    let fit: f64 = values.iter().zip(alpha).map(|(v, a)| (v - prior_mean) * a).sum();
    let log_det: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
    -0.5 * fit - log_det - 0.5 * n as f64 * (2.0 * PI).ln()
}

/// Fits a GP, choosing length and output scales by maximizing the log
/// marginal likelihood with a multi-start coordinate search in log space.
pub fn gp_fit(points: &[Vec<f64>], values: &[f64], kernel_init: Kernel, jitter: f64) -> Result<GpState> {
    let (points, values) = prepare(points, values)?;
    let n = values.len() as f64;
    let prior_mean = values.iter().sum::<f64>() / n;
    let spread = (values.iter().map(|v| (v - prior_mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
    let output_range = ((spread * 1e-2).ln(), (spread * 1e2).ln());
    let length_range = (LENGTH_SCALE_RANGE.0.ln(), LENGTH_SCALE_RANGE.1.ln());

    let score = |log_len: f64, log_out: f64| -> f64 {
        let Ok(kernel) = Kernel::new(kernel_init.family, log_len.exp(), log_out.exp()) else {
            return f64::NEG_INFINITY;
        };
        match factor(&points, &values, kernel, jitter, prior_mean) {
            Some(s) => lml(&s.chol, &s.alpha, &s.values, prior_mean),
            None => f64::NEG_INFINITY,
        }
    };

    let clamp = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo, hi);
    let mut starts =
        vec![(clamp(kernel_init.length_scale.ln(), length_range), clamp(kernel_init.output_scale.ln(), output_range))];
    for len in [0.05f64, 0.2, 1.0] {
        starts.push((len.ln(), spread.ln()));
    }

    let mut best: Option<(f64, f64, f64)> = None;
    for (mut x, mut y) in starts {
        let mut f = score(x, y);
        let mut step = 1.0;
        while step > 1e-3 {
            let mut improved = false;
            for (dx, dy) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                let (nx, ny) = (clamp(x + dx, length_range), clamp(y + dy, output_range));
                let nf = score(nx, ny);
                if nf > f {
                    (x, y, f) = (nx, ny, nf);
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if f.is_finite() && best.is_none_or(|(_, _, bf)| f > bf) {
            best = Some((x, y, f));
        }
    }
    let kernel = match best {
        Some((x, y, _)) => Kernel::new(kernel_init.family, x.exp(), y.exp())?,
        None => kernel_init,
    };
    GpState::fit_fixed(&points, &values, kernel, jitter)
}

/// Posterior mean and standard deviation at `query`.
pub fn gp_posterior(state: &GpState, query: &[f64]) -> (f64, f64) {
    let n = state.len();
    let kstar: Vec<f64> = state.points.iter().map(|p| state.kernel.eval(query, p)).collect();
    let mean = state.prior_mean + kstar.iter().zip(&state.alpha).map(|(k, a)| k * a).sum::<f64>();
    let v = linalg::solve_lower(&state.chol, n, &kstar);
    let var = state.kernel.variance() - v.iter().map(|x| x * x).sum::<f64>();
    (mean, var.max(0.0).sqrt())
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acquisition {
    Ei { best_so_far: f64 },
    Ucb { kappa: f64 },
}

/// Closed-form Expected Improvement over `best` for a normal posterior.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    if std < 1e-12 {
        return (mean - best).max(0.0);
    }
    let z = (mean - best) / std;
    (std * (z * normal_cdf(z) + normal_pdf(z))).max(0.0)
}

pub fn acquisition_value(state: &GpState, query: &[f64], acq: Acquisition) -> f64 {
    let (mean, std) = gp_posterior(state, query);
    match acq {
        Acquisition::Ei { best_so_far } => expected_improvement(mean, std, best_so_far),
        Acquisition::Ucb { kappa } => mean + kappa * std,
    }
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    inv = r;
    inv
}

/// `count` Halton points in `[0, 1)^dim` with a seeded random shift modulo 1.
pub fn shifted_halton(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let primes = first_primes(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            primes
                .iter()
                .zip(&shift)
                .map(|(&p, s)| {
                    let v = radical_inverse(i, p) + s;
                    v - v.floor()
                })
                .collect()
        })
        .collect()
}

fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximizes the acquisition over the unit cube. Ties resolve to the
/// lowest-index candidate.
pub fn propose_next(state: &GpState, acq: Acquisition, seed: u64) -> Vec<f64> {
    let dim = state.points[0].len();
    let candidates = shifted_halton(CANDIDATES, dim, seed);
    let scores: Vec<f64> = candidates.par_iter().map(|c| acquisition_value(state, c, acq)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let refined: Vec<(Vec<f64>, f64)> = order[..REFINE_STARTS.min(order.len())]
        .par_iter()
        .map(|&i| {
            let mut x = candidates[i].clone();
            let mut fx = scores[i];
            for _ in 0..2 {
                for k in 0..dim {
                    let probe = |t: f64| {
                        let mut y = x.clone();
                        y[k] = t;
                        acquisition_value(state, &y, acq)
                    };
                    let (t, ft) = golden_section_max(probe, 0.0, 1.0, 40);
                    if ft > fx {
                        x[k] = t;
                        fx = ft;
                    }
                }
            }
            (x, fx)
        })
        .collect();

    let mut best = 0;
    for (i, (_, f)) in refined.iter().enumerate().skip(1) {
        if *f > refined[best].1 {
            best = i;
        }
    }
    refined.into_iter().nth(best).map(|(x, _)| x).expect("at least one candidate")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcquisitionKind {
    Ei,
    Ucb {
        #[serde(default = "default_kappa")]
        kappa: f64,
    },
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

impl AcquisitionKind {
    pub fn ucb() -> Self {
        AcquisitionKind::Ucb { kappa: DEFAULT_KAPPA }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AcquisitionKind::Ei => "ei",
            AcquisitionKind::Ucb { .. } => "ucb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoConfig {
    #[serde(default = "default_init_points")]
    pub init_points: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Per-coordinate `(lower, upper)`; empty means `[0, 1]` for every model.
    #[serde(default)]
    pub bounds: Vec<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_acquisition")]
    pub acquisition: AcquisitionKind,
    #[serde(default)]
    pub kernel: KernelFamily,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_init_points() -> usize {
    DEFAULT_INIT_POINTS
}
fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_acquisition() -> AcquisitionKind {
    AcquisitionKind::Ei
}
fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            init_points: DEFAULT_INIT_POINTS,
            iterations: DEFAULT_ITERATIONS,
            bounds: Vec::new(),
            seed: 0,
            acquisition: AcquisitionKind::Ei,
            kernel: KernelFamily::Matern52,
            jitter: DEFAULT_JITTER,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_points == 0 {
            return Err(Error::InvalidArgument("init_points must be at least 1".into()));
        }
        if let AcquisitionKind::Ucb { kappa } = self.acquisition {
            if !(kappa > 0.0) {
                return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
            }
        }
        if let Some((lo, hi)) = self.bounds.iter().find(|(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite())) {
            return Err(Error::InvalidArgument(format!("invalid bounds ({lo}, {hi})")));
        }
        Ok(())
    }

    fn resolved_bounds(&self, dim: usize) -> Result<Vec<(f64, f64)>> {
        if self.bounds.is_empty() {
            return Ok(vec![(0.0, 1.0); dim]);
        }
        if self.bounds.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: self.bounds.len() });
        }
        Ok(self.bounds.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Bo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPoint {
    pub lambdas: Vec<f64>,
    pub value: f64,
}

/// One evaluation of the objective, in evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub lambdas: Vec<f64>,
    pub objective: f64,
    pub best_so_far: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoRun {
    pub best: CoefficientPoint,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Maximizes `objective` over the configured box: `init_points` uniform
/// random evaluations, then `iterations` GP-guided ones.
pub fn optimize<F>(dim: usize, mut objective: F, cfg: &BoConfig) -> Result<BoRun>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::InvalidArgument("optimization dimension must be at least 1".into()));
    }
    let bounds = cfg.resolved_bounds(dim)?;
    let to_box = |u: &[f64]| -> Vec<f64> { u.iter().zip(&bounds).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect() };

    let mut unit_points: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut trajectory = Vec::with_capacity(cfg.init_points + cfg.iterations);
    let mut best: Option<CoefficientPoint> = None;

    let mut record = |u: Vec<f64>, phase: Phase, unit_points: &mut Vec<Vec<f64>>, values: &mut Vec<f64>| -> Result<()> {
        let lambdas = to_box(&u);
        let value = objective(&lambdas)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective { lambdas });
        }
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(CoefficientPoint { lambdas: lambdas.clone(), value });
        }
        let best_so_far = best.as_ref().map(|b| b.value).expect("set above");
        trajectory.push(TrajectoryRecord { iteration: trajectory.len(), lambdas, objective: value, best_so_far, phase });
        unit_points.push(u);
        values.push(value);
        Ok(())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "bo-init"));
    for _ in 0..cfg.init_points {
        let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        record(u, Phase::Init, &mut unit_points, &mut values)?;
    }

    let mut kernel = Kernel::new(cfg.kernel, 0.2, 1.0)?;
    for t in 0..cfg.iterations {
        let state = gp_fit(&unit_points, &values, kernel, cfg.jitter)?;
        kernel = *state.kernel();
        let incumbent = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let acq = match cfg.acquisition {
            AcquisitionKind::Ei => Acquisition::Ei { best_so_far: incumbent },
            AcquisitionKind::Ucb { kappa } => Acquisition::Ucb { kappa },
        };
        let u = propose_next(&state, acq, derive_seed(cfg.seed, &format!("bo-propose/{t}")));
        record(u, Phase::Bo, &mut unit_points, &mut values)?;
    }

    Ok(BoRun { best: best.expect("init_points >= 1"), trajectory })
}

pub fn write_trajectory_jsonl(path: impl AsRef<Path>, records: &[TrajectoryRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory_jsonl(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// True when `best_so_far` never decreases along the trajectory.
pub fn best_so_far_is_monotone(records: &[TrajectoryRecord]) -> bool {
    records.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far)
}
