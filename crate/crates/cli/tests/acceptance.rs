//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and
//! exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use dfmerge::bayesopt::{
    acquisition_value, best_so_far_is_monotone, gp_fit, gp_posterior, read_trajectory_jsonl, Acquisition, BoConfig, GpState,
    Kernel, KernelFamily,
};
use dfmerge::fisher::{empirical_fisher_diag, empirical_fisher_full, FisherDiagonal, FisherFull, DEFAULT_FULL_CAP};
use dfmerge::harness::{self, EvalContext, LandscapeConfig, LandscapeVariant, ObjectiveMethod, SweepAxis};
use dfmerge::merge::{
    merge_averaging, merge_fisher, merge_fisher_full, merge_gta, unified_merge, CoefficientVector, ImportanceWeights, MergeInputs,
};
use dfmerge::toymodels::{nll_and_grad, ClassifierSpec};
use dfmerge::{ParamVector, SegmentLayout};
use dfmerge_cli::commands::{self, Command};
use dfmerge_cli::config::{AcquisitionName, ExperimentConfig, SweepSection};
use dfmerge_cli::pipeline;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).expect("shipped configs are valid")
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_inputs(rng: &mut ChaCha8Rng, d: usize, m: usize) -> MergeInputs {
    let layout = SegmentLayout::single("w", d);
    let mut vec =
        |scale: f64| ParamVector::new(layout.clone(), (0..d).map(|_| rng.random_range(-scale..scale)).collect()).unwrap();
    let pre = vec(1.0);
    let taus = (0..m).map(|_| vec(0.5)).collect();
    MergeInputs::new(pre, taus, (0..m).map(|i| format!("t{i}")).collect()).unwrap()
}

fn reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..64);
        let m = rng.random_range(1..6);
        let inputs = random_inputs(&mut rng, d, m);
        let layout = inputs.pretrained().layout().clone();
        let pre = inputs.pretrained().values();
        let fine: Vec<Vec<f64>> = (0..m).map(|i| inputs.fine_tuned(i).unwrap().into_values()).collect();
        let uniform = CoefficientVector::uniform(m, 1.0 / m as f64).unwrap();

        let avg_oracle: Vec<f64> =
            (0..d).map(|k| pre[k] + inputs.taus().iter().map(|t| t.values()[k]).sum::<f64>() / m as f64).collect();
        let avg = unified_merge(&inputs, &uniform, &ImportanceWeights::Identity).unwrap();
        worst =
            worst.max(max_gap(avg.values(), &avg_oracle)).max(max_gap(merge_averaging(&inputs).unwrap().values(), &avg_oracle));

        let lambdas: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let coeffs = CoefficientVector::bounded(lambdas.clone()).unwrap();
        let gta_oracle: Vec<f64> =
            (0..d).map(|k| pre[k] + lambdas.iter().zip(inputs.taus()).map(|(l, t)| l * t.values()[k]).sum::<f64>()).collect();
        let gta = unified_merge(&inputs, &coeffs, &ImportanceWeights::Identity).unwrap();
        worst = worst
            .max(max_gap(gta.values(), &gta_oracle))
            .max(max_gap(merge_gta(&inputs, &coeffs).unwrap().values(), &gta_oracle));

        let fishers: Vec<FisherDiagonal> = (0..m)
            .map(|_| FisherDiagonal::new(layout.clone(), (0..d).map(|_| rng.random_range(0.01..2.0)).collect()).unwrap())
            .collect();
        let fm_oracle: Vec<f64> = (0..d)
            .map(|k| {
                let den: f64 = fishers.iter().map(|f| f.values()[k]).sum();
                fishers.iter().zip(&fine).map(|(f, t)| f.values()[k] * t[k]).sum::<f64>() / den
            })
            .collect();
        let fm = unified_merge(&inputs, &uniform, &ImportanceWeights::Diagonal(fishers.clone())).unwrap();
        worst = worst
            .max(max_gap(fm.values(), &fm_oracle))
            .max(max_gap(merge_fisher(&inputs, &fishers).unwrap().values(), &fm_oracle));
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e} over 100 instances"))
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> FisherFull {
    let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..d).map(|k| a[k * d + i] * a[k * d + j]).sum::<f64>() / d as f64;
        }
        m[i * d + i] += 0.5;
    }
    FisherFull::new(d, m).unwrap()
}

fn mat_vec(f: &FisherFull, x: &[f64]) -> Vec<f64> {
    let d = f.dim();
    (0..d).map(|i| (0..d).map(|j| f.get(i, j) * x[j]).sum()).collect()
}

/// Gradient descent on `sum_i (t - t_i)^T F_i (t - t_i)`.
fn gradient_descent_minimizer(fishers: &[FisherFull], targets: &[Vec<f64>]) -> Vec<f64> {
    let d = targets[0].len();
    let lipschitz: f64 =
        fishers.iter().map(|f| (0..d).map(|i| (0..d).map(|j| f.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max)).sum::<f64>()
            * 2.0;
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; d];
    for _ in 0..200_000 {
        let mut grad = vec![0.0; d];
        for (f, t) in fishers.iter().zip(targets) {
            let diff: Vec<f64> = x.iter().zip(t).map(|(a, b)| a - b).collect();
            for (g, v) in grad.iter_mut().zip(mat_vec(f, &diff)) {
                *g += 2.0 * v;
            }
        }
        if norm(&grad) < 1e-13 {
            break;
        }
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi -= step * g;
        }
    }
    x
}

fn geometric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_err, mut worst_res): (f64, f64) = (0.0, 0.0);
    for trial in 0..10 {
        let d = rng.random_range(5..=50);
        let m = 2 + trial % 2;
        let inputs = random_inputs(&mut rng, d, m);
        let fishers: Vec<FisherFull> = (0..m).map(|_| random_spd(&mut rng, d)).collect();
        let merged = merge_fisher_full(&inputs, &fishers, DEFAULT_FULL_CAP).unwrap();
        let targets: Vec<Vec<f64>> = (0..m).map(|i| inputs.fine_tuned(i).unwrap().into_values()).collect();
        let oracle = gradient_descent_minimizer(&fishers, &targets);
        let theta = merged.values();
        let err: Vec<f64> = theta.iter().zip(&oracle).map(|(a, b)| a - b).collect();
        worst_err = worst_err.max(norm(&err) / norm(theta));
        let mut residual = vec![0.0; d];
        for (f, t) in fishers.iter().zip(&targets) {
            let diff: Vec<f64> = theta.iter().zip(t).map(|(a, b)| a - b).collect();
            for (r, v) in residual.iter_mut().zip(mat_vec(f, &diff)) {
                *r += v;
            }
        }
        worst_res = worst_res.max(norm(&residual) / norm(theta));
    }
    outcome(
        worst_err <= 1e-6 && worst_res <= 1e-8,
        format!("relative error {worst_err:.2e}, relative stationarity residual {worst_res:.2e}"),
    )
}

fn random_params(rng: &mut ChaCha8Rng, spec: &ClassifierSpec) -> ParamVector {
    let layout = spec.layout();
    let values = (0..layout.total_len()).map(|_| rng.random_range(-0.5..0.5)).collect();
    ParamVector::new(layout, values).unwrap()
}

fn fisher_oracle() -> Outcome {
    let mut specs = vec![
        ClassifierSpec { input_dim: 2, hidden_dim: 0, num_classes: 2 },
        ClassifierSpec { input_dim: 9, hidden_dim: 0, num_classes: 3 },
        ClassifierSpec { input_dim: 3, hidden_dim: 4, num_classes: 2 },
        ClassifierSpec { input_dim: 5, hidden_dim: 6, num_classes: 4 },
    ];
    for name in ["two_task.toml", "three_task.toml"] {
        specs.push(config(name).classifier_spec().unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut diag_gap, mut grad_gap): (f64, f64) = (0.0, 0.0);
    for spec in &specs {
        let params = random_params(&mut rng, spec);
        let xs: Vec<Vec<f64>> = (0..12).map(|_| (0..spec.input_dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..xs.len()).map(|_| rng.random_range(0..spec.num_classes)).collect();
        let diag = empirical_fisher_diag(&params, spec, &refs).unwrap();
        if params.len() <= DEFAULT_FULL_CAP {
            let full = empirical_fisher_full(&params, spec, &refs, DEFAULT_FULL_CAP).unwrap();
            diag_gap = diag_gap.max(max_gap(&full.diagonal(), diag.values()));
        }
        let (_, grad) = nll_and_grad(&params, spec, &refs, &labels).unwrap();
        let h = 1e-5;
        for k in 0..params.len() {
            let mut v = params.values().to_vec();
            v[k] += h;
            let up = nll_and_grad(&params.with_values(v.clone()).unwrap(), spec, &refs, &labels).unwrap().0;
            v[k] -= 2.0 * h;
            let down = nll_and_grad(&params.with_values(v).unwrap(), spec, &refs, &labels).unwrap().0;
            grad_gap = grad_gap.max(((up - down) / (2.0 * h) - grad.values()[k]).abs());
        }
    }
    outcome(
        diag_gap <= 1e-10 && grad_gap <= 1e-6,
        format!("{} specs: Fisher diagonal gap {diag_gap:.2e}, gradient gap {grad_gap:.2e}", specs.len()),
    )
}

fn dense_posterior(state: &GpState, query: &[f64]) -> (f64, f64) {
    let n = state.len();
    let lu = DMatrix::from_row_slice(n, n, &state.kernel_matrix()).lu();
    let kstar = DVector::from_iterator(n, state.points().iter().map(|p| state.kernel().eval(query, p)));
    let centered = DVector::from_iterator(n, state.values().iter().map(|v| v - state.prior_mean()));
    let mean = state.prior_mean() + kstar.dot(&lu.solve(&centered).unwrap());
    let var = state.kernel().eval(query, query) - kstar.dot(&lu.solve(&kstar).unwrap());
    (mean, var.max(0.0).sqrt())
}

fn observations(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let values = points.iter().map(|p| p.iter().map(|x| (4.0 * x).sin()).sum::<f64>() + 0.1 * rng.random::<f64>()).collect();
    (points, values)
}

fn gp_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut posterior_gap: f64 = 0.0;
    for trial in 0..20 {
        let dim = 1 + trial % 3;
        let n = rng.random_range(2..15);
        let (points, values) = observations(&mut rng, n, dim);
        let family = if trial % 2 == 0 { KernelFamily::Matern52 } else { KernelFamily::Rbf };
        let state = gp_fit(&points, &values, Kernel::new(family, 0.3, 1.0).unwrap(), 1e-6).unwrap();
        for _ in 0..5 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let (m, s) = gp_posterior(&state, &q);
            let (dm, ds) = dense_posterior(&state, &q);
            posterior_gap = posterior_gap.max((m - dm).abs()).max((s - ds).abs());
        }
    }
    let (points, values) = observations(&mut rng, 8, 2);
    let state = gp_fit(&points, &values, Kernel::new(KernelFamily::Matern52, 0.3, 1.0).unwrap(), 1e-6).unwrap();
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut mc_gap: f64 = 0.0;
    for _ in 0..5 {
        let q: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
        let (m, s) = gp_posterior(&state, &q);
        let draws = 1_000_000;
        let mc = (0..draws).map(|_| (m + s * rng.sample::<f64, _>(StandardNormal) - best).max(0.0)).sum::<f64>() / draws as f64;
        mc_gap = mc_gap.max((acquisition_value(&state, &q, Acquisition::Ei { best_so_far: best }) - mc).abs());
    }
    let noiseless = GpState::fit_fixed(&points, &values, Kernel::new(KernelFamily::Matern52, 0.3, 1.0).unwrap(), 0.0).unwrap();
    let ei_at_obs =
        points.iter().map(|p| acquisition_value(&noiseless, p, Acquisition::Ei { best_so_far: best })).fold(0.0, f64::max);
    outcome(
        posterior_gap <= 1e-8 && mc_gap <= 1e-3 && ei_at_obs <= 1e-8,
        format!("posterior gap {posterior_gap:.2e}, EI vs Monte Carlo {mc_gap:.2e}, EI at observations {ei_at_obs:.2e}"),
    )
}

struct Prepared {
    inputs: MergeInputs,
    ctx: EvalContext,
    trained: pipeline::Trained,
    cfg: ExperimentConfig,
}

fn prepare(name: &str, seed: u64) -> Prepared {
    let mut cfg = config(name);
    cfg.seed = seed;
    let trained = pipeline::train(&cfg).unwrap();
    let inputs = trained.merge_inputs().unwrap();
    let ctx = trained.eval_context(&cfg).unwrap();
    Prepared { inputs, ctx, trained, cfg }
}

fn bo_efficiency() -> Outcome {
    let mut hits = 0;
    let mut gaps = Vec::new();
    for seed in SEEDS {
        let p = prepare("two_task.toml", seed);
        let bo = BoConfig { init_points: 10, iterations: 20, ..p.cfg.bo_config(2).unwrap() };
        let run = harness::run_optimize(&p.inputs, &p.ctx, ObjectiveMethod::Df, &bo).unwrap();
        let f = harness::objective_fn(&p.inputs, &p.ctx, ObjectiveMethod::Df);
        let grid_best = (0..21 * 21)
            .into_par_iter()
            .map(|k| f(&[(k / 21) as f64 / 20.0, (k % 21) as f64 / 20.0]).unwrap())
            .reduce(|| f64::NEG_INFINITY, f64::max);
        let gap = 100.0 * (grid_best - run.best().value);
        hits += usize::from(gap <= 1.0);
        gaps.push(format!("{gap:.2}"));
    }
    outcome(hits >= 4, format!("{hits}/5 seeds within 1 point of the 21x21 grid optimum (gaps in points: {})", gaps.join(", ")))
}

fn method_ordering() -> Outcome {
    let mut sums = [0.0; 4];
    let mut beats_zero_shot = true;
    for seed in SEEDS {
        let p = prepare("three_task.toml", seed);
        let zero_shot = p.ctx.test_report(&p.trained.pretrained.params).unwrap();
        for (i, ft) in p.trained.fine_tuned.iter().enumerate() {
            let own = p.ctx.test_report(&ft.params).unwrap();
            beats_zero_shot &= own.per_task[i].accuracy > zero_shot.per_task[i].accuracy;
        }
        let rows = harness::ablate(&p.inputs, &p.ctx, &p.cfg.bo_config(p.inputs.num_models()).unwrap()).unwrap();
        let test = |m: &str| rows.iter().find(|r| r.method == m).unwrap().test;
        for (s, m) in sums.iter_mut().zip(["df_ei", "averaging", "without_bo", "without_fisher"]) {
            *s += 100.0 * test(m) / SEEDS.len() as f64;
        }
    }
    let [df, avg, fisher, gta] = sums;
    let pass = df >= avg && df >= fisher && df >= gta - 0.5 && beats_zero_shot;
    outcome(
        pass,
        format!(
            "mean test: DF(EI) {df:.2}, averaging {avg:.2}, Fisher merging {fisher:.2}, GTA+BO {gta:.2}; fine-tuned beat zero-shot: {beats_zero_shot}"
        ),
    )
}

fn validation_ratio() -> Outcome {
    let mut hits = 0;
    let mut gaps = Vec::new();
    for seed in SEEDS {
        let p = prepare("three_task.toml", seed);
        let bo = p.cfg.bo_config(p.inputs.num_models()).unwrap();
        let full = harness::run_optimize(&p.inputs, &p.ctx, ObjectiveMethod::Df, &bo).unwrap();
        let ctx = EvalContext::new(*p.ctx.spec(), p.ctx.tasks().to_vec(), 0.1, p.cfg.eval.fisher_samples, p.ctx.seed()).unwrap();
        let part = harness::run_optimize(&p.inputs, &ctx, ObjectiveMethod::Df, &bo).unwrap();
        let gap = 100.0 * (full.test.average - part.test.average);
        hits += usize::from(gap.abs() <= 2.0);
        gaps.push(format!("{gap:.2}"));
    }
    outcome(hits >= 3, format!("{hits}/5 seeds within 2 points (full minus 10%: {})", gaps.join(", ")))
}

fn scratch_dir(tag: &str) -> tempfile::TempDir {
    tempfile::Builder::new().prefix(&format!("dfmerge-acceptance-{tag}-")).tempdir().unwrap()
}

fn trajectory_property() -> Outcome {
    let dir = scratch_dir("trajectory");
    let base = config("two_task.toml");
    let settings: [(ObjectiveMethod, AcquisitionName, usize, usize); 4] = [
        (ObjectiveMethod::Df, AcquisitionName::Ei, 10, 50),
        (ObjectiveMethod::Df, AcquisitionName::Ei, 5, 0),
        (ObjectiveMethod::Df, AcquisitionName::Ucb, 3, 12),
        (ObjectiveMethod::Gta, AcquisitionName::Ei, 1, 7),
    ];
    let mut checked = 0;
    let mut bad = Vec::new();
    for (k, (method, acq, init, iters)) in settings.into_iter().enumerate() {
        let mut cfg = base.clone();
        cfg.output_dir = dir.path().join(format!("run-{k}"));
        cfg.bo.objective = method;
        cfg.bo.acquisition = acq;
        cfg.bo.init_points = init;
        cfg.bo.iterations = iters;
        let manifest = commands::run(&Command::Optimize, &cfg).unwrap();
        let path = cfg.output_dir.join(manifest.trajectory.as_ref().unwrap());
        let records = read_trajectory_jsonl(&path).unwrap();
        checked += 1;
        if records.len() != init + iters || !best_so_far_is_monotone(&records) {
            bad.push(format!("run {k}: {} records", records.len()));
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{checked} exported trajectories checked{}",
            if bad.is_empty() { String::new() } else { format!("; bad: {}", bad.join(", ")) }
        ),
    )
}

fn landscape_structure() -> Outcome {
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in SEEDS {
        let p = prepare("two_task.toml", seed);
        let mut ok = true;
        for variant in [LandscapeVariant::Gta, LandscapeVariant::Df] {
            let grid = harness::landscape(&p.inputs, &p.ctx, variant, &LandscapeConfig::default()).unwrap();
            let best = grid.best_cell();
            let (x_max, y_max) = (*grid.xs.last().unwrap(), *grid.ys.last().unwrap());
            let inside = best.x > 0.25 * x_max && best.y > 0.25 * y_max;
            if !inside {
                notes.push(format!("seed {seed} {variant:?} best at ({:.2}/{x_max:.2}, {:.2}/{y_max:.2})", best.x, best.y));
            }
            ok &= inside;
        }
        hits += usize::from(ok);
    }
    let detail = if notes.is_empty() { String::new() } else { format!("; outside: {}", notes.join(", ")) };
    outcome(hits >= 4, format!("{hits}/5 seeds with both optima in the upper region{detail}"))
}

fn reproducibility() -> Outcome {
    let dir = scratch_dir("rerun");
    let mut cfg = config("two_task.toml");
    cfg.output_dir = dir.path().join("original");
    cfg.bo.init_points = 4;
    cfg.bo.iterations = 4;
    cfg.landscape.resolution = 5;
    let mut runs: Vec<(Command, ExperimentConfig)> = vec![(Command::Train, cfg.clone())];
    for method in ["averaging", "ta", "gta", "fisher", "df", "ties", "dare"] {
        let mut c = cfg.clone();
        c.merge.method = Some(method.into());
        c.merge.lambdas = Some(vec![0.4, 0.7]);
        runs.push((Command::Merge, c));
    }
    runs.push((Command::Optimize, cfg.clone()));
    runs.push((Command::Landscape, cfg.clone()));
    runs.push((Command::Ablate, cfg.clone()));
    for (axis, values) in [(SweepAxis::Iterations, vec![0.0, 2.0, 4.0]), (SweepAxis::ValRatio, vec![0.1, 1.0])] {
        let mut c = cfg.clone();
        c.sweep = Some(SweepSection { axis, values });
        runs.push((Command::Sweep, c));
    }
    runs.push((
        Command::Eval {
            checkpoint: cfg.output_dir.join("merge/df.ckpt"),
            split: dfmerge::toymodels::SplitKind::Test,
            ratio: 0.5,
        },
        cfg.clone(),
    ));
    let mut failures = Vec::new();
    let mut artifacts = 0;
    for (k, (command, c)) in runs.iter().enumerate() {
        let manifest = commands::run(command, c).unwrap();
        let path: PathBuf = manifest.path_in(&c.output_dir);
        match commands::rerun(&path, Some(dir.path().join(format!("rerun-{k}")))) {
            Ok(fresh) => artifacts += fresh.artifacts.len(),
            Err(e) => failures.push(format!("{}: {e:#}", command.name())),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} commands rerun, {artifacts} artifact checksums identical{}",
            runs.len(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Duration, Check); 10] = [
        ("1 reduction suite", Duration::from_secs(1), reductions),
        ("2 geometric objective oracle", Duration::from_secs(30), geometric_oracle),
        ("3 Fisher and gradient oracle", Duration::from_secs(10), fisher_oracle),
        ("4 GP correctness", Duration::from_secs(60), gp_correctness),
        ("5 BO efficiency", Duration::from_secs(300), bo_efficiency),
        ("6 method ordering", Duration::from_secs(600), method_ordering),
        ("7 validation-ratio robustness", Duration::from_secs(600), validation_ratio),
        ("8 trajectory property", Duration::from_secs(600), trajectory_property),
        ("9 landscape structure", Duration::from_secs(300), landscape_structure),
        ("10 reproducibility", Duration::from_secs(600), reproducibility),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= budget;
        failed += usize::from(!pass);
        println!(
            "{} criterion {name}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
