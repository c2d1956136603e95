//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mimlal::active_loop::{run, RunConfig};
use mimlal::dataset::{
    generate_synthetic, mask_labels, synthetic_weights, Bag, Dataset, LabelVector, MaskPolicy,
    SyntheticSpec, TriLabel,
};
use mimlal::experiment::{load_source, run_all, ExperimentConfig};
use mimlal::metrics::{aggregate_runs, evaluate_scores};
use mimlal::model::{bag_class_prob_positive, ParamMatrix};
use mimlal::objective::{
    bag_gradient, logprob_gradient_for_label, mml_gradient, mml_objective, pair_gradient, pair_loss,
};
use mimlal::rng::{rng_from_seed, Rng};
use mimlal::selection::{
    argmax_first, egl_scores_undivided, score_unlabeled_pairs, Criterion, Selection,
};
use mimlal::trainer::{compute_tau, full_gd, sgd_epochs, TrainConfig, UpdateMode};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// local oracles

fn softmax(w: &ParamMatrix, x: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = (0..w.classes())
        .map(|c| w.row(c).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// P(Y_t = y) by summing over all C^n instance labelings.
fn enumerate_marginal(w: &ParamMatrix, bag: &Bag, t: usize, y: bool) -> f64 {
    let post: Vec<Vec<f64>> = bag.instances().map(|x| softmax(w, x)).collect();
    let c = w.classes();
    let n = bag.len();
    let mut total = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let p: f64 = idx.iter().enumerate().map(|(i, &k)| post[i][k]).product();
        let has_t = idx.contains(&t);
        if has_t == y {
            total += p;
        }
        let mut j = 0;
        while j < n {
            idx[j] += 1;
            if idx[j] < c {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == n {
            return total;
        }
    }
}

fn central_diff(f: &dyn Fn(&ParamMatrix) -> f64, w: &ParamMatrix) -> ParamMatrix {
    let h = 1e-5;
    let mut g = ParamMatrix::zeros(w.classes(), w.dim());
    let mut v = w.clone();
    for i in 0..w.as_slice().len() {
        let orig = v.as_slice()[i];
        v.as_mut_slice()[i] = orig + h;
        let up = f(&v);
        v.as_mut_slice()[i] = orig - h;
        let down = f(&v);
        v.as_mut_slice()[i] = orig;
        g.as_mut_slice()[i] = (up - down) / (2.0 * h);
    }
    g
}

fn rel_err(a: &ParamMatrix, b: &ParamMatrix) -> f64 {
    let diff: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / b.norm().max(1e-3)
}

fn random_w(rng: &mut Rng, c: usize, d: usize, scale: f64) -> ParamMatrix {
    let data = (0..c * d)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    ParamMatrix::from_flat(c, d, data).unwrap()
}

fn random_bag(rng: &mut Rng, n: usize, d: usize, scale: f64) -> Bag {
    let rows = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-scale..=scale)).collect())
        .collect();
    Bag::new("r", rows).unwrap()
}

fn random_labels(rng: &mut Rng, bags: usize, c: usize, p_obs: f64) -> Vec<LabelVector> {
    (0..bags)
        .map(|_| {
            LabelVector::new(
                (0..c)
                    .map(|_| {
                        if rng.random_bool(p_obs) {
                            TriLabel::known(rng.random_bool(0.5))
                        } else {
                            TriLabel::Unknown
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

fn random_dataset(
    rng: &mut Rng,
    bags: usize,
    c: usize,
    max_n: usize,
    d: usize,
    scale: f64,
) -> Dataset {
    let b: Vec<Bag> = (0..bags)
        .map(|i| {
            let n = rng.random_range(1..=max_n);
            let rows = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-scale..=scale)).collect())
                .collect();
            Bag::new(format!("b{i}"), rows).unwrap()
        })
        .collect();
    let mut labels = random_labels(rng, bags, c, 0.6);
    if labels.iter().all(|l| l.num_available() == 0) {
        labels[0] = LabelVector::from_bools(&vec![true; c]);
    }
    Dataset::new(b, labels).unwrap()
}

// ---------------------------------------------------------------------------
// criteria

fn enumeration_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(101);
    let (mut worst_p, mut worst_loss) = (0.0f64, 0.0f64);
    let mut loss_cases = 0;
    for _ in 0..200 {
        let c = rng.random_range(2..=4);
        let n = rng.random_range(1..=6);
        let d = rng.random_range(1..=8);
        let w = random_w(&mut rng, c, d, 2.0);
        let bag = random_bag(&mut rng, n, d, 1.0);
        for t in 0..c {
            let p1 = enumerate_marginal(&w, &bag, t, true);
            worst_p = worst_p.max((bag_class_prob_positive(&w, &bag, t) - p1).abs());
            for y in [false, true] {
                let p = if y {
                    p1
                } else {
                    enumerate_marginal(&w, &bag, t, false)
                };
                // pre-floor regime only
                if p > 1e-11 && p < 1.0 - 1e-11 {
                    loss_cases += 1;
                    worst_loss = worst_loss.max((pair_loss(&w, &bag, t, y) + p.ln()).abs());
                }
            }
        }
    }
    let secs = start.elapsed();
    outcome(
        worst_p <= 1e-10 && worst_loss <= 1e-10 && secs < Duration::from_secs(10),
        format!(
            "max|P_closed - P_enum| = {worst_p:.2e}, max|loss + ln P_enum| = {worst_loss:.2e} over {loss_cases} cases, {:.2}s",
            secs.as_secs_f64()
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(202);
    let mut worst = [0.0f64; 4];
    let lambda = 0.05;
    for _ in 0..100 {
        let c = rng.random_range(2..=4);
        let d = rng.random_range(1..=5);
        let n = rng.random_range(1..=5);
        let w = random_w(&mut rng, c, d, 1.5);
        let bag = random_bag(&mut rng, n, d, 1.0);
        let t = rng.random_range(0..c);
        let y = rng.random_bool(0.5);

        let ds = random_dataset(&mut rng, 4, c, 4, d, 1.0);
        let g = mml_gradient(&w, &ds, lambda);
        let num = central_diff(&|v| mml_objective(v, &ds, lambda), &w);
        worst[0] = worst[0].max(rel_err(&g, &num));

        let reg = |v: &ParamMatrix| 0.5 * lambda * v.norm_sq();
        let g = pair_gradient(&w, &bag, t, y, lambda);
        let num = central_diff(&|v| pair_loss(v, &bag, t, y) + reg(v), &w);
        worst[1] = worst[1].max(rel_err(&g, &num));

        let mut observed: Vec<(usize, bool)> = (0..c).map(|k| (k, false)).collect();
        for o in &mut observed {
            o.1 = rng.random_bool(0.5);
        }
        observed.truncate(rng.random_range(1..=c));
        let g = bag_gradient(&w, &bag, &observed, lambda).unwrap();
        let num = central_diff(
            &|v| {
                observed
                    .iter()
                    .map(|&(k, l)| pair_loss(v, &bag, k, l))
                    .sum::<f64>()
                    + reg(v)
            },
            &w,
        );
        worst[2] = worst[2].max(rel_err(&g, &num));

        let g = logprob_gradient_for_label(&w, &bag, t, y);
        let num = central_diff(&|v| enumerate_marginal(v, &bag, t, y).ln(), &w);
        worst[3] = worst[3].max(rel_err(&g, &num));
    }
    let secs = start.elapsed();
    outcome(
        worst.iter().all(|&e| e <= 1e-5) && secs < Duration::from_secs(30),
        format!(
            "worst relative error mml {:.1e}, pair {:.1e}, bag {:.1e}, logprob {:.1e}; {:.2}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            secs.as_secs_f64()
        ),
    )
}

fn norm_bound() -> Outcome {
    let mut rng = rng_from_seed(303);
    let mut ok = true;
    let mut worst_ratio = 0.0f64;
    let spec = SyntheticSpec {
        bags: 40,
        classes: 3,
        dim: 4,
        bag_size: (1, 6),
    };
    let data = generate_synthetic(&spec, &synthetic_weights(3, 4, 3.0, 1), 2).unwrap();
    for lambda in [0.01, 0.1, 1.0] {
        for mode in [UpdateMode::PairSgd, UpdateMode::BagSgd] {
            let cfg = TrainConfig {
                lambda,
                mode,
                ..TrainConfig::default()
            };
            let tau = compute_tau(lambda, 3, data.dataset.max_bag_size()).unwrap();
            // start outside the ball so the projection is exercised
            let w0 = random_w(&mut rng, 3, 4, 20.0);
            let fit = sgd_epochs(&data.dataset, &cfg, &w0, 5, 7).unwrap();
            worst_ratio = worst_ratio.max(fit.max_norm / tau);
            ok &= fit.max_norm <= tau * (1.0 + 1e-12);
        }
    }
    let lambdas = [0.01, 0.1, 1.0];
    for i in 0..20 {
        let lambda = lambdas[i % 3];
        let c = rng.random_range(2..=4);
        let d = rng.random_range(1..=4);
        let ds = random_dataset(&mut rng, 8, c, 5, d, 5.0);
        let cfg = TrainConfig {
            lambda,
            mode: UpdateMode::FullGd,
            ..TrainConfig::default()
        };
        let fit = full_gd(&ds, &cfg, &ParamMatrix::zeros(c, d)).unwrap();
        let tau = compute_tau(lambda, c, ds.max_bag_size()).unwrap();
        worst_ratio = worst_ratio.max(fit.w.norm() / tau);
        ok &= fit.w.norm() <= tau;
    }
    outcome(
        ok,
        format!("max ||w|| / tau = {worst_ratio:.4} over 6 SGD runs and 20 full-GD optima"),
    )
}

fn gd_vs_sgd() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec {
        bags: 100,
        classes: 4,
        dim: 8,
        bag_size: (2, 5),
    };
    let data = generate_synthetic(&spec, &synthetic_weights(4, 8, 2.0, 41), 42).unwrap();
    let ds = &data.dataset;
    let base = TrainConfig::default();
    let w0 = ParamMatrix::zeros(4, 8);
    let gd = full_gd(
        ds,
        &TrainConfig {
            mode: UpdateMode::FullGd,
            ..base.clone()
        },
        &w0,
    )
    .unwrap();
    let f_gd = gd.final_objective();
    let epochs = 200;
    let mut parts = vec![format!("full-gd {f_gd:.4} (converged {})", gd.converged)];
    let mut ok = gd.converged;
    for mode in [UpdateMode::BagSgd, UpdateMode::PairSgd] {
        let fit = sgd_epochs(
            ds,
            &TrainConfig {
                mode,
                ..base.clone()
            },
            &w0,
            epochs,
            43,
        )
        .unwrap();
        let f = fit.trace.last().unwrap().objective;
        ok &= f >= f_gd - 1e-9 && f - f_gd <= 0.05;
        parts.push(format!("{mode} {f:.4} (+{:.4})", f - f_gd));
    }
    let secs = start.elapsed();
    ok &= secs < Duration::from_secs(120);
    outcome(
        ok,
        format!(
            "{}; {epochs} epochs; {:.1}s",
            parts.join(", "),
            secs.as_secs_f64()
        ),
    )
}

fn query_efficiency() -> Outcome {
    let start = Instant::now();
    let mut curves = Vec::new();
    for criterion in [Criterion::RandPair, Criterion::EglPair, Criterion::UncPair] {
        let cfg = ExperimentConfig {
            bags: 200,
            test_bags: 100,
            classes: 5,
            dim: 10,
            separation: 2.0,
            folds: 1,
            seeds: 10,
            seed: 0,
            init_fraction: 0.05,
            queries: 300,
            eval_every: 10.0,
            criterion,
            ..ExperimentConfig::default()
        };
        let src = load_source(&cfg).unwrap();
        let runs = run_all(&cfg, &src).unwrap();
        let rows: Vec<_> = runs.into_iter().map(|r| r.output.curve).collect();
        let mean: Vec<(f64, f64)> = aggregate_runs(&rows)
            .unwrap()
            .into_iter()
            .map(|r| (r.cost, r.mean[0]))
            .collect();
        curves.push(mean);
    }
    let rand = &curves[0];
    let target = rand.iter().find(|(c, _)| *c == 300.0).unwrap().1;
    let mut ok = true;
    let mut parts = vec![format!("rand-pair@300 = {target:.4}")];
    for (name, curve) in ["egl-pair", "unc-pair"].iter().zip(&curves[1..]) {
        let reach = curve.iter().find(|(_, a)| *a >= target).map(|p| p.0);
        let trail = curve
            .iter()
            .zip(rand)
            .filter(|((c, _), _)| *c > 50.0)
            .map(|((_, a), (_, r))| r - a)
            .fold(f64::NEG_INFINITY, f64::max);
        ok &= reach.is_some_and(|c| c <= 270.0) && trail <= 0.02;
        parts.push(format!(
            "{name} reaches it at {} queries, worst trail {trail:+.4}",
            reach.map_or("never".to_string(), |c| c.to_string())
        ));
    }
    let secs = start.elapsed();
    ok &= secs < Duration::from_secs(600);
    outcome(
        ok,
        format!("{}; {:.1}s", parts.join("; "), secs.as_secs_f64()),
    )
}

fn cost_accounting() -> Outcome {
    let spec = SyntheticSpec {
        bags: 30,
        classes: 5,
        dim: 4,
        bag_size: (1, 4),
    };
    let w = synthetic_weights(5, 4, 2.0, 3);
    let train = generate_synthetic(&spec, &w, 4).unwrap();
    let test = generate_synthetic(&SyntheticSpec { bags: 10, ..spec }, &w, 5).unwrap();
    let masked = mask_labels(train.dataset.bags(), &train.truth, MaskPolicy::Count(3), 6).unwrap();
    let cfg = RunConfig {
        criterion: Criterion::BagAll,
        queries: 8,
        cost_divisor: 1.0,
        ..RunConfig::default()
    };
    let out = run(&masked, &train.truth, &test.dataset, &cfg).unwrap();
    let mut prev = 0.0;
    let mut ok = true;
    for r in &out.queries {
        ok &= r.cumulative_cost - prev == 5.0
            && matches!(r.selection.selection, Selection::Bag { .. });
        prev = r.cumulative_cost;
    }
    let grid: Vec<f64> = out.curve.iter().map(|r| r.cost).collect();
    ok &= grid.windows(2).all(|p| p[1] - p[0] == 5.0) && grid.len() == 9;
    outcome(ok, format!("per-query increments 5, curve grid {grid:?}"))
}

fn selection_invariances() -> Outcome {
    let mut rng = rng_from_seed(707);
    let (mut egl_ok, mut unc_ok) = (0, 0);
    for _ in 0..50 {
        let c = rng.random_range(2..=5);
        let d = rng.random_range(1..=4);
        let ds = random_dataset(&mut rng, 6, c, 4, d, 1.5);
        let w = random_w(&mut rng, c, d, 2.0);
        let with = argmax_first(&score_unlabeled_pairs(&ds, &w, Criterion::EglPair).unwrap());
        let without = argmax_first(&egl_scores_undivided(&ds, &w));
        egl_ok += usize::from(with.map(|s| (s.bag, s.class)) == without.map(|s| (s.bag, s.class)));

        let unc = argmax_first(&score_unlabeled_pairs(&ds, &w, Criterion::UncPair).unwrap())
            .map(|s| (s.bag, s.class));
        let mut closest: Option<((usize, usize), f64)> = None;
        for b in 0..ds.num_bags() {
            for k in ds.label_vector(b).unlabeled() {
                let gap = (bag_class_prob_positive(&w, ds.bag(b), k) - 0.5).abs();
                if closest.is_none_or(|(_, g)| gap < g) {
                    closest = Some(((b, k), gap));
                }
            }
        }
        unc_ok += usize::from(unc == closest.map(|p| p.0));
    }
    outcome(
        egl_ok == 50 && unc_ok == 50,
        format!("EGL argmax agreed {egl_ok}/50, uncertainty argmax agreed {unc_ok}/50"),
    )
}

fn metric_spot_checks() -> Outcome {
    let m = evaluate_scores(&[vec![0.4, 0.6, 0.1]], &[vec![true, false, false]], 0.5).unwrap();
    let mixed = m.hamming_loss == 2.0 / 3.0
        && m.bag_accuracy == 0.0
        && m.one_error == 1.0
        && m.avg_precision == 0.5;
    let truth = vec![vec![true, false, true], vec![false, true, false]];
    let p = evaluate_scores(&[vec![0.9, 0.1, 0.8], vec![0.2, 0.7, 0.3]], &truth, 0.5).unwrap();
    let perfect =
        (p.bag_accuracy, p.hamming_loss, p.avg_precision, p.one_error) == (1.0, 0.0, 1.0, 0.0);
    let wrong = evaluate_scores(&[vec![0.1, 0.9, 0.2], vec![0.8, 0.3, 0.6]], &truth, 0.5).unwrap();
    let all_wrong = wrong.hamming_loss == 1.0;
    outcome(
        mixed && perfect && all_wrong,
        format!(
            "mixed (hamming {:.4}, jaccard {}, one-error {}, AP {}); perfect {perfect}; all-wrong hamming {}",
            m.hamming_loss, m.bag_accuracy, m.one_error, m.avg_precision, wrong.hamming_loss
        ),
    )
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_mimlal");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "bags = 40\ntest_bags = 20\nclasses = 4\ndim = 5\nqueries = 25\nseeds = 3\nseed = 9\ncriterion = egl-pair\n",
    )
    .unwrap();
    let run_once = |out: &Path| {
        Command::new(bin)
            .args(["active-run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap()
            .status
            .success()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !(run_once(&a) && run_once(&b)) {
        return outcome(false, "active-run exited with an error".into());
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let same = names
        .iter()
        .all(|n| std::fs::read(a.join(n)).ok() == std::fs::read(b.join(n)).ok());
    outcome(
        same && names.len() == 7,
        format!("{} output files compared, identical: {same}", names.len()),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Check; 9] = [
        ("1 enumeration equivalence", enumeration_equivalence),
        ("2 gradient correctness", gradient_correctness),
        ("3 norm bound", norm_bound),
        ("4 GD vs SGD convergence", gd_vs_sgd),
        ("5 query efficiency", query_efficiency),
        ("6 cost accounting", cost_accounting),
        ("7 selection invariances", selection_invariances),
        ("8 metric spot-checks", metric_spot_checks),
        ("9 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
