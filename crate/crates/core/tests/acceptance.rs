//! End-to-end acceptance checks. Runs as a plain binary so each criterion
//! prints one PASS/FAIL line; exits non-zero if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use dckm::baselines::{kmeans, Lloyd};
use dckm::data::{generate_biased, BiasSpec};
use dckm::decorrelation::balance_loss;
use dckm::metrics::{ari, correlation_amount, nmi};
use dckm::solver::{
    fit_restarts, objective, random_labels, row_residuals, update_f, update_g, weight_objective_and_gradient,
    DckmSolver,
};
use dckm::{AssignmentMatrix, CentroidMatrix, DataMatrix, HyperParams, SampleWeights};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layout of the biased synthetic family: (core features per cluster,
/// bias features, bit-flip noise). The rest of the 24 columns are filler.
const BIASED_LAYOUT: (usize, usize, f64) = (3, 8, 0.03);
const BIASED_LAMBDAS: (f64, f64, f64) = (0.01, 1.0, 100.0);
const SYNTHETIC_SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_binary(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DataMatrix {
    let p: f64 = rng.random_range(0.2..0.8);
    DataMatrix::new(Array2::from_shape_fn((n, d), |_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })).unwrap()
}

fn random_hyper(rng: &mut ChaCha8Rng, k: usize) -> HyperParams {
    HyperParams {
        lambda1: 10f64.powf(rng.random_range(-2.0..2.0)),
        lambda2: 10f64.powf(rng.random_range(-2.0..2.0)),
        lambda3: 10f64.powf(rng.random_range(-2.0..2.0)),
        k,
        ..HyperParams::default()
    }
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(4..=30);
        let d = rng.random_range(2..=8);
        let k = rng.random_range(1..=3);
        let x = random_binary(&mut rng, n, d);
        let hp = random_hyper(&mut rng, k);
        let g = AssignmentMatrix::new(random_labels(n, k, rng.random()), k).unwrap();
        let f = CentroidMatrix::from_centroids(Array2::from_shape_fn((k, d), |_| rng.random::<f64>())).unwrap();
        let omega = Array1::from_shape_fn(n, |_| rng.random_range(0.05..0.5));
        let residuals = row_residuals(x.view(), &f, &g);
        let (_, grad) = weight_objective_and_gradient(&x, residuals.view(), omega.view(), &hp);
        let full = |o: Array1<f64>| objective(&x, &SampleWeights::from_omega(o).unwrap(), &f, &g, &hp).unwrap();
        for i in 0..n {
            let mut plus = omega.clone();
            plus[i] += h;
            let mut minus = omega.clone();
            minus[i] -= h;
            let fd = (full(plus) - full(minus)) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grad[i] - fd).abs() / scale);
        }
    }
    outcome(worst <= 1e-4, format!("max relative error {worst:.2e}"))
}

fn monotone_descent() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let x = random_binary(&mut rng, 200, 20);
        let hp = HyperParams { seed: rng.random(), ..random_hyper(&mut rng, 4) };
        let mut solver = DckmSolver::new(&x, &hp, None).unwrap();
        for _ in 0..50 {
            solver.sweep().unwrap();
        }
        for pair in solver.history().windows(2) {
            worst = worst.max((pair[1] - pair[0]) / pair[0].abs().max(1e-300));
        }
    }
    outcome(worst <= 1e-8, format!("largest relative increase {worst:.2e}"))
}

fn lloyd_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut steps = 0;
    for _ in 0..10 {
        let n = rng.random_range(30..200);
        let d = rng.random_range(4..16);
        let k = rng.random_range(2..6);
        let seed = rng.random();
        let x = random_binary(&mut rng, n, d);
        let hp = HyperParams {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            k,
            seed,
            freeze_weights: true,
            ..HyperParams::default()
        };
        let mut solver = DckmSolver::new(&x, &hp, None).unwrap();
        let ones = Array1::ones(n);
        let mut lloyd = Lloyd::new(x.view(), ones.view(), k, seed).unwrap();
        let mut same = solver.assignments() == lloyd.assignments();
        loop {
            solver.sweep().unwrap();
            let fixed = lloyd.sweep().unwrap();
            steps += 1;
            same &= solver.assignments() == lloyd.assignments();
            if fixed || !same {
                break;
            }
        }
        if !same {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 10 sequences differ ({steps} sweeps compared)"))
}

fn g_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    let mut enumerated = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let k = rng.random_range(1..=3);
        let d = rng.random_range(2..=5);
        let x = random_binary(&mut rng, n, d);
        // Coarse centroid values make exact distance ties common.
        let f =
            CentroidMatrix::from_centroids(Array2::from_shape_fn((k, d), |_| [0.0, 0.5, 1.0][rng.random_range(0..3)]))
                .unwrap();
        let dist =
            |i: usize, c: usize| -> f64 { x.row(i).iter().zip(f.centroid(c)).map(|(a, b)| (a - b) * (a - b)).sum() };
        let got = update_g(x.view(), &f);
        let per_row: Vec<usize> =
            (0..n).map(|i| (0..k).fold(0, |best, c| if dist(i, c) < dist(i, best) { c } else { best })).collect();
        let mut ok = got.labels() == per_row.as_slice();
        if k.pow(n as u32) <= 6561 {
            // Joint enumeration in lexicographic order; the first minimizer
            // is the lowest-index choice in every row.
            enumerated += 1;
            let mut labels = vec![0usize; n];
            let mut best: Option<(f64, Vec<usize>)> = None;
            loop {
                let total: f64 = labels.iter().enumerate().map(|(i, &c)| dist(i, c)).sum();
                if best.as_ref().is_none_or(|(b, _)| total < *b) {
                    best = Some((total, labels.clone()));
                }
                let Some(pos) = (0..n).rev().find(|&i| labels[i] + 1 < k) else { break };
                labels[pos] += 1;
                labels[pos + 1..].iter_mut().for_each(|l| *l = 0);
            }
            ok &= best.unwrap().1 == got.labels();
        }
        if !ok {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures} of 100 cases differ ({enumerated} also enumerated jointly)"))
}

fn f_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(20..200);
        let d = rng.random_range(2..20);
        let k = rng.random_range(1..6);
        let x = random_binary(&mut rng, n, d);
        let w = SampleWeights::from_weights(Array1::from_shape_fn(n, |_| rng.random_range(1e-3..1.0))).unwrap();
        // Every cluster gets at least one member.
        let mut labels = random_labels(n, k, rng.random());
        labels[..k].iter_mut().enumerate().for_each(|(c, l)| *l = c);
        let g = AssignmentMatrix::new(labels, k).unwrap();
        let f = update_f(&x, &w, &g).unwrap();
        let mut grad = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            let c = g.label(i);
            let r = &x.row(i) - &f.centroid(c);
            grad.row_mut(c).scaled_add(-2.0 * w.w()[i], &r);
        }
        worst = worst.max(grad.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    outcome(worst <= 1e-8, format!("max |dJ/dF| {worst:.2e}"))
}

fn biased_spec(seed: u64, bias_strength: f64) -> BiasSpec {
    let (core, bias, noise) = BIASED_LAYOUT;
    BiasSpec {
        n: 500,
        d: 24,
        k: 3,
        core_per_cluster: core,
        bias_features: bias,
        bias_strength,
        noise_flip: noise,
        seed,
    }
}

fn biased_hyper(seed: u64) -> HyperParams {
    let (lambda1, lambda2, lambda3) = BIASED_LAMBDAS;
    HyperParams { lambda1, lambda2, lambda3, k: 3, seed, restarts: 20, ..HyperParams::default() }
}

fn decorrelation_effect() -> Outcome {
    let mut reduced = 0;
    let mut ratios = Vec::new();
    for seed in 0..SYNTHETIC_SEEDS {
        let data = generate_biased(&biased_spec(seed, 0.9)).unwrap();
        let report = fit_restarts(&data.x, &biased_hyper(1000 * seed)).unwrap();
        let before = correlation_amount(data.x.view(), None);
        let after = correlation_amount(data.x.view(), Some(&report.best.weights));
        if after < before {
            reduced += 1;
        }
        ratios.push(format!("{:.1e}", after / before));
    }
    outcome(reduced >= 9, format!("reduced on {reduced}/10 seeds, ratios [{}]", ratios.join(", ")))
}

/// Mean NMI and ARI of DCKM and k-means over every restart of every seed.
fn compare_methods(bias_strength: f64) -> ((f64, f64), (f64, f64)) {
    let mut dckm = (0.0, 0.0);
    let mut km = (0.0, 0.0);
    let mut runs = 0.0;
    for seed in 0..SYNTHETIC_SEEDS {
        let data = generate_biased(&biased_spec(seed, bias_strength)).unwrap();
        let truth = data.labels.unwrap();
        let hp = biased_hyper(1000 * seed);
        let report = fit_restarts(&data.x, &hp).unwrap();
        for (r, run) in report.runs.iter().enumerate() {
            dckm.0 += nmi(&truth, &run.labels).unwrap();
            dckm.1 += ari(&truth, &run.labels).unwrap();
            let fit = kmeans(data.x.view(), 3, hp.seed + r as u64).unwrap();
            km.0 += nmi(&truth, fit.assignments.labels()).unwrap();
            km.1 += ari(&truth, fit.assignments.labels()).unwrap();
            runs += 1.0;
        }
    }
    ((dckm.0 / runs, dckm.1 / runs), (km.0 / runs, km.1 / runs))
}

fn clustering_gain() -> Outcome {
    let start = Instant::now();
    let (biased_dckm, biased_km) = compare_methods(0.9);
    let (plain_dckm, plain_km) = compare_methods(0.5);
    let elapsed = start.elapsed();
    let gain = biased_dckm.0 - biased_km.0;
    let pass = gain >= 0.03
        && biased_dckm.1 > biased_km.1
        && (plain_dckm.0 - plain_km.0).abs() <= 0.03
        && elapsed < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "bias 0.9: dckm NMI/ARI {:.4}/{:.4} vs kmeans {:.4}/{:.4} (NMI gain {gain:+.4}); \
             bias 0.5: dckm NMI {:.4} vs kmeans {:.4}; {:.0} s",
            biased_dckm.0,
            biased_dckm.1,
            biased_km.0,
            biased_km.1,
            plain_dckm.0,
            plain_km.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let ln = f64::ln;
    let mut ok = nmi(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap() == 1.0
        && ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap() == 1.0
        && nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-15
        && (ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-15
        && (ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() - 1.0).abs() < 1e-15;
    // a = [0,0,1,1], b = [0,0,0,1].
    let h_b = -(0.75 * ln(0.75) + 0.25 * ln(0.25));
    let mi = 0.5 * ln(4.0 / 3.0) + 0.25 * ln(2.0 / 3.0) + 0.25 * ln(2.0);
    ok &= (nmi(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap() - mi / (ln(2.0) * h_b).sqrt()).abs() < 1e-14;
    // sum_ij C(n_ij,2) = 1, sum_i C(a_i,2) = 2, sum_j C(b_j,2) = 3, C(4,2) = 6.
    let (index, rows, cols, pairs) = (1.0, 2.0, 3.0, 6.0);
    let expected = rows * cols / pairs;
    let want = (index - expected) / (0.5 * (rows + cols) - expected);
    ok &= (ari(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap() - want).abs() < 1e-14;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mean = (0..100)
        .map(|_| {
            let a: Vec<usize> = (0..1000).map(|_| rng.random_range(0..3)).collect();
            let b: Vec<usize> = (0..1000).map(|_| rng.random_range(0..3)).collect();
            ari(&a, &b).unwrap()
        })
        .sum::<f64>()
        / 100.0;
    ok &= mean.abs() <= 0.02;
    outcome(ok, format!("hand values match, random-labeling ARI mean {mean:+.2e}"))
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(10..100);
        let d = rng.random_range(2..12);
        let x = random_binary(&mut rng, n, d);
        let w = SampleWeights::from_weights(Array1::from_shape_fn(n, |_| rng.random_range(0.01..1.0))).unwrap();
        let base = balance_loss(&x, &w).value;
        for c in [0.1, 3.0, 100.0] {
            let scaled = balance_loss(&x, &w.scaled(c).unwrap()).value;
            worst = worst.max((scaled - base).abs() / base.abs().max(1e-300));
        }
    }
    outcome(worst <= 1e-12, format!("max relative change {worst:.2e}"))
}

fn sweep_time(n: usize) -> Duration {
    let spec = BiasSpec {
        n,
        d: 100,
        k: 5,
        core_per_cluster: 10,
        bias_features: 40,
        bias_strength: 0.9,
        noise_flip: 0.05,
        seed: 10,
    };
    let x = generate_biased(&spec).unwrap().x;
    let hp = HyperParams { k: 5, seed: 10, ..HyperParams::default() };
    let mut times: Vec<Duration> = (0..5)
        .map(|_| {
            let mut solver = DckmSolver::new(&x, &hp, None).unwrap();
            solver.sweep().unwrap();
            let start = Instant::now();
            for _ in 0..3 {
                solver.sweep().unwrap();
            }
            start.elapsed() / 3
        })
        .collect();
    times.sort();
    times[2]
}

fn linear_scaling() -> Outcome {
    let small = sweep_time(1000);
    let large = sweep_time(2000);
    let ratio = large.as_secs_f64() / small.as_secs_f64();
    outcome(
        ratio <= 3.0,
        format!("sweep {:.1} ms at n=1000, {:.1} ms at n=2000, ratio {ratio:.2}", ms(small), ms(large)),
    )
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).display().to_string();
    let bin = env!("CARGO_BIN_EXE_dckm");
    let run = |args: &[&str]| {
        let status = Command::new(bin).args(args).env_remove("DCKM_SEED").output().unwrap().status;
        assert!(status.success(), "{args:?} failed");
    };
    let data = path("data.csv");
    run(&["gen", "--n", "300", "--d", "24", "--k", "3", "--seed", "4", "--out", &data]);
    let fit = |out: &str| {
        run(&[
            "fit",
            "--method",
            "dckm",
            "--data",
            &data,
            "--labels",
            "label",
            "--k",
            "3",
            "--restarts",
            "5",
            "--seed",
            "4",
            "--out",
            out,
        ])
    };
    fit(&path("a.txt"));
    fit(&path("b.txt"));
    let a = std::fs::read(path("a.txt")).unwrap();
    let b = std::fs::read(path("b.txt")).unwrap();
    outcome(!a.is_empty() && a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("omega gradient matches finite differences", gradient_check),
        ("objective non-increasing over sweeps", monotone_descent),
        ("zero penalties reduce to Lloyd", lloyd_reduction),
        ("assignment update matches brute force", g_oracle),
        ("centroid update is stationary", f_optimality),
        ("weights reduce feature correlation", decorrelation_effect),
        ("clustering gain under bias", clustering_gain),
        ("metric oracles", metric_oracles),
        ("balance loss scale invariance", scale_invariance),
        ("per-sweep time linear in n", linear_scaling),
        ("fit output is deterministic", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {name}: {status} ({}; {:.1} s)", i + 1, result.detail, start.elapsed().as_secs_f64());
        if !result.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
