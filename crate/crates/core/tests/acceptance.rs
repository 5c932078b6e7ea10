// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance checks, one pass/fail line per criterion.
//!
//! Prints every line and exits 0; set `SEGLINE_ACCEPTANCE_STRICT=1` to exit
//! 1 when any criterion fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use segline::cusum::{cusum_profile, cusum_test, refine_changepoint, CusumWindow};
use segline::detect::{detect, DetectorConfig};
use segline::harness::{run_replications, simulate_dataset, Scenario};
use segline::ols::estimate_deltas;
use segline::penalty::{mcp_derivative, mcp_penalty, scad_derivative, scad_penalty, scad_threshold_scalar};
use segline::solver::{dense_design, solve_weighted_l1, PenaltySpec, SegmentedDesign, SolverOptions};
use segline::{make_segmentation, Algorithm, Dataset};

const ALL: [Algorithm; 6] = [
    Algorithm::Ls,
    Algorithm::Cls,
    Algorithm::Al,
    Algorithm::Cal,
    Algorithm::Scad,
    Algorithm::Mcp,
];
const BASE_SEED: u64 = 20_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_dataset(n: usize, q: usize, change: Option<(usize, f64)>, rng: &mut ChaCha8Rng) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 1..=n {
        let mut row = vec![1.0];
        row.extend((1..q).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)));
        let mut mean: f64 = row.iter().sum();
        if let Some((at, jump)) = change {
            if i > at {
                mean += jump * row.iter().sum::<f64>();
            }
        }
        y.push(mean + rng.sample::<f64, _>(StandardNormal));
        rows.push(row);
    }
    Dataset::from_rows(&rows, y).unwrap()
}

fn ols_rss(data: &Dataset, start: usize, end: usize) -> f64 {
    let q = data.q();
    let len = end + 1 - start;
    let x = DMatrix::from_row_slice(len, q, &data.predictors()[(start - 1) * q..end * q]);
    let y = DVector::from_column_slice(&data.responses()[start - 1..end]);
    let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    (&y - &x * beta).norm_squared()
}

fn null_detection() -> Outcome {
    let report = run_replications(&Scenario::no_change(), &ALL, 100, BASE_SEED, &DetectorConfig::default()).unwrap();
    let counts: Vec<String> = ALL
        .iter()
        .map(|&a| format!("{a} {}", report.summary(a).unwrap().correct_k))
        .collect();
    let pass = ALL.iter().all(|&a| report.summary(a).unwrap().correct_k >= 97);
    outcome(pass, format!("K_hat = 0 of 100 (need >= 97): {}", counts.join(", ")))
}

fn nine_changes_regular() -> Outcome {
    let algs = [Algorithm::Ls, Algorithm::Al, Algorithm::Cal];
    let report = run_replications(&Scenario::cpl1(), &algs, 100, BASE_SEED, &DetectorConfig::default()).unwrap();
    let (ls, al, cal) = (
        report.correct_rate(Algorithm::Ls),
        report.correct_rate(Algorithm::Al),
        report.correct_rate(Algorithm::Cal),
    );
    let first = report.summary(Algorithm::Al).unwrap().hits[0][2] as f64 / 100.0;
    let pass = al >= 0.90 && cal >= 0.90 && ls >= 0.75 && first >= 0.95;
    outcome(
        pass,
        format!(
            "correct K_hat al {al:.2} cal {cal:.2} (>= 0.90), ls {ls:.2} (>= 0.75); al |a1 - 500| <= 10 rate {first:.2} (>= 0.95)"
        ),
    )
}

fn nine_changes_irregular() -> Outcome {
    let algs = [Algorithm::Cal, Algorithm::Scad, Algorithm::Mcp];
    let cfg = DetectorConfig::default();
    let mut mcp_wins = 0;
    let mut batches = Vec::new();
    let mut first = None;
    for b in 0..5u64 {
        let report = run_replications(&Scenario::cpl2(), &algs, 100, BASE_SEED + 1000 * b, &cfg).unwrap();
        let (scad, mcp) = (
            report.correct_rate(Algorithm::Scad),
            report.correct_rate(Algorithm::Mcp),
        );
        mcp_wins += usize::from(mcp > scad);
        batches.push(format!("{mcp:.2}/{scad:.2}"));
        first.get_or_insert(report);
    }
    let report = first.unwrap();
    let cal = report.correct_rate(Algorithm::Cal);
    let scad = report.correct_rate(Algorithm::Scad);
    let pass = cal >= 0.90 && (0.40..=0.75).contains(&scad) && mcp_wins >= 3;
    outcome(
        pass,
        format!(
            "cal {cal:.2} (>= 0.90); scad {scad:.2} (in [0.40, 0.75]); mcp > scad in {mcp_wins}/5 batches (mcp/scad {})",
            batches.join(" ")
        ),
    )
}

fn delta_covariance() -> Outcome {
    // Second-moment matrix of (1, x2, x3) with x_j ~ N(1, variance 2).
    let w = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 3.0, 1.0, 1.0, 1.0, 3.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED);
    let law = Normal::new(1.0, 2f64.sqrt()).unwrap();
    let draws = 1_000_000;
    let mut mc = DMatrix::<f64>::zeros(3, 3);
    for _ in 0..draws {
        let x = DVector::from_vec(vec![1.0, law.sample(&mut rng), law.sample(&mut rng)]);
        mc += &x * x.transpose();
    }
    mc /= draws as f64;
    let w_err = (&mc - &w).abs().max();

    let (m, reps) = (500, 2000);
    let scenario = Scenario {
        n: 2 * m,
        ..Scenario::no_change()
    }
    .with_predictor_sd(2f64.sqrt());
    let seg = make_segmentation(2 * m, 1, 3).unwrap();
    assert_eq!((seg.m, seg.block_len(1)), (m, m));
    let samples: Vec<DVector<f64>> = (0..reps)
        .map(|r| {
            let (data, _) = simulate_dataset(&scenario.clone().with_seed(BASE_SEED + r)).unwrap();
            estimate_deltas(&data, &seg).unwrap().d_hat[0].clone() * (m as f64).sqrt()
        })
        .collect();
    let mean = samples.iter().fold(DVector::zeros(3), |acc, s| acc + s) / reps as f64;
    let cov = samples.iter().fold(DMatrix::zeros(3, 3), |acc, s| {
        acc + (s - &mean) * (s - &mean).transpose()
    }) / (reps - 1) as f64;
    let target = w.clone().try_inverse().unwrap() * 2.0;
    let rel = (&cov - &target).norm() / target.norm();
    outcome(
        w_err < 0.02 && rel <= 0.20,
        format!("predictor second moments within {w_err:.4} of W; relative Frobenius error {rel:.3} (<= 0.20)"),
    )
}

fn cusum_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 5);
    let mut worst: f64 = 0.0;
    let started = Instant::now();
    for _ in 0..100 {
        let q = rng.random_range(1..=3);
        let n = rng.random_range(2 * q + 10..=200);
        let change = rng.random_bool(0.5).then(|| (rng.random_range(q + 1..n - q), 1.0));
        let data = random_dataset(n, q, change, &mut rng);
        let w = CusumWindow::new(1, n);
        let prof = cusum_profile(&data, w).unwrap();

        let x = DMatrix::from_row_slice(n, q, data.predictors());
        let y = DVector::from_column_slice(data.responses());
        let c = x.transpose() * &x;
        let beta = c.clone().try_inverse().unwrap() * x.transpose() * &y;
        let e = &y - &x * &beta;
        let rss_full = e.norm_squared();
        for (idx, value) in prof.values.iter().enumerate() {
            let k = prof.first_k + idx;
            let xl = x.rows(0, k);
            let ck = xl.transpose() * xl;
            let c0k = &c - &ck;
            let sk = xl.transpose() * e.rows(0, k);
            let (Some(ck_inv), Some(c0k_inv)) = (ck.try_inverse(), c0k.try_inverse()) else {
                continue;
            };
            let direct = (sk.transpose() * ck_inv * &c * c0k_inv * &sk)[(0, 0)];
            let split = rss_full - ols_rss(&data, 1, k) - ols_rss(&data, k + 1, n);
            let t = value.expect("nonsingular split");
            let scale = 1.0f64.max(t.abs());
            worst = worst
                .max((t - direct).abs() / scale)
                .max((t - split.max(0.0)).abs() / scale);
        }
    }
    outcome(
        worst <= 1e-6,
        format!(
            "largest discrepancy {worst:.2e} (<= 1e-6) in {:.2} s",
            started.elapsed().as_secs_f64()
        ),
    )
}

fn cusum_size() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 6);
    let reps = 1000;
    let mut rejections = 0;
    for _ in 0..reps {
        let y: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let data = Dataset::intercept_only(y).unwrap();
        rejections += usize::from(cusum_test(&data, CusumWindow::new(1, 500), 0.05).unwrap().reject);
    }
    let rate = rejections as f64 / reps as f64;
    outcome(
        (0.01..=0.10).contains(&rate),
        format!("rejection rate {rate:.3} (in [0.01, 0.10])"),
    )
}

fn penalty_analytics() -> Outcome {
    let mut worst_jump: f64 = 0.0;
    for (lambda, gamma) in [(0.02, 3.7), (0.5, 3.7), (1.0, 2.4), (0.3, 6.0)] {
        let scad = |x: f64| scad_penalty(x, lambda, gamma).unwrap();
        let mcp = |x: f64| mcp_penalty(x, lambda, gamma).unwrap();
        for b in [lambda, gamma * lambda] {
            let (lo, hi) = (b * (1.0 - 1e-13), b * (1.0 + 1e-13));
            worst_jump = worst_jump
                .max((scad(lo) - scad(hi)).abs())
                .max((scad_derivative(lo, lambda, gamma) - scad_derivative(hi, lambda, gamma)).abs());
        }
        let b = gamma * lambda;
        let (lo, hi) = (b * (1.0 - 1e-13), b * (1.0 + 1e-13));
        worst_jump = worst_jump
            .max((mcp(lo) - mcp(hi)).abs())
            .max((mcp_derivative(lo, lambda, gamma) - mcp_derivative(hi, lambda, gamma)).abs());
    }

    let mut worst_thr: f64 = 0.0;
    for (lambda, gamma) in [(0.02, 3.7), (0.2, 3.7)] {
        let mus: Vec<f64> = (-110_000..=110_000).map(|i| i as f64 * 1e-5).collect();
        let pens: Vec<f64> = mus
            .iter()
            .map(|m| scad_penalty(m.abs(), lambda, gamma).unwrap())
            .collect();
        for i in 0..=400 {
            let z = -1.0 + i as f64 * 0.005;
            let (mut best, mut arg) = (f64::INFINITY, 0.0);
            for (m, p) in mus.iter().zip(&pens) {
                let obj = 0.5 * (z - m) * (z - m) + p;
                if obj < best {
                    best = obj;
                    arg = *m;
                }
            }
            worst_thr = worst_thr.max((scad_threshold_scalar(z, lambda, gamma) - arg).abs());
        }
    }
    outcome(
        worst_jump <= 1e-10 && worst_thr <= 1e-4,
        format!("largest branch-point jump {worst_jump:.1e} (<= 1e-10); threshold vs grid {worst_thr:.1e} (<= 1e-4)"),
    )
}

/// Coordinate-wise proximal step computed from the dense design.
fn dense_kkt(x: &DMatrix<f64>, y: &DVector<f64>, theta: &[f64], pen: &[f64]) -> f64 {
    let t = DVector::from_column_slice(theta);
    let r = y - x * &t;
    let mut worst: f64 = 0.0;
    for c in 0..theta.len() {
        let col = x.column(c);
        let a = col.norm_squared();
        if a == 0.0 || pen[c].is_infinite() {
            continue;
        }
        let z = theta[c] + col.dot(&r) / a;
        let prox = z.signum() * (z.abs() - pen[c] / (2.0 * a)).max(0.0);
        worst = worst.max((theta[c] - prox).abs());
    }
    worst
}

fn grid_minimize(gram: &DMatrix<f64>, xty: &DVector<f64>, pen: &[f64]) -> DVector<f64> {
    let d = xty.len();
    let obj = |t: &DVector<f64>| {
        let quad = (t.transpose() * gram * t)[(0, 0)] - 2.0 * t.dot(xty);
        quad + t.iter().zip(pen).map(|(v, p)| p * v.abs()).sum::<f64>()
    };
    let mut center = DVector::zeros(d);
    let mut half = 8.0;
    let points = 21usize;
    while half > 1e-5 {
        let step = 2.0 * half / (points - 1) as f64;
        let mut best = (f64::INFINITY, center.clone());
        let total = points.pow(d as u32);
        for code in 0..total {
            let mut rem = code;
            let mut t = center.clone();
            for j in 0..d {
                t[j] += -half + (rem % points) as f64 * step;
                rem /= points;
            }
            let v = obj(&t);
            if v < best.0 {
                best = (v, t);
            }
        }
        center = best.1;
        half = 2.0 * step;
    }
    center
}

fn solver_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 8);
    let opts = SolverOptions::default();
    let (mut worst_kkt, mut worst_dense, mut worst_grid, mut worst_ols): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for case in 0..12 {
        let q = 1 + case % 3;
        let p_n = 2 + case % 4;
        let n = 60 + 10 * case;
        let data = random_dataset(n, q, Some((n / 2, 1.5)), &mut rng);
        let seg = make_segmentation(n, p_n, q).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let x = dense_design(&data, &seg);
        let y = DVector::from_column_slice(data.responses());
        let groups = p_n + 1;
        for lambda in [0.0, 1.0, 10.0, 100.0] {
            let mut weights: Vec<f64> = (0..groups).map(|_| rng.random_range(0.2..2.0)).collect();
            weights[0] = 0.0;
            let spec = PenaltySpec::weighted_l1(lambda, weights.clone());
            let rep = solve_weighted_l1(&design, &spec, &opts, None).unwrap();
            let pen: Vec<f64> = (0..groups * q).map(|c| lambda * weights[c / q]).collect();
            worst_kkt = worst_kkt.max(rep.kkt_residual);
            worst_dense = worst_dense.max(dense_kkt(&x, &y, &rep.theta_hat, &pen));
            if lambda == 0.0 {
                let ols = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
                for (a, b) in rep.theta_hat.iter().zip(ols.iter()) {
                    worst_ols = worst_ols.max((a - b).abs());
                }
            }
        }
    }
    for case in 0..6 {
        let p_n = 1 + case % 3;
        let n = 30 + 6 * case;
        let data = random_dataset(n, 1, Some((n / 2, 2.0)), &mut rng);
        let seg = make_segmentation(n, p_n, 1).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let x = dense_design(&data, &seg);
        let y = DVector::from_column_slice(data.responses());
        let weights: Vec<f64> = (0..=p_n)
            .map(|g| if g == 0 { 0.5 } else { rng.random_range(0.5..1.5) })
            .collect();
        for lambda in [0.5, 5.0, 20.0] {
            let rep =
                solve_weighted_l1(&design, &PenaltySpec::weighted_l1(lambda, weights.clone()), &opts, None).unwrap();
            let pen: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
            let grid = grid_minimize(&(x.transpose() * &x), &(x.transpose() * &y), &pen);
            for (a, b) in rep.theta_hat.iter().zip(grid.iter()) {
                worst_grid = worst_grid.max((a - b).abs());
            }
        }
    }
    let kkt = worst_kkt.max(worst_dense);
    outcome(
        kkt <= 1e-6 && worst_grid <= 5e-3 && worst_ols <= 1e-8,
        format!("KKT residual {kkt:.1e} (<= 1e-6); grid search gap {worst_grid:.1e} (<= 5e-3); zero-penalty vs OLS {worst_ols:.1e} (<= 1e-8)"),
    )
}

fn refinement_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED + 9);
    let mut mismatches = 0;
    for _ in 0..200 {
        let q = rng.random_range(1..=3);
        let n = 200;
        let change = rng
            .random_bool(0.7)
            .then(|| (rng.random_range(40..160), rng.random_range(0.2..2.0)));
        let data = random_dataset(n, q, change, &mut rng);
        let start = rng.random_range(1..60);
        let end = rng.random_range(start + 2 * q + 12..=n);
        let got = refine_changepoint(&data, (start, end)).unwrap();
        let mut best = (f64::INFINITY, 0);
        for k in start + q..end - q {
            let rss = ols_rss(&data, start, k) + ols_rss(&data, k + 1, end);
            if rss < best.0 {
                best = (rss, k);
            }
        }
        mismatches += usize::from(got != best.1);
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} of 200 windows disagree with exhaustive search"),
    )
}

fn linear_scaling() -> Outcome {
    let cfg = DetectorConfig::default();
    let time = |s: &Scenario| {
        let mut runs: Vec<f64> = (0..31)
            .map(|r| {
                let (data, _) = simulate_dataset(&s.clone().with_seed(BASE_SEED + r)).unwrap();
                let started = Instant::now();
                detect(&data, Algorithm::Al, &cfg).unwrap();
                started.elapsed().as_secs_f64()
            })
            .collect();
        runs.sort_by(f64::total_cmp);
        runs[runs.len() / 2]
    };
    let small = Scenario::cpl1();
    let large = Scenario::cpl1().scaled(2);
    let (m_small, m_large) = (
        make_segmentation(5000, 100, 3).unwrap().m,
        make_segmentation(10_000, 200, 3).unwrap().m,
    );
    time(&small);
    let (ts, tl) = (time(&small), time(&large));
    let ratio = tl / ts;
    outcome(
        m_small == m_large && ratio <= 2.5,
        format!("median time n=5000 {ts:.4} s, n=10000 {tl:.4} s, ratio {ratio:.2} (<= 2.5) at m = {m_small}"),
    )
}

fn main() {
    type Check = (&'static str, fn() -> Outcome);
    let checks: [Check; 10] = [
        ("null scenario", null_detection),
        ("nine regular changes", nine_changes_regular),
        ("nine irregular changes", nine_changes_irregular),
        ("jump estimate covariance", delta_covariance),
        ("CUSUM statistic forms", cusum_equivalences),
        ("CUSUM size", cusum_size),
        ("penalty analytics", penalty_analytics),
        ("weighted-L1 solver", solver_correctness),
        ("split refinement", refinement_oracle),
        ("linear scaling", linear_scaling),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let started = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {}: {} ({:.1} s) {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            started.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 && std::env::var("SEGLINE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
