// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulation scenarios, seeded replication and reporting.

mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Algorithm, ChangePointTruth, Dataset};
use crate::detect::{detect, DetectorConfig};
use crate::error::{Result, SeglineError};

pub use io::{load_csv, report_json, result_json, write_csv, write_json, CsvOptions, REPORT_SCHEMA, RESULT_SCHEMA};

/// Tolerances at which location hits are counted.
pub const HIT_TOLERANCES: [usize; 3] = [0, 5, 10];

/// Environment variable overriding the replication worker count.
pub const WORKERS_ENV: &str = "SEGLINE_WORKERS";

/// A seeded data-generating recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub q: usize,
    pub beta0: Vec<f64>,
    pub truth: ChangePointTruth,
    /// Mean of predictor columns 2..q.
    pub predictor_mean: f64,
    /// Standard deviation of predictor columns 2..q.
    pub predictor_sd: f64,
    /// Noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

const BETA0: [f64; 3] = [1.0, 1.4, 0.7];
const DELTA: [f64; 3] = [0.5, -0.7, 0.4];
const CPL2_LOCATIONS: [usize; 9] = [503, 923, 1471, 2077, 2334, 2890, 3410, 3909, 4546];

/// Default predictor standard deviation for the built-in scenarios.
pub const DEFAULT_PREDICTOR_SD: f64 = 2.0;

impl Scenario {
    fn base(name: &str, truth: ChangePointTruth) -> Self {
        Self {
            name: name.into(),
            n: 5000,
            q: 3,
            beta0: BETA0.to_vec(),
            truth,
            predictor_mean: 1.0,
            predictor_sd: DEFAULT_PREDICTOR_SD,
            sigma: 1.0,
            seed: 0,
        }
    }

    fn alternating(locations: Vec<usize>) -> ChangePointTruth {
        let deltas = (0..locations.len())
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                DELTA.iter().map(|d| s * d).collect()
            })
            .collect();
        ChangePointTruth { locations, deltas }
    }

    /// No changes, `n = 5000`, `q = 3`.
    pub fn no_change() -> Self {
        Self::base("none", ChangePointTruth::none())
    }

    /// Nine changes at `500, 1000, ..., 4500` with alternating jumps.
    pub fn cpl1() -> Self {
        Self::base("cpl1", Self::alternating((1..=9).map(|i| 500 * i).collect()))
    }

    /// Nine irregularly spaced changes with alternating jumps.
    pub fn cpl2() -> Self {
        Self::base("cpl2", Self::alternating(CPL2_LOCATIONS.to_vec()))
    }

    /// Built-in scenario by name.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::no_change()),
            "cpl1" => Ok(Self::cpl1()),
            "cpl2" => Ok(Self::cpl2()),
            other => Err(SeglineError::invalid_input(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_predictor_sd(mut self, sd: f64) -> Self {
        self.predictor_sd = sd;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// Multiplies every jump vector by `factor`.
    pub fn with_jump_scale(mut self, factor: f64) -> Self {
        for d in self.truth.deltas.iter_mut().flatten() {
            *d *= factor;
        }
        self
    }

    /// Rescales `n` and the change locations by `factor`.
    pub fn scaled(mut self, factor: usize) -> Self {
        self.n *= factor;
        for a in &mut self.truth.locations {
            *a *= factor;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.beta0.len() != self.q {
            return Err(SeglineError::invalid_input("beta0 must have length q >= 1"));
        }
        if !(self.predictor_sd >= 0.0 && self.sigma >= 0.0) {
            return Err(SeglineError::invalid_input("standard deviations must be nonnegative"));
        }
        self.truth.validate(self.n, self.q, self.truth.locations.len())
    }
}

/// Draws the dataset of `s`. Row `i` is `(1, x_2, ..., x_q)`, followed by its
/// noise draw; the stream is determined by `s.seed`.
pub fn simulate_dataset(s: &Scenario) -> Result<(Dataset, ChangePointTruth)> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let law = Normal::new(s.predictor_mean, s.predictor_sd).map_err(|e| SeglineError::invalid_input(e.to_string()))?;
    let mut x = Vec::with_capacity(s.n * s.q);
    let mut y = Vec::with_capacity(s.n);
    let mut beta = s.beta0.clone();
    let mut next = 0;
    for i in 1..=s.n {
        while next < s.truth.locations.len() && s.truth.locations[next] < i {
            for (b, d) in beta.iter_mut().zip(&s.truth.deltas[next]) {
                *b += d;
            }
            next += 1;
        }
        let start = x.len();
        x.push(1.0);
        for _ in 1..s.q {
            x.push(law.sample(&mut rng));
        }
        let eps: f64 = rng.sample(StandardNormal);
        let mean: f64 = x[start..].iter().zip(&beta).map(|(a, b)| a * b).sum();
        y.push(mean + s.sigma * eps);
    }
    Ok((Dataset::new(x, y, s.q)?, s.truth.clone()))
}

/// Per-change hit counts `[tol 0, tol 5, tol 10]`, scoring each true change
/// by its nearest estimate.
pub fn hit_counts(truth: &[usize], estimates: &[usize]) -> Vec<[usize; 3]> {
    truth
        .iter()
        .map(|&a| {
            let dist = estimates.iter().map(|&e| e.abs_diff(a)).min();
            let mut row = [0; 3];
            if let Some(d) = dist {
                for (slot, tol) in row.iter_mut().zip(HIT_TOLERANCES) {
                    *slot = usize::from(d <= tol);
                }
            }
            row
        })
        .collect()
}

/// Aggregated outcomes of one algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub correct_k: usize,
    /// Per true change, counts within tolerances 0, 5 and 10.
    pub hits: Vec<[usize; 3]>,
    pub failures: usize,
    pub mean_runtime_s: Option<f64>,
    /// Histogram of estimated counts, indexed by `K_hat`.
    pub k_hat_histogram: Vec<usize>,
}

/// Tables of correct-count and location accuracy over replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: String,
    pub n: usize,
    pub q: usize,
    pub true_locations: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl ReplicationReport {
    pub fn summary(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }

    /// Fraction of replications with the correct count.
    pub fn correct_rate(&self, algorithm: Algorithm) -> f64 {
        self.summary(algorithm)
            .map_or(0.0, |s| s.correct_k as f64 / self.replications as f64)
    }
}

/// One detector outcome within a replication.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub outcome: std::result::Result<(Vec<usize>, f64), String>,
}

/// Worker count from [`WORKERS_ENV`], or rayon's default.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs every algorithm on `reps` datasets seeded `base_seed + rep`.
/// Individual failures count as incorrect detections.
pub fn run_replications(
    s: &Scenario,
    algorithms: &[Algorithm],
    reps: usize,
    base_seed: u64,
    config: &DetectorConfig,
) -> Result<ReplicationReport> {
    if reps == 0 {
        return Err(SeglineError::invalid_input("reps must be >= 1"));
    }
    s.validate()?;
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| SeglineError::numerical(format!("thread pool: {e}")))?;
    let seeds: Vec<u64> = (0..reps as u64).map(|r| base_seed.wrapping_add(r)).collect();
    let runs: Vec<Vec<RunRecord>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let records = run_one(s, seed, algorithms, config);
                log::info!("scenario {} seed {seed} done", s.name);
                records
            })
            .collect()
    });
    Ok(aggregate(s, algorithms, base_seed, seeds, &runs))
}

fn run_one(s: &Scenario, seed: u64, algorithms: &[Algorithm], config: &DetectorConfig) -> Vec<RunRecord> {
    let data = simulate_dataset(&s.clone().with_seed(seed));
    algorithms
        .iter()
        .map(|&algorithm| {
            let outcome = match &data {
                Ok((d, _)) => detect(d, algorithm, config)
                    .map(|r| (r.locations, r.runtime_s))
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            if let Err(e) = &outcome {
                log::warn!("{algorithm} failed on seed {seed}: {e}");
            }
            RunRecord { algorithm, outcome }
        })
        .collect()
}

fn aggregate(
    s: &Scenario,
    algorithms: &[Algorithm],
    base_seed: u64,
    seeds: Vec<u64>,
    runs: &[Vec<RunRecord>],
) -> ReplicationReport {
    let truth = &s.truth.locations;
    let summaries = algorithms
        .iter()
        .enumerate()
        .map(|(ai, &algorithm)| {
            let mut sum = AlgorithmSummary {
                algorithm,
                correct_k: 0,
                hits: vec![[0; 3]; truth.len()],
                failures: 0,
                mean_runtime_s: None,
                k_hat_histogram: Vec::new(),
            };
            let mut time = 0.0;
            let mut timed = 0usize;
            for rep in runs {
                match &rep[ai].outcome {
                    Ok((locs, rt)) => {
                        if locs.len() == truth.len() {
                            sum.correct_k += 1;
                        }
                        if sum.k_hat_histogram.len() <= locs.len() {
                            sum.k_hat_histogram.resize(locs.len() + 1, 0);
                        }
                        sum.k_hat_histogram[locs.len()] += 1;
                        for (acc, row) in sum.hits.iter_mut().zip(hit_counts(truth, locs)) {
                            for t in 0..3 {
                                acc[t] += row[t];
                            }
                        }
                        time += rt;
                        timed += 1;
                    }
                    Err(_) => sum.failures += 1,
                }
            }
            if timed > 0 {
                sum.mean_runtime_s = Some(time / timed as f64);
            }
            sum
        })
        .collect();
    ReplicationReport {
        scenario: s.name.clone(),
        n: s.n,
        q: s.q,
        true_locations: truth.clone(),
        replications: runs.len(),
        base_seed,
        seeds,
        algorithms: summaries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_truths() {
        let c1 = Scenario::cpl1();
        assert_eq!(c1.truth.locations, (1..=9).map(|i| 500 * i).collect::<Vec<_>>());
        assert_eq!(c1.truth.deltas[0], vec![0.5, -0.7, 0.4]);
        assert_eq!(c1.truth.deltas[1], vec![-0.5, 0.7, -0.4]);
        assert_eq!(c1.truth.deltas[8], c1.truth.deltas[0]);
        assert_eq!(Scenario::cpl2().truth.locations[2], 1471);
        assert_eq!(Scenario::no_change().truth.k0(), 0);
        assert!(Scenario::named("bogus").is_err());
    }

    #[test]
    fn simulation_is_seeded() {
        let s = Scenario::cpl1().with_seed(11);
        let (a, _) = simulate_dataset(&s).unwrap();
        let (b, _) = simulate_dataset(&s).unwrap();
        assert_eq!(a, b);
        let (c, _) = simulate_dataset(&s.clone().with_seed(12)).unwrap();
        assert_ne!(a.responses(), c.responses());
        assert!(a.row(0)[0] == 1.0 && a.row(4999)[0] == 1.0);
    }

    #[test]
    fn noiseless_regimes_follow_truth() {
        let s = Scenario::cpl1().with_sigma(0.0).with_seed(3);
        let (d, truth) = simulate_dataset(&s).unwrap();
        let mean_at = |i: usize, beta: &[f64]| -> f64 { d.row(i - 1).iter().zip(beta).map(|(a, b)| a * b).sum() };
        assert!((d.response(500 - 1) - mean_at(500, &BETA0)).abs() < 1e-12);
        let after: Vec<f64> = BETA0.iter().zip(&truth.deltas[0]).map(|(b, d)| b + d).collect();
        assert!((d.response(501 - 1) - mean_at(501, &after)).abs() < 1e-12);
    }

    #[test]
    fn hit_scoring_is_nested() {
        let rows = hit_counts(&[500, 1000, 1500], &[500, 1004, 1490, 3000]);
        assert_eq!(rows, vec![[1, 1, 1], [0, 1, 1], [0, 0, 1]]);
        assert_eq!(hit_counts(&[10], &[]), vec![[0, 0, 0]]);
    }
}
