// SPDX-License-Identifier: MIT OR Apache-2.0

//! Choosing the number of boundaries by refit RSS.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Algorithm, Dataset, DetectionResult};
use crate::error::{Result, SeglineError};

use super::{detect, DetectorConfig};

/// Outcome of [`select_pn`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PnSelection {
    pub p_n: usize,
    pub result: DetectionResult,
    /// `(p_n, refit RSS)` per candidate; `None` where detection failed.
    pub scores: Vec<(usize, Option<f64>)>,
}

/// Runs `algorithm` for each candidate and keeps the smallest refit RSS;
/// ties within a relative `1e-9` go to the smallest `p_n`.
pub fn select_pn(
    data: &Dataset,
    algorithm: Algorithm,
    candidates: &[usize],
    config: &DetectorConfig,
) -> Result<PnSelection> {
    if candidates.is_empty() {
        return Err(SeglineError::invalid_input("no p_n candidates"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let runs: Vec<(usize, Result<DetectionResult>)> = sorted
        .par_iter()
        .map(|&p| (p, detect(data, algorithm, &config.clone().with_pn(p))))
        .collect();
    let mut best: Option<(usize, DetectionResult)> = None;
    let mut scores = Vec::with_capacity(runs.len());
    let mut last_err = None;
    for (p, run) in runs {
        match run {
            Ok(res) => {
                scores.push((p, Some(res.rss)));
                let better = match &best {
                    None => true,
                    Some((_, b)) => res.rss < b.rss - 1e-9 * b.rss.abs(),
                };
                if better {
                    best = Some((p, res));
                }
            }
            Err(e) => {
                log::debug!("p_n={p} skipped: {e}");
                scores.push((p, None));
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((p_n, result)) => Ok(PnSelection { p_n, result, scores }),
        None => Err(last_err.unwrap_or_else(|| SeglineError::invalid_input("no feasible p_n"))),
    }
}
