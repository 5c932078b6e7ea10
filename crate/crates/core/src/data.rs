// SPDX-License-Identifier: MIT OR Apache-2.0

//! Immutable containers shared by every stage of the pipeline.
//!
//! All index-valued contracts (block ranges, change locations, windows) are
//! 1-based and inclusive. Row access on [`Dataset`] is 0-based because it is
//! plain storage.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SeglineError};

/// Observed regression sequence: rows `x_i` in R^q and responses `y_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    q: usize,
    /// Row-major `n x q`.
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major predictors. Rejects empty or
    /// non-finite input.
    pub fn new(x: Vec<f64>, y: Vec<f64>, q: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(SeglineError::data("no observations"));
        }
        if q == 0 {
            return Err(SeglineError::invalid_input("predictor dimension q must be >= 1"));
        }
        if x.len() != n * q {
            return Err(SeglineError::invalid_input(format!(
                "predictor storage has {} values; expected n*q = {}*{} = {}",
                x.len(),
                n,
                q,
                n * q
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(SeglineError::data(format!(
                "non-finite predictor at row {}, column {}",
                pos / q + 1,
                pos % q + 1
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(SeglineError::data(format!("non-finite response at row {}", pos + 1)));
        }
        Ok(Self { n, q, x, y })
    }

    /// Builds a dataset from per-row predictor vectors.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let q = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(SeglineError::invalid_input(format!(
                "{} predictor rows but {} responses",
                rows.len(),
                y.len()
            )));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != q) {
            return Err(SeglineError::invalid_input(format!(
                "row {} has {} predictors; expected {q}",
                i + 1,
                rows[i].len()
            )));
        }
        Self::new(rows.concat(), y, q)
    }

    /// Intercept-only (mean-shift) dataset.
    pub fn intercept_only(y: Vec<f64>) -> Result<Self> {
        let x = vec![1.0; y.len()];
        Self::new(x, y, 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Predictor row `i` (0-based).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.q..(i + 1) * self.q]
    }

    /// Response `i` (0-based).
    pub fn response(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn predictors(&self) -> &[f64] {
        &self.x
    }

    /// Copy with `w` leading copies of the first observation.
    pub fn with_prefix_copies(&self, w: usize) -> Dataset {
        let mut x = Vec::with_capacity((self.n + w) * self.q);
        let mut y = Vec::with_capacity(self.n + w);
        for _ in 0..w {
            x.extend_from_slice(self.row(0));
            y.push(self.y[0]);
        }
        x.extend_from_slice(&self.x);
        y.extend_from_slice(&self.y);
        Dataset {
            n: self.n + w,
            q: self.q,
            x,
            y,
        }
    }
}

/// Block structure over `1..=n`: a leading block of length `n - p_n*m`
/// followed by `p_n` blocks of exactly `m`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub n: usize,
    pub p_n: usize,
    pub m: usize,
    /// 1-based inclusive `(start, end)` per block, in order.
    pub blocks: Vec<(usize, usize)>,
}

/// Builds the segmentation with `p_n` boundaries; every block must hold at
/// least `q + 1` observations.
pub fn make_segmentation(n: usize, p_n: usize, q: usize) -> Result<Segmentation> {
    if p_n == 0 {
        return Err(SeglineError::invalid_input("p_n must be >= 1"));
    }
    let m = n / (p_n + 1);
    if m < q + 1 {
        return Err(SeglineError::infeasible(format!(
            "n={n}, p_n={p_n} gives block length m={m} < q+1={}",
            q + 1
        )));
    }
    let first_end = n - p_n * m;
    let mut blocks = Vec::with_capacity(p_n + 1);
    blocks.push((1, first_end));
    for j in 2..=p_n + 1 {
        blocks.push((n - (p_n + 2 - j) * m + 1, n - (p_n + 1 - j) * m));
    }
    Ok(Segmentation { n, p_n, m, blocks })
}

impl Segmentation {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Inclusive 1-based range of block `j` (1-based).
    pub fn block(&self, j: usize) -> (usize, usize) {
        self.blocks[j - 1]
    }

    pub fn block_len(&self, j: usize) -> usize {
        let (s, e) = self.block(j);
        e - s + 1
    }

    /// Location of boundary `r` in `1..=p_n`: the last index of block `r`.
    pub fn boundary_location(&self, r: usize) -> usize {
        self.blocks[r - 1].1
    }

    /// Ratio of the first block length to `m` (the realized `c0`).
    pub fn first_block_ratio(&self) -> f64 {
        self.block_len(1) as f64 / self.m as f64
    }

    /// Block (1-based) containing index `i`.
    pub fn block_of(&self, i: usize) -> usize {
        let first_end = self.blocks[0].1;
        if i <= first_end {
            1
        } else {
            2 + (i - first_end - 1) / self.m
        }
    }

    /// Boundary index `r` attributed to a change at `a`: the number of block
    /// ends at or before `a`. A change at `a` (regime switch after `a`) then
    /// sits in `[end_r, end_{r+1} - 1]` and shows up in `d_r`; `r = 0` means
    /// the change lies strictly inside the first block.
    pub fn true_boundary_index(&self, a: usize) -> Result<usize> {
        if a <= 1 || a >= self.n {
            return Err(SeglineError::invalid_input(format!(
                "change location {a} outside (1, {})",
                self.n
            )));
        }
        let first_end = self.blocks[0].1;
        if a < first_end {
            return Ok(0);
        }
        Ok(((a - first_end) / self.m + 1).min(self.p_n))
    }

    /// Index range `[lo, hi]` attributed to boundary `r` by
    /// [`Segmentation::true_boundary_index`].
    pub fn boundary_attribution_range(&self, r: usize) -> (usize, usize) {
        let lo = if r == 0 { 2 } else { self.boundary_location(r) };
        let hi = if r == self.p_n {
            self.n - 1
        } else {
            self.boundary_location(r + 1) - 1
        };
        (lo, hi)
    }
}

/// Ground truth for simulated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangePointTruth {
    /// Strictly increasing 1-based locations; the regime changes after each.
    pub locations: Vec<usize>,
    /// Coefficient jump at each location.
    pub deltas: Vec<Vec<f64>>,
}

impl ChangePointTruth {
    pub fn none() -> Self {
        Self {
            locations: Vec::new(),
            deltas: Vec::new(),
        }
    }

    pub fn k0(&self) -> usize {
        self.locations.len()
    }

    /// Checks `1 < a_1 < ... < a_K < n`, nonzero jumps of dimension `q`, and
    /// `K <= k_upper`.
    pub fn validate(&self, n: usize, q: usize, k_upper: usize) -> Result<()> {
        if self.locations.len() != self.deltas.len() {
            return Err(SeglineError::invalid_input(
                "change locations and deltas differ in length",
            ));
        }
        if self.k0() > k_upper {
            return Err(SeglineError::invalid_input(format!(
                "{} changes exceed the upper bound {k_upper}",
                self.k0()
            )));
        }
        let mut prev = 1;
        for (k, (&a, d)) in self.locations.iter().zip(&self.deltas).enumerate() {
            if a <= prev || a >= n {
                return Err(SeglineError::invalid_input(format!(
                    "change {} at {a} must satisfy {prev} < a < {n}",
                    k + 1
                )));
            }
            if d.len() != q {
                return Err(SeglineError::invalid_input(format!(
                    "delta {} has dimension {}, expected {q}",
                    k + 1,
                    d.len()
                )));
            }
            if d.iter().all(|v| *v == 0.0) {
                return Err(SeglineError::invalid_input(format!("delta {} is zero", k + 1)));
            }
            prev = a;
        }
        Ok(())
    }
}

/// Detection algorithm identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Least-squares scan with chi-square tests.
    Ls,
    /// Least-squares scan with CUSUM tests.
    Cls,
    /// Adaptive LASSO with chi-square confirmation.
    Al,
    /// Adaptive LASSO with CUSUM confirmation.
    Cal,
    /// SCAD-penalized selection.
    Scad,
    /// MCP-penalized selection.
    Mcp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ls,
        Algorithm::Cls,
        Algorithm::Al,
        Algorithm::Cal,
        Algorithm::Scad,
        Algorithm::Mcp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ls => "ls",
            Algorithm::Cls => "cls",
            Algorithm::Al => "al",
            Algorithm::Cal => "cal",
            Algorithm::Scad => "scad",
            Algorithm::Mcp => "mcp",
        }
    }

    /// Conventional long name (LSMCPDA etc.).
    pub fn long_name(self) -> &'static str {
        match self {
            Algorithm::Ls => "LSMCPDA",
            Algorithm::Cls => "CLSMCPDA",
            Algorithm::Al => "ALMCPDA",
            Algorithm::Cal => "CALMCPDA",
            Algorithm::Scad => "SMCPDA",
            Algorithm::Mcp => "MMCPDA",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = SeglineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ls" | "lsmcpda" => Ok(Algorithm::Ls),
            "cls" | "clsmcpda" => Ok(Algorithm::Cls),
            "al" | "almcpda" => Ok(Algorithm::Al),
            "cal" | "calmcpda" => Ok(Algorithm::Cal),
            "scad" | "smcpda" => Ok(Algorithm::Scad),
            "mcp" | "mmcpda" => Ok(Algorithm::Mcp),
            other => Err(SeglineError::invalid_input(format!(
                "unknown algorithm '{other}' (expected ls, cls, al, cal, scad, mcp)"
            ))),
        }
    }
}

/// Side information collected during a detection run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Blocks (1-based) whose Gram matrix was rank deficient.
    pub rank_deficient_blocks: Vec<usize>,
    /// Boundaries whose test was skipped because a fit was degenerate.
    pub unresolvable_boundaries: Vec<usize>,
    /// Windows refined without the asymptotic CUSUM test (too short).
    pub cusum_fallbacks: usize,
    /// Boundaries selected by the screening step, if one ran.
    pub screened_boundaries: Vec<usize>,
    /// Penalty level used by the penalized stage, if one ran.
    pub lambda: Option<f64>,
    /// Solver sweeps for the penalized stage.
    pub solver_iterations: usize,
    /// Hits merged because they refined to within `m` of each other.
    pub merged_hits: usize,
    pub notes: Vec<String>,
}

/// Outcome of a detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub algorithm: Algorithm,
    pub k_hat: usize,
    /// Refined change locations, strictly increasing, each in `(1, n)`.
    pub locations: Vec<usize>,
    /// Flagged boundary indices before refinement.
    pub boundary_hits: Vec<usize>,
    /// RSS of the piecewise OLS refit on the detected regimes.
    pub rss: f64,
    pub runtime_s: f64,
    pub diagnostics: Diagnostics,
}
