// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single change-point CUSUM test on a window and split-RSS refinement.
//!
//! For a split `k` the statistic `T_k = S_kᵀ C_k⁻¹ C (C⁰_k)⁻¹ S_k` equals the
//! drop in residual sum of squares obtained by fitting the two sides of `k`
//! separately. `C_k` is accumulated forwards and `C⁰_k` backwards, so both
//! inverses only ever receive rank-one additions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::error::{Result, SeglineError};
use crate::ols::{block_design, least_squares};

/// Steps between full refactorizations of the running inverses.
/// Relative tolerance under which split statistics count as tied.
const TIE_TOL: f64 = 1e-10;

/// Inclusive 1-based window `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CusumWindow {
    pub start: usize,
    pub end: usize,
}

impl CusumWindow {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Window `[center - half, center + half]` clipped to `[1, n]`.
    pub fn around(center: usize, half: usize, n: usize) -> Self {
        Self {
            start: center.saturating_sub(half).max(1),
            end: (center + half).min(n),
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// Split statistics over a window.
#[derive(Clone, Debug, PartialEq)]
pub struct CusumProfile {
    pub window: CusumWindow,
    /// First split index `start + q`.
    pub first_k: usize,
    /// `T_k` for `k = first_k..=end - q`; `None` where a partial Gram is singular.
    pub values: Vec<Option<f64>>,
    /// Residual sum of squares of the full-window fit.
    pub rss_full: f64,
    pub rank_deficient: bool,
}

impl CusumProfile {
    pub fn skipped(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Smallest index attaining the maximum over `lo..=hi` (within a relative
    /// tie tolerance).
    fn argmax_in(&self, lo: usize, hi: usize) -> Option<(usize, f64)> {
        let idx = |k: usize| k - self.first_k;
        let best = (lo..=hi)
            .filter_map(|k| self.values[idx(k)].map(|t| (k, t)))
            .map(|(_, t)| t)
            .fold(f64::NEG_INFINITY, f64::max);
        if !best.is_finite() {
            return None;
        }
        let slack = TIE_TOL * (self.rss_full.abs() + best.abs()).max(f64::MIN_POSITIVE);
        (lo..=hi).find_map(|k| self.values[idx(k)].filter(|t| *t >= best - slack).map(|t| (k, t)))
    }
}

/// Result of the CUSUM test on one window.
#[derive(Clone, Debug, PartialEq)]
pub struct CusumOutcome {
    pub t: f64,
    pub k_hat: usize,
    /// Critical value already multiplied by `sigma2_window`.
    pub threshold: f64,
    pub reject: bool,
    pub sigma2_window: f64,
    pub skipped_splits: usize,
}

fn check_window(data: &Dataset, w: CusumWindow, min_len: usize) -> Result<()> {
    if w.start == 0 || w.end > data.n() || w.is_empty() {
        return Err(SeglineError::invalid_input(format!(
            "window [{}, {}] outside 1..={}",
            w.start,
            w.end,
            data.n()
        )));
    }
    if w.len() < min_len {
        return Err(SeglineError::invalid_input(format!(
            "window [{}, {}] holds {} observations; need at least {min_len}",
            w.start,
            w.end,
            w.len()
        )));
    }
    Ok(())
}

fn outer_add(m: &mut DMatrix<f64>, x: &[f64], sign: f64) {
    let q = x.len();
    for a in 0..q {
        for b in 0..q {
            m[(a, b)] += sign * x[a] * x[b];
        }
    }
}

/// Inverse of a symmetric positive definite matrix, or `None` when it is
/// numerically singular.
fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = m.diagonal().amax();
    if !(scale > 0.0) {
        return None;
    }
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let tiny = (1e-12 * scale).sqrt();
    if (0..m.nrows()).any(|j| l[(j, j)] <= tiny) {
        return None;
    }
    Some(chol.inverse())
}

/// Inverse of a Gram matrix accumulated one row at a time, refactored on
/// every row.
struct RunningInverse {
    gram: DMatrix<f64>,
    inv: Option<DMatrix<f64>>,
}

impl RunningInverse {
    fn new(q: usize) -> Self {
        Self {
            gram: DMatrix::zeros(q, q),
            inv: None,
        }
    }

    fn add(&mut self, x: &[f64]) {
        outer_add(&mut self.gram, x, 1.0);
        self.inv = spd_inverse(&self.gram);
    }
}

/// `T_k` for every admissible split of the window, by the recursive form.
pub fn cusum_profile(data: &Dataset, w: CusumWindow) -> Result<CusumProfile> {
    let q = data.q();
    check_window(data, w, 2 * q + 2)?;
    let (x, y) = block_design(data, w.start, w.end);
    let (beta, rank_deficient) = least_squares(&x, &y);
    let resid = &y - &x * &beta;
    let c_full = x.transpose() * &x;
    let len = w.len();
    let first_k = w.start + q;
    let last_k = w.end - q;
    let count = last_k + 1 - first_k;
    let row = |i: usize| data.row(w.start - 1 + i);

    // Backward: u_k = (C⁰_k)⁻¹ S_k with S_k = -Σ_{i>k} x_i e_i.
    let mut back: Vec<Option<DVector<f64>>> = vec![None; count];
    let mut right = RunningInverse::new(q);
    let mut s_right = DVector::<f64>::zeros(q);
    for i in (first_k + 1 - w.start..len).rev() {
        let xi = row(i);
        right.add(xi);
        for a in 0..q {
            s_right[a] += xi[a] * resid[i];
        }
        // Rows i.. are on the right of split k = i - 1 (0-based offsets).
        let k = w.start + i - 1;
        if k <= last_k {
            back[k - first_k] = right.inv.as_ref().map(|inv| -(inv * &s_right));
        }
    }

    let mut values = vec![None; count];
    let mut left = RunningInverse::new(q);
    let mut s_left = DVector::<f64>::zeros(q);
    for i in 0..=last_k - w.start {
        let xi = row(i);
        left.add(xi);
        for a in 0..q {
            s_left[a] += xi[a] * resid[i];
        }
        let k = w.start + i;
        if k < first_k {
            continue;
        }
        if let (Some(inv_l), Some(u)) = (left.inv.as_ref(), back[k - first_k].as_ref()) {
            let wv = inv_l * &s_left;
            let t = wv.dot(&(&c_full * u));
            values[k - first_k] = Some(t.max(0.0));
        }
    }
    Ok(CusumProfile {
        window: w,
        first_k,
        values,
        rss_full: resid.norm_squared(),
        rank_deficient,
    })
}

/// `(T, k_hat)`: the largest split statistic and its smallest maximizer.
pub fn cusum_statistic(data: &Dataset, w: CusumWindow) -> Result<(f64, usize)> {
    let prof = cusum_profile(data, w)?;
    let last = w.end - data.q();
    let (k, t) = prof.argmax_in(prof.first_k, last).ok_or_else(|| {
        SeglineError::numerical(format!(
            "every split of window [{}, {}] has a singular partial Gram",
            w.start, w.end
        ))
    })?;
    Ok((t, k))
}

/// Critical-value multiplier `b̃ + 2 ã log(-2 / log(1 - alpha))`.
pub fn cusum_threshold(n: usize, q: usize, alpha: f64) -> Result<f64> {
    if n <= 16 {
        return Err(SeglineError::invalid_input(format!(
            "CUSUM threshold needs a window longer than 16; got {n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SeglineError::invalid_input(format!(
            "alpha must lie in (0, 1); got {alpha}"
        )));
    }
    if q == 0 {
        return Err(SeglineError::invalid_input("q must be >= 1"));
    }
    let ll = (n as f64).ln().ln();
    let a = (2.0 * ll).sqrt();
    let b = 2.0 * ll + q as f64 * ll.ln() / 2.0 - ln_gamma(q as f64 / 2.0);
    let b_tilde = (b / a).powi(2);
    let a_tilde = b / (a * a);
    Ok(b_tilde + 2.0 * a_tilde * (-2.0 / (1.0 - alpha).ln()).ln())
}

/// Rejects "no change in the window" when `T > multiplier * rss_full / N`.
pub fn cusum_test(data: &Dataset, w: CusumWindow, alpha: f64) -> Result<CusumOutcome> {
    let mult = cusum_threshold(w.len(), data.q(), alpha)?;
    let prof = cusum_profile(data, w)?;
    let (k_hat, t) = prof
        .argmax_in(prof.first_k, w.end - data.q())
        .ok_or_else(|| SeglineError::numerical("no admissible split in window"))?;
    let sigma2 = prof.rss_full / w.len() as f64;
    let threshold = mult * sigma2;
    // Round-off floor so that exact fits never reject.
    let floor = 1e-9 * prof.rss_full.max(window_tss(data, w) * 1e-3);
    Ok(CusumOutcome {
        t,
        k_hat,
        threshold,
        reject: t > threshold && t > floor,
        sigma2_window: sigma2,
        skipped_splits: prof.skipped(),
    })
}

fn window_tss(data: &Dataset, w: CusumWindow) -> f64 {
    data.responses()[w.start - 1..w.end].iter().map(|v| v * v).sum()
}

/// Split point minimizing the summed OLS residuals of the two sides, with at
/// least `q + 1` observations per side. Returns the last index of the left
/// side; ties go to the smallest index.
pub fn refine_changepoint(data: &Dataset, window: (usize, usize)) -> Result<usize> {
    let q = data.q();
    let w = CusumWindow::new(window.0, window.1);
    check_window(data, w, 2 * (q + 1))?;
    let prof = cusum_profile(data, w)?;
    let lo = w.start + q;
    let hi = w.end - q - 1;
    if let Some((k, _)) = prof.argmax_in(lo, hi) {
        return Ok(k);
    }
    // Every partial Gram singular: fall back to fresh fits per split.
    let mut best = (f64::INFINITY, lo);
    for k in lo..=hi {
        let (xl, yl) = block_design(data, w.start, k);
        let (xr, yr) = block_design(data, k + 1, w.end);
        let (bl, _) = least_squares(&xl, &yl);
        let (br, _) = least_squares(&xr, &yr);
        let rss = (&yl - &xl * bl).norm_squared() + (&yr - &xr * br).norm_squared();
        if rss < best.0 {
            best = (rss, k);
        }
    }
    Ok(best.1)
}
