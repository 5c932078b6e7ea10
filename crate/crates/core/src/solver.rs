// SPDX-License-Identifier: MIT OR Apache-2.0

//! Penalized least squares on the cumulative segmented design.
//!
//! Group 0 holds the first-block coefficients and group `g >= 1` the jump at
//! boundary `g`. Row `i` in block `k` (0-based) has fitted value
//! `x_iᵀ (θ_0 + … + θ_k)`, so every product with the design reduces to
//! per-block Gram matrices and their suffix sums.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Segmentation};
use crate::error::{Result, SeglineError};
use crate::penalty::{mcp_derivative, mcp_value, scad_derivative, scad_value, soft_threshold};

/// Implicit cumulative design built from per-block sufficient statistics.
#[derive(Clone, Debug)]
pub struct SegmentedDesign {
    n: usize,
    q: usize,
    groups: usize,
    gram: Vec<f64>,
    xty: Vec<f64>,
    yty: Vec<f64>,
    sgram: Vec<f64>,
    sxty: Vec<f64>,
}

impl SegmentedDesign {
    pub fn new(data: &Dataset, seg: &Segmentation) -> Result<Self> {
        if seg.n != data.n() {
            return Err(SeglineError::invalid_input(format!(
                "segmentation covers {} observations, data has {}",
                seg.n,
                data.n()
            )));
        }
        let q = data.q();
        let groups = seg.num_blocks();
        let mut gram = vec![0.0; groups * q * q];
        let mut xty = vec![0.0; groups * q];
        let mut yty = vec![0.0; groups];
        for (k, &(s, e)) in seg.blocks.iter().enumerate() {
            let g = &mut gram[k * q * q..(k + 1) * q * q];
            let h = &mut xty[k * q..(k + 1) * q];
            for i in s - 1..e {
                let x = data.row(i);
                let y = data.response(i);
                for a in 0..q {
                    h[a] += x[a] * y;
                    for b in 0..q {
                        g[a * q + b] += x[a] * x[b];
                    }
                }
                yty[k] += y * y;
            }
        }
        Ok(Self::assemble(data.n(), q, gram, xty, yty))
    }

    /// Builds a design from explicit `(gram, xty, yty, len)` per block.
    pub fn from_blocks(blocks: &[(DMatrix<f64>, DVector<f64>, f64, usize)]) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| SeglineError::invalid_input("no blocks"))?;
        let q = first.1.len();
        let mut gram = Vec::new();
        let mut xty = Vec::new();
        let mut yty = Vec::new();
        let mut n = 0;
        for (g, h, yy, len) in blocks {
            if g.nrows() != q || g.ncols() != q || h.len() != q {
                return Err(SeglineError::invalid_input("inconsistent block dimensions"));
            }
            for a in 0..q {
                for b in 0..q {
                    gram.push(g[(a, b)]);
                }
            }
            xty.extend(h.iter());
            yty.push(*yy);
            n += len;
        }
        Ok(Self::assemble(n, q, gram, xty, yty))
    }

    fn assemble(n: usize, q: usize, gram: Vec<f64>, xty: Vec<f64>, yty: Vec<f64>) -> Self {
        let groups = yty.len();
        let mut sgram = gram.clone();
        let mut sxty = xty.clone();
        for k in (0..groups.saturating_sub(1)).rev() {
            for t in 0..q * q {
                sgram[k * q * q + t] += sgram[(k + 1) * q * q + t];
            }
            for t in 0..q {
                sxty[k * q + t] += sxty[(k + 1) * q + t];
            }
        }
        Self {
            n,
            q,
            groups,
            gram,
            xty,
            yty,
            sgram,
            sxty,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of coefficient groups, `p_n + 1`.
    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn dim(&self) -> usize {
        self.groups * self.q
    }

    fn sg(&self, g: usize) -> &[f64] {
        &self.sgram[g * self.q * self.q..(g + 1) * self.q * self.q]
    }

    fn blk(&self, k: usize) -> &[f64] {
        &self.gram[k * self.q * self.q..(k + 1) * self.q * self.q]
    }

    /// `X̃ᵀ y` laid out group by group.
    pub fn xty_cumulative(&self) -> &[f64] {
        &self.sxty
    }

    /// Entry `((g, j), (h, l))` of `X̃ᵀ X̃`.
    pub fn gram_entry(&self, g: usize, j: usize, h: usize, l: usize) -> f64 {
        self.sg(g.max(h))[j * self.q + l]
    }

    /// Per-block coefficients `B_k = θ_0 + … + θ_k`.
    pub fn block_coefficients(&self, theta: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut b = vec![0.0; self.dim()];
        let mut acc = vec![0.0; q];
        for k in 0..self.groups {
            for j in 0..q {
                acc[j] += theta[k * q + j];
                b[k * q + j] = acc[j];
            }
        }
        b
    }

    /// Residual sum of squares at `theta`, clamped at zero.
    pub fn rss(&self, theta: &[f64]) -> f64 {
        let q = self.q;
        let b = self.block_coefficients(theta);
        let mut total = 0.0;
        for k in 0..self.groups {
            let bk = &b[k * q..(k + 1) * q];
            let g = self.blk(k);
            let h = &self.xty[k * q..(k + 1) * q];
            let mut quad = 0.0;
            for a in 0..q {
                let mut row = 0.0;
                for c in 0..q {
                    row += g[a * q + c] * bk[c];
                }
                quad += bk[a] * row;
            }
            let lin: f64 = h.iter().zip(bk).map(|(x, y)| x * y).sum();
            total += self.yty[k] - 2.0 * lin + quad;
        }
        total.max(0.0)
    }

    /// Half the negative RSS gradient, `X̃ᵀ (y - X̃ θ)`, per coordinate.
    pub fn correlations(&self, theta: &[f64]) -> Vec<f64> {
        let (q, groups) = (self.q, self.groups);
        let mut out = vec![0.0; self.dim()];
        let mut tail = vec![0.0; q];
        for h in 1..groups {
            mat_vec_add(self.sg(h), &theta[h * q..(h + 1) * q], &mut tail, q, 1.0);
        }
        let mut prefix = vec![0.0; q];
        for g in 0..groups {
            for j in 0..q {
                prefix[j] += theta[g * q + j];
            }
            let r = &mut out[g * q..(g + 1) * q];
            r.copy_from_slice(&self.sxty[g * q..(g + 1) * q]);
            mat_vec_add(self.sg(g), &prefix, r, q, -1.0);
            for j in 0..q {
                r[j] -= tail[j];
            }
            if g + 1 < groups {
                mat_vec_add(self.sg(g + 1), &theta[(g + 1) * q..(g + 2) * q], &mut tail, q, -1.0);
            }
        }
        out
    }
}

/// `out += sign * M v` for a row-major `q × q` matrix.
fn mat_vec_add(m: &[f64], v: &[f64], out: &mut [f64], q: usize, sign: f64) {
    for a in 0..q {
        let mut s = 0.0;
        for b in 0..q {
            s += m[a * q + b] * v[b];
        }
        out[a] += sign * s;
    }
}

/// Dense cumulative design, for verification on small problems.
pub fn dense_design(data: &Dataset, seg: &Segmentation) -> DMatrix<f64> {
    let q = data.q();
    let mut x = DMatrix::zeros(data.n(), seg.num_blocks() * q);
    for i in 0..data.n() {
        let k = seg.block_of(i + 1) - 1;
        for g in 0..=k {
            for j in 0..q {
                x[(i, g * q + j)] = data.row(i)[j];
            }
        }
    }
    x
}

/// Penalty family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    WeightedL1,
    Scad,
    Mcp,
}

/// Penalty parameters. `weights` are per group and used by the weighted-L1
/// kind only: `0` leaves a group unpenalized, `inf` pins it to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub gamma: f64,
    pub nu: f64,
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    pub fn weighted_l1(lambda: f64, weights: Vec<f64>) -> Self {
        Self {
            kind: PenaltyKind::WeightedL1,
            lambda,
            gamma: f64::NAN,
            nu: 1.0,
            weights,
        }
    }

    pub fn scad(lambda: f64, gamma: f64) -> Self {
        Self {
            kind: PenaltyKind::Scad,
            lambda,
            gamma,
            nu: f64::NAN,
            weights: Vec::new(),
        }
    }

    pub fn mcp(lambda: f64, gamma: f64) -> Self {
        Self {
            kind: PenaltyKind::Mcp,
            lambda,
            gamma,
            nu: f64::NAN,
            weights: Vec::new(),
        }
    }

    pub fn validate(&self, groups: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SeglineError::invalid_input(format!(
                "lambda must be finite and >= 0; got {}",
                self.lambda
            )));
        }
        match self.kind {
            PenaltyKind::WeightedL1 => {
                if self.weights.len() != groups {
                    return Err(SeglineError::invalid_input(format!(
                        "expected {groups} group weights, got {}",
                        self.weights.len()
                    )));
                }
                if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) {
                    return Err(SeglineError::invalid_input("weights must be nonnegative"));
                }
                if !(self.nu > 0.0) {
                    return Err(SeglineError::invalid_input("nu must be positive"));
                }
            }
            PenaltyKind::Scad if !(self.gamma > 2.0) => {
                return Err(SeglineError::invalid_input("SCAD requires gamma > 2"));
            }
            PenaltyKind::Mcp if !(self.gamma > 1.0) => {
                return Err(SeglineError::invalid_input("MCP requires gamma > 1"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Adaptive weights `1 / |d|_1^nu` from initial jump estimates; a zero
/// estimate yields an infinite weight and an infinite estimate a zero weight.
pub fn adaptive_weights(initial: &[DVector<f64>], nu: f64) -> Vec<f64> {
    initial
        .iter()
        .map(|d| {
            let norm = d.iter().map(|v| v.abs()).sum::<f64>();
            if norm == 0.0 {
                f64::INFINITY
            } else if norm.is_infinite() {
                0.0
            } else {
                norm.powf(-nu)
            }
        })
        .collect()
}

/// Iteration limits and tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_sweeps: usize,
    pub tol: f64,
    pub max_outer: usize,
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            tol: 1e-6,
            max_outer: 200,
            record_trace: false,
        }
    }
}

/// Outcome of a penalized solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Group-major coefficients, `q` per group.
    pub theta_hat: Vec<f64>,
    /// Largest coordinate-wise proximal step, in coefficient units.
    pub kkt_residual: f64,
    /// Coordinate-descent sweeps, summed over reweighting rounds.
    pub iterations: usize,
    pub objective: f64,
    pub rss: f64,
    /// Groups with a nonzero coefficient.
    pub active_groups: Vec<usize>,
    /// Objective after every sweep when tracing is enabled.
    pub trace: Vec<f64>,
}

impl SolveReport {
    pub fn group(&self, g: usize, q: usize) -> &[f64] {
        &self.theta_hat[g * q..(g + 1) * q]
    }

    pub fn nonzeros(&self) -> usize {
        self.theta_hat.iter().filter(|v| **v != 0.0).count()
    }
}

fn active_groups(theta: &[f64], q: usize) -> Vec<usize> {
    theta
        .chunks(q)
        .enumerate()
        .filter(|(_, c)| c.iter().any(|v| *v != 0.0))
        .map(|(g, _)| g)
        .collect()
}

/// Weighted-L1 objective `rss + sum_g pen_g |θ_g|_1`.
fn l1_objective(design: &SegmentedDesign, theta: &[f64], pen: &[f64]) -> f64 {
    let q = design.q;
    let mut total = design.rss(theta);
    for (g, p) in pen.iter().enumerate() {
        if p.is_finite() && *p > 0.0 {
            total += p * theta[g * q..(g + 1) * q].iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    total
}

struct L1Outcome {
    theta: Vec<f64>,
    kkt: f64,
    sweeps: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Coordinate-descent core: minimizes `rss + sum_g pen_g |θ_g|_1` where an
/// infinite `pen_g` pins group `g` at zero.
fn l1_core(design: &SegmentedDesign, pen: &[f64], opts: &SolverOptions, warm: Option<&[f64]>) -> L1Outcome {
    let (q, groups) = (design.q, design.groups);
    let mut theta = match warm {
        Some(w) if w.len() == design.dim() => w.to_vec(),
        _ => vec![0.0; design.dim()],
    };
    for g in 0..groups {
        if pen[g].is_infinite() {
            theta[g * q..(g + 1) * q].fill(0.0);
        }
    }
    let mut trace = Vec::new();
    let mut kkt = kkt_residual(design, &theta, pen);
    if kkt <= opts.tol {
        return L1Outcome {
            theta,
            kkt,
            sweeps: 0,
            converged: true,
            trace,
        };
    }
    let mut tail = vec![0.0; q];
    let mut prefix = vec![0.0; q];
    let mut r = vec![0.0; q];
    for sweep in 1..=opts.max_sweeps {
        tail.fill(0.0);
        for h in 1..groups {
            mat_vec_add(design.sg(h), &theta[h * q..(h + 1) * q], &mut tail, q, 1.0);
        }
        prefix.fill(0.0);
        for g in 0..groups {
            let sg = design.sg(g);
            if pen[g].is_finite() {
                for j in 0..q {
                    prefix[j] += theta[g * q + j];
                }
                r.copy_from_slice(&design.sxty[g * q..(g + 1) * q]);
                mat_vec_add(sg, &prefix, &mut r, q, -1.0);
                for j in 0..q {
                    r[j] -= tail[j];
                }
                for j in 0..q {
                    let a = sg[j * q + j];
                    if a <= 0.0 {
                        continue;
                    }
                    let old = theta[g * q + j];
                    let rho = r[j] + a * old;
                    let new = soft_threshold(rho, pen[g] / 2.0) / a;
                    let delta = new - old;
                    if delta != 0.0 {
                        for c in 0..q {
                            r[c] -= sg[c * q + j] * delta;
                        }
                        theta[g * q + j] = new;
                        prefix[j] += delta;
                    }
                }
            }
            if g + 1 < groups {
                mat_vec_add(design.sg(g + 1), &theta[(g + 1) * q..(g + 2) * q], &mut tail, q, -1.0);
            }
        }
        let mut objective = l1_objective(design, &theta, pen);
        if let Some(polished) = polish(design, &theta, pen) {
            let obj = l1_objective(design, &polished, pen);
            if obj <= objective + 1e-12 * objective.abs().max(1.0) {
                theta = polished;
                objective = obj;
            }
        }
        if opts.record_trace {
            trace.push(objective);
        }
        kkt = kkt_residual(design, &theta, pen);
        if kkt <= opts.tol {
            return L1Outcome {
                theta,
                kkt,
                sweeps: sweep,
                converged: true,
                trace,
            };
        }
    }
    L1Outcome {
        theta,
        kkt,
        sweeps: opts.max_sweeps,
        converged: false,
        trace,
    }
}

/// Largest distance any single coordinate update would move the iterate.
fn kkt_residual(design: &SegmentedDesign, theta: &[f64], pen: &[f64]) -> f64 {
    let q = design.q;
    let corr = design.correlations(theta);
    let mut worst: f64 = 0.0;
    for g in 0..design.groups {
        if pen[g].is_infinite() {
            continue;
        }
        let sg = design.sg(g);
        for j in 0..q {
            let a = sg[j * q + j];
            if a <= 0.0 {
                continue;
            }
            let c = g * q + j;
            let target = soft_threshold(corr[c] + a * theta[c], pen[g] / 2.0) / a;
            worst = worst.max((target - theta[c]).abs());
        }
    }
    worst
}

/// Exact minimizer on the current support with signs held fixed, found by
/// eliminating blocks from last to first. Returns `None` when the sign
/// pattern changes or a reduced system is singular.
fn polish(design: &SegmentedDesign, theta: &[f64], pen: &[f64]) -> Option<Vec<f64>> {
    let (q, groups) = (design.q, design.groups);
    // Free coordinates: unpenalized ones, and penalized ones currently nonzero.
    let free: Vec<Vec<usize>> = (0..groups)
        .map(|g| {
            (0..q)
                .filter(|&j| pen[g].is_finite() && (pen[g] == 0.0 || theta[g * q + j] != 0.0))
                .collect()
        })
        .collect();
    // Linear tilt u_g = pen_g/2 * sign(θ_g) moves onto the block terms.
    let u = |g: usize, j: usize| -> f64 {
        if g >= groups || !pen[g].is_finite() || pen[g] == 0.0 {
            0.0
        } else {
            0.5 * pen[g] * theta[g * q + j].signum() * (theta[g * q + j] != 0.0) as u8 as f64
        }
    };
    let mut qmat: Vec<DMatrix<f64>> = vec![DMatrix::zeros(q, q); groups];
    let mut bvec: Vec<DVector<f64>> = vec![DVector::zeros(q); groups];
    // Accumulated value function of the blocks after k, in terms of B_k.
    let mut carry_q = DMatrix::<f64>::zeros(q, q);
    let mut carry_b = DVector::<f64>::zeros(q);
    for k in (0..groups).rev() {
        let g = design.blk(k);
        let mut qk = DMatrix::from_row_slice(q, q, g) + &carry_q;
        let mut bk = DVector::from_fn(q, |j, _| design.xty[k * q + j] - (u(k, j) - u(k + 1, j)));
        bk += &carry_b;
        qmat[k] = qk.clone();
        bvec[k] = bk.clone();
        if k == 0 {
            break;
        }
        // Minimize over the free coordinates of θ_k given B_{k-1}.
        let f = &free[k];
        if f.is_empty() {
            carry_q = qk;
            carry_b = bk;
            continue;
        }
        let qff = DMatrix::from_fn(f.len(), f.len(), |a, b| qk[(f[a], f[b])]);
        let qaf = DMatrix::from_fn(q, f.len(), |a, b| qk[(a, f[b])]);
        let bf = DVector::from_fn(f.len(), |a, _| bk[f[a]]);
        let chol = qff.cholesky()?;
        let solved_q = chol.solve(&qaf.transpose());
        let solved_b = chol.solve(&bf);
        qk -= &qaf * solved_q;
        bk -= &qaf * solved_b;
        carry_q = qk;
        carry_b = bk;
    }
    let mut out = vec![0.0; design.dim()];
    let mut prev = DVector::<f64>::zeros(q);
    for k in 0..groups {
        let f = &free[k];
        if f.is_empty() {
            continue;
        }
        let qk = &qmat[k];
        let qff = DMatrix::from_fn(f.len(), f.len(), |a, b| qk[(f[a], f[b])]);
        let qp = qk * &prev;
        let rhs = DVector::from_fn(f.len(), |a, _| bvec[k][f[a]] - qp[f[a]]);
        let z = qff.cholesky()?.solve(&rhs);
        for (a, &j) in f.iter().enumerate() {
            let old = theta[k * q + j];
            if pen[k] > 0.0 && z[a].signum() != old.signum() {
                return None;
            }
            if !z[a].is_finite() {
                return None;
            }
            out[k * q + j] = z[a];
            prev[j] += z[a];
        }
    }
    Some(out)
}

/// Minimizes `||y - X̃θ||² + λ Σ_g w_g |θ_g|_1`.
pub fn solve_weighted_l1(
    design: &SegmentedDesign,
    spec: &PenaltySpec,
    opts: &SolverOptions,
    warm: Option<&[f64]>,
) -> Result<SolveReport> {
    if spec.kind != PenaltyKind::WeightedL1 {
        return Err(SeglineError::invalid_input(
            "solve_weighted_l1 needs a weighted-L1 spec",
        ));
    }
    spec.validate(design.groups)?;
    let pen: Vec<f64> = spec
        .weights
        .iter()
        .map(|w| {
            if w.is_infinite() {
                f64::INFINITY
            } else {
                spec.lambda * w
            }
        })
        .collect();
    let out = l1_core(design, &pen, opts, warm);
    if !out.converged {
        return Err(SeglineError::numerical(format!(
            "weighted-L1 solver stopped after {} sweeps with KKT residual {:.3e}",
            out.sweeps, out.kkt
        )));
    }
    Ok(SolveReport {
        objective: l1_objective(design, &out.theta, &pen),
        rss: design.rss(&out.theta),
        active_groups: active_groups(&out.theta, design.q),
        kkt_residual: out.kkt,
        iterations: out.sweeps,
        theta_hat: out.theta,
        trace: out.trace,
    })
}

fn group_l1(theta: &[f64], q: usize) -> impl Iterator<Item = f64> + '_ {
    theta.chunks(q).map(|c| c.iter().map(|v| v.abs()).sum())
}

/// `rss + n Σ_g p(|θ_g|_1)` for SCAD or MCP.
pub fn group_penalized_objective(design: &SegmentedDesign, theta: &[f64], spec: &PenaltySpec) -> f64 {
    let n = design.n as f64;
    let pen: f64 = group_l1(theta, design.q)
        .map(|x| match spec.kind {
            PenaltyKind::Scad => scad_value(x, spec.lambda, spec.gamma),
            _ => mcp_value(x, spec.lambda, spec.gamma),
        })
        .sum();
    design.rss(theta) + n * pen
}

fn lla_weights(design: &SegmentedDesign, theta: &[f64], spec: &PenaltySpec) -> Vec<f64> {
    let n = design.n as f64;
    group_l1(theta, design.q)
        .map(|x| {
            n * match spec.kind {
                PenaltyKind::Scad => scad_derivative(x, spec.lambda, spec.gamma),
                _ => mcp_derivative(x, spec.lambda, spec.gamma),
            }
        })
        .collect()
}

/// Stationary point of `||y - X̃θ||² + n Σ_g p(|θ_g|_1)` for SCAD or MCP by
/// local linear approximation, starting from the least-squares fit of the
/// first group alone.
pub fn solve_group_penalized(
    design: &SegmentedDesign,
    spec: &PenaltySpec,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    if spec.kind == PenaltyKind::WeightedL1 {
        return Err(SeglineError::invalid_input("solve_group_penalized needs SCAD or MCP"));
    }
    spec.validate(design.groups)?;
    let q = design.q;
    let mut theta = support_refit(design, &[0]).unwrap_or_else(|| vec![0.0; design.dim()]);
    let mut sweeps = 0;
    let mut trace = Vec::new();
    for _ in 0..opts.max_outer {
        let pen = lla_weights(design, &theta, spec);
        let out = l1_core(design, &pen, opts, Some(&theta));
        sweeps += out.sweeps;
        trace.extend(out.trace);
        if !out.converged {
            return Err(SeglineError::numerical(format!(
                "reweighted subproblem stopped after {} sweeps with KKT residual {:.3e}",
                out.sweeps, out.kkt
            )));
        }
        let change = theta
            .iter()
            .zip(&out.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        theta = out.theta;
        let pen_now = lla_weights(design, &theta, spec);
        let kkt = kkt_residual(design, &theta, &pen_now);
        if change <= opts.tol && kkt <= opts.tol {
            return Ok(SolveReport {
                objective: group_penalized_objective(design, &theta, spec),
                rss: design.rss(&theta),
                active_groups: active_groups(&theta, q),
                kkt_residual: kkt,
                iterations: sweeps,
                theta_hat: theta,
                trace,
            });
        }
    }
    let pen_now = lla_weights(design, &theta, spec);
    Err(SeglineError::numerical(format!(
        "reweighting did not settle in {} rounds; KKT residual {:.3e}",
        opts.max_outer,
        kkt_residual(design, &theta, &pen_now)
    )))
}

/// Smallest `λ` at which every penalized group is zero. Unpenalized groups
/// are fitted first.
pub fn lambda_max(design: &SegmentedDesign, weights: &[f64]) -> f64 {
    let q = design.q;
    let pen: Vec<f64> = weights
        .iter()
        .map(|w| if *w == 0.0 { 0.0 } else { f64::INFINITY })
        .collect();
    let base = if pen.contains(&0.0) {
        polish(design, &vec![0.0; design.dim()], &pen).unwrap_or_else(|| vec![0.0; design.dim()])
    } else {
        vec![0.0; design.dim()]
    };
    let corr = design.correlations(&base);
    let mut lmax: f64 = 0.0;
    for (g, w) in weights.iter().enumerate() {
        if *w > 0.0 && w.is_finite() {
            for j in 0..q {
                lmax = lmax.max(2.0 * corr[g * q + j].abs() / w);
            }
        }
    }
    lmax
}

/// `count` log-spaced values from `ratio * lmax` up to `lmax`, descending.
pub fn lambda_grid(lmax: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count <= 1 || lmax <= 0.0 {
        return vec![lmax];
    }
    let (hi, lo) = (lmax.ln(), (lmax * ratio).ln());
    (0..count)
        .map(|i| (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// `n log(rss / n) + k log n`.
pub fn bic(rss: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (rss.max(f64::MIN_POSITIVE) / n).ln() + k as f64 * n.ln()
}

/// Residual fit scored by the information criterion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BicRss {
    /// RSS of the penalized fit; `k` counts its nonzero coefficients.
    Penalized,
    /// RSS of the unpenalized least-squares fit on the active groups; `k`
    /// counts their coefficients.
    #[default]
    Refit,
}

/// Unpenalized least-squares coefficients using only `groups`; `None` if
/// the restricted design is singular.
pub fn support_refit(design: &SegmentedDesign, groups: &[usize]) -> Option<Vec<f64>> {
    let mut pen = vec![f64::INFINITY; design.groups];
    for &g in groups {
        pen[g] = 0.0;
    }
    polish(design, &vec![0.0; design.dim()], &pen)
}

/// RSS of [`support_refit`].
pub fn support_refit_rss(design: &SegmentedDesign, groups: &[usize]) -> Option<f64> {
    support_refit(design, groups).map(|t| design.rss(&t))
}

/// Solves along `grid` (largest first, warm started) and keeps the BIC
/// minimizer; ties go to the larger `λ`.
pub fn select_lambda_bic(
    design: &SegmentedDesign,
    grid: &[f64],
    weights: &[f64],
    nu: f64,
    opts: &SolverOptions,
) -> Result<(f64, SolveReport)> {
    select_lambda_bic_with(design, grid, weights, nu, opts, BicRss::Penalized)
}

/// [`select_lambda_bic`] with a choice of scored fit.
pub fn select_lambda_bic_with(
    design: &SegmentedDesign,
    grid: &[f64],
    weights: &[f64],
    nu: f64,
    opts: &SolverOptions,
    mode: BicRss,
) -> Result<(f64, SolveReport)> {
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(SeglineError::invalid_input("lambda grid must be nonempty and finite"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<(f64, f64, SolveReport)> = None;
    let mut warm: Option<Vec<f64>> = None;
    for &lambda in &sorted {
        let mut spec = PenaltySpec::weighted_l1(lambda, weights.to_vec());
        spec.nu = nu;
        match solve_weighted_l1(design, &spec, opts, warm.as_deref()) {
            Ok(rep) => {
                let score = match mode {
                    BicRss::Penalized => bic(rep.rss, design.n, rep.nonzeros()),
                    BicRss::Refit => {
                        let rss = support_refit_rss(design, &rep.active_groups).unwrap_or(rep.rss);
                        bic(rss, design.n, rep.active_groups.len() * design.q)
                    }
                };
                warm = Some(rep.theta_hat.clone());
                if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
                    best = Some((lambda, score, rep));
                }
            }
            Err(e) => log::warn!("lambda {lambda:.4e} skipped: {e}"),
        }
    }
    best.map(|(l, _, r)| (l, r))
        .ok_or_else(|| SeglineError::numerical("every lambda on the grid failed"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_segmentation;
    use crate::ols::segment_ols;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(n: usize, q: usize, seed: u64, shift_at: Option<usize>) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 1..=n {
            let mut row = vec![1.0];
            row.extend((1..q).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)));
            let mut mean: f64 = row.iter().sum();
            if shift_at.is_some_and(|a| i > a) {
                mean += 3.0 * row[0];
            }
            y.push(mean + 0.5 * rng.sample::<f64, _>(StandardNormal));
            rows.push(row);
        }
        Dataset::from_rows(&rows, y).unwrap()
    }

    #[test]
    fn implicit_products_match_dense_design() {
        let data = random_data(137, 2, 1, None);
        let seg = make_segmentation(137, 5, 2).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let x = dense_design(&data, &seg);
        // Group g spans rows from the start of block g+1 onward.
        for g in 0..6 {
            let start = seg.block(g + 1).0;
            for i in 0..137 {
                for j in 0..2 {
                    let expect = if i + 1 >= start { data.row(i)[j] } else { 0.0 };
                    assert_eq!(x[(i, g * 2 + j)], expect);
                }
            }
        }
        let y = DVector::from_column_slice(data.responses());
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        for a in 0..12 {
            assert_abs_diff_eq!(xty[a], design.xty_cumulative()[a], epsilon = 1e-9);
            for b in 0..12 {
                assert_abs_diff_eq!(
                    xtx[(a, b)],
                    design.gram_entry(a / 2, a % 2, b / 2, b % 2),
                    epsilon = 1e-9
                );
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta: Vec<f64> = (0..12).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let t = DVector::from_column_slice(&theta);
        let resid = &y - &x * &t;
        assert_abs_diff_eq!(design.rss(&theta), resid.norm_squared(), epsilon = 1e-8);
        let corr = x.transpose() * resid;
        for (a, b) in corr.iter().zip(design.correlations(&theta)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_lambda_gives_blockwise_ols() {
        let data = random_data(120, 3, 3, Some(60));
        let seg = make_segmentation(120, 4, 3).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let spec = PenaltySpec::weighted_l1(0.0, vec![1.0; 5]);
        let rep = solve_weighted_l1(&design, &spec, &SolverOptions::default(), None).unwrap();
        let b = design.block_coefficients(&rep.theta_hat);
        for k in 0..5 {
            let fit = segment_ols(&data, seg.block(k + 1)).unwrap();
            for j in 0..3 {
                assert_abs_diff_eq!(b[k * 3 + j], fit.beta_hat[j], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn large_lambda_kills_penalized_groups() {
        let data = random_data(100, 2, 4, Some(50));
        let seg = make_segmentation(100, 4, 2).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let mut weights = vec![1.0; 5];
        weights[0] = 0.0;
        let lmax = lambda_max(&design, &weights);
        let spec = PenaltySpec::weighted_l1(lmax * 1.001, weights.clone());
        let rep = solve_weighted_l1(&design, &spec, &SolverOptions::default(), None).unwrap();
        assert_eq!(rep.active_groups, vec![0]);
        let spec = PenaltySpec::weighted_l1(lmax * 0.9, weights);
        let rep = solve_weighted_l1(&design, &spec, &SolverOptions::default(), None).unwrap();
        assert!(rep.active_groups.len() > 1);
    }

    #[test]
    fn unit_column_soft_threshold() {
        let blocks = vec![(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0), 1.0, 1)];
        let design = SegmentedDesign::from_blocks(&blocks).unwrap();
        let spec = PenaltySpec::weighted_l1(1.0, vec![1.0]);
        let rep = solve_weighted_l1(&design, &spec, &SolverOptions::default(), None).unwrap();
        assert_abs_diff_eq!(rep.theta_hat[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pinned_group_stays_zero() {
        let data = random_data(100, 1, 5, Some(50));
        let seg = make_segmentation(100, 3, 1).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let spec = PenaltySpec::weighted_l1(0.1, vec![0.0, f64::INFINITY, 1.0, 1.0]);
        let rep = solve_weighted_l1(&design, &spec, &SolverOptions::default(), None).unwrap();
        assert_eq!(rep.theta_hat[1], 0.0);
        assert!(rep.kkt_residual <= 1e-6);
    }

    #[test]
    fn objective_decreases_across_sweeps() {
        let data = random_data(400, 3, 6, Some(210));
        let seg = make_segmentation(400, 7, 3).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let spec = PenaltySpec::weighted_l1(5.0, vec![1.0; 8]);
        let opts = SolverOptions {
            record_trace: true,
            ..Default::default()
        };
        let rep = solve_weighted_l1(&design, &spec, &opts, None).unwrap();
        for w in rep.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
        }
        assert!(rep.kkt_residual <= 1e-6);
    }

    #[test]
    fn scad_objective_recomputes() {
        let data = random_data(300, 3, 8, Some(150));
        let seg = make_segmentation(300, 5, 3).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let spec = PenaltySpec::scad(0.05, 3.7);
        let rep = solve_group_penalized(&design, &spec, &SolverOptions::default()).unwrap();
        let q = 3;
        let pen: f64 = (0..6)
            .map(|g| scad_value(rep.group(g, q).iter().map(|v| v.abs()).sum(), 0.05, 3.7))
            .sum();
        assert_abs_diff_eq!(rep.objective, rep.rss + 300.0 * pen, epsilon = 1e-8);
        assert!(rep.kkt_residual <= 1e-6);
    }

    #[test]
    fn group_penalized_zero_lambda_is_ols() {
        let data = random_data(120, 2, 9, None);
        let seg = make_segmentation(120, 3, 2).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let rep = solve_group_penalized(&design, &PenaltySpec::mcp(0.0, 2.4), &SolverOptions::default()).unwrap();
        let b = design.block_coefficients(&rep.theta_hat);
        for k in 0..4 {
            let fit = segment_ols(&data, seg.block(k + 1)).unwrap();
            for j in 0..2 {
                assert_abs_diff_eq!(b[k * 2 + j], fit.beta_hat[j], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn grid_helpers() {
        let g = lambda_grid(2.0, 50, 1e-4);
        assert_eq!(g.len(), 50);
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[49], 2e-4, epsilon = 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        let data = random_data(100, 1, 10, None);
        let seg = make_segmentation(100, 3, 1).unwrap();
        let design = SegmentedDesign::new(&data, &seg).unwrap();
        let (l, _) = select_lambda_bic(&design, &[0.7], &[1.0; 4], 1.0, &SolverOptions::default()).unwrap();
        assert_eq!(l, 0.7);
        assert!(select_lambda_bic(&design, &[], &[1.0; 4], 1.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn adaptive_weight_edge_cases() {
        let w = adaptive_weights(
            &[
                DVector::from_vec(vec![0.0, 0.0]),
                DVector::from_vec(vec![f64::INFINITY, 1.0]),
                DVector::from_vec(vec![1.0, -1.0]),
            ],
            1.0,
        );
        assert_eq!(w, vec![f64::INFINITY, 0.0, 0.5]);
    }

    #[test]
    fn spec_validation() {
        assert!(PenaltySpec::scad(0.1, 2.0).validate(3).is_err());
        assert!(PenaltySpec::mcp(0.1, 1.0).validate(3).is_err());
        assert!(PenaltySpec::weighted_l1(0.1, vec![1.0; 2]).validate(3).is_err());
        assert!(PenaltySpec::weighted_l1(-1.0, vec![1.0; 3]).validate(3).is_err());
        assert!(PenaltySpec::weighted_l1(0.1, vec![1.0, -1.0, 1.0]).validate(3).is_err());
    }
}
