// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sequential least-squares scans over adjacent block estimates.

use crate::cusum::{cusum_test, CusumWindow};
use crate::data::{Algorithm, Dataset, DetectionResult, Diagnostics};
use crate::error::Result;
use crate::ols::{delta_test_pair, delta_test_single};
use crate::solver::PenaltyKind;

use super::penalized::concave_deltas;

use super::{
    assemble, clip_window, finish, prepare, screen_boundaries, DetectorConfig, Hit, Prepared, Stages, Step2Logic,
    TestBackend,
};

/// Minimum window length accepted by the CUSUM threshold.
const CUSUM_MIN_LEN: usize = 17;

enum Verdict {
    Significant,
    NotSignificant,
    Untestable,
}

struct Scan<'a> {
    data: &'a Dataset,
    prep: &'a Prepared,
    config: &'a DetectorConfig,
    backend: TestBackend,
}

impl Scan<'_> {
    fn span(&self, first: usize, last: usize) -> CusumWindow {
        CusumWindow::new(self.prep.seg.block(first).0, self.prep.seg.block(last).1)
    }

    fn cusum(&self, w: CusumWindow, diag: &mut Diagnostics) -> Result<(Verdict, Option<usize>)> {
        if w.len() < CUSUM_MIN_LEN.max(2 * self.data.q() + 2) {
            diag.cusum_fallbacks += 1;
            return Ok((Verdict::Untestable, None));
        }
        let out = cusum_test(self.data, w, self.config.alpha)?;
        let v = if out.reject {
            Verdict::Significant
        } else {
            Verdict::NotSignificant
        };
        Ok((v, Some(out.k_hat)))
    }

    /// Test of `d_i = 0`.
    fn single(&self, i: usize, diag: &mut Diagnostics) -> Result<Verdict> {
        match self.backend {
            TestBackend::ChiSquare => {
                if self.prep.est.fits[i].rank_deficient {
                    diag.unresolvable_boundaries.push(i);
                    return Ok(Verdict::Untestable);
                }
                let t = delta_test_single(
                    self.prep.est.d(i),
                    self.prep.est.gram(i + 1),
                    self.prep.sigma2,
                    self.config.alpha,
                    self.config.wald_normalization,
                )?;
                Ok(if t.significant {
                    Verdict::Significant
                } else {
                    Verdict::NotSignificant
                })
            }
            TestBackend::Cusum => Ok(self.cusum(self.span(i, i + 1), diag)?.0),
        }
    }

    /// Test of `d_{i+1} + d_{i+2} = 0`; returns the verdict and the window
    /// in which a flagged change is sought.
    fn pair(&self, i: usize, diag: &mut Diagnostics) -> Result<(Verdict, (usize, usize))> {
        let seg = &self.prep.seg;
        let n = seg.n;
        let m = seg.m as isize;
        let hit = seg.boundary_location(i + 1) as isize;
        match self.backend {
            TestBackend::ChiSquare => {
                let pad = self.data.q() as isize + 1;
                let win = clip_window(hit - m, hit + 2 * m + pad, n);
                if self.prep.est.fits[i].rank_deficient {
                    diag.unresolvable_boundaries.push(i + 1);
                    return Ok((Verdict::Untestable, win));
                }
                let sum = self.prep.est.d(i + 1) + self.prep.est.d(i + 2);
                let t = delta_test_pair(
                    &sum,
                    self.prep.est.gram(i + 1),
                    self.prep.sigma2,
                    self.config.alpha,
                    self.config.wald_normalization,
                )?;
                let v = if t.significant {
                    Verdict::Significant
                } else {
                    Verdict::NotSignificant
                };
                Ok((v, win))
            }
            TestBackend::Cusum => {
                let (v, k) = self.cusum(self.span(i + 1, i + 3), diag)?;
                let center = k.map_or(hit + m / 2, |k| k as isize);
                Ok((v, clip_window(center - m, center + m, n)))
            }
        }
    }

    /// Runs the scan and returns the flagged boundaries with search windows.
    fn run(&self, diag: &mut Diagnostics) -> Result<Vec<Hit>> {
        let p = self.prep.seg.p_n;
        let mut hits = Vec::new();
        let mut i = 1;
        while i + 3 < p {
            let single = self.single(i, diag)?;
            let go_on = match (self.config.step2_logic, single) {
                (Step2Logic::Verbatim, Verdict::Significant) => false,
                (Step2Logic::Verbatim, _) => true,
                (Step2Logic::Inverted, Verdict::NotSignificant) => false,
                (Step2Logic::Inverted, _) => true,
            };
            if !go_on {
                i += 1;
                continue;
            }
            let (pair, window) = self.pair(i, diag)?;
            match pair {
                Verdict::NotSignificant => i += 1,
                Verdict::Untestable if self.backend == TestBackend::ChiSquare => i += 1,
                _ => {
                    hits.push(Hit {
                        boundary: i + 1,
                        window,
                    });
                    i += 2;
                }
            }
        }
        Ok(hits)
    }
}

fn scan(data: &Dataset, config: &DetectorConfig, default: TestBackend) -> Result<(Prepared, Vec<Hit>, Diagnostics)> {
    let mut diag = Diagnostics::default();
    let prep = prepare(data, config, &mut diag)?;
    let backend = config.test_backend.unwrap_or(default);
    let hits = Scan {
        data,
        prep: &prep,
        config,
        backend,
    }
    .run(&mut diag)?;
    Ok((prep, hits, diag))
}

fn screen_only(
    data: &Dataset,
    algorithm: Algorithm,
    prep: &Prepared,
    hits: &[Hit],
    diag: Diagnostics,
) -> Result<DetectionResult> {
    let boundaries: Vec<usize> = hits.iter().map(|h| h.boundary).collect();
    let locations = boundaries.iter().map(|&b| prep.seg.boundary_location(b)).collect();
    assemble(data, algorithm, boundaries, locations, diag)
}

/// Least-squares scan with chi-square tests, then split refinement.
pub fn detect_lsmcpda(data: &Dataset, config: &DetectorConfig) -> Result<DetectionResult> {
    let (prep, hits, diag) = scan(data, config, TestBackend::ChiSquare)?;
    if config.stages == Stages::ScreenOnly {
        return screen_only(data, Algorithm::Ls, &prep, &hits, diag);
    }
    finish(data, Algorithm::Ls, &prep.seg, &hits, config, diag)
}

/// Least-squares scan with CUSUM tests; hits are kept where the SCAD fit
/// selects a nearby boundary and a CUSUM test on the window confirms.
pub fn detect_clsmcpda(data: &Dataset, config: &DetectorConfig) -> Result<DetectionResult> {
    let (prep, hits, mut diag) = scan(data, config, TestBackend::Cusum)?;
    if config.stages == Stages::ScreenOnly {
        return screen_only(data, Algorithm::Cls, &prep, &hits, diag);
    }
    let deltas = concave_deltas(data, &prep, config, PenaltyKind::Scad, &mut diag)?;
    let screen = screen_boundaries(&deltas, config.step3_lambda, config.gamma_scad);
    diag.screened_boundaries = screen.selected.clone();
    let seg = &prep.seg;
    let mut confirmed = Vec::new();
    for h in hits {
        let (lo, hi) = h.window;
        let near = (seg.block_of(lo).max(2) - 1)..=seg.block_of(hi).min(seg.p_n);
        if !screen.selected.iter().any(|s| near.contains(s)) {
            continue;
        }
        let w = CusumWindow::new(lo, hi);
        if w.len() < CUSUM_MIN_LEN.max(2 * data.q() + 2) {
            diag.cusum_fallbacks += 1;
            confirmed.push(h);
        } else if cusum_test(data, w, config.alpha)?.reject {
            confirmed.push(h);
        }
    }
    finish(data, Algorithm::Cls, seg, &confirmed, config, diag)
}
