// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multiple change-point detection for linear regression sequences.
//!
//! The sequence is cut into equal blocks, coefficient jumps between blocks
//! are estimated by least squares or penalized regression, flagged
//! boundaries are confirmed by chi-square or CUSUM tests, and each confirmed
//! boundary is refined to a single index by a split residual search.

pub mod cusum;
pub mod data;
pub mod detect;
pub mod error;
pub mod harness;
pub mod ols;
pub mod penalty;
pub mod solver;

pub use data::{make_segmentation, Algorithm, ChangePointTruth, Dataset, DetectionResult, Diagnostics, Segmentation};
pub use error::{Result, SeglineError};
