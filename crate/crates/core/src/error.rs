// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors raised across the detection pipeline.
///
/// The CLI maps these onto process exit codes: [`SeglineError::InvalidInput`]
/// is a usage error, [`SeglineError::Data`] and [`SeglineError::Infeasible`]
/// are data errors, and [`SeglineError::Numerical`] is a numerical failure.
#[derive(Debug, Error)]
pub enum SeglineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("segmentation infeasible: {0}")]
    Infeasible(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SeglineError {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Self::Infeasible(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self::Numerical(msg.into())
    }
}

pub type Result<T, E = SeglineError> = std::result::Result<T, E>;
