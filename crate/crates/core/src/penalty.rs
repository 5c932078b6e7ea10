// SPDX-License-Identifier: MIT OR Apache-2.0

//! Folded-concave penalties and their scalar thresholding rule.

use crate::error::{Result, SeglineError};

fn check_x(x: f64) -> Result<()> {
    if x < 0.0 || x.is_nan() {
        return Err(SeglineError::invalid_input(format!(
            "penalty argument must be nonnegative; got {x}"
        )));
    }
    Ok(())
}

fn check_params(lambda: f64, gamma: f64, gamma_min: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SeglineError::invalid_input(format!(
            "lambda must be >= 0; got {lambda}"
        )));
    }
    if !(gamma > gamma_min && gamma.is_finite()) {
        return Err(SeglineError::invalid_input(format!(
            "gamma must exceed {gamma_min}; got {gamma}"
        )));
    }
    Ok(())
}

/// SCAD penalty at `x >= 0`.
pub fn scad_penalty(x: f64, lambda: f64, gamma: f64) -> Result<f64> {
    check_x(x)?;
    check_params(lambda, gamma, 2.0)?;
    Ok(scad_value(x, lambda, gamma))
}

pub(crate) fn scad_value(x: f64, lambda: f64, gamma: f64) -> f64 {
    if x <= lambda {
        lambda * x
    } else if x <= gamma * lambda {
        (gamma * lambda * x - 0.5 * (x * x + lambda * lambda)) / (gamma - 1.0)
    } else {
        lambda * lambda * (gamma + 1.0) / 2.0
    }
}

/// Derivative of the SCAD penalty for `x >= 0` (right derivative at 0).
pub fn scad_derivative(x: f64, lambda: f64, gamma: f64) -> f64 {
    if x <= lambda {
        lambda
    } else if x <= gamma * lambda {
        (gamma * lambda - x) / (gamma - 1.0)
    } else {
        0.0
    }
}

/// MCP penalty at `x >= 0`.
pub fn mcp_penalty(x: f64, lambda: f64, gamma: f64) -> Result<f64> {
    check_x(x)?;
    check_params(lambda, gamma, 1.0)?;
    Ok(mcp_value(x, lambda, gamma))
}

pub(crate) fn mcp_value(x: f64, lambda: f64, gamma: f64) -> f64 {
    if x <= gamma * lambda {
        lambda * x - x * x / (2.0 * gamma)
    } else {
        0.5 * gamma * lambda * lambda
    }
}

/// Derivative of the MCP penalty for `x >= 0`.
pub fn mcp_derivative(x: f64, lambda: f64, gamma: f64) -> f64 {
    if x <= gamma * lambda {
        lambda - x / gamma
    } else {
        0.0
    }
}

/// Soft thresholding `sign(z) (|z| - t)_+`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Minimizer of `0.5 (z - mu)^2 + scad(|mu|)` over `mu`.
pub fn scad_threshold_scalar(z: f64, lambda: f64, gamma: f64) -> f64 {
    let a = z.abs();
    if a <= 2.0 * lambda {
        soft_threshold(z, lambda)
    } else if a <= gamma * lambda {
        ((gamma - 1.0) * z - z.signum() * gamma * lambda) / (gamma - 2.0)
    } else {
        z
    }
}
