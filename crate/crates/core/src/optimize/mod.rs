//! Derivative-free minimizers over an opaque cost function.
//!
//! Non-finite costs away from the start point are treated as `+inf`.

mod de;
mod hybrid;
mod nelder_mead;
mod powell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use de::{differential_evolution, DeOptions};
pub use hybrid::{hybrid_powell_nm, HybridOptions};
pub use nelder_mead::{nelder_mead, NelderMeadOptions};
pub use powell::{powell, PowellOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// `center ± half_width` per dimension.
    pub fn around(center: &[f64], half_width: &[f64]) -> Result<Self> {
        if center.len() != half_width.len() {
            return Err(Error::Optimizer("center and width lengths differ".into()));
        }
        Self::new(
            center.iter().zip(half_width).map(|(c, w)| c - w).collect(),
            center.iter().zip(half_width).map(|(c, w)| c + w).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::Optimizer("bounds must be non-empty and equal length".into()));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Optimizer(format!(
                    "invalid bounds in dimension {i}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    /// Euclidean distance from `x` to the box (0 inside).
    pub fn excess(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| {
                let d = (lo - v).max(v - hi).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Outer iterations (generations for DE, rounds for the hybrid).
    pub iterations: usize,
    /// Best cost after each iteration.
    pub trace: Vec<f64>,
}

#[inline]
pub(crate) fn sanitize(c: f64) -> f64 {
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

pub(crate) fn check_start(x0: &[f64], f0: f64) -> Result<()> {
    if x0.is_empty() {
        return Err(Error::Optimizer("empty start point".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer("non-finite start point".into()));
    }
    if !f0.is_finite() {
        return Err(Error::Optimizer(format!("cost at start point is {f0}")));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_functions {
    pub fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    pub fn rosenbrock(x: &[f64]) -> f64 {
        x.windows(2)
            .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
            .sum()
    }

    pub fn rastrigin(x: &[f64]) -> f64 {
        10.0 * x.len() as f64
            + x.iter()
                .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
                .sum::<f64>()
    }
}
