//! Isotropic Gaussian mixtures used as initial densities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{DensityField, FieldRole, Grid2D};

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("mixture has no components")]
    Empty,
    #[error("component {index}: {reason}")]
    Component { index: usize, reason: String },
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub weight: f64,
    pub center: [f64; 2],
    /// Per-axis variance σ².
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixture {
    pub components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn single(variance: f64) -> Self {
        Self {
            components: vec![GaussianComponent {
                weight: 1.0,
                center: [0.0, 0.0],
                variance,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.components.is_empty() {
            return Err(MixtureError::Empty);
        }
        for (index, c) in self.components.iter().enumerate() {
            let reason = if !(c.weight > 0.0) || !c.weight.is_finite() {
                Some(format!("weight must be positive, got {}", c.weight))
            } else if !(c.variance > 0.0) || !c.variance.is_finite() {
                Some(format!("variance must be positive, got {}", c.variance))
            } else if !c.center.iter().all(|x| x.is_finite()) {
                Some("center is not finite".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(MixtureError::Component { index, reason });
            }
        }
        let sum: f64 = self.components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(MixtureError::WeightSum(sum));
        }
        Ok(())
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let r2 = (x[0] - c.center[0]).powi(2) + (x[1] - c.center[1]).powi(2);
                c.weight * (-r2 / (2.0 * c.variance)).exp() / (2.0 * PI * c.variance)
            })
            .sum()
    }

    /// Samples the density at the grid nodes and rescales to unit mass.
    pub fn sample_to_grid(&self, grid: Grid2D) -> Result<DensityField, MixtureError> {
        self.validate()?;
        let field = DensityField::from_fn(grid, FieldRole::Density, |x| self.density(x));
        let m = field.integral();
        Ok(field.scale(1.0 / m))
    }

    /// Index of the component selected by a uniform draw in `[0, 1)`.
    pub fn select(&self, uniform: f64) -> usize {
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if uniform < acc {
                return i;
            }
        }
        self.components.len() - 1
    }
}
