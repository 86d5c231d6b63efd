//! Latent densities supported by the analyses.

use std::f64::consts::{E, PI};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    StandardGaussian,
    UniformUnitCube,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentDistribution {
    pub kind: LatentKind,
    pub dim: usize,
}

impl LatentDistribution {
    pub fn gaussian(dim: usize) -> Self {
        LatentDistribution {
            kind: LatentKind::StandardGaussian,
            dim,
        }
    }

    pub fn uniform(dim: usize) -> Self {
        LatentDistribution {
            kind: LatentKind::UniformUnitCube,
            dim,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self.kind {
            LatentKind::StandardGaussian => {
                DVector::from_fn(self.dim, |_, _| rng.sample(StandardNormal))
            }
            LatentKind::UniformUnitCube => {
                let unit = Uniform::new(0.0, 1.0).expect("valid range");
                DVector::from_fn(self.dim, |_, _| rng.sample(unit))
            }
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn log_pdf(&self, z: &DVector<f64>) -> f64 {
        match self.kind {
            LatentKind::StandardGaussian => {
                -0.5 * self.dim as f64 * (2.0 * PI).ln() - 0.5 * z.norm_squared()
            }
            LatentKind::UniformUnitCube => {
                if z.iter().all(|&v| (0.0..=1.0).contains(&v)) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn pdf(&self, z: &DVector<f64>) -> f64 {
        self.log_pdf(z).exp()
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        match self.kind {
            LatentKind::StandardGaussian => 0.5 * self.dim as f64 * (2.0 * PI * E).ln(),
            LatentKind::UniformUnitCube => 0.0,
        }
    }
}
