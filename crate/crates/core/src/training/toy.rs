//! Synthetic target distributions small enough to train against on a desk.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Number of landmark points used as the mode set of the manifold target.
pub const MANIFOLD_LANDMARKS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyTarget {
    /// `modes` isotropic Gaussians with the given component σ, centers
    /// equally spaced on a circle of the given radius.
    GaussianRing { modes: usize, radius: f64, sigma: f64 },
    /// `side × side` lattice of Gaussians with the given spacing.
    GaussianGrid { side: usize, spacing: f64, sigma: f64 },
    /// A one-dimensional curve embedded in `embed_dim` dimensions plus
    /// isotropic noise.
    LowDimManifold { embed_dim: usize, noise: f64 },
}

impl ToyTarget {
    /// Stock eight-mode ring.
    pub fn ring8() -> Self {
        ToyTarget::GaussianRing { modes: 8, radius: 2.0, sigma: 0.05 }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = match self {
            ToyTarget::GaussianRing { modes, radius, sigma } => *modes >= 1 && *radius > 0.0 && *sigma > 0.0,
            ToyTarget::GaussianGrid { side, spacing, sigma } => *side >= 1 && *spacing > 0.0 && *sigma > 0.0,
            ToyTarget::LowDimManifold { embed_dim, noise } => *embed_dim >= 1 && *noise > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!("invalid toy target {self:?}")))
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ToyTarget::GaussianRing { .. } | ToyTarget::GaussianGrid { .. } => 2,
            ToyTarget::LowDimManifold { embed_dim, .. } => *embed_dim,
        }
    }

    /// Per-mode standard deviation (noise scale for the manifold).
    pub fn sigma(&self) -> f64 {
        match self {
            ToyTarget::GaussianRing { sigma, .. } | ToyTarget::GaussianGrid { sigma, .. } => *sigma,
            ToyTarget::LowDimManifold { noise, .. } => *noise,
        }
    }

    /// Mode centers: mixture components for ring and grid, fixed landmarks
    /// along the curve for the manifold.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        match self {
            ToyTarget::GaussianRing { modes, radius, .. } => (0..*modes)
                .map(|j| {
                    let angle = 2.0 * std::f64::consts::PI * j as f64 / *modes as f64;
                    vec![radius * angle.cos(), radius * angle.sin()]
                })
                .collect(),
            ToyTarget::GaussianGrid { side, spacing, .. } => {
                let offset = (*side as f64 - 1.0) / 2.0;
                let mut centers = Vec::with_capacity(side * side);
                for iy in 0..*side {
                    for ix in 0..*side {
                        centers.push(vec![(ix as f64 - offset) * spacing, (iy as f64 - offset) * spacing]);
                    }
                }
                centers
            }
            ToyTarget::LowDimManifold { embed_dim, .. } => (0..MANIFOLD_LANDMARKS)
                .map(|j| {
                    let t = 2.0 * std::f64::consts::PI * j as f64 / MANIFOLD_LANDMARKS as f64;
                    curve_point(t, *embed_dim)
                })
                .collect(),
        }
    }

    /// Draws `n` samples as row vectors. `n = 0` yields an empty batch.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| match self {
                ToyTarget::GaussianRing { modes, radius, sigma } => {
                    let j = rng.random_range(0..*modes);
                    let angle = 2.0 * std::f64::consts::PI * j as f64 / *modes as f64;
                    let gx: f64 = StandardNormal.sample(rng);
                    let gy: f64 = StandardNormal.sample(rng);
                    vec![radius * angle.cos() + sigma * gx, radius * angle.sin() + sigma * gy]
                }
                ToyTarget::GaussianGrid { side, spacing, sigma } => {
                    let offset = (*side as f64 - 1.0) / 2.0;
                    let ix = rng.random_range(0..*side);
                    let iy = rng.random_range(0..*side);
                    let gx: f64 = StandardNormal.sample(rng);
                    let gy: f64 = StandardNormal.sample(rng);
                    vec![(ix as f64 - offset) * spacing + sigma * gx, (iy as f64 - offset) * spacing + sigma * gy]
                }
                ToyTarget::LowDimManifold { embed_dim, noise } => {
                    let t = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                    let mut p = curve_point(t, *embed_dim);
                    for x in &mut p {
                        let g: f64 = StandardNormal.sample(rng);
                        *x += noise * g;
                    }
                    p
                }
            })
            .collect()
    }

    /// The mode a sample is closest to, and the distance to it.
    pub fn nearest_center(&self, sample: &[f64]) -> (usize, f64) {
        let centers = self.centers();
        let mut best = (0, f64::INFINITY);
        for (i, c) in centers.iter().enumerate() {
            let d2: f64 = c.iter().zip(sample).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        (best.0, best.1.sqrt())
    }
}

fn curve_point(t: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let harmonic = (i / 2 + 1) as f64;
            if i % 2 == 0 {
                (harmonic * t).cos()
            } else {
                (harmonic * t).sin()
            }
        })
        .collect()
}
