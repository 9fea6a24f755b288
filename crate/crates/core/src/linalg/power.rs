//! Power iteration for the dominant singular triplet, with a recyclable
//! left-vector estimate so one iteration per training step is enough once
//! the estimate is warm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{dot, norm2, LinalgError, Matrix};

/// Recycled estimate of the first left singular vector of one weight matrix.
///
/// One state belongs to exactly one weight; it is mutated only by the loop
/// that owns the weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    u_tilde: Vec<f64>,
    last_sigma: f64,
}

impl SpectralState {
    /// Unit vector sampled from the isotropic distribution on the sphere
    /// (normalized Gaussian draws).
    pub fn random(dim: usize, rng: &mut impl rand::Rng) -> Self {
        assert!(dim > 0, "state dimension must be positive");
        let mut u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let mut n = norm2(&u);
        while n == 0.0 {
            u = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            n = norm2(&u);
        }
        for x in &mut u {
            *x /= n;
        }
        SpectralState { u_tilde: u, last_sigma: 0.0 }
    }

    /// Builds a state from an explicit vector, normalizing it.
    pub fn from_vector(u: Vec<f64>) -> Result<Self, LinalgError> {
        let n = norm2(&u);
        if !n.is_finite() || n == 0.0 {
            return Err(LinalgError::ZeroMatrix);
        }
        Ok(SpectralState { u_tilde: u.into_iter().map(|x| x / n).collect(), last_sigma: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.u_tilde.len()
    }

    /// The unit-norm invariant, within 1e-12. Deserialized states are
    /// checked against this before use.
    pub fn is_unit(&self) -> bool {
        (norm2(&self.u_tilde) - 1.0).abs() <= 1e-12
    }

    pub fn u_tilde(&self) -> &[f64] {
        &self.u_tilde
    }

    pub fn last_sigma(&self) -> f64 {
        self.last_sigma
    }
}

/// One power-iteration update: `ṽ ← Wᵀũ/‖Wᵀũ‖`, then `ũ ← Wṽ/‖Wṽ‖`, and the
/// estimate `σ̂ = ũᵀWṽ`. Returns the estimate and the right vector used.
///
/// If `ũ` happens to lie in the left null space of `W` the vector is
/// re-randomized once (orthogonality to the first singular vector happens
/// with probability zero for a fresh draw); a persistent zero product means
/// the matrix itself is zero.
pub fn power_iteration_step(w: &Matrix, state: &mut SpectralState) -> Result<(f64, Vec<f64>), LinalgError> {
    assert_eq!(state.dim(), w.rows(), "state dimension {} vs {} matrix rows", state.dim(), w.rows());
    if w.is_zero() {
        return Err(LinalgError::ZeroMatrix);
    }
    let mut v = w.tr_matvec(&state.u_tilde);
    let mut vn = norm2(&v);
    if vn == 0.0 {
        // Deterministic restart draw.
        let mut rng = ChaCha8Rng::seed_from_u64(0x7375_7065_7254_7275);
        let fresh = SpectralState::random(state.dim(), &mut rng);
        state.u_tilde = fresh.u_tilde;
        v = w.tr_matvec(&state.u_tilde);
        vn = norm2(&v);
        if vn == 0.0 {
            return Err(LinalgError::ZeroMatrix);
        }
    }
    for x in &mut v {
        *x /= vn;
    }
    let mut u = w.matvec(&v);
    let un = norm2(&u);
    if un == 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    for x in &mut u {
        *x /= un;
    }
    let sigma = dot(&u, &w.matvec(&v));
    state.u_tilde = u;
    state.last_sigma = sigma;
    Ok((sigma, v))
}

/// Runs `n_power` iteration steps and returns the final estimate.
pub fn spectral_norm(w: &Matrix, state: &mut SpectralState, n_power: usize) -> Result<f64, LinalgError> {
    assert!(n_power >= 1, "n_power must be at least 1");
    let mut sigma = 0.0;
    for _ in 0..n_power {
        sigma = power_iteration_step(w, state)?.0;
    }
    Ok(sigma)
}

/// Iterates until the estimate stalls at floating-point resolution, capped.
/// Used when constructing networks so the very first normalized forward is
/// already accurate.
pub fn warm_start(w: &Matrix, state: &mut SpectralState) -> Result<f64, LinalgError> {
    const CAP: usize = 20_000;
    let mut sigma = power_iteration_step(w, state)?.0;
    let mut stalled = 0;
    for _ in 1..CAP {
        let next = power_iteration_step(w, state)?.0;
        if (next - sigma).abs() <= 1e-15 * next.abs() {
            stalled += 1;
            if stalled >= 3 {
                return Ok(next);
            }
        } else {
            stalled = 0;
        }
        sigma = next;
    }
    Ok(sigma)
}

/// Estimate `σ̂ = ‖Wᵀũ‖` and the matching right vector without touching the
/// state. Evaluation-only forwards use this so they never mutate training
/// state.
pub fn frozen_sigma(w: &Matrix, state: &SpectralState) -> Result<(f64, Vec<f64>), LinalgError> {
    assert_eq!(state.dim(), w.rows(), "state dimension {} vs {} matrix rows", state.dim(), w.rows());
    let mut v = w.tr_matvec(&state.u_tilde);
    let vn = norm2(&v);
    if vn == 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    for x in &mut v {
        *x /= vn;
    }
    Ok((vn, v))
}
