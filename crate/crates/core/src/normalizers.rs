//! Weight-constraint techniques for discriminator layers: spectral
//! normalization, its learnable-scale reparametrization, weight and
//! Frobenius normalization, element-wise clipping, and the penalty-style
//! regularizers (orthonormality, gradient penalty on interpolates).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm2, power_iteration_step, warm_start, LinalgError, Matrix, SpectralState};
use crate::net::{GradientSet, NetError, Network};

/// Clipping constant used by the weight-clipping baseline.
pub const DEFAULT_CLIP: f64 = 0.01;
/// Balancing coefficient of the gradient penalty.
pub const DEFAULT_GP_LAMBDA: f64 = 10.0;

#[derive(Debug, Error)]
pub enum NormalizerError {
    #[error("cannot normalize the zero matrix (σ undefined as divisor)")]
    ZeroMatrix,
    #[error("weight normalization is undefined for zero row {row}")]
    ZeroRow { row: usize },
    #[error("norm kind {0} is not supported by the general-normalization gradient")]
    UnsupportedNormKind(String),
    #[error("batch shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Which constraint a layer applies to its weight before use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerKind {
    None,
    /// Divide by the power-iteration estimate of the spectral norm.
    Spectral { n_power: usize },
    /// Spectrally normalize, then scale by a learnable γ > 0.
    SpectralReparam { gamma: f64, n_power: usize },
    /// Scale every row to unit ℓ2 norm.
    WeightNorm,
    /// Divide by the Frobenius norm.
    Frobenius,
    /// Truncate entries to [−c, c].
    Clip { c: f64 },
    /// No reparametrization; adds β‖WᵀW − I‖_F² to the objective.
    Orthonormal { beta: f64 },
}

impl NormalizerKind {
    pub fn spectral() -> Self {
        NormalizerKind::Spectral { n_power: 1 }
    }

    pub fn clip() -> Self {
        NormalizerKind::Clip { c: DEFAULT_CLIP }
    }

    /// Spectral variants carry a power-iteration state per layer.
    pub fn needs_state(&self) -> bool {
        matches!(self, NormalizerKind::Spectral { .. } | NormalizerKind::SpectralReparam { .. })
    }

    pub fn validate(&self) -> Result<(), NormalizerError> {
        match self {
            NormalizerKind::Spectral { n_power } | NormalizerKind::SpectralReparam { n_power, .. } => {
                if *n_power == 0 {
                    return Err(NormalizerError::ShapeMismatch {
                        context: "n_power must be at least 1".into(),
                    });
                }
                if let NormalizerKind::SpectralReparam { gamma, .. } = self {
                    if *gamma <= 0.0 || !gamma.is_finite() {
                        return Err(NormalizerError::ShapeMismatch {
                            context: format!("reparam gamma must be positive, got {gamma}"),
                        });
                    }
                }
                Ok(())
            }
            NormalizerKind::Clip { c } => {
                if *c > 0.0 && c.is_finite() {
                    Ok(())
                } else {
                    Err(NormalizerError::ShapeMismatch { context: format!("clip constant must be positive, got {c}") })
                }
            }
            NormalizerKind::Orthonormal { beta } => {
                if *beta >= 0.0 && beta.is_finite() {
                    Ok(())
                } else {
                    Err(NormalizerError::ShapeMismatch { context: format!("orthonormal beta must be ≥ 0, got {beta}") })
                }
            }
            _ => Ok(()),
        }
    }
}

/// Penalty on a single weight matrix: value plus its gradient contribution.
#[derive(Clone, Debug)]
pub struct PenaltyTerm {
    pub value: f64,
    pub weight_grad: Matrix,
}

/// Penalty on the whole discriminator (gradient penalty): value plus
/// gradient contributions for every parameter tensor.
#[derive(Clone, Debug)]
pub struct NetworkPenalty {
    pub value: f64,
    pub gradients: GradientSet,
}

pub(crate) struct SpectralParts {
    pub normalized: Matrix,
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

pub(crate) fn spectral_train(
    w: &Matrix,
    state: &mut SpectralState,
    n_power: usize,
) -> Result<SpectralParts, NormalizerError> {
    if w.is_zero() {
        return Err(NormalizerError::ZeroMatrix);
    }
    let mut sigma = 0.0;
    let mut v = Vec::new();
    for _ in 0..n_power.max(1) {
        let (s, vv) = power_iteration_step(w, state)?;
        sigma = s;
        v = vv;
    }
    Ok(SpectralParts { normalized: w.scale(1.0 / sigma), sigma, u: state.u_tilde().to_vec(), v })
}

pub(crate) fn spectral_frozen(w: &Matrix, state: &SpectralState) -> Result<SpectralParts, NormalizerError> {
    if w.is_zero() {
        return Err(NormalizerError::ZeroMatrix);
    }
    let (sigma, v) = crate::linalg::frozen_sigma(w, state)?;
    Ok(SpectralParts { normalized: w.scale(1.0 / sigma), sigma, u: state.u_tilde().to_vec(), v })
}

/// `W̄ = W / σ̂(W)` with `σ̂` from `n_power` power-iteration steps.
pub fn apply_spectral(w: &Matrix, state: &mut SpectralState, n_power: usize) -> Result<Matrix, NormalizerError> {
    Ok(spectral_train(w, state, n_power)?.normalized)
}

/// `W̃ = γ · W̄_SN`; the Lipschitz constant of the layer becomes ≈ γ.
pub fn apply_reparam(
    w: &Matrix,
    gamma: f64,
    state: &mut SpectralState,
    n_power: usize,
) -> Result<Matrix, NormalizerError> {
    if gamma <= 0.0 {
        return Err(NormalizerError::ShapeMismatch { context: format!("gamma must be positive, got {gamma}") });
    }
    Ok(spectral_train(w, state, n_power)?.normalized.scale(gamma))
}

/// Scales each row to unit ℓ2 norm.
pub fn apply_weight_norm(w: &Matrix) -> Result<Matrix, NormalizerError> {
    let mut out = w.clone();
    for i in 0..w.rows() {
        let n = norm2(w.row(i));
        if n == 0.0 {
            return Err(NormalizerError::ZeroRow { row: i });
        }
        for x in out.row_mut(i) {
            *x /= n;
        }
    }
    Ok(out)
}

/// `W̄ = W / ‖W‖_F`.
pub fn apply_frobenius(w: &Matrix) -> Result<Matrix, NormalizerError> {
    let n = w.frobenius_norm();
    if n == 0.0 {
        return Err(NormalizerError::ZeroMatrix);
    }
    Ok(w.map(|x| x / n))
}

/// Truncates every entry to `[-c, c]`. Idempotent and 1-Lipschitz per entry.
pub fn apply_clip(w: &Matrix, c: f64) -> Matrix {
    assert!(c > 0.0, "clip constant must be positive");
    w.map(|x| x.clamp(-c, c))
}

/// `β‖WᵀW − I‖_F²` and its gradient `4β·W(WᵀW − I)`.
pub fn orthonormal_penalty(w: &Matrix, beta: f64) -> PenaltyTerm {
    assert!(beta >= 0.0, "penalty coefficient must be non-negative");
    let gram = w.transa_matmul(w);
    let dev = gram.sub(&Matrix::identity(w.cols()));
    let value = beta * dev.frobenius_dot(&dev);
    let weight_grad = w.matmul(&dev).scale(4.0 * beta);
    PenaltyTerm { value, weight_grad }
}

/// Gradient penalty `λ·Ê[(‖∇_x̂ D(x̂)‖₂ − 1)²]` on per-sample interpolates
/// `x̂ = εx + (1−ε)x̃`, `ε ∼ U[0,1]`, with parameter gradients obtained by
/// differentiating through the input-gradient computation.
pub fn gradient_penalty(
    d: &Network,
    x_real: &Matrix,
    x_fake: &Matrix,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<NetworkPenalty, NormalizerError> {
    if x_real.rows() != x_fake.rows() || x_real.cols() != x_fake.cols() {
        return Err(NormalizerError::ShapeMismatch {
            context: format!(
                "real batch {}x{} vs fake batch {}x{}",
                x_real.rows(),
                x_real.cols(),
                x_fake.rows(),
                x_fake.cols()
            ),
        });
    }
    if lambda < 0.0 {
        return Err(NormalizerError::ShapeMismatch { context: format!("lambda must be ≥ 0, got {lambda}") });
    }
    let mut xhat = Matrix::zeros(x_real.rows(), x_real.cols());
    for i in 0..x_real.rows() {
        let eps: f64 = rng.random();
        for j in 0..x_real.cols() {
            xhat.set(i, j, eps * x_real.get(i, j) + (1.0 - eps) * x_fake.get(i, j));
        }
    }
    gradient_penalty_at(d, &xhat, lambda)
}

/// Gradient penalty evaluated at explicit interpolation points. Split out so
/// finite-difference checks can hold the points fixed.
pub fn gradient_penalty_at(d: &Network, xhat: &Matrix, lambda: f64) -> Result<NetworkPenalty, NormalizerError> {
    let (value, gradients) = d.input_gradient_penalty(xhat, lambda)?;
    Ok(NetworkPenalty { value, gradients })
}

/// Gradient of a normalized layer with respect to the raw weight, for
/// `N ∈ {σ(·), ‖·‖_F}`:
/// `(1/N(W)) (∇_W̄V − trace((∇_W̄V)ᵀ W̄) · ∇_W N)`.
#[derive(Clone, Debug)]
pub struct NormGradient {
    pub raw: Matrix,
    /// The adaptive coefficient `λ = trace((∇_W̄V)ᵀ W̄)`.
    pub coefficient: f64,
}

pub fn general_norm_gradient(
    w: &Matrix,
    w_bar: &Matrix,
    upstream: &Matrix,
    kind: &NormalizerKind,
) -> Result<NormGradient, NormalizerError> {
    if upstream.rows() != w.rows() || upstream.cols() != w.cols() {
        return Err(NormalizerError::ShapeMismatch {
            context: format!(
                "upstream {}x{} vs weight {}x{}",
                upstream.rows(),
                upstream.cols(),
                w.rows(),
                w.cols()
            ),
        });
    }
    let coefficient = upstream.frobenius_dot(w_bar);
    match kind {
        NormalizerKind::Frobenius => {
            let n = w.frobenius_norm();
            if n == 0.0 {
                return Err(NormalizerError::ZeroMatrix);
            }
            let raw = upstream.sub(&w_bar.scale(coefficient)).scale(1.0 / n);
            Ok(NormGradient { raw, coefficient })
        }
        NormalizerKind::Spectral { .. } => {
            if w.is_zero() {
                return Err(NormalizerError::ZeroMatrix);
            }
            let mut state = SpectralState::random(w.rows(), &mut ChaCha8Rng::seed_from_u64(0x6e6f_726d));
            let sigma = warm_start(w, &mut state)?;
            let (_, v) = crate::linalg::frozen_sigma(w, &state)?;
            let rank_one = Matrix::outer(state.u_tilde(), &v);
            let raw = upstream.sub(&rank_one.scale(coefficient)).scale(1.0 / sigma);
            Ok(NormGradient { raw, coefficient })
        }
        other => Err(NormalizerError::UnsupportedNormKind(format!("{other:?}"))),
    }
}

/// Convolution kernel as a 4-D array `d_out × d_in × h × w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    pub d_out: usize,
    pub d_in: usize,
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl ConvKernel {
    pub fn new(d_out: usize, d_in: usize, h: usize, w: usize, values: Vec<f64>) -> Result<Self, NormalizerError> {
        if d_out == 0 || d_in == 0 || h == 0 || w == 0 || values.len() != d_out * d_in * h * w {
            return Err(NormalizerError::ShapeMismatch {
                context: format!("kernel {d_out}x{d_in}x{h}x{w} with {} values", values.len()),
            });
        }
        Ok(ConvKernel { d_out, d_in, h, w, values })
    }
}

/// Treats a convolution kernel as the 2-D matrix `d_out × (d_in·h·w)` whose
/// spectral norm is normalized: row `r` is the row-major flattening of the
/// kernel of output channel `r`.
pub fn reshape_conv_kernel(kernel: &ConvKernel) -> Matrix {
    Matrix::new(kernel.d_out, kernel.d_in * kernel.h * kernel.w, kernel.values.clone())
        .expect("kernel dims validated at construction")
}

/// Inverse of [`reshape_conv_kernel`].
pub fn unreshape_conv_kernel(m: &Matrix, d_in: usize, h: usize, w: usize) -> Result<ConvKernel, NormalizerError> {
    if m.cols() != d_in * h * w {
        return Err(NormalizerError::ShapeMismatch {
            context: format!("matrix has {} columns, expected {}·{}·{} = {}", m.cols(), d_in, h, w, d_in * h * w),
        });
    }
    ConvKernel::new(m.rows(), d_in, h, w, m.values().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd_oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn spectral_on_scaled_identity() {
        let w = Matrix::identity(2).scale(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = SpectralState::random(2, &mut rng);
        let out = apply_spectral(&w, &mut state, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((out.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_on_diagonal_divides_by_top_value() {
        let w = Matrix::diag(&[4.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = SpectralState::random(2, &mut rng);
        let out = apply_spectral(&w, &mut state, 100).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-9);
        assert!((out.get(1, 1) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn spectral_output_has_unit_oracle_norm() {
        let w = uniform_matrix(16, 16, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = SpectralState::random(16, &mut rng);
        let out = apply_spectral(&w, &mut state, 100).unwrap();
        let sigma = svd_oracle(&out).unwrap().s[0];
        assert!((sigma - 1.0).abs() <= 1e-6, "oracle σ = {sigma}");
    }

    #[test]
    fn spectral_rejects_zero_matrix() {
        let w = Matrix::zeros(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = SpectralState::random(3, &mut rng);
        assert!(matches!(apply_spectral(&w, &mut state, 1), Err(NormalizerError::ZeroMatrix)));
    }

    #[test]
    fn weight_norm_unit_rows() {
        let w = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 5.0]]).unwrap();
        let out = apply_weight_norm(&w).unwrap();
        assert_eq!(out.row(0), &[0.6, 0.8]);
        assert_eq!(out.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn weight_norm_singular_values_sum_to_row_count() {
        let w = uniform_matrix(12, 7, 5).map(|x| x - 0.5);
        let out = apply_weight_norm(&w).unwrap();
        let s = svd_oracle(&out).unwrap().s;
        let total: f64 = s.iter().map(|x| x * x).sum();
        assert!((total - 12.0).abs() < 1e-9, "Σσ² = {total}");
    }

    #[test]
    fn weight_norm_single_row_has_unit_norm() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 2.0]]).unwrap();
        let out = apply_weight_norm(&w).unwrap();
        let s = svd_oracle(&out).unwrap().s;
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_norm_rejects_zero_row() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(apply_weight_norm(&w), Err(NormalizerError::ZeroRow { row: 1 })));
    }

    #[test]
    fn frobenius_examples() {
        let w = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let out = apply_frobenius(&w).unwrap();
        assert_eq!(out.row(0), &[0.6, 0.8]);
        let id = apply_frobenius(&Matrix::identity(2)).unwrap();
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert!((id.get(0, 0) - inv_sqrt2).abs() < 1e-15);
        assert!((id.frobenius_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_singular_values_sum_to_one() {
        let w = uniform_matrix(9, 14, 6).map(|x| x - 0.5);
        let out = apply_frobenius(&w).unwrap();
        let s = svd_oracle(&out).unwrap().s;
        let total: f64 = s.iter().map(|x| x * x).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clip_truncates_and_is_idempotent() {
        let w = Matrix::from_rows(&[vec![0.5, -0.004], vec![-2.0, 0.01]]).unwrap();
        let out = apply_clip(&w, 0.01);
        assert_eq!(out.row(0), &[0.01, -0.004]);
        assert_eq!(out.row(1), &[-0.01, 0.01]);
        assert_eq!(apply_clip(&out, 0.01), out);
        let negative = Matrix::from_rows(&[vec![-3.0, -0.5]]).unwrap();
        assert_eq!(apply_clip(&negative, 0.01).row(0), &[-0.01, -0.01]);
    }

    #[test]
    fn orthonormal_penalty_values() {
        // Orthonormal columns give zero penalty.
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(orthonormal_penalty(&q, 1.0).value, 0.0);
        // W = 2I: ‖4I − I‖_F² = 18.
        let w = Matrix::identity(2).scale(2.0);
        let p = orthonormal_penalty(&w, 1.0);
        assert!((p.value - 18.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_penalty_gradient_matches_finite_differences() {
        let w = uniform_matrix(4, 3, 7).map(|x| x - 0.5);
        let beta = 0.7;
        let analytic = orthonormal_penalty(&w, beta).weight_grad;
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut wp = w.clone();
                wp.set(i, j, w.get(i, j) + h);
                let mut wm = w.clone();
                wm.set(i, j, w.get(i, j) - h);
                let fd = (orthonormal_penalty(&wp, beta).value - orthonormal_penalty(&wm, beta).value) / (2.0 * h);
                let a = analytic.get(i, j);
                let denom = a.abs().max(1.0);
                assert!((fd - a).abs() / denom < 1e-6, "({i},{j}): fd {fd} vs {a}");
            }
        }
    }

    #[test]
    fn reparam_examples() {
        let w = Matrix::diag(&[4.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s1 = SpectralState::random(2, &mut rng);
        let mut s2 = s1.clone();
        let sn = apply_spectral(&w, &mut s1, 100).unwrap();
        let re = apply_reparam(&w, 1.0, &mut s2, 100).unwrap();
        assert_eq!(sn, re);
        let mut s3 = SpectralState::random(2, &mut rng);
        let re2 = apply_reparam(&w, 2.0, &mut s3, 100).unwrap();
        assert!((re2.get(0, 0) - 2.0).abs() < 1e-9);
        assert!((re2.get(1, 1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reshape_kernel_examples() {
        let k = ConvKernel::new(1, 1, 1, 1, vec![3.5]).unwrap();
        let m = reshape_conv_kernel(&k);
        assert_eq!((m.rows(), m.cols()), (1, 1));
        assert_eq!(m.get(0, 0), 3.5);

        let k = ConvKernel::new(2, 1, 2, 2, (1..=8).map(f64::from).collect()).unwrap();
        let m = reshape_conv_kernel(&k);
        assert_eq!((m.rows(), m.cols()), (2, 4));
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.row(1), &[5.0, 6.0, 7.0, 8.0]);

        let back = unreshape_conv_kernel(&m, 1, 2, 2).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn general_gradient_zero_upstream() {
        let w = uniform_matrix(5, 4, 9);
        let w_bar = apply_frobenius(&w).unwrap();
        let upstream = Matrix::zeros(5, 4);
        let g = general_norm_gradient(&w, &w_bar, &upstream, &NormalizerKind::Frobenius).unwrap();
        assert!(g.raw.is_zero());
        assert_eq!(g.coefficient, 0.0);
    }

    #[test]
    fn general_gradient_rejects_other_kinds() {
        let w = uniform_matrix(3, 3, 10);
        let upstream = Matrix::zeros(3, 3);
        let err = general_norm_gradient(&w, &w, &upstream, &NormalizerKind::WeightNorm);
        assert!(matches!(err, Err(NormalizerError::UnsupportedNormKind(_))));
    }

    #[test]
    fn general_gradient_frobenius_matches_finite_differences() {
        // Loss L(W) = ⟨G, W/‖W‖_F⟩ for a fixed G; the analytic form must
        // match central differences on every coordinate.
        let w = uniform_matrix(4, 5, 11).map(|x| x - 0.5);
        let gmat = uniform_matrix(4, 5, 12).map(|x| x - 0.5);
        let w_bar = apply_frobenius(&w).unwrap();
        let analytic = general_norm_gradient(&w, &w_bar, &gmat, &NormalizerKind::Frobenius).unwrap().raw;
        let loss = |m: &Matrix| gmat.frobenius_dot(&apply_frobenius(m).unwrap());
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..5 {
                let mut wp = w.clone();
                wp.set(i, j, w.get(i, j) + h);
                let mut wm = w.clone();
                wm.set(i, j, w.get(i, j) - h);
                let fd = (loss(&wp) - loss(&wm)) / (2.0 * h);
                let a = analytic.get(i, j);
                if a.abs() > 1e-8 {
                    assert!((fd - a).abs() / a.abs() < 1e-4, "({i},{j}): fd {fd} vs {a}");
                }
            }
        }
    }

    #[test]
    fn general_gradient_spectral_matches_network_backward() {
        use crate::net::{Activation, LayerSpec, Network};
        let mut spec = LayerSpec::dense(6, 8, Activation::Identity, NormalizerKind::Spectral { n_power: 1 });
        spec.has_bias = false;
        let mut net = Network::new(vec![spec], &mut ChaCha8Rng::seed_from_u64(40)).unwrap();
        let w = uniform_matrix(8, 6, 41);
        net.set_weight(0, w.clone()).unwrap();
        net.warm_spectral_states().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let delta: Vec<f64> = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
        let batch = Matrix::from_rows(std::slice::from_ref(&h)).unwrap();
        let trace = net.forward(&batch).unwrap();
        let upstream = Matrix::from_rows(std::slice::from_ref(&delta)).unwrap();
        let from_net = net.backward(&trace, &upstream).unwrap();

        let state = net.layer(0).spectral_state().unwrap();
        let sigma = crate::linalg::frozen_sigma(&w, state).unwrap().0;
        let w_bar = w.scale(1.0 / sigma);
        let effective_grad = Matrix::outer(&delta, &h);
        let general =
            general_norm_gradient(&w, &w_bar, &effective_grad, &NormalizerKind::Spectral { n_power: 1 }).unwrap();
        let diff = general.raw.sub(&from_net.weights[0]).frobenius_norm();
        assert!(diff <= 1e-10, "routes disagree by {diff}");
    }

    #[test]
    fn adaptive_coefficient_is_positive_for_aligned_directions() {
        // λ = Ê[δᵀ(W̄h)] must be positive when δ and W̄h are the same vector.
        let w = uniform_matrix(6, 4, 13).map(|x| x + 0.1);
        let w_bar = apply_frobenius(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let h: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let wh = w_bar.matvec(&h);
            let upstream = Matrix::outer(&wh, &h); // δ = W̄h
            let g = general_norm_gradient(&w, &w_bar, &upstream, &NormalizerKind::Frobenius).unwrap();
            assert!(g.coefficient > 0.0, "λ = {}", g.coefficient);
        }
    }

    #[test]
    fn rank_one_weight_norm_attains_sqrt_rows_bound() {
        // ‖W̄_WN h‖ ≤ √d_o over unit h, with equality for a rank-one W̄_WN.
        let d_o = 6;
        let d_i = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let w = Matrix::new(d_o, d_i, (0..d_o * d_i).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let wn = apply_weight_norm(&w).unwrap();
        let bound = (d_o as f64).sqrt();
        for _ in 0..200 {
            let mut h: Vec<f64> = (0..d_i).map(|_| rng.random::<f64>() - 0.5).collect();
            let n = norm2(&h);
            for x in &mut h {
                *x /= n;
            }
            let out = wn.matvec(&h);
            assert!(norm2(&out) <= bound + 1e-9);
        }
        // Rank-one construction: every row the same unit vector.
        let unit = {
            let v: Vec<f64> = (0..d_i).map(|_| rng.random::<f64>() + 0.1).collect();
            let n = norm2(&v);
            v.iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let rank_one = Matrix::from_rows(&vec![unit.clone(); d_o]).unwrap();
        let wn1 = apply_weight_norm(&rank_one).unwrap();
        let achieved = norm2(&wn1.matvec(&unit));
        assert!((achieved - bound).abs() < 1e-6, "achieved {achieved} vs bound {bound}");
    }
}
