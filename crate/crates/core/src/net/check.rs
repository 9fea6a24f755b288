//! Finite-difference verification of the backward pass, per parameter
//! tensor, for every normalizer kind.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::normalizers::NormalizerKind;

use super::{Activation, NetError, Network};

const FD_STEP: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Gamma,
}

impl std::fmt::Display for TensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TensorKind::Weight => write!(f, "weight"),
            TensorKind::Bias => write!(f, "bias"),
            TensorKind::Gamma => write!(f, "gamma"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdEntry {
    pub layer: usize,
    pub tensor: TensorKind,
    /// Worst relative error over coordinates with non-negligible gradient.
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: Option<String>,
}

impl FdEntry {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.skipped.is_some() || self.max_rel_err <= tolerance
    }
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed(self.tolerance))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().filter(|e| e.skipped.is_none()).map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

/// Layers whose normalizer cannot produce an effective weight (zero matrix
/// under spectral/Frobenius scaling, zero row under weight normalization).
fn degenerate_reason(net: &Network) -> Option<String> {
    for (i, layer) in net.layers().iter().enumerate() {
        let w = layer.weight();
        match layer.spec().normalizer {
            NormalizerKind::Spectral { .. } | NormalizerKind::SpectralReparam { .. } | NormalizerKind::Frobenius
                if w.is_zero() =>
            {
                return Some(format!("layer {i}: zero weight makes the normalizer singular (σ = 0)"));
            }
            NormalizerKind::WeightNorm => {
                for r in 0..w.rows() {
                    if w.row(r).iter().all(|&x| x == 0.0) {
                        return Some(format!("layer {i}: zero row {r} under weight normalization"));
                    }
                }
            }
            _ => {}
        }
    }
    None
}

fn skipped_report(net: &Network, tolerance: f64, reason: &str) -> FdReport {
    let entries = (0..net.num_layers())
        .map(|layer| FdEntry {
            layer,
            tensor: TensorKind::Weight,
            max_rel_err: 0.0,
            checked: 0,
            skipped: Some(reason.to_string()),
        })
        .collect();
    FdReport { entries, tolerance }
}

/// Compares the analytic backward pass against central finite differences
/// of `loss` applied to the network output, for every parameter tensor.
/// Evaluation-mode forwards are used throughout so power-iteration states
/// stay fixed while coordinates are perturbed.
pub fn finite_difference_check(
    net: &Network,
    input: &Matrix,
    loss: impl Fn(&Matrix) -> (f64, Matrix),
    tolerance: f64,
) -> Result<FdReport, NetError> {
    if let Some(reason) = degenerate_reason(net) {
        return Ok(skipped_report(net, tolerance, &reason));
    }
    let trace = net.forward(input)?;
    let (_, upstream) = loss(trace.output());
    let grads = net.backward(&trace, &upstream)?;
    let eval = |n: &Network| -> Result<f64, NetError> { Ok(loss(n.forward(input)?.output()).0) };
    fd_compare(net, &grads, eval, tolerance)
}

/// Same comparison for the gradient-penalty path: the analytic gradients
/// come from differentiating through the input-gradient computation, the
/// reference from central differences of the penalty value at fixed
/// interpolation points.
pub fn finite_difference_check_penalty(
    net: &Network,
    xhat: &Matrix,
    lambda: f64,
    tolerance: f64,
) -> Result<FdReport, NetError> {
    if let Some(reason) = degenerate_reason(net) {
        return Ok(skipped_report(net, tolerance, &reason));
    }
    let (_, grads) = net.input_gradient_penalty(xhat, lambda)?;
    let eval = |n: &Network| -> Result<f64, NetError> { Ok(n.input_gradient_penalty(xhat, lambda)?.0) };
    fd_compare(net, &grads, eval, tolerance)
}

fn fd_compare(
    net: &Network,
    grads: &super::GradientSet,
    eval: impl Fn(&Network) -> Result<f64, NetError>,
    tolerance: f64,
) -> Result<FdReport, NetError> {
    let mut entries = Vec::new();
    for l in 0..net.num_layers() {
        // Weights.
        let (rows, cols) = (grads.weights[l].rows(), grads.weights[l].cols());
        let mut worst = 0.0_f64;
        let mut checked = 0;
        for i in 0..rows {
            for j in 0..cols {
                let analytic = grads.weights[l].get(i, j);
                if analytic.abs() <= GRAD_FLOOR {
                    continue;
                }
                let base = net.layer(l).weight().get(i, j);
                let mut probe = net.clone();
                probe.weight_mut(l).set(i, j, base + FD_STEP);
                let up = eval(&probe)?;
                probe.weight_mut(l).set(i, j, base - FD_STEP);
                let down = eval(&probe)?;
                let fd = (up - down) / (2.0 * FD_STEP);
                worst = worst.max((fd - analytic).abs() / analytic.abs());
                checked += 1;
            }
        }
        entries.push(FdEntry { layer: l, tensor: TensorKind::Weight, max_rel_err: worst, checked, skipped: None });

        // Biases.
        if let Some(bg) = &grads.biases[l] {
            let mut worst = 0.0_f64;
            let mut checked = 0;
            for (k, &analytic) in bg.iter().enumerate() {
                if analytic.abs() <= GRAD_FLOOR {
                    continue;
                }
                let base = net.layer(l).bias().unwrap()[k];
                let mut probe = net.clone();
                probe.bias_mut(l).unwrap()[k] = base + FD_STEP;
                let up = eval(&probe)?;
                probe.bias_mut(l).unwrap()[k] = base - FD_STEP;
                let down = eval(&probe)?;
                let fd = (up - down) / (2.0 * FD_STEP);
                worst = worst.max((fd - analytic).abs() / analytic.abs());
                checked += 1;
            }
            entries.push(FdEntry { layer: l, tensor: TensorKind::Bias, max_rel_err: worst, checked, skipped: None });
        }

        // Reparametrization scale.
        if let Some(analytic) = grads.gammas[l] {
            let mut worst = 0.0_f64;
            let mut checked = 0;
            if analytic.abs() > GRAD_FLOOR {
                let base = net.layer(l).gamma().unwrap();
                let mut probe = net.clone();
                *probe.gamma_mut(l).unwrap() = base + FD_STEP;
                let up = eval(&probe)?;
                *probe.gamma_mut(l).unwrap() = base - FD_STEP;
                let down = eval(&probe)?;
                let fd = (up - down) / (2.0 * FD_STEP);
                worst = (fd - analytic).abs() / analytic.abs();
                checked = 1;
            }
            entries.push(FdEntry { layer: l, tensor: TensorKind::Gamma, max_rel_err: worst, checked, skipped: None });
        }
    }
    Ok(FdReport { entries, tolerance })
}

/// Whether finite differences are trustworthy for this net at this input:
/// central differences average the two one-sided slopes at a kink, so every
/// nonsmooth point (leaky-ReLU zeros, hinge thresholds at ±1, clip
/// boundaries) must sit further from the evaluation point than any ±h probe
/// can reach. A single probe shifts a pre-activation by at most
/// h·max|previous activation| for weights, or h itself for biases.
pub fn fd_probe_safe(net: &Network, x: &Matrix) -> bool {
    let trace = match net.forward(x) {
        Ok(t) => t,
        Err(_) => return false,
    };
    let mut prev_max = x.values().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for (l, h) in trace.activations().iter().enumerate() {
        let margin = 5.0 * FD_STEP * prev_max.max(1.0);
        if matches!(net.layer(l).spec().activation, Activation::LeakyRelu { .. } | Activation::Relu)
            && h.values().iter().any(|v| v.abs() < margin)
        {
            return false;
        }
        if l + 1 == net.num_layers() && h.values().iter().any(|v| (v.abs() - 1.0).abs() < margin) {
            return false;
        }
        prev_max = h.values().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    }
    for l in 0..net.num_layers() {
        if let NormalizerKind::Clip { c } = net.layer(l).spec().normalizer {
            if net.layer(l).weight().values().iter().any(|w| (w.abs() - c).abs() < 2.0 * FD_STEP) {
                return false;
            }
        }
    }
    true
}

/// Seeded sample pairs for empirical Lipschitz estimation.
pub fn random_pairs(dim: usize, count: usize, scale: f64, rng: &mut impl Rng) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..count)
        .map(|_| {
            let draw = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
                (0..dim)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(rng);
                        scale * g
                    })
                    .collect()
            };
            (draw(rng), draw(rng))
        })
        .collect()
}
