//! GAN objectives over discriminator logits, with numerically stable
//! compositions (log-sigmoid via softplus) and the gradients the training
//! loop feeds back through the networks.

use serde::{Deserialize, Serialize};

/// Balancing coefficient default for the gradient-penalty objective.
pub use crate::normalizers::DEFAULT_GP_LAMBDA;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Saturating cross-entropy for the discriminator, the alternate
    /// (non-saturating) cost for the generator.
    StandardAlternate,
    Hinge,
    Wgan,
    WganGp { lambda: f64 },
}

impl LossKind {
    pub fn wgan_gp() -> Self {
        LossKind::WganGp { lambda: DEFAULT_GP_LAMBDA }
    }

    pub fn gp_lambda(&self) -> Option<f64> {
        match self {
            LossKind::WganGp { lambda } => Some(*lambda),
            _ => None,
        }
    }
}

/// `ln(1 + eˣ)` without overflow anywhere on the f64 range.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Discriminator cross-entropy with the sigmoid applied internally,
/// as the minimized negation of `E[log D(x)] + E[log(1 − D(G(z)))]`:
/// `Ê[softplus(−r)] + Ê[softplus(f)]` over real and fake logits.
pub fn loss_discriminator_standard(d_real: &[f64], d_fake: &[f64]) -> f64 {
    mean(&d_real.iter().map(|&r| softplus(-r)).collect::<Vec<_>>())
        + mean(&d_fake.iter().map(|&f| softplus(f)).collect::<Vec<_>>())
}

/// The alternate generator cost `−E[log D(G(z))] = Ê[softplus(−f)]`.
pub fn loss_generator_alternate(d_fake: &[f64]) -> f64 {
    mean(&d_fake.iter().map(|&f| softplus(-f)).collect::<Vec<_>>())
}

/// Hinge objective value for the discriminator,
/// `E[min(0, −1 + D(x))] + E[min(0, −1 − D(G(z)))]`; the trainer minimizes
/// its negation. Always ≤ 0, and 0 exactly when every real score is ≥ 1
/// and every fake score ≤ −1.
pub fn loss_hinge_d(d_real: &[f64], d_fake: &[f64]) -> f64 {
    mean(&d_real.iter().map(|&r| (r - 1.0).min(0.0)).collect::<Vec<_>>())
        + mean(&d_fake.iter().map(|&f| (-1.0 - f).min(0.0)).collect::<Vec<_>>())
}

/// Hinge generator objective `−E[D(G(z))]`.
pub fn loss_hinge_g(d_fake: &[f64]) -> f64 {
    -mean(d_fake)
}

/// Critic difference `E[D(x)] − E[D(G(z))]`; subtract the gradient-penalty
/// value to obtain the full regularized objective.
pub fn loss_wgan(d_real: &[f64], d_fake: &[f64]) -> f64 {
    mean(d_real) - mean(d_fake)
}

/// Minimized discriminator loss plus gradients with respect to the real and
/// fake logits (penalty terms handled separately by the caller).
pub fn discriminator_loss_grads(kind: &LossKind, real: &[f64], fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nr = real.len().max(1) as f64;
    let nf = fake.len().max(1) as f64;
    match kind {
        LossKind::StandardAlternate => {
            let value = loss_discriminator_standard(real, fake);
            let dr = real.iter().map(|&r| -sigmoid(-r) / nr).collect();
            let df = fake.iter().map(|&f| sigmoid(f) / nf).collect();
            (value, dr, df)
        }
        LossKind::Hinge => {
            let value = -loss_hinge_d(real, fake);
            let dr = real.iter().map(|&r| if r < 1.0 { -1.0 / nr } else { 0.0 }).collect();
            let df = fake.iter().map(|&f| if f > -1.0 { 1.0 / nf } else { 0.0 }).collect();
            (value, dr, df)
        }
        LossKind::Wgan | LossKind::WganGp { .. } => {
            let value = -loss_wgan(real, fake);
            let dr = real.iter().map(|_| -1.0 / nr).collect();
            let df = fake.iter().map(|_| 1.0 / nf).collect();
            (value, dr, df)
        }
    }
}

/// Minimized generator loss plus gradient with respect to the fake logits.
pub fn generator_loss_grads(kind: &LossKind, fake: &[f64]) -> (f64, Vec<f64>) {
    let nf = fake.len().max(1) as f64;
    match kind {
        LossKind::StandardAlternate => {
            let value = loss_generator_alternate(fake);
            let df = fake.iter().map(|&f| -sigmoid(-f) / nf).collect();
            (value, df)
        }
        LossKind::Hinge | LossKind::Wgan | LossKind::WganGp { .. } => {
            let value = loss_hinge_g(fake);
            let df = fake.iter().map(|_| -1.0 / nf).collect();
            (value, df)
        }
    }
}
