//! Adam with textbook bias correction, applied tensor-by-tensor to a
//! network's weights, biases and reparametrization scales.

use serde::{Deserialize, Serialize};

use crate::net::{GradientSet, Network};

/// Reparametrization scales stay strictly positive; updates are floored here.
const GAMMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// Standard ε default of 1e−8.
    pub fn new(alpha: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig { alpha, beta1, beta2, epsilon: 1e-8 }
    }

    pub fn is_valid(&self) -> bool {
        self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
    }
}

/// First and second moment accumulators, shape-congruent with the network.
#[derive(Clone, Debug)]
pub struct AdamMoments {
    m: GradientSet,
    v: GradientSet,
    t: usize,
}

impl AdamMoments {
    pub fn new(net: &Network) -> Self {
        AdamMoments { m: GradientSet::zeros_like(net), v: GradientSet::zeros_like(net), t: 0 }
    }

    pub fn steps(&self) -> usize {
        self.t
    }
}

fn adam_scalar(param: &mut f64, grad: f64, m: &mut f64, v: &mut f64, cfg: &AdamConfig, t: i32) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * grad;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * grad * grad;
    let m_hat = *m / (1.0 - cfg.beta1.powi(t));
    let v_hat = *v / (1.0 - cfg.beta2.powi(t));
    *param -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
}

/// One bias-corrected update of every parameter from the given gradients.
pub fn adam_step(net: &mut Network, grads: &GradientSet, moments: &mut AdamMoments, cfg: &AdamConfig) {
    moments.t += 1;
    let t = moments.t as i32;
    for l in 0..net.num_layers() {
        {
            let weight = net.weight_mut(l);
            let m = moments.m.weights[l].values_mut();
            let v = moments.v.weights[l].values_mut();
            for (((p, &g), m), v) in
                weight.values_mut().iter_mut().zip(grads.weights[l].values()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                adam_scalar(p, g, m, v, cfg, t);
            }
        }
        if let (Some(bias), Some(bg)) = (net.bias_mut(l), grads.biases[l].as_ref()) {
            let m = moments.m.biases[l].as_mut().unwrap();
            let v = moments.v.biases[l].as_mut().unwrap();
            for (((p, &g), m), v) in bias.iter_mut().zip(bg).zip(m.iter_mut()).zip(v.iter_mut()) {
                adam_scalar(p, g, m, v, cfg, t);
            }
        }
        if let (Some(gamma), Some(&gg)) = (net.gamma_mut(l), grads.gammas[l].as_ref()) {
            let m = moments.m.gammas[l].as_mut().unwrap();
            let v = moments.v.gammas[l].as_mut().unwrap();
            adam_scalar(gamma, gg, m, v, cfg, t);
            if *gamma < GAMMA_FLOOR {
                *gamma = GAMMA_FLOOR;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, LayerSpec};
    use crate::normalizers::NormalizerKind;
    use crate::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_param_net(value: f64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut spec = LayerSpec::dense(1, 1, Activation::Identity, NormalizerKind::None);
        spec.has_bias = false;
        let mut net = Network::new(vec![spec], &mut rng).unwrap();
        net.set_weight(0, Matrix::from_rows(&[vec![value]]).unwrap()).unwrap();
        net
    }

    fn grad(net: &Network, g: f64) -> GradientSet {
        let mut gs = GradientSet::zeros_like(net);
        gs.weights[0].set(0, 0, g);
        gs
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut net = one_param_net(0.25);
        let mut moments = AdamMoments::new(&net);
        let cfg = AdamConfig::new(0.1, 0.9, 0.999);
        for _ in 0..10 {
            let gs = grad(&net, 0.0);
            adam_step(&mut net, &gs, &mut moments, &cfg);
        }
        assert_eq!(net.layer(0).weight().get(0, 0), 0.25);
    }

    #[test]
    fn constant_gradient_settles_at_alpha_sized_steps() {
        let mut net = one_param_net(0.0);
        let mut moments = AdamMoments::new(&net);
        let cfg = AdamConfig::new(0.01, 0.9, 0.999);
        let mut prev = 0.0;
        let mut step = 0.0;
        for _ in 0..800 {
            let gs = grad(&net, 3.7);
            adam_step(&mut net, &gs, &mut moments, &cfg);
            let now = net.layer(0).weight().get(0, 0);
            step = prev - now;
            prev = now;
        }
        assert!(step > 0.9 * cfg.alpha && step < 1.001 * cfg.alpha, "step = {step}");
    }

    #[test]
    fn trajectory_matches_scalar_reference() {
        // Independent scalar implementation of bias-corrected Adam.
        let cfg = AdamConfig::new(0.003, 0.5, 0.999);
        let mut net = one_param_net(1.0);
        let mut moments = AdamMoments::new(&net);

        let mut reference = 1.0_f64;
        let mut m = 0.0_f64;
        let mut v = 0.0_f64;
        for t in 1..=100 {
            // Deterministic pseudo-gradient sequence.
            let g = (t as f64 * 0.37).sin() * 2.0 + 0.1;
            let gs = grad(&net, g);
            adam_step(&mut net, &gs, &mut moments, &cfg);

            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            reference -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);

            let actual = net.layer(0).weight().get(0, 0);
            assert!((actual - reference).abs() <= 1e-12, "t={t}: {actual} vs {reference}");
        }
    }
}
