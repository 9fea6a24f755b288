//! Stock desk-scale architectures and the canonical pairing of each
//! weight-constraint baseline with its objective, shared by the CLI and the
//! comparison suites.

use crate::net::{Activation, LayerSpec};
use crate::normalizers::{NormalizerKind, DEFAULT_CLIP, DEFAULT_GP_LAMBDA};
use crate::training::{GanConfig, LossKind, OptSetting, SettingName, ToyTarget};

/// Generator MLP `latent → hidden → hidden → out`, ReLU inside, linear
/// output, no weight constraints (only the discriminator is normalized).
pub fn mlp_generator(latent_dim: usize, hidden: usize, out_dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(latent_dim, hidden, Activation::Relu, NormalizerKind::None),
        LayerSpec::dense(hidden, hidden, Activation::Relu, NormalizerKind::None),
        LayerSpec::dense(hidden, out_dim, Activation::Identity, NormalizerKind::None),
    ]
}

/// Discriminator MLP `in → hidden → hidden → hidden → 1` with leaky ReLU
/// (slope 0.1) and the given normalizer on every layer.
pub fn mlp_discriminator(in_dim: usize, hidden: usize, normalizer: NormalizerKind) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(in_dim, hidden, Activation::leaky_relu(), normalizer.clone()),
        LayerSpec::dense(hidden, hidden, Activation::leaky_relu(), normalizer.clone()),
        LayerSpec::dense(hidden, hidden, Activation::leaky_relu(), normalizer.clone()),
        LayerSpec::dense(hidden, 1, Activation::Identity, normalizer),
    ]
}

/// Ready-to-run config on the eight-mode ring.
pub fn ring_gan(normalizer: NormalizerKind, loss: LossKind, setting: SettingName, seed: u64) -> GanConfig {
    let target = ToyTarget::ring8();
    let latent_dim = 8;
    let hidden = 48;
    GanConfig {
        generator: mlp_generator(latent_dim, 32, target.dim()),
        discriminator: mlp_discriminator(target.dim(), hidden, normalizer),
        latent_dim,
        batch_size: 64,
        generator_updates: 5_000,
        seed,
        loss,
        opt: OptSetting::named(setting),
        target,
    }
}

/// One cell of a comparison sweep: a label, the discriminator constraint,
/// and the objective conventionally trained with it.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub normalizer: NormalizerKind,
    pub loss: LossKind,
}

/// Parses a normalizer token into its canonical cell: spectral, weight and
/// Frobenius normalization and the orthonormal penalty train against the
/// cross-entropy objective; clipping trains a critic; `wgan_gp` is the
/// unconstrained critic with gradient penalty. Parenthesized arguments
/// override the per-method constants, e.g. `clip(0.01)`, `orthonormal(1e-4)`.
pub fn parse_cell(token: &str) -> Result<SweepCell, String> {
    let token = token.trim();
    let (head, arg) = match token.find('(') {
        Some(open) => {
            if !token.ends_with(')') {
                return Err(format!("unbalanced parentheses in '{token}'"));
            }
            let arg = &token[open + 1..token.len() - 1];
            (&token[..open], Some(arg.trim()))
        }
        None => (token, None),
    };
    let parse_f64 = |what: &str, v: Option<&str>, default: f64| -> Result<f64, String> {
        match v {
            None => Ok(default),
            Some(s) => s.parse::<f64>().map_err(|e| format!("bad {what} in '{token}': {e}")),
        }
    };
    let cell = match head {
        "none" => SweepCell { label: token.into(), normalizer: NormalizerKind::None, loss: LossKind::StandardAlternate },
        "spectral" | "sn" => {
            let n_power = match arg {
                None => 1,
                Some(s) => s.parse::<usize>().map_err(|e| format!("bad n_power in '{token}': {e}"))?,
            };
            SweepCell {
                label: token.into(),
                normalizer: NormalizerKind::Spectral { n_power },
                loss: LossKind::StandardAlternate,
            }
        }
        "weight_norm" | "wn" => {
            SweepCell { label: token.into(), normalizer: NormalizerKind::WeightNorm, loss: LossKind::StandardAlternate }
        }
        "frobenius" | "fn" => {
            SweepCell { label: token.into(), normalizer: NormalizerKind::Frobenius, loss: LossKind::StandardAlternate }
        }
        "orthonormal" => {
            let beta = parse_f64("beta", arg, 1e-4)?;
            SweepCell {
                label: token.into(),
                normalizer: NormalizerKind::Orthonormal { beta },
                loss: LossKind::StandardAlternate,
            }
        }
        "clip" => {
            let c = parse_f64("clip constant", arg, DEFAULT_CLIP)?;
            SweepCell { label: token.into(), normalizer: NormalizerKind::Clip { c }, loss: LossKind::Wgan }
        }
        "wgan_gp" => {
            let lambda = parse_f64("lambda", arg, DEFAULT_GP_LAMBDA)?;
            SweepCell { label: token.into(), normalizer: NormalizerKind::None, loss: LossKind::WganGp { lambda } }
        }
        "spectral_reparam" => {
            let gamma = parse_f64("gamma", arg, 1.0)?;
            SweepCell {
                label: token.into(),
                normalizer: NormalizerKind::SpectralReparam { gamma, n_power: 1 },
                loss: LossKind::wgan_gp(),
            }
        }
        other => return Err(format!("unknown normalizer token '{other}'")),
    };
    Ok(cell)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_cells() {
        let sn = parse_cell("spectral").unwrap();
        assert_eq!(sn.normalizer, NormalizerKind::Spectral { n_power: 1 });
        assert_eq!(sn.loss, LossKind::StandardAlternate);

        let clip = parse_cell("clip(0.01)").unwrap();
        assert_eq!(clip.normalizer, NormalizerKind::Clip { c: 0.01 });
        assert_eq!(clip.loss, LossKind::Wgan);

        let gp = parse_cell("wgan_gp").unwrap();
        assert_eq!(gp.normalizer, NormalizerKind::None);
        assert_eq!(gp.loss, LossKind::WganGp { lambda: 10.0 });

        assert!(parse_cell("mystery").is_err());
        assert!(parse_cell("clip(oops)").is_err());
    }

    #[test]
    fn ring_config_composes() {
        let cfg = ring_gan(NormalizerKind::spectral(), LossKind::StandardAlternate, SettingName::C, 7);
        cfg.validate().unwrap();
    }
}
