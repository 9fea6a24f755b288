//! Lipschitz-controlled discriminator networks at desk scale.
//!
//! The crate is organized around the weight matrix: [`linalg`] provides dense
//! matrices, an exact SVD used as a test oracle, and power iteration for the
//! dominant singular triplet; [`normalizers`] implements spectral
//! normalization and the competing weight constraints (weight normalization,
//! Frobenius normalization, clipping, orthonormal and gradient penalties);
//! [`net`] builds layered networks with reverse-mode differentiation that
//! chains through each layer's normalizer; [`training`] runs alternating
//! GAN updates with Adam on synthetic targets; [`metrics`] evaluates runs
//! (Gaussian Fréchet distance, classifier-based scores, singular spectra,
//! mode coverage).

pub mod linalg;
pub mod metrics;
pub mod net;
pub mod normalizers;
pub mod presets;
pub mod training;

pub use linalg::{Matrix, SpectralState, SvdResult};
pub use net::{Activation, LayerKind, LayerSpec, Network};
pub use normalizers::NormalizerKind;
pub use training::{AdamConfig, GanConfig, LossKind, OptSetting, SettingName, ToyTarget};
