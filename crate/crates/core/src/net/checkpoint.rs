//! Versioned JSON checkpoints: layer specs, raw weights, biases, spectral
//! states, reparametrization scales, and RNG position. The power-iteration
//! vectors are persisted because recycling them across steps is the point;
//! a reload continues exactly where the run left off. f64 payloads survive
//! the round trip bit-exactly (shortest-representation encoding).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, SpectralState};

use super::{Layer, LayerSpec, NetError, Network};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha stream, enough to reconstruct the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub spec: LayerSpec,
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub spectral_state: Option<SpectralState>,
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub layers: Vec<LayerSnapshot>,
    pub rng: Option<RngState>,
}

impl Network {
    pub fn checkpoint(&self, rng: Option<&ChaCha8Rng>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layers: self
                .layers()
                .iter()
                .map(|l| LayerSnapshot {
                    spec: l.spec().clone(),
                    weight: l.weight().clone(),
                    bias: l.bias().map(|b| b.to_vec()),
                    spectral_state: l.spectral_state().cloned(),
                    gamma: l.gamma(),
                })
                .collect(),
            rng: rng.map(RngState::capture),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<(Network, Option<ChaCha8Rng>), NetError> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(NetError::BadCheckpoint(format!(
                "version {} not supported (expected {CHECKPOINT_VERSION})",
                cp.version
            )));
        }
        let layers: Vec<Layer> = cp
            .layers
            .iter()
            .map(|s| Layer {
                spec: s.spec.clone(),
                weight: s.weight.clone(),
                bias: s.bias.clone(),
                state: s.spectral_state.clone(),
                gamma: s.gamma,
            })
            .collect();
        let net = Network::from_layers(layers)?;
        Ok((net, cp.rng.as_ref().map(RngState::restore)))
    }
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), NetError> {
    let json = serde_json::to_string(cp)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NetError> {
    let text = std::fs::read_to_string(path)?;
    let cp: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| NetError::BadCheckpoint(format!("{}: {e}", path.display())))?;
    Ok(cp)
}
