//! Experiment configuration: a single TOML file with the science section
//! (`[gan]`), harness knobs, and an optional `[sweep]` matrix. Named
//! optimizer settings are first-class tokens (`opt = "C"`), so the published
//! hyperparameter rows never get transcribed by hand.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use specnorm::net::LayerSpec;
use specnorm::presets::{mlp_discriminator, mlp_generator, parse_cell};
use specnorm::training::{
    AdamConfig, GanConfig, LossKind, OptSetting, SettingName, TrainOptions, ToyTarget,
};

use crate::CliError;

pub const DEFAULT_METRIC_CADENCE: usize = 100;
pub const DEFAULT_CHECKPOINT_CADENCE: usize = 1_000;
pub const DEFAULT_EVAL_SAMPLES: usize = 5_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_metric_cadence")]
    pub metric_cadence: usize,
    #[serde(default = "default_checkpoint_cadence")]
    pub checkpoint_cadence: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default)]
    pub coverage_threshold: Option<f64>,
    #[serde(default = "default_parallel_runs")]
    pub parallel_runs: usize,
    #[serde(default)]
    pub record_timing: bool,
    pub gan: GanSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

fn default_metric_cadence() -> usize {
    DEFAULT_METRIC_CADENCE
}

fn default_checkpoint_cadence() -> usize {
    DEFAULT_CHECKPOINT_CADENCE
}

fn default_eval_samples() -> usize {
    DEFAULT_EVAL_SAMPLES
}

fn default_parallel_runs() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSection {
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_generator_updates")]
    pub generator_updates: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    pub opt: OptSpec,
    pub target: ToyTarget,
    /// Explicit layer stacks, or the MLP shorthands below.
    #[serde(default)]
    pub generator: Option<Vec<LayerSpec>>,
    #[serde(default)]
    pub discriminator: Option<Vec<LayerSpec>>,
    #[serde(default)]
    pub generator_mlp: Option<GeneratorMlp>,
    #[serde(default)]
    pub discriminator_mlp: Option<DiscriminatorMlp>,
}

fn default_latent_dim() -> usize {
    specnorm::training::DEFAULT_LATENT_DIM
}

fn default_batch_size() -> usize {
    specnorm::training::DEFAULT_BATCH_SIZE
}

fn default_generator_updates() -> usize {
    specnorm::training::DEFAULT_GENERATOR_UPDATES
}

fn default_loss() -> LossKind {
    LossKind::StandardAlternate
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorMlp {
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorMlp {
    pub hidden: usize,
    /// Normalizer token, e.g. "spectral", "clip(0.01)", "weight_norm".
    pub normalizer: String,
}

/// Either a named setting token (`"A"`–`"F"`) or explicit values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptSpec {
    Named(String),
    Custom {
        alpha: f64,
        beta1: f64,
        beta2: f64,
        n_dis: usize,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_epsilon() -> f64 {
    1e-8
}

impl OptSpec {
    pub fn resolve(&self) -> Result<OptSetting, CliError> {
        match self {
            OptSpec::Named(token) => {
                let name: SettingName =
                    token.parse().map_err(|e: String| CliError::Config(format!("gan.opt: {e}")))?;
                Ok(OptSetting::named(name))
            }
            OptSpec::Custom { alpha, beta1, beta2, n_dis, epsilon } => {
                let adam = AdamConfig { alpha: *alpha, beta1: *beta1, beta2: *beta2, epsilon: *epsilon };
                if !adam.is_valid() {
                    return Err(CliError::Config(format!("gan.opt: invalid Adam values {adam:?}")));
                }
                Ok(OptSetting::custom(adam, *n_dis))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Normalizer tokens; each carries its canonical objective.
    pub normalizers: Vec<String>,
    /// Named setting tokens "A"–"F".
    pub settings: Vec<String>,
    #[serde(default = "default_sweep_seeds")]
    pub seeds: Vec<u64>,
}

fn default_sweep_seeds() -> Vec<u64> {
    vec![1]
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.metric_cadence == 0 {
            return Err(CliError::Config("metric_cadence: must be at least 1".into()));
        }
        if self.checkpoint_cadence == 0 {
            return Err(CliError::Config("checkpoint_cadence: must be at least 1".into()));
        }
        if self.parallel_runs == 0 {
            return Err(CliError::Config("parallel_runs: must be at least 1".into()));
        }
        if self.gan.generator.is_some() && self.gan.generator_mlp.is_some() {
            return Err(CliError::Config("gan.generator: give either explicit layers or generator_mlp, not both".into()));
        }
        if self.gan.discriminator.is_some() && self.gan.discriminator_mlp.is_some() {
            return Err(CliError::Config(
                "gan.discriminator: give either explicit layers or discriminator_mlp, not both".into(),
            ));
        }
        if self.gan.generator.is_none() && self.gan.generator_mlp.is_none() {
            return Err(CliError::Config("gan.generator: missing (set generator layers or generator_mlp)".into()));
        }
        if self.gan.discriminator.is_none() && self.gan.discriminator_mlp.is_none() {
            return Err(CliError::Config(
                "gan.discriminator: missing (set discriminator layers or discriminator_mlp)".into(),
            ));
        }
        // Resolve once so token errors surface at load time.
        self.gan.opt.resolve()?;
        if let Some(d) = &self.gan.discriminator_mlp {
            parse_cell(&d.normalizer).map_err(|e| CliError::Config(format!("gan.discriminator_mlp.normalizer: {e}")))?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.normalizers.is_empty() || sweep.settings.is_empty() || sweep.seeds.is_empty() {
                return Err(CliError::Config("sweep: normalizers, settings and seeds must be non-empty".into()));
            }
            for token in &sweep.normalizers {
                parse_cell(token).map_err(|e| CliError::Config(format!("sweep.normalizers: {e}")))?;
            }
            for token in &sweep.settings {
                token
                    .parse::<SettingName>()
                    .map_err(|e| CliError::Config(format!("sweep.settings: {e}")))?;
            }
        }
        Ok(())
    }

    /// The science config for a single run, after applying optional
    /// normalizer/loss/setting/seed overrides (used by sweep cells).
    pub fn gan_config(&self, cell: Option<&specnorm::presets::SweepCell>, setting: Option<SettingName>, seed: Option<u64>) -> Result<GanConfig, CliError> {
        let target = self.gan.target.clone();
        let latent_dim = self.gan.latent_dim;

        let generator = match (&self.gan.generator, &self.gan.generator_mlp) {
            (Some(layers), _) => layers.clone(),
            (None, Some(mlp)) => mlp_generator(latent_dim, mlp.hidden, target.dim()),
            (None, None) => unreachable!("validated"),
        };
        let discriminator = match (&self.gan.discriminator, &self.gan.discriminator_mlp) {
            (Some(layers), _) => {
                let mut layers = layers.clone();
                if let Some(cell) = cell {
                    for layer in &mut layers {
                        layer.normalizer = cell.normalizer.clone();
                    }
                }
                layers
            }
            (None, Some(mlp)) => {
                let normalizer = match cell {
                    Some(cell) => cell.normalizer.clone(),
                    None => parse_cell(&mlp.normalizer)
                        .map_err(|e| CliError::Config(format!("gan.discriminator_mlp.normalizer: {e}")))?
                        .normalizer,
                };
                mlp_discriminator(target.dim(), mlp.hidden, normalizer)
            }
            (None, None) => unreachable!("validated"),
        };

        let opt = match setting {
            Some(name) => OptSetting::named(name),
            None => self.gan.opt.resolve()?,
        };
        let loss = match cell {
            Some(cell) => cell.loss.clone(),
            None => self.gan.loss.clone(),
        };
        let config = GanConfig {
            generator,
            discriminator,
            latent_dim,
            batch_size: self.gan.batch_size,
            generator_updates: self.gan.generator_updates,
            seed: seed.unwrap_or(self.seed),
            loss,
            opt,
            target,
        };
        config.validate().map_err(|e| CliError::Config(format!("gan: {e}")))?;
        Ok(config)
    }

    pub fn train_options(&self, run_id: String, checkpoint_dir: Option<PathBuf>) -> TrainOptions {
        TrainOptions {
            run_id,
            metric_cadence: self.metric_cadence,
            eval_samples: self.eval_samples,
            coverage_threshold: self.coverage_threshold,
            checkpoint_dir,
            checkpoint_cadence: self.checkpoint_cadence,
            record_timing: self.record_timing,
        }
    }

    /// Platform-independent hash of the resolved configuration. The output
    /// location is not part of the experiment's identity.
    pub fn config_hash(&self) -> String {
        let mut identity = self.clone();
        identity.out_dir = None;
        let canonical = serde_json::to_string(&identity).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}
