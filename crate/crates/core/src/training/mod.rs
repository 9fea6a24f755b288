//! Alternating GAN training with Adam on desk-scale synthetic targets:
//! `n_dis` discriminator updates per generator update, deterministic under
//! the config seed, with metric emission and checkpointing at configured
//! cadences.

mod adam;
mod loss;
mod sink;
mod toy;

pub use adam::{adam_step, AdamConfig, AdamMoments};
pub use loss::{
    discriminator_loss_grads, generator_loss_grads, loss_discriminator_standard, loss_generator_alternate, loss_hinge_d, loss_hinge_g, loss_wgan, sigmoid,
    softplus, LossKind, DEFAULT_GP_LAMBDA,
};
pub use sink::{CsvSink, JsonlSink, MemorySink, MetricRecord, MetricSink};
pub use toy::{ToyTarget, MANIFOLD_LANDMARKS};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{svd_oracle, LinalgError, Matrix};
use crate::metrics::{fit_gaussian, frechet_distance, mode_coverage, MetricError};
use crate::net::{Checkpoint, LayerSpec, NetError, Network, RngState};
use crate::normalizers::{gradient_penalty, orthonormal_penalty, NormalizerError, NormalizerKind};

pub const DEFAULT_LATENT_DIM: usize = 128;
pub const DEFAULT_BATCH_SIZE: usize = 64;
/// Desk-scale default; full-scale runs in the hundred-thousands are out of
/// scope here.
pub const DEFAULT_GENERATOR_UPDATES: usize = 5_000;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Normalizer(#[from] NormalizerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding: {0}")]
    Json(#[from] serde_json::Error),
}

/// The six optimizer settings used for robustness comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingName {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl SettingName {
    pub const ALL: [SettingName; 6] =
        [SettingName::A, SettingName::B, SettingName::C, SettingName::D, SettingName::E, SettingName::F];
}

impl std::str::FromStr for SettingName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(SettingName::A),
            "B" => Ok(SettingName::B),
            "C" => Ok(SettingName::C),
            "D" => Ok(SettingName::D),
            "E" => Ok(SettingName::E),
            "F" => Ok(SettingName::F),
            other => Err(format!("unknown setting '{other}', expected one of A-F")),
        }
    }
}

impl std::fmt::Display for SettingName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Adam hyperparameters plus the discriminator/generator update ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptSetting {
    pub name: Option<SettingName>,
    pub adam: AdamConfig,
    pub n_dis: usize,
}

impl OptSetting {
    /// (α, β₁, β₂, n_dis) for the named setting.
    pub fn named(name: SettingName) -> Self {
        let (alpha, beta1, beta2, n_dis) = match name {
            SettingName::A => (0.0001, 0.5, 0.9, 5),
            SettingName::B => (0.0001, 0.5, 0.999, 1),
            SettingName::C => (0.0002, 0.5, 0.999, 1),
            SettingName::D => (0.001, 0.5, 0.9, 5),
            SettingName::E => (0.001, 0.5, 0.999, 5),
            SettingName::F => (0.001, 0.9, 0.999, 5),
        };
        OptSetting { name: Some(name), adam: AdamConfig::new(alpha, beta1, beta2), n_dis }
    }

    pub fn custom(adam: AdamConfig, n_dis: usize) -> Self {
        OptSetting { name: None, adam, n_dis }
    }
}

/// Full description of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub generator: Vec<LayerSpec>,
    pub discriminator: Vec<LayerSpec>,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub generator_updates: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub opt: OptSetting,
    pub target: ToyTarget,
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.target.validate()?;
        if self.latent_dim == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("latent_dim and batch_size must be positive".into()));
        }
        if self.opt.n_dis == 0 {
            return Err(TrainError::InvalidConfig("n_dis must be at least 1".into()));
        }
        if !self.opt.adam.is_valid() {
            return Err(TrainError::InvalidConfig(format!("bad Adam config {:?}", self.opt.adam)));
        }
        if let LossKind::WganGp { lambda } = self.loss {
            if lambda < 0.0 {
                return Err(TrainError::InvalidConfig("gradient-penalty lambda must be ≥ 0".into()));
            }
        }
        let g_in = self.generator.first().map(|l| l.kind.in_dim()).unwrap_or(0);
        let g_out = self.generator.last().map(|l| l.kind.out_dim()).unwrap_or(0);
        let d_in = self.discriminator.first().map(|l| l.kind.in_dim()).unwrap_or(0);
        let d_out = self.discriminator.last().map(|l| l.kind.out_dim()).unwrap_or(0);
        if g_in != self.latent_dim {
            return Err(TrainError::InvalidConfig(format!(
                "generator consumes {g_in} inputs but latent_dim is {}",
                self.latent_dim
            )));
        }
        let data_dim = self.target.dim();
        if g_out != data_dim || d_in != data_dim {
            return Err(TrainError::InvalidConfig(format!(
                "data dimension {data_dim} does not match generator output {g_out} / discriminator input {d_in}"
            )));
        }
        if d_out != 1 {
            return Err(TrainError::InvalidConfig(format!("discriminator must output one logit, got {d_out}")));
        }
        Ok(())
    }
}

/// Harness knobs that do not affect the trained model.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub run_id: String,
    /// Emit a metric record every this many generator updates.
    pub metric_cadence: usize,
    /// Samples drawn (from a dedicated evaluation stream) per record;
    /// defaults to 5000, configurable down for quick runs.
    pub eval_samples: usize,
    /// Distance for mode coverage; defaults to 3σ of the target.
    pub coverage_threshold: Option<f64>,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_cadence: usize,
    /// When true, `wall_ms` carries real elapsed time at the cost of
    /// byte-identical metric streams across repeated runs.
    pub record_timing: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            run_id: "run".into(),
            metric_cadence: 100,
            eval_samples: 5_000,
            coverage_threshold: None,
            checkpoint_dir: None,
            checkpoint_cadence: 1_000,
            record_timing: false,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.metric_cadence == 0 || self.checkpoint_cadence == 0 {
            return Err(TrainError::InvalidConfig("cadences must be at least 1".into()));
        }
        if self.eval_samples < 2 {
            return Err(TrainError::InvalidConfig("eval_samples must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollapseInfo {
    pub iter: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub run_id: String,
    pub generator_updates_done: usize,
    pub discriminator_updates_done: usize,
    pub collapsed: Option<CollapseInfo>,
    pub final_metrics: MetricRecord,
    pub checkpoint_path: Option<PathBuf>,
    pub wall_ms: u64,
}

/// Both networks plus the exact RNG positions of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub version: u32,
    pub iter: usize,
    pub generator: Checkpoint,
    pub discriminator: Checkpoint,
    pub train_rng: RngState,
    pub eval_rng: RngState,
}

pub const RUN_CHECKPOINT_VERSION: u32 = 1;

pub fn save_run_checkpoint(path: &Path, cp: &RunCheckpoint) -> Result<(), TrainError> {
    std::fs::write(path, serde_json::to_string(cp)?)?;
    Ok(())
}

pub fn load_run_checkpoint(path: &Path) -> Result<RunCheckpoint, TrainError> {
    let text = std::fs::read_to_string(path)?;
    let cp: RunCheckpoint = serde_json::from_str(&text)
        .map_err(|e| TrainError::Net(NetError::BadCheckpoint(format!("{}: {e}", path.display()))))?;
    if cp.version != RUN_CHECKPOINT_VERSION {
        return Err(TrainError::Net(NetError::BadCheckpoint(format!("run checkpoint version {}", cp.version))));
    }
    Ok(cp)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn latent_batch(n: usize, dim: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(n, dim);
    for i in 0..n {
        for x in m.row_mut(i) {
            *x = StandardNormal.sample(rng);
        }
    }
    m
}

struct EvalContext {
    rng: ChaCha8Rng,
    threshold: f64,
    samples: usize,
}

struct RunState {
    g: Network,
    d: Network,
    moments_g: AdamMoments,
    moments_d: AdamMoments,
    rng_train: ChaCha8Rng,
    d_updates: usize,
}

/// Runs the alternating loop: per generator update, `n_dis` discriminator
/// updates on fresh real/latent batches, then one generator update through
/// an evaluation-mode discriminator pass (training state is only advanced by
/// discriminator updates). A non-finite loss or gradient aborts the run and
/// reports the collapse instead of continuing silently.
pub fn train_gan(
    config: &GanConfig,
    options: &TrainOptions,
    sinks: &mut [&mut dyn MetricSink],
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    options.validate()?;
    let started = Instant::now();

    let mut rng_init_g = stream_rng(config.seed, 1);
    let mut rng_init_d = stream_rng(config.seed, 2);
    let rng_train = stream_rng(config.seed, 3);
    let rng_eval = stream_rng(config.seed, 4);

    let g = Network::new(config.generator.clone(), &mut rng_init_g)?;
    let d = Network::new(config.discriminator.clone(), &mut rng_init_d)?;
    let moments_g = AdamMoments::new(&g);
    let moments_d = AdamMoments::new(&d);
    let mut state = RunState { g, d, moments_g, moments_d, rng_train, d_updates: 0 };

    let threshold = options.coverage_threshold.unwrap_or(3.0 * config.target.sigma());
    let mut eval = EvalContext { rng: rng_eval, threshold, samples: options.eval_samples };

    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    // Initial record: evaluation losses before any update.
    let (loss_d0, loss_g0) = eval_losses(config, &mut state, &mut eval)?;
    let mut last_record =
        emit_metrics(config, options, &state, &mut eval, 0, loss_d0, loss_g0, &started, sinks)?;

    let mut collapse: Option<CollapseInfo> = None;
    let mut last_loss_d = loss_d0;
    let mut last_loss_g = loss_g0;

    'outer: for update in 1..=config.generator_updates {
        for _ in 0..config.opt.n_dis {
            match discriminator_update(config, &mut state) {
                Ok(value) => last_loss_d = value,
                Err(StepOutcome::Collapse(detail)) => {
                    collapse = Some(CollapseInfo { iter: update, detail });
                    break 'outer;
                }
                Err(StepOutcome::Train(e)) => return Err(e),
            }
        }
        match generator_update(config, &mut state) {
            Ok(value) => last_loss_g = value,
            Err(StepOutcome::Collapse(detail)) => {
                collapse = Some(CollapseInfo { iter: update, detail });
                break 'outer;
            }
            Err(StepOutcome::Train(e)) => return Err(e),
        }

        if update % options.metric_cadence == 0 || update == config.generator_updates {
            last_record =
                emit_metrics(config, options, &state, &mut eval, update, last_loss_d, last_loss_g, &started, sinks)?;
        }
        if let Some(dir) = &options.checkpoint_dir {
            if update % options.checkpoint_cadence == 0 && update != config.generator_updates {
                let path = dir.join(format!("checkpoint_{update:07}.json"));
                save_run_checkpoint(&path, &run_checkpoint(&state, update, &eval))?;
            }
        }
    }

    if collapse.is_some() {
        // Diagnostic record at the point of failure.
        last_record = emit_metrics(
            config,
            options,
            &state,
            &mut eval,
            state.moments_g.steps(),
            last_loss_d,
            last_loss_g,
            &started,
            sinks,
        )?;
    }
    for sink in sinks.iter_mut() {
        sink.flush()?;
    }

    let checkpoint_path = if let Some(dir) = &options.checkpoint_dir {
        let path = dir.join("checkpoint_final.json");
        save_run_checkpoint(&path, &run_checkpoint(&state, state.moments_g.steps(), &eval))?;
        Some(path)
    } else {
        None
    };

    Ok(TrainReport {
        run_id: options.run_id.clone(),
        generator_updates_done: state.moments_g.steps(),
        discriminator_updates_done: state.d_updates,
        collapsed: collapse,
        final_metrics: last_record,
        checkpoint_path,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

enum StepOutcome {
    Collapse(String),
    Train(TrainError),
}

impl From<TrainError> for StepOutcome {
    fn from(e: TrainError) -> Self {
        StepOutcome::Train(e)
    }
}

impl From<NetError> for StepOutcome {
    fn from(e: NetError) -> Self {
        StepOutcome::Train(e.into())
    }
}

fn sample_real(config: &GanConfig, rng: &mut impl Rng) -> Result<Matrix, TrainError> {
    let rows = config.target.sample(config.batch_size, rng);
    Matrix::from_rows(&rows).map_err(|e| TrainError::InvalidConfig(e.to_string()))
}

fn discriminator_update(config: &GanConfig, state: &mut RunState) -> Result<f64, StepOutcome> {
    let batch = config.batch_size;
    let x_real = sample_real(config, &mut state.rng_train)?;
    let z = latent_batch(batch, config.latent_dim, &mut state.rng_train);
    let x_fake = state.g.forward(&z)?.output().clone();
    if !x_fake.is_finite() {
        return Err(StepOutcome::Collapse("generator produced non-finite samples".into()));
    }

    let combined = x_real.vstack(&x_fake);
    let trace = state.d.forward_train(&combined)?;
    let logits = trace.output();
    let real_logits: Vec<f64> = (0..batch).map(|i| logits.get(i, 0)).collect();
    let fake_logits: Vec<f64> = (batch..2 * batch).map(|i| logits.get(i, 0)).collect();
    let (mut loss, dreal, dfake) = loss::discriminator_loss_grads(&config.loss, &real_logits, &fake_logits);

    let mut upstream = Matrix::zeros(2 * batch, 1);
    for (i, v) in dreal.iter().chain(dfake.iter()).enumerate() {
        upstream.set(i, 0, *v);
    }
    let mut grads = state.d.backward(&trace, &upstream)?;

    if let LossKind::WganGp { lambda } = config.loss {
        let penalty = gradient_penalty(&state.d, &x_real, &x_fake, lambda, &mut state.rng_train)
            .map_err(TrainError::from)?;
        loss += penalty.value;
        grads.add_assign(&penalty.gradients);
    }
    for l in 0..state.d.num_layers() {
        if let NormalizerKind::Orthonormal { beta } = state.d.layer(l).spec().normalizer {
            let penalty = orthonormal_penalty(state.d.layer(l).weight(), beta);
            loss += penalty.value;
            grads.weights[l].add_assign(&penalty.weight_grad);
        }
    }

    if !loss.is_finite() || !grads.is_finite() {
        return Err(StepOutcome::Collapse(format!("non-finite discriminator loss/gradients (loss = {loss})")));
    }
    adam_step(&mut state.d, &grads, &mut state.moments_d, &config.opt.adam);
    project_clip_layers(&mut state.d);
    state.d_updates += 1;
    Ok(loss)
}

fn generator_update(config: &GanConfig, state: &mut RunState) -> Result<f64, StepOutcome> {
    let z = latent_batch(config.batch_size, config.latent_dim, &mut state.rng_train);
    let g_trace = state.g.forward(&z)?;
    if !g_trace.output().is_finite() {
        return Err(StepOutcome::Collapse("generator produced non-finite samples".into()));
    }
    let d_trace = state.d.forward(g_trace.output())?;
    let fake_logits: Vec<f64> = (0..config.batch_size).map(|i| d_trace.output().get(i, 0)).collect();
    let (loss, dfake) = loss::generator_loss_grads(&config.loss, &fake_logits);

    let upstream = Matrix::new(config.batch_size, 1, dfake).map_err(|_| {
        StepOutcome::Collapse("non-finite generator loss gradient".into())
    })?;
    let (_, input_grad) = state.d.backward_with_input(&d_trace, &upstream)?;
    let g_grads = state.g.backward(&g_trace, &input_grad)?;

    if !loss.is_finite() || !g_grads.is_finite() {
        return Err(StepOutcome::Collapse(format!("non-finite generator loss/gradients (loss = {loss})")));
    }
    adam_step(&mut state.g, &g_grads, &mut state.moments_g, &config.opt.adam);
    Ok(loss)
}

/// Weight clipping projects the raw weights back into the box after each
/// update, so the clamp in the forward pass is the identity on the training
/// trajectory and gradients keep flowing everywhere.
fn project_clip_layers(d: &mut Network) {
    for l in 0..d.num_layers() {
        if let NormalizerKind::Clip { c } = d.layer(l).spec().normalizer {
            for x in d.weight_mut(l).values_mut() {
                *x = x.clamp(-c, c);
            }
        }
    }
}

fn eval_losses(config: &GanConfig, state: &mut RunState, eval: &mut EvalContext) -> Result<(f64, f64), TrainError> {
    let x_real = sample_real(config, &mut eval.rng)?;
    let z = latent_batch(config.batch_size, config.latent_dim, &mut eval.rng);
    let x_fake = state.g.forward(&z)?.output().clone();
    let real_trace = state.d.forward(&x_real)?;
    let fake_trace = state.d.forward(&x_fake)?;
    let real_logits: Vec<f64> = (0..config.batch_size).map(|i| real_trace.output().get(i, 0)).collect();
    let fake_logits: Vec<f64> = (0..config.batch_size).map(|i| fake_trace.output().get(i, 0)).collect();
    let (loss_d, _, _) = loss::discriminator_loss_grads(&config.loss, &real_logits, &fake_logits);
    let (loss_g, _) = loss::generator_loss_grads(&config.loss, &fake_logits);
    Ok((loss_d, loss_g))
}

#[allow(clippy::too_many_arguments)]
fn emit_metrics(
    config: &GanConfig,
    options: &TrainOptions,
    state: &RunState,
    eval: &mut EvalContext,
    iter: usize,
    loss_d: f64,
    loss_g: f64,
    started: &Instant,
    sinks: &mut [&mut dyn MetricSink],
) -> Result<MetricRecord, TrainError> {
    // Diagnostics must not abort a run: a layer the oracle cannot factor is
    // recorded as NaN.
    let mut sigmas = Vec::with_capacity(state.d.num_layers());
    match state.d.effective_weights() {
        Ok(weights) => {
            for w in weights {
                sigmas.push(svd_oracle(&w).map(|r| r.s[0]).unwrap_or(f64::NAN));
            }
        }
        Err(_) => sigmas.resize(state.d.num_layers(), f64::NAN),
    }

    let real_rows = config.target.sample(eval.samples, &mut eval.rng);
    let z = latent_batch(eval.samples, config.latent_dim, &mut eval.rng);
    let fake = state.g.forward(&z)?.output().clone();
    let fake_rows: Vec<Vec<f64>> = (0..fake.rows()).map(|i| fake.row(i).to_vec()).collect();

    let frechet = if fake.is_finite() {
        let real_fit = fit_gaussian(&Matrix::from_rows(&real_rows).map_err(|e| TrainError::InvalidConfig(e.to_string()))?)?;
        let fake_fit = fit_gaussian(&fake)?;
        frechet_distance(&real_fit, &fake_fit).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let (coverage, _) = mode_coverage(&fake_rows, &config.target, eval.threshold);

    let record = MetricRecord {
        run_id: options.run_id.clone(),
        iter,
        wall_ms: if options.record_timing { started.elapsed().as_millis() as u64 } else { 0 },
        loss_d,
        loss_g,
        sigmas,
        frechet,
        mode_coverage: coverage,
    };
    for sink in sinks.iter_mut() {
        sink.record(&record)?;
    }
    Ok(record)
}

fn run_checkpoint(state: &RunState, iter: usize, eval: &EvalContext) -> RunCheckpoint {
    RunCheckpoint {
        version: RUN_CHECKPOINT_VERSION,
        iter,
        generator: state.g.checkpoint(None),
        discriminator: state.d.checkpoint(None),
        train_rng: RngState::capture(&state.rng_train),
        eval_rng: RngState::capture(&eval.rng),
    }
}

#[cfg(test)]
mod tests;
