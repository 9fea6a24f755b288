pub mod analyze;
pub mod gradcheck;
pub mod run;
pub mod sweep;

use std::path::{Path, PathBuf};

use specnorm::training::{train_gan, CsvSink, GanConfig, JsonlSink, TrainOptions, TrainReport};

use crate::config::ExperimentConfig;
use crate::manifest::{emitted_files, timestamp, RunManifest};
use crate::CliError;

/// Trains one configuration into its own directory under `out_root`,
/// writing the metric streams, checkpoints, and the manifest.
pub fn train_into(
    experiment: &ExperimentConfig,
    gan: &GanConfig,
    run_id: &str,
    out_root: &Path,
) -> Result<(TrainReport, PathBuf), CliError> {
    let dir = out_root.join(run_id);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    let started_at = timestamp();

    let report = {
        let mut csv = CsvSink::create(&dir.join("metrics.csv"))?;
        let mut jsonl = JsonlSink::create(&dir.join("metrics.jsonl"))?;
        let options: TrainOptions = experiment.train_options(run_id.to_string(), Some(dir.clone()));
        train_gan(gan, &options, &mut [&mut csv, &mut jsonl])?
    };

    let manifest = RunManifest {
        run_id: run_id.to_string(),
        config_hash: experiment.config_hash(),
        seed: gan.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: timestamp(),
        artifacts: emitted_files(&dir)?,
        generator_updates_done: report.generator_updates_done,
        discriminator_updates_done: report.discriminator_updates_done,
        collapsed: report.collapsed.clone(),
        final_metrics: report.final_metrics.clone(),
        wall_ms: report.wall_ms,
    };
    manifest.save(&dir)?;
    Ok((report, dir))
}

/// Directory-safe form of a sweep cell label.
pub fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}
