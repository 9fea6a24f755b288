use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn execute(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    cadence: Option<usize>,
) -> Result<u8, CliError> {
    let mut experiment = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        experiment.seed = seed;
    }
    if let Some(out) = out {
        experiment.out_dir = Some(out);
    }
    if let Some(cadence) = cadence {
        if cadence == 0 {
            return Err(CliError::Config("cadence must be at least 1".into()));
        }
        experiment.metric_cadence = cadence;
    }
    let out_root = experiment.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let gan = experiment.gan_config(None, None, None)?;
    let hash = experiment.config_hash();
    let run_id = format!("run-{}-s{}", &hash[..8], gan.seed);

    let (report, dir) = super::train_into(&experiment, &gan, &run_id, &out_root)?;
    println!(
        "{run_id}: {} generator updates, {} discriminator updates, final fréchet {:.4}, coverage {}",
        report.generator_updates_done,
        report.discriminator_updates_done,
        report.final_metrics.frechet,
        report.final_metrics.mode_coverage,
    );
    println!("artifacts in {}", dir.display());
    if let Some(collapse) = &report.collapsed {
        eprintln!("training collapsed at update {}: {}", collapse.iter, collapse.detail);
        return Ok(3);
    }
    Ok(0)
}
