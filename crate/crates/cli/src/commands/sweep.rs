use std::path::{Path, PathBuf};

use rayon::prelude::*;

use specnorm::presets::parse_cell;
use specnorm::training::SettingName;

use crate::config::ExperimentConfig;
use crate::manifest::timestamp;
use crate::CliError;

struct CellOutcome {
    normalizer: String,
    setting: SettingName,
    seed: u64,
    run_id: String,
    frechet: f64,
    coverage: usize,
    collapsed: bool,
}

pub fn execute(
    config_path: &Path,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    cadence: Option<usize>,
) -> Result<u8, CliError> {
    let mut experiment = ExperimentConfig::load(config_path)?;
    if let Some(out) = out {
        experiment.out_dir = Some(out);
    }
    if let Some(cadence) = cadence {
        if cadence == 0 {
            return Err(CliError::Config("cadence must be at least 1".into()));
        }
        experiment.metric_cadence = cadence;
    }
    let sweep = experiment
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep requires a [sweep] section".into()))?;
    let out_root = experiment.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_root).map_err(|e| CliError::Io(format!("creating {}: {e}", out_root.display())))?;
    let workers = jobs.unwrap_or(experiment.parallel_runs).max(1);

    let mut cells = Vec::new();
    for token in &sweep.normalizers {
        for setting_token in &sweep.settings {
            let setting: SettingName =
                setting_token.parse().map_err(|e: String| CliError::Config(format!("sweep.settings: {e}")))?;
            for &seed in &sweep.seeds {
                cells.push((token.clone(), setting, seed));
            }
        }
    }

    let started_at = timestamp();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Other(format!("worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|(token, setting, seed)| -> Result<CellOutcome, CliError> {
                let cell = parse_cell(token).map_err(CliError::Config)?;
                let gan = experiment.gan_config(Some(&cell), Some(*setting), Some(*seed))?;
                let run_id = format!("{}-{}-s{}", super::sanitize(token), setting, seed);
                let (report, _) = super::train_into(&experiment, &gan, &run_id, &out_root)?;
                Ok(CellOutcome {
                    normalizer: token.clone(),
                    setting: *setting,
                    seed: *seed,
                    run_id,
                    frechet: report.final_metrics.frechet,
                    coverage: report.final_metrics.mode_coverage,
                    collapsed: report.collapsed.is_some(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    // Per-run detail table.
    let mut runs_csv = String::from("normalizer,setting,seed,run_id,frechet,mode_coverage,collapsed\n");
    for o in &outcomes {
        runs_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            o.normalizer, o.setting, o.seed, o.run_id, o.frechet, o.coverage, o.collapsed
        ));
    }
    let runs_path = out_root.join("sweep_runs.csv");
    std::fs::write(&runs_path, runs_csv).map_err(|e| CliError::Io(e.to_string()))?;

    // Aggregate: one row per normalizer × setting, medians over seeds.
    let mut summary_csv = String::from("normalizer,setting,median_frechet,median_coverage,seeds,collapsed_runs\n");
    println!("normalizer            setting  median_frechet  median_coverage  collapsed");
    for token in &sweep.normalizers {
        for setting_token in &sweep.settings {
            let setting: SettingName = setting_token.parse().expect("validated");
            let group: Vec<&CellOutcome> =
                outcomes.iter().filter(|o| &o.normalizer == token && o.setting == setting).collect();
            let med_frechet = median(group.iter().map(|o| o.frechet).collect());
            let med_coverage = median(group.iter().map(|o| o.coverage as f64).collect());
            let collapsed = group.iter().filter(|o| o.collapsed).count();
            summary_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                token,
                setting,
                med_frechet,
                med_coverage,
                group.len(),
                collapsed
            ));
            println!("{token:<21} {setting:<8} {med_frechet:<15.4} {med_coverage:<16.1} {collapsed}");
        }
    }
    let summary_path = out_root.join("sweep_summary.csv");
    std::fs::write(&summary_path, summary_csv).map_err(|e| CliError::Io(e.to_string()))?;

    let manifest = serde_json::json!({
        "config_hash": experiment.config_hash(),
        "started_at": started_at,
        "finished_at": timestamp(),
        "version": env!("CARGO_PKG_VERSION"),
        "artifacts": ["sweep_runs.csv", "sweep_summary.csv"],
        "runs": outcomes.iter().map(|o| o.run_id.clone()).collect::<Vec<_>>(),
    });
    std::fs::write(out_root.join("sweep_manifest.json"), serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| CliError::Io(e.to_string()))?;
    println!("sweep artifacts in {}", out_root.display());
    Ok(0)
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Less));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}
