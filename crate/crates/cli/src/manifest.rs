//! Run manifests: which artifacts a run produced, under which config hash
//! and seed, with final metrics. Everything a run writes is declared here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use specnorm::training::{CollapseInfo, MetricRecord};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    /// File names relative to the run directory; every emitted file appears.
    pub artifacts: Vec<String>,
    pub generator_updates_done: usize,
    pub discriminator_updates_done: usize,
    pub collapsed: Option<CollapseInfo>,
    pub final_metrics: MetricRecord,
    pub wall_ms: u64,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("encoding manifest: {e}")))?;
        std::fs::write(&path, json).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
        Ok(())
    }

}

/// File names (not directories) currently present in a run directory,
/// excluding the manifest itself.
pub fn emitted_files(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("listing {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Io(e.to_string()))?;
        if entry.path().is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != "manifest.json" {
                names.push(name);
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339()
}
