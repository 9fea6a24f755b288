use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use specnorm::metrics::spectrum_report;
use specnorm::net::{random_pairs, Network};
use specnorm::training::load_run_checkpoint;

use crate::CliError;

pub fn execute(checkpoint: &Path, out: Option<PathBuf>, seed: u64, pairs: usize) -> Result<u8, CliError> {
    let cp = load_run_checkpoint(checkpoint).map_err(|e| CliError::Io(e.to_string()))?;
    let (discriminator, _) = Network::from_checkpoint(&cp.discriminator).map_err(|e| CliError::Io(e.to_string()))?;

    let spectrum = spectrum_report(&discriminator).map_err(|e| CliError::Other(e.to_string()))?;
    let bound = discriminator.lipschitz_upper_bound()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_pairs = random_pairs(discriminator.input_dim(), pairs, 2.0, &mut rng);
    let empirical = discriminator.empirical_lipschitz(&sample_pairs)?;

    let out_dir = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out_dir.join("spectrum.csv"), spectrum.to_csv()).map_err(|e| CliError::Io(e.to_string()))?;
    let analysis = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "iter": cp.iter,
        "layers": spectrum.layers,
        "lipschitz_upper_bound": bound,
        "empirical_lipschitz": empirical,
        "pairs": pairs,
        "seed": seed,
    });
    std::fs::write(out_dir.join("analysis.json"), serde_json::to_string_pretty(&analysis).unwrap())
        .map_err(|e| CliError::Io(e.to_string()))?;

    println!("checkpoint at iter {}:", cp.iter);
    for layer in &spectrum.layers {
        println!(
            "  layer {}: top σ scaled 1.0, effective rank {:.2} over {} values",
            layer.layer,
            layer.effective_rank,
            layer.singular_values.len()
        );
    }
    println!("lipschitz upper bound {bound:.6}");
    println!("empirical lipschitz   {empirical:.6} over {pairs} pairs");
    println!("analysis in {}", out_dir.display());
    Ok(0)
}
