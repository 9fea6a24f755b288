use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use specnorm::net::{
    fd_probe_safe, finite_difference_check, finite_difference_check_penalty, Activation, LayerSpec, Network,
};
use specnorm::training::{discriminator_loss_grads, LossKind};
use specnorm::{Matrix, NormalizerKind};

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn execute(config: Option<&Path>, tolerance: f64, corrupt: bool) -> Result<u8, CliError> {
    let (in_dim, hidden) = match config {
        Some(path) => {
            let experiment = ExperimentConfig::load(path)?;
            let hidden = experiment.gan.discriminator_mlp.as_ref().map(|d| d.hidden).unwrap_or(6);
            (experiment.gan.target.dim(), hidden)
        }
        None => (5, 6),
    };
    let kinds = [
        NormalizerKind::None,
        NormalizerKind::Spectral { n_power: 1 },
        NormalizerKind::SpectralReparam { gamma: 1.5, n_power: 1 },
        NormalizerKind::WeightNorm,
        NormalizerKind::Frobenius,
        NormalizerKind::Clip { c: 0.5 },
        NormalizerKind::Orthonormal { beta: 0.1 },
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let batch = 6;
    let gaussian = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        Matrix::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| {
                    let g: f64 = rand_distr::StandardNormal.sample(rng);
                    g
                })
                .collect(),
        )
        .unwrap()
    };
    let x = gaussian(batch, in_dim, &mut rng);
    let xhat = gaussian(4, in_dim, &mut rng);

    let mut all_passed = true;
    for (ni, kind) in kinds.iter().enumerate() {
        let specs = vec![
            LayerSpec::dense(in_dim, hidden, Activation::leaky_relu(), kind.clone()),
            LayerSpec::dense(hidden, hidden, Activation::leaky_relu(), kind.clone()),
            LayerSpec::dense(hidden, 1, Activation::Identity, kind.clone()),
        ];
        let net = (0..50u64)
            .find_map(|attempt| {
                let candidate = Network::new(specs.clone(), &mut ChaCha8Rng::seed_from_u64(40 + ni as u64 + attempt * 977));
                match candidate {
                    Ok(n) if fd_probe_safe(&n, &x) && fd_probe_safe(&n, &xhat) => Some(n),
                    _ => None,
                }
            })
            .ok_or_else(|| CliError::Other(format!("{kind:?}: no finite-difference-safe configuration found")))?;

        let n_real = batch / 2;
        let loss = move |out: &Matrix| {
            let real: Vec<f64> = (0..n_real).map(|i| out.get(i, 0)).collect();
            let fake: Vec<f64> = (n_real..out.rows()).map(|i| out.get(i, 0)).collect();
            let (value, dreal, dfake) = discriminator_loss_grads(&LossKind::StandardAlternate, &real, &fake);
            let mut upstream = Matrix::zeros(out.rows(), 1);
            for (i, v) in dreal.iter().chain(dfake.iter()).enumerate() {
                // The hidden negative-control flag skews the reported
                // gradient; a correct pipeline must then fail the check.
                upstream.set(i, 0, if corrupt { v * 1.01 } else { *v });
            }
            (value, upstream)
        };
        let report = finite_difference_check(&net, &x, loss, tolerance)?;
        for entry in &report.entries {
            let status = match &entry.skipped {
                Some(reason) => format!("skipped ({reason})"),
                None if entry.max_rel_err <= tolerance => {
                    format!("pass (max rel err {:.2e}, {} coords)", entry.max_rel_err, entry.checked)
                }
                None => format!("FAIL (max rel err {:.2e})", entry.max_rel_err),
            };
            println!("{kind:?} layer {} {}: {status}", entry.layer, entry.tensor);
        }
        all_passed &= report.passed();

        let penalty_report = finite_difference_check_penalty(&net, &xhat, 10.0, tolerance)?;
        let status = if penalty_report.passed() {
            format!("pass (max rel err {:.2e})", penalty_report.max_rel_err())
        } else {
            format!("FAIL (max rel err {:.2e})", penalty_report.max_rel_err())
        };
        println!("{kind:?} gradient-penalty path: {status}");
        all_passed &= penalty_report.passed();
    }

    if all_passed {
        println!("gradcheck: all normalizers pass at {tolerance:.0e}");
        Ok(0)
    } else {
        eprintln!("gradcheck: FAILURES at {tolerance:.0e}");
        Ok(1)
    }
}
