//! Quantitative evaluation: Gaussian Fréchet distance, a classifier-based
//! diversity score, singular-spectrum diagnostics, and mode coverage
//! against toy targets.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{svd_oracle, sym_eigen, LinalgError, Matrix};
use crate::net::{NetError, Network};
use crate::training::ToyTarget;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("row {row} is not a probability vector: {detail}")]
    InvalidProbability { row: usize, detail: String },
    #[error("covariance product has eigenvalue {0} below tolerance; fits are not PSD")]
    NotPositiveSemiDefinite(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Sample mean and covariance of a batch, treated as a Gaussian fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// Symmetric PSD (up to rounding) covariance with 1/(n−1) normalization.
    pub covariance: Matrix,
}

/// Unbiased mean/covariance fit. The covariance is symmetric by
/// construction.
pub fn fit_gaussian(samples: &Matrix) -> Result<GaussianFit, MetricError> {
    let n = samples.rows();
    if n < 2 {
        return Err(MetricError::TooFewSamples(n));
    }
    let d = samples.cols();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(samples.row(i)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        let row = samples.row(i);
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                let v = cov.get(a, b) + da * (row[b] - mean[b]);
                cov.set(a, b, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov.get(a, b) / denom;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(GaussianFit { mean, covariance: cov })
}

/// Squared 2-Wasserstein distance between Gaussian fits:
/// `‖μ₁ − μ₂‖² + tr(C₁ + C₂ − 2(C₁C₂)^{1/2})`.
///
/// The trace term is evaluated through the similar symmetric product
/// `C₁^{1/2} C₂ C₁^{1/2}`, which is PSD, so no non-symmetric square roots
/// appear. Eigenvalues below −1e−10 are an error; small negatives above
/// that are clamped to zero.
pub fn frechet_distance(p: &GaussianFit, q: &GaussianFit) -> Result<f64, MetricError> {
    let d = p.mean.len();
    if q.mean.len() != d || p.covariance.rows() != d || q.covariance.rows() != d {
        return Err(MetricError::DimensionMismatch {
            context: format!("fit dims {} vs {}", p.mean.len(), q.mean.len()),
        });
    }
    let mean_term: f64 = p.mean.iter().zip(&q.mean).map(|(a, b)| (a - b) * (a - b)).sum();

    let (eig1, q1) = sym_eigen(&p.covariance)?;
    let sqrt1 = psd_sqrt(&eig1, &q1)?;
    let inner = sqrt1.matmul(&q.covariance).matmul(&sqrt1);
    let (eig_inner, _) = sym_eigen(&inner)?;
    let mut sqrt_trace = 0.0;
    for &lambda in &eig_inner {
        if lambda < -1e-10 {
            return Err(MetricError::NotPositiveSemiDefinite(lambda));
        }
        sqrt_trace += lambda.max(0.0).sqrt();
    }
    let trace1: f64 = (0..d).map(|i| p.covariance.get(i, i)).sum();
    let trace2: f64 = (0..d).map(|i| q.covariance.get(i, i)).sum();
    let value = mean_term + trace1 + trace2 - 2.0 * sqrt_trace;
    Ok(value.max(0.0))
}

fn psd_sqrt(eigenvalues: &[f64], q: &Matrix) -> Result<Matrix, MetricError> {
    let mut roots = Vec::with_capacity(eigenvalues.len());
    for &lambda in eigenvalues {
        if lambda < -1e-10 {
            return Err(MetricError::NotPositiveSemiDefinite(lambda));
        }
        roots.push(lambda.max(0.0).sqrt());
    }
    Ok(q.matmul(&Matrix::diag(&roots)).matmul_transb(q))
}

/// `exp(Ê[KL(p(y|x) ‖ p(y))])` with the marginal approximated by the batch
/// average. Rows must be probability vectors; the result lies in
/// `[1, class count]`.
pub fn inception_style_score(probs: &Matrix) -> Result<f64, MetricError> {
    let classes = probs.cols();
    for row in 0..probs.rows() {
        let r = probs.row(row);
        if let Some(&bad) = r.iter().find(|&&x| !(0.0..=1.0 + 1e-12).contains(&x)) {
            return Err(MetricError::InvalidProbability { row, detail: format!("entry {bad}") });
        }
        let total: f64 = r.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MetricError::InvalidProbability { row, detail: format!("sums to {total}") });
        }
    }
    let n = probs.rows() as f64;
    let mut marginal = vec![0.0; classes];
    for row in 0..probs.rows() {
        for (m, &x) in marginal.iter_mut().zip(probs.row(row)) {
            *m += x / n;
        }
    }
    let mut mean_kl = 0.0;
    for row in 0..probs.rows() {
        let mut kl = 0.0;
        for (&p, &m) in probs.row(row).iter().zip(&marginal) {
            if p > 0.0 {
                kl += p * (p / m).ln();
            }
        }
        mean_kl += kl / n;
    }
    Ok(mean_kl.exp())
}

/// Per-layer singular values of the effective weights, scaled so the
/// largest equals one, with an effective-rank summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub layers: Vec<LayerSpectrum>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer: usize,
    /// Unscaled largest singular value of the effective weight.
    pub top_sigma: f64,
    /// Descending, max-scaled to 1 (all zero for a zero layer).
    pub singular_values: Vec<f64>,
    pub effective_rank: f64,
}

impl SpectrumReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,index,scaled_singular_value\n");
        for layer in &self.layers {
            for (i, s) in layer.singular_values.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", layer.layer, i, s));
            }
        }
        out
    }
}

/// Oracle singular spectrum of every effective (normalized) layer weight.
pub fn spectrum_report(net: &Network) -> Result<SpectrumReport, MetricError> {
    let mut layers = Vec::with_capacity(net.num_layers());
    for (i, w) in net.effective_weights()?.iter().enumerate() {
        let mut s = svd_oracle(w)?.s;
        let top = s.first().copied().unwrap_or(0.0);
        let effective_rank = effective_rank(&s);
        if top > 0.0 {
            for x in &mut s {
                *x /= top;
            }
        }
        layers.push(LayerSpectrum { layer: i, top_sigma: top, singular_values: s, effective_rank });
    }
    Ok(SpectrumReport { layers })
}

/// Exponential of the entropy of the normalized squared singular values;
/// ranges from 1 (rank one) to the value count (flat spectrum).
pub fn effective_rank(singular_values: &[f64]) -> f64 {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut entropy = 0.0;
    for s in singular_values {
        let p = s * s / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    entropy.exp()
}

/// Counts target modes that receive at least one sample within `threshold`,
/// plus the per-mode assignment histogram (nearest center wins).
pub fn mode_coverage(samples: &[Vec<f64>], target: &ToyTarget, threshold: f64) -> (usize, Vec<usize>) {
    let centers = target.centers();
    let mut histogram = vec![0usize; centers.len()];
    for s in samples {
        let (idx, dist) = target.nearest_center(s);
        if dist <= threshold {
            histogram[idx] += 1;
        }
    }
    let covered = histogram.iter().filter(|&&c| c > 0).count();
    (covered, histogram)
}

/// Small softmax classifier over toy-target modes; the bundled posterior
/// for [`inception_style_score`] when no external classifier is supplied.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeClassifier {
    /// `classes × (dim + 1)`, last column is the bias.
    weights: Matrix,
    dim: usize,
}

impl ModeClassifier {
    /// Trains multinomial logistic regression on labeled draws from the
    /// target modes by full-batch gradient descent.
    pub fn train(target: &ToyTarget, samples_per_mode: usize, epochs: usize, rng: &mut impl Rng) -> Self {
        let centers = target.centers();
        let k = centers.len();
        let dim = target.dim();
        let sigma = target.sigma();
        let mut xs: Vec<Vec<f64>> = Vec::with_capacity(k * samples_per_mode);
        let mut labels = Vec::with_capacity(k * samples_per_mode);
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..samples_per_mode {
                let point: Vec<f64> = c
                    .iter()
                    .map(|&x| {
                        let g: f64 = rand_distr::StandardNormal.sample(rng);
                        x + sigma * g
                    })
                    .collect();
                xs.push(point);
                labels.push(label);
            }
        }
        let n = xs.len();
        let mut weights = Matrix::zeros(k, dim + 1);
        let lr = 1.5;
        for _ in 0..epochs {
            let mut grad = Matrix::zeros(k, dim + 1);
            for (x, &label) in xs.iter().zip(&labels) {
                let probs = softmax_scores(&weights, x);
                for (c, &p) in probs.iter().enumerate() {
                    let err = p - if c == label { 1.0 } else { 0.0 };
                    let grow = grad.row_mut(c);
                    for (g, &xi) in grow.iter_mut().zip(x) {
                        *g += err * xi;
                    }
                    grow[dim] += err;
                }
            }
            for (w, g) in weights.values_mut().iter_mut().zip(grad.values()) {
                *w -= lr * g / n as f64;
            }
        }
        ModeClassifier { weights, dim }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    /// Class posterior rows for a batch of samples.
    pub fn predict_probs(&self, samples: &[Vec<f64>]) -> Result<Matrix, MetricError> {
        if samples.is_empty() {
            return Err(MetricError::TooFewSamples(0));
        }
        let k = self.classes();
        let mut out = Matrix::zeros(samples.len(), k);
        for (i, s) in samples.iter().enumerate() {
            if s.len() != self.dim {
                return Err(MetricError::DimensionMismatch {
                    context: format!("sample {i} has dim {}, classifier expects {}", s.len(), self.dim),
                });
            }
            out.row_mut(i).copy_from_slice(&softmax_scores(&self.weights, s));
        }
        Ok(out)
    }
}

use rand_distr::Distribution;

fn softmax_scores(weights: &Matrix, x: &[f64]) -> Vec<f64> {
    let k = weights.rows();
    let dim = weights.cols() - 1;
    let mut scores: Vec<f64> = (0..k)
        .map(|c| {
            let row = weights.row(c);
            row[dim] + row[..dim].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in &mut scores {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in &mut scores {
        *s /= total;
    }
    scores
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fit_of_two_points() {
        let samples = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let fit = fit_gaussian(&samples).unwrap();
        assert_eq!(fit.mean, vec![1.0, 0.0]);
        assert_eq!(fit.covariance.row(0), &[2.0, 0.0]);
        assert_eq!(fit.covariance.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn constant_samples_have_zero_covariance() {
        let samples = Matrix::from_rows(&vec![vec![1.5, -2.0]; 10]).unwrap();
        let fit = fit_gaussian(&samples).unwrap();
        assert!(fit.covariance.is_zero());
    }

    #[test]
    fn fit_rejects_single_sample() {
        let samples = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(fit_gaussian(&samples), Err(MetricError::TooFewSamples(1))));
    }

    #[test]
    fn fit_recovers_known_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60_000;
        let mut values = Vec::with_capacity(n * 2);
        for _ in 0..n {
            let g1: f64 = rand_distr::StandardNormal.sample(&mut rng);
            let g2: f64 = rand_distr::StandardNormal.sample(&mut rng);
            values.push(1.0 + 2.0 * g1);
            values.push(-3.0 + 0.5 * g2);
        }
        let fit = fit_gaussian(&Matrix::new(n, 2, values).unwrap()).unwrap();
        assert!((fit.mean[0] - 1.0).abs() < 0.05);
        assert!((fit.mean[1] + 3.0).abs() < 0.02);
        assert!((fit.covariance.get(0, 0) - 4.0).abs() < 0.1);
        assert!((fit.covariance.get(1, 1) - 0.25).abs() < 0.01);
        assert!(fit.covariance.get(0, 1).abs() < 0.02);
    }

    #[test]
    fn frechet_is_zero_on_equal_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let values: Vec<f64> = (0..50 * 3).map(|_| rng.random::<f64>()).collect();
        let fit = fit_gaussian(&Matrix::new(50, 3, values).unwrap()).unwrap();
        let d = frechet_distance(&fit, &fit).unwrap();
        assert!(d.abs() < 1e-9, "d = {d}");
    }

    #[test]
    fn frechet_matches_1d_mean_shift() {
        let p = GaussianFit { mean: vec![0.0], covariance: Matrix::diag(&[1.0]) };
        let q = GaussianFit { mean: vec![1.7], covariance: Matrix::diag(&[1.0]) };
        let d = frechet_distance(&p, &q).unwrap();
        assert!((d - 1.7f64 * 1.7).abs() < 1e-9);
    }

    #[test]
    fn frechet_matches_1d_variance_change() {
        let p = GaussianFit { mean: vec![0.0], covariance: Matrix::diag(&[4.0]) };
        let q = GaussianFit { mean: vec![0.0], covariance: Matrix::diag(&[9.0]) };
        let d = frechet_distance(&p, &q).unwrap();
        // (σ₁ − σ₂)² = (2 − 3)².
        assert!((d - 1.0).abs() < 1e-9, "d = {d}");
    }

    #[test]
    fn frechet_is_symmetric_and_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = fit_gaussian(&Matrix::new(40, 2, (0..80).map(|_| rng.random::<f64>()).collect()).unwrap()).unwrap();
        let b =
            fit_gaussian(&Matrix::new(40, 2, (0..80).map(|_| rng.random::<f64>() * 2.0 - 0.3).collect()).unwrap())
                .unwrap();
        let d_ab = frechet_distance(&a, &b).unwrap();
        let d_ba = frechet_distance(&b, &a).unwrap();
        assert!((d_ab - d_ba).abs() < 1e-9);

        let theta: f64 = 0.83;
        let rot = Matrix::from_rows(&[vec![theta.cos(), -theta.sin()], vec![theta.sin(), theta.cos()]]).unwrap();
        let rotate = |f: &GaussianFit| GaussianFit {
            mean: rot.matvec(&f.mean),
            covariance: rot.matmul(&f.covariance).matmul_transb(&rot),
        };
        let d_rot = frechet_distance(&rotate(&a), &rotate(&b)).unwrap();
        assert!((d_ab - d_rot).abs() < 1e-8, "{d_ab} vs {d_rot}");
    }

    #[test]
    fn frechet_rejects_dimension_mismatch() {
        let p = GaussianFit { mean: vec![0.0], covariance: Matrix::diag(&[1.0]) };
        let q = GaussianFit { mean: vec![0.0, 0.0], covariance: Matrix::identity(2) };
        assert!(matches!(frechet_distance(&p, &q), Err(MetricError::DimensionMismatch { .. })));
    }

    #[test]
    fn identical_rows_score_one() {
        let probs = Matrix::from_rows(&vec![vec![0.2, 0.5, 0.3]; 6]).unwrap();
        let s = inception_style_score(&probs).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_one_hot_rows_score_class_count() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|c| (0..4).map(|j| if j == c { 1.0 } else { 0.0 }).collect())
            .collect();
        let probs = Matrix::from_rows(&rows).unwrap();
        let s = inception_style_score(&probs).unwrap();
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn score_matches_brute_force_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let raw: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 0.01).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / total).collect()
            })
            .collect();
        let probs = Matrix::from_rows(&rows).unwrap();
        let fast = inception_style_score(&probs).unwrap();

        // Direct double loop.
        let n = rows.len() as f64;
        let mut marginal = [0.0; 5];
        for r in &rows {
            for (m, &x) in marginal.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut mean_kl = 0.0;
        for r in &rows {
            for (j, &p) in r.iter().enumerate() {
                if p > 0.0 {
                    mean_kl += p * (p / marginal[j]).ln() / n;
                }
            }
        }
        assert!((fast - mean_kl.exp()).abs() <= 1e-10);
    }

    #[test]
    fn score_is_invariant_under_row_permutation() {
        let rows = vec![vec![0.7, 0.3], vec![0.1, 0.9], vec![0.5, 0.5]];
        let a = inception_style_score(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let b =
            inception_style_score(&Matrix::from_rows(&[rows[2].clone(), rows[0].clone(), rows[1].clone()]).unwrap())
                .unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn score_rejects_bad_rows() {
        let bad = Matrix::from_rows(&[vec![0.6, 0.6]]).unwrap();
        assert!(matches!(inception_style_score(&bad), Err(MetricError::InvalidProbability { .. })));
        let negative = Matrix::from_rows(&[vec![1.5, -0.5]]).unwrap();
        assert!(matches!(inception_style_score(&negative), Err(MetricError::InvalidProbability { .. })));
    }

    #[test]
    fn effective_rank_examples() {
        assert_eq!(effective_rank(&[1.0, 0.0, 0.0]), 1.0);
        let flat = effective_rank(&[0.3; 7]);
        assert!((flat - 7.0).abs() < 1e-12);
        // Direct entropy computation on an arbitrary spectrum.
        let s = [0.9, 0.5, 0.2, 0.05];
        let total: f64 = s.iter().map(|x| x * x).sum();
        let entropy: f64 = -s
            .iter()
            .map(|x| {
                let p = x * x / total;
                p * p.ln()
            })
            .sum::<f64>();
        assert!((effective_rank(&s) - entropy.exp()).abs() <= 1e-12);
    }

    #[test]
    fn coverage_counts_modes() {
        let target = ToyTarget::ring8();
        let centers = target.centers();
        let (covered, hist) = mode_coverage(&centers, &target, 1e-9);
        assert_eq!(covered, 8);
        assert_eq!(hist, vec![1; 8]);

        let (none, hist) = mode_coverage(&[], &target, 0.1);
        assert_eq!(none, 0);
        assert_eq!(hist, vec![0; 8]);

        let single = vec![centers[3].clone(); 5];
        let (one, hist) = mode_coverage(&single, &target, 0.1);
        assert_eq!(one, 1);
        assert_eq!(hist[3], 5);
    }

    #[test]
    fn spectral_layer_tops_the_spectrum_at_one() {
        use crate::net::{Activation, LayerSpec, Network};
        use crate::normalizers::NormalizerKind;
        let spec = LayerSpec::dense(16, 16, Activation::Identity, NormalizerKind::Spectral { n_power: 100 });
        let net = Network::new(vec![spec], &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let report = spectrum_report(&net).unwrap();
        assert!((report.layers[0].top_sigma - 1.0).abs() <= 1e-6);
        assert_eq!(report.layers[0].singular_values[0], 1.0);
    }

    #[test]
    fn rank_one_layer_has_single_spectral_line() {
        use crate::net::{Activation, LayerSpec, Network};
        use crate::normalizers::NormalizerKind;
        let mut spec = LayerSpec::dense(5, 4, Activation::Identity, NormalizerKind::None);
        spec.has_bias = false;
        let mut net = Network::new(vec![spec], &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        net.set_weight(0, Matrix::outer(&[1.0, -2.0, 0.5, 3.0], &[0.2, 0.4, -0.1, 0.9, 1.3])).unwrap();
        let report = spectrum_report(&net).unwrap();
        let s = &report.layers[0].singular_values;
        assert_eq!(s[0], 1.0);
        for &x in &s[1..] {
            assert!(x < 1e-12, "trailing value {x}");
        }
        assert!((report.layers[0].effective_rank - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classifier_recovers_ring_modes() {
        let target = ToyTarget::ring8();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let clf = ModeClassifier::train(&target, 40, 800, &mut rng);
        let reals = target.sample(400, &mut rng);
        let probs = clf.predict_probs(&reals).unwrap();
        let score = inception_style_score(&probs).unwrap();
        assert!(score > 6.5, "score = {score}");
        assert!(score <= 8.0 + 1e-9);
    }
}
