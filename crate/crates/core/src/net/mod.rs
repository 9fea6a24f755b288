//! Layered discriminator/generator networks with reverse-mode
//! differentiation that chains through each layer's weight normalizer.

mod check;
mod checkpoint;
mod conv;

pub use check::{fd_probe_safe, finite_difference_check, finite_difference_check_penalty, random_pairs, FdEntry, FdReport, TensorKind};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LayerSnapshot, RngState, CHECKPOINT_VERSION};
pub use conv::ConvGeometry;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm2, svd_oracle, LinalgError, Matrix, SpectralState};
use crate::normalizers::{self, NormalizerKind};

/// Slope used for leaky ReLU throughout the stock architectures.
pub const DEFAULT_LRELU_SLOPE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("layer {layer}: {message}")]
    DegenerateLayer { layer: usize, message: String },
    #[error("layer {layer}: activation is not 1-Lipschitz")]
    NonLipschitzActivation { layer: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Element-wise activation functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu { slope: DEFAULT_LRELU_SLOPE }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    *slope
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative, needed when differentiating through an
    /// input-gradient computation. Zero almost everywhere for the piecewise
    /// linear activations.
    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Relu | Activation::LeakyRelu { .. } => 0.0,
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            Activation::Identity | Activation::Relu | Activation::Tanh => 1.0,
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
        }
    }
}

/// Linear part of a layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense { d_in: usize, d_out: usize },
    Conv2d(ConvGeometry),
}

impl LayerKind {
    pub fn in_dim(&self) -> usize {
        match self {
            LayerKind::Dense { d_in, .. } => *d_in,
            LayerKind::Conv2d(g) => g.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LayerKind::Dense { d_out, .. } => *d_out,
            LayerKind::Conv2d(g) => g.out_dim(),
        }
    }

    /// Rows and columns of the weight matrix the layer multiplies with.
    /// Convolutions store the kernel reshaped to `d_out × (d_in·h·w)`.
    pub fn weight_shape(&self) -> (usize, usize) {
        match self {
            LayerKind::Dense { d_in, d_out } => (*d_out, *d_in),
            LayerKind::Conv2d(g) => (g.out_ch, g.patch_dim()),
        }
    }

    fn bias_len(&self) -> usize {
        match self {
            LayerKind::Dense { d_out, .. } => *d_out,
            LayerKind::Conv2d(g) => g.out_ch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    pub normalizer: NormalizerKind,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn dense(d_in: usize, d_out: usize, activation: Activation, normalizer: NormalizerKind) -> Self {
        LayerSpec { kind: LayerKind::Dense { d_in, d_out }, activation, normalizer, has_bias: true }
    }

    fn validate(&self, index: usize) -> Result<(), NetError> {
        match &self.kind {
            LayerKind::Dense { d_in, d_out } => {
                if *d_in == 0 || *d_out == 0 {
                    return Err(NetError::InvalidSpec(format!("layer {index}: zero-sized dense layer")));
                }
            }
            LayerKind::Conv2d(g) => {
                if !g.is_valid() {
                    return Err(NetError::InvalidSpec(format!("layer {index}: invalid conv geometry {g:?}")));
                }
            }
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(NetError::InvalidSpec(format!(
                    "layer {index}: leaky relu slope must be in (0,1), got {slope}"
                )));
            }
        }
        self.normalizer
            .validate()
            .map_err(|e| NetError::InvalidSpec(format!("layer {index}: {e}")))
    }
}

/// One layer: spec plus raw parameters and the per-layer power-iteration
/// state for spectral variants.
#[derive(Clone, Debug)]
pub struct Layer {
    spec: LayerSpec,
    weight: Matrix,
    bias: Option<Vec<f64>>,
    state: Option<SpectralState>,
    gamma: Option<f64>,
}

impl Layer {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn spectral_state(&self) -> Option<&SpectralState> {
        self.state.as_ref()
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// Patch-space lift of the layer input: identity for dense layers,
    /// im2col for convolutions.
    fn lift(&self, h: &Matrix) -> Matrix {
        match &self.spec.kind {
            LayerKind::Dense { .. } => h.clone(),
            LayerKind::Conv2d(g) => g.im2col(h),
        }
    }

    fn lift_adjoint(&self, p: &Matrix, batch: usize) -> Matrix {
        match &self.spec.kind {
            LayerKind::Dense { .. } => p.clone(),
            LayerKind::Conv2d(g) => g.col2im(p, batch),
        }
    }

    fn to_patch_layout(&self, z: &Matrix) -> Matrix {
        match &self.spec.kind {
            LayerKind::Dense { .. } => z.clone(),
            LayerKind::Conv2d(g) => g.output_to_patch_layout(z),
        }
    }

    fn to_output_layout(&self, zp: &Matrix, batch: usize) -> Matrix {
        match &self.spec.kind {
            LayerKind::Dense { .. } => zp.clone(),
            LayerKind::Conv2d(g) => g.patch_to_output_layout(zp, batch),
        }
    }

    fn add_bias(&self, z: &mut Matrix) {
        let Some(bias) = &self.bias else { return };
        match &self.spec.kind {
            LayerKind::Dense { .. } => {
                for i in 0..z.rows() {
                    for (x, b) in z.row_mut(i).iter_mut().zip(bias) {
                        *x += b;
                    }
                }
            }
            LayerKind::Conv2d(g) => {
                let spatial = g.out_h() * g.out_w();
                for i in 0..z.rows() {
                    let row = z.row_mut(i);
                    for (oc, b) in bias.iter().enumerate() {
                        for x in &mut row[oc * spatial..(oc + 1) * spatial] {
                            *x += b;
                        }
                    }
                }
            }
        }
    }
}

/// Per-layer data recorded during normalization, consumed by the chain rule
/// back to raw weights.
#[derive(Clone, Debug)]
pub(crate) enum NormData {
    Plain,
    Clip { c: f64 },
    Spectral { sigma: f64, u: Vec<f64>, v: Vec<f64> },
    Reparam { sigma: f64, u: Vec<f64>, v: Vec<f64>, gamma: f64 },
    WeightNorm { row_norms: Vec<f64> },
    Frobenius { norm: f64 },
}

/// Everything recorded by a forward pass that backward needs.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    eff: Vec<(Matrix, NormData)>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("networks have at least one layer")
    }

    /// Post-activation values per layer.
    pub fn activations(&self) -> &[Matrix] {
        &self.post
    }

    pub fn effective_weight(&self, layer: usize) -> &Matrix {
        &self.eff[layer].0
    }
}

/// Gradients with respect to raw parameters, shape-congruent with the
/// network's weights, biases and reparametrization scales.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Option<Vec<f64>>>,
    pub gammas: Vec<Option<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet {
            weights: net.layers.iter().map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols())).collect(),
            biases: net.layers.iter().map(|l| l.bias.as_ref().map(|b| vec![0.0; b.len()])).collect(),
            gammas: net.layers.iter().map(|l| l.gamma.map(|_| 0.0)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_assign(b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
        for (a, b) in self.gammas.iter_mut().zip(&other.gammas) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                *a += b;
            }
        }
    }

    pub fn scale_mut(&mut self, c: f64) {
        for w in &mut self.weights {
            for x in w.values_mut() {
                *x *= c;
            }
        }
        for b in self.biases.iter_mut().flatten() {
            for x in b {
                *x *= c;
            }
        }
        for g in self.gammas.iter_mut().flatten() {
            *g *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self.biases.iter().flatten().all(|b| b.iter().all(|x| x.is_finite()))
            && self.gammas.iter().flatten().all(|g| g.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut total = 0.0;
        for w in &self.weights {
            total += w.values().iter().map(|x| x * x).sum::<f64>();
        }
        for b in self.biases.iter().flatten() {
            total += b.iter().map(|x| x * x).sum::<f64>();
        }
        for g in self.gammas.iter().flatten() {
            total += g * g;
        }
        total.sqrt()
    }
}

/// Ordered layers; owns parameters and spectral states. Mutable access is
/// single-owner during training, read-only inference on a frozen network is
/// thread-safe.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Builds a network with freshly initialized parameters: Gaussian
    /// weights scaled by `1/√fan_in`, zero biases, random orthonormal
    /// operators for penalized layers, and warmed-up power-iteration states
    /// for spectral layers.
    pub fn new(specs: Vec<LayerSpec>, rng: &mut impl Rng) -> Result<Self, NetError> {
        if specs.is_empty() {
            return Err(NetError::InvalidSpec("network needs at least one layer".into()));
        }
        for (i, spec) in specs.iter().enumerate() {
            spec.validate(i)?;
        }
        for i in 0..specs.len() - 1 {
            if specs[i].kind.out_dim() != specs[i + 1].kind.in_dim() {
                return Err(NetError::InvalidSpec(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    specs[i].kind.out_dim(),
                    i + 1,
                    specs[i + 1].kind.in_dim()
                )));
            }
        }

        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let (rows, cols) = spec.kind.weight_shape();
            let weight = if matches!(spec.normalizer, NormalizerKind::Orthonormal { .. }) {
                semi_orthogonal(rows, cols, rng)?
            } else {
                let std = 1.0 / (cols as f64).sqrt();
                let values = (0..rows * cols)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(rng);
                        std * g
                    })
                    .collect();
                Matrix::new(rows, cols, values)?
            };
            let bias = spec.has_bias.then(|| vec![0.0; spec.kind.bias_len()]);
            let state = spec.normalizer.needs_state().then(|| SpectralState::random(rows, rng));
            let gamma = match spec.normalizer {
                NormalizerKind::SpectralReparam { gamma, .. } => Some(gamma),
                _ => None,
            };
            layers.push(Layer { spec, weight, bias, state, gamma });
        }
        let mut net = Network { layers };
        net.warm_spectral_states()?;
        Ok(net)
    }

    pub(crate) fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::InvalidSpec("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.spec.validate(i)?;
            let (rows, cols) = layer.spec.kind.weight_shape();
            if (layer.weight.rows(), layer.weight.cols()) != (rows, cols) {
                return Err(NetError::InvalidSpec(format!(
                    "layer {i}: weight is {}x{}, spec wants {rows}x{cols}",
                    layer.weight.rows(),
                    layer.weight.cols()
                )));
            }
            if let Some(b) = &layer.bias {
                if b.len() != layer.spec.kind.bias_len() {
                    return Err(NetError::InvalidSpec(format!("layer {i}: bias length {}", b.len())));
                }
            }
            if layer.spec.normalizer.needs_state() {
                match &layer.state {
                    Some(s) if s.dim() == rows && s.is_unit() => {}
                    Some(s) if s.dim() == rows => {
                        return Err(NetError::InvalidSpec(format!("layer {i}: spectral state is not unit norm")))
                    }
                    _ => return Err(NetError::InvalidSpec(format!("layer {i}: missing or mis-sized spectral state"))),
                }
            }
        }
        for i in 0..layers.len() - 1 {
            if layers[i].spec.kind.out_dim() != layers[i + 1].spec.kind.in_dim() {
                return Err(NetError::InvalidSpec(format!("layer {i} and {} do not compose", i + 1)));
            }
        }
        Ok(Network { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, index: usize) -> &Layer {
        &self.layers[index]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.kind.in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().spec.kind.out_dim()
    }

    pub fn set_weight(&mut self, layer: usize, weight: Matrix) -> Result<(), NetError> {
        let (rows, cols) = self.layers[layer].spec.kind.weight_shape();
        if (weight.rows(), weight.cols()) != (rows, cols) {
            return Err(NetError::ShapeMismatch {
                context: format!("layer {layer} expects {rows}x{cols}, got {}x{}", weight.rows(), weight.cols()),
            });
        }
        self.layers[layer].weight = weight;
        Ok(())
    }

    pub fn set_bias(&mut self, layer: usize, bias: Vec<f64>) -> Result<(), NetError> {
        if !self.layers[layer].spec.has_bias || bias.len() != self.layers[layer].spec.kind.bias_len() {
            return Err(NetError::ShapeMismatch { context: format!("layer {layer}: bad bias") });
        }
        self.layers[layer].bias = Some(bias);
        Ok(())
    }

    pub fn set_gamma(&mut self, layer: usize, gamma: f64) -> Result<(), NetError> {
        if self.layers[layer].gamma.is_none() || gamma <= 0.0 {
            return Err(NetError::InvalidSpec(format!("layer {layer}: no gamma or non-positive value")));
        }
        self.layers[layer].gamma = Some(gamma);
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn weight_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.layers[layer].weight
    }

    pub(crate) fn bias_mut(&mut self, layer: usize) -> Option<&mut Vec<f64>> {
        self.layers[layer].bias.as_mut()
    }

    pub(crate) fn gamma_mut(&mut self, layer: usize) -> Option<&mut f64> {
        self.layers[layer].gamma.as_mut()
    }

    /// Re-runs power iteration to convergence on every spectral layer.
    pub fn warm_spectral_states(&mut self) -> Result<(), NetError> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Some(state) = layer.state.as_mut() {
                crate::linalg::warm_start(&layer.weight, state)
                    .map_err(|e| NetError::DegenerateLayer { layer: i, message: e.to_string() })?;
            }
        }
        Ok(())
    }

    fn effective_frozen(&self, index: usize) -> Result<(Matrix, NormData), NetError> {
        let layer = &self.layers[index];
        let wrap = |e: normalizers::NormalizerError| NetError::DegenerateLayer { layer: index, message: e.to_string() };
        match &layer.spec.normalizer {
            NormalizerKind::None | NormalizerKind::Orthonormal { .. } => Ok((layer.weight.clone(), NormData::Plain)),
            NormalizerKind::Clip { c } => Ok((normalizers::apply_clip(&layer.weight, *c), NormData::Clip { c: *c })),
            NormalizerKind::Spectral { .. } => {
                let state = layer.state.as_ref().expect("spectral layer has state");
                let parts = normalizers::spectral_frozen(&layer.weight, state).map_err(wrap)?;
                Ok((parts.normalized, NormData::Spectral { sigma: parts.sigma, u: parts.u, v: parts.v }))
            }
            NormalizerKind::SpectralReparam { .. } => {
                let state = layer.state.as_ref().expect("reparam layer has state");
                let gamma = layer.gamma.expect("reparam layer has gamma");
                let parts = normalizers::spectral_frozen(&layer.weight, state).map_err(wrap)?;
                Ok((
                    parts.normalized.scale(gamma),
                    NormData::Reparam { sigma: parts.sigma, u: parts.u, v: parts.v, gamma },
                ))
            }
            NormalizerKind::WeightNorm => {
                let row_norms: Vec<f64> = (0..layer.weight.rows()).map(|i| norm2(layer.weight.row(i))).collect();
                let normalized = normalizers::apply_weight_norm(&layer.weight).map_err(wrap)?;
                Ok((normalized, NormData::WeightNorm { row_norms }))
            }
            NormalizerKind::Frobenius => {
                let norm = layer.weight.frobenius_norm();
                let normalized = normalizers::apply_frobenius(&layer.weight).map_err(wrap)?;
                Ok((normalized, NormData::Frobenius { norm }))
            }
        }
    }

    fn effective_train(&mut self, index: usize) -> Result<(Matrix, NormData), NetError> {
        let layer = &mut self.layers[index];
        let wrap = |e: normalizers::NormalizerError| NetError::DegenerateLayer { layer: index, message: e.to_string() };
        match layer.spec.normalizer.clone() {
            NormalizerKind::Spectral { n_power } => {
                let state = layer.state.as_mut().expect("spectral layer has state");
                let parts = normalizers::spectral_train(&layer.weight, state, n_power).map_err(wrap)?;
                Ok((parts.normalized, NormData::Spectral { sigma: parts.sigma, u: parts.u, v: parts.v }))
            }
            NormalizerKind::SpectralReparam { n_power, .. } => {
                let gamma = layer.gamma.expect("reparam layer has gamma");
                let state = layer.state.as_mut().expect("reparam layer has state");
                let parts = normalizers::spectral_train(&layer.weight, state, n_power).map_err(wrap)?;
                Ok((
                    parts.normalized.scale(gamma),
                    NormData::Reparam { sigma: parts.sigma, u: parts.u, v: parts.v, gamma },
                ))
            }
            _ => self.effective_frozen(index),
        }
    }

    /// Evaluation-only forward pass: normalized weights are used in place of
    /// raw weights, and power-iteration states are left untouched.
    pub fn forward(&self, batch: &Matrix) -> Result<ForwardTrace, NetError> {
        let eff: Vec<(Matrix, NormData)> =
            (0..self.layers.len()).map(|i| self.effective_frozen(i)).collect::<Result<_, _>>()?;
        self.forward_with(eff, batch)
    }

    /// Training forward pass: spectral layers run their power-iteration
    /// update (state mutates), then normalize, mirroring the order
    /// power-iterate → normalize → parameter update.
    pub fn forward_train(&mut self, batch: &Matrix) -> Result<ForwardTrace, NetError> {
        let eff: Vec<(Matrix, NormData)> =
            (0..self.layers.len()).map(|i| self.effective_train(i)).collect::<Result<_, _>>()?;
        self.forward_with(eff, batch)
    }

    fn forward_with(&self, eff: Vec<(Matrix, NormData)>, batch: &Matrix) -> Result<ForwardTrace, NetError> {
        if batch.cols() != self.input_dim() {
            return Err(NetError::ShapeMismatch {
                context: format!("batch has {} columns, network expects {}", batch.cols(), self.input_dim()),
            });
        }
        let batch_size = batch.rows();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut h = batch.clone();
        for (layer, (w_bar, _)) in self.layers.iter().zip(&eff) {
            let lifted = layer.lift(&h);
            let zp = lifted.matmul_transb(w_bar);
            let mut z = layer.to_output_layout(&zp, batch_size);
            layer.add_bias(&mut z);
            let a = layer.spec.activation;
            let out = z.map(|x| a.apply(x));
            pre.push(z);
            post.push(out.clone());
            h = out;
        }
        Ok(ForwardTrace { input: batch.clone(), pre, post, eff })
    }

    /// Gradients of a scalar loss with respect to raw parameters, given the
    /// loss gradient at the network output. The chain rule runs through
    /// each layer's normalizer.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<GradientSet, NetError> {
        Ok(self.backprop(trace, upstream, false)?.0)
    }

    /// Like [`Self::backward`] but also returns the gradient with respect to
    /// the input batch.
    pub fn backward_with_input(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<(GradientSet, Matrix), NetError> {
        let (grads, input) = self.backprop(trace, upstream, true)?;
        Ok((grads, input.expect("input gradient requested")))
    }

    fn backprop(
        &self,
        trace: &ForwardTrace,
        upstream: &Matrix,
        want_input: bool,
    ) -> Result<(GradientSet, Option<Matrix>), NetError> {
        let out = trace.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(NetError::ShapeMismatch {
                context: format!(
                    "upstream is {}x{}, output is {}x{}",
                    upstream.rows(),
                    upstream.cols(),
                    out.rows(),
                    out.cols()
                ),
            });
        }
        let batch = trace.input.rows();
        let mut grads = GradientSet::zeros_like(self);
        let mut d = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (w_bar, data) = &trace.eff[l];
            let z = &trace.pre[l];
            let act = layer.spec.activation;
            let e = d.hadamard(&z.map(|x| act.derivative(x)));
            let ep = layer.to_patch_layout(&e);
            let h_prev = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let lifted = layer.lift(h_prev);
            let g_eff = ep.transa_matmul(&lifted);
            let (gw, ggamma) = raw_gradient(layer, w_bar, data, &g_eff);
            grads.weights[l] = gw;
            grads.gammas[l] = ggamma;
            if layer.bias.is_some() {
                grads.biases[l] = Some(column_sums(&ep));
            }
            if l > 0 || want_input {
                d = layer.lift_adjoint(&ep.matmul(w_bar), batch);
            }
        }
        let input_grad = want_input.then_some(d);
        Ok((grads, input_grad))
    }

    /// Value and parameter gradients of
    /// `λ·Ê[(‖∇_x D(x)‖₂ − 1)²]` over the rows of `xhat`, computed by
    /// differentiating through the input-gradient computation itself
    /// (the "double backward" the gradient penalty requires).
    pub(crate) fn input_gradient_penalty(&self, xhat: &Matrix, lambda: f64) -> Result<(f64, GradientSet), NetError> {
        if self.output_dim() != 1 {
            return Err(NetError::ShapeMismatch {
                context: format!("gradient penalty needs a scalar-output network, got {}", self.output_dim()),
            });
        }
        let trace = self.forward(xhat)?;
        let batch = xhat.rows();
        let n_layers = self.layers.len();

        // First backward with unit upstream: input gradient per sample,
        // caching the per-layer intermediates the adjoint sweep reuses.
        let ones = Matrix::new(batch, 1, vec![1.0; batch]).expect("finite constants");
        let mut d_chain: Vec<Matrix> = Vec::with_capacity(n_layers + 1); // dD/dH_l, index l = layer output
        let mut e_chain: Vec<Matrix> = vec![Matrix::zeros(1, 1); n_layers]; // dD/dZ_l (output layout)
        d_chain.resize(n_layers + 1, Matrix::zeros(1, 1));
        d_chain[n_layers] = ones;
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let (w_bar, _) = &trace.eff[l];
            let act = layer.spec.activation;
            let e = d_chain[l + 1].hadamard(&trace.pre[l].map(|x| act.derivative(x)));
            let ep = layer.to_patch_layout(&e);
            d_chain[l] = layer.lift_adjoint(&ep.matmul(w_bar), batch);
            e_chain[l] = e;
        }
        let g_input = &d_chain[0]; // B × d_0

        // Penalty value and its gradient with respect to the input gradient.
        let mut value = 0.0;
        let mut g_bar = Matrix::zeros(batch, xhat.cols());
        for b in 0..batch {
            let norm = norm2(g_input.row(b));
            value += (norm - 1.0).powi(2);
            if norm > 1e-12 {
                let coeff = 2.0 * lambda / batch as f64 * (norm - 1.0) / norm;
                for (dst, &src) in g_bar.row_mut(b).iter_mut().zip(g_input.row(b)) {
                    *dst = coeff * src;
                }
            }
        }
        value *= lambda / batch as f64;

        // Adjoint sweep up the backward chain: d̄_{l-1} known, accumulate
        // ē_l, the weight contribution, and the a''-path into z̄.
        let mut eff_grads: Vec<Matrix> =
            trace.eff.iter().map(|(w, _)| Matrix::zeros(w.rows(), w.cols())).collect();
        let mut z_bar_bk: Vec<Matrix> = Vec::with_capacity(n_layers);
        let mut d_bar = g_bar; // adjoint of d_chain[l-1], starting at l=1
        for l in 0..n_layers {
            let layer = &self.layers[l];
            let (w_bar, _) = &trace.eff[l];
            let act = layer.spec.activation;
            let lifted_dbar = layer.lift(&d_bar);
            let e_bar_patch = lifted_dbar.matmul_transb(w_bar);
            let ep = layer.to_patch_layout(&e_chain[l]);
            eff_grads[l].add_assign(&ep.transa_matmul(&lifted_dbar));
            let e_bar = layer.to_output_layout(&e_bar_patch, batch);
            let deriv = trace.pre[l].map(|x| act.derivative(x));
            let second = trace.pre[l].map(|x| act.second_derivative(x));
            z_bar_bk.push(e_bar.hadamard(&d_chain[l + 1]).hadamard(&second));
            d_bar = e_bar.hadamard(&deriv);
        }

        // Downward sweep through the forward graph: collect the z̄
        // contributions into weight and bias gradients.
        let mut grads = GradientSet::zeros_like(self);
        let mut h_bar: Option<Matrix> = None; // adjoint of H_l, none at the top
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let (w_bar, _) = &trace.eff[l];
            let act = layer.spec.activation;
            let mut z_bar = z_bar_bk[l].clone();
            if let Some(hb) = &h_bar {
                z_bar.add_assign(&hb.hadamard(&trace.pre[l].map(|x| act.derivative(x))));
            }
            let z_bar_patch = layer.to_patch_layout(&z_bar);
            let h_prev = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let lifted = layer.lift(h_prev);
            eff_grads[l].add_assign(&z_bar_patch.transa_matmul(&lifted));
            if layer.bias.is_some() {
                grads.biases[l] = Some(column_sums(&z_bar_patch));
            }
            h_bar = Some(layer.lift_adjoint(&z_bar_patch.matmul(w_bar), batch));
        }

        for (l, g_eff) in eff_grads.iter().enumerate() {
            let layer = &self.layers[l];
            let (w_bar, data) = &trace.eff[l];
            let (gw, ggamma) = raw_gradient(layer, w_bar, data, g_eff);
            grads.weights[l] = gw;
            grads.gammas[l] = ggamma;
        }
        Ok((value, grads))
    }

    /// Evaluation-mode effective (normalized) weights per layer.
    pub fn effective_weights(&self) -> Result<Vec<Matrix>, NetError> {
        (0..self.layers.len()).map(|i| Ok(self.effective_frozen(i)?.0)).collect()
    }

    /// Product of exact (oracle) spectral norms of the effective weights —
    /// the upper bound on the network's Lipschitz constant when all
    /// activations are 1-Lipschitz.
    pub fn lipschitz_upper_bound(&self) -> Result<f64, NetError> {
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.spec.activation.lipschitz_constant() > 1.0 {
                return Err(NetError::NonLipschitzActivation { layer: i });
            }
        }
        let mut product = 1.0;
        for w in self.effective_weights()? {
            product *= svd_oracle(&w)?.s[0];
        }
        Ok(product)
    }

    /// Max ratio `‖f(x) − f(x')‖ / ‖x − x'‖` over the given pairs.
    pub fn empirical_lipschitz(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, NetError> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let dim = self.input_dim();
        let mut xs = Matrix::zeros(pairs.len(), dim);
        let mut ys = Matrix::zeros(pairs.len(), dim);
        for (i, (x, y)) in pairs.iter().enumerate() {
            if x.len() != dim || y.len() != dim {
                return Err(NetError::ShapeMismatch { context: format!("pair {i} has wrong dimension") });
            }
            xs.row_mut(i).copy_from_slice(x);
            ys.row_mut(i).copy_from_slice(y);
        }
        let fx = self.forward(&xs)?;
        let fy = self.forward(&ys)?;
        let mut worst = 0.0_f64;
        for i in 0..pairs.len() {
            let dx: f64 = xs
                .row(i)
                .iter()
                .zip(ys.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dx == 0.0 {
                return Err(NetError::ShapeMismatch { context: format!("pair {i} is not distinct") });
            }
            let df: f64 = fx
                .output()
                .row(i)
                .iter()
                .zip(fy.output().row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(df / dx);
        }
        Ok(worst)
    }
}

/// Chain rule from the gradient with respect to the effective weight back to
/// the raw weight, per normalizer kind. Returns the γ gradient for
/// reparametrized layers.
fn raw_gradient(layer: &Layer, w_bar: &Matrix, data: &NormData, g_eff: &Matrix) -> (Matrix, Option<f64>) {
    match data {
        NormData::Plain => (g_eff.clone(), None),
        NormData::Clip { c } => {
            let mut masked = g_eff.clone();
            for i in 0..masked.rows() {
                for j in 0..masked.cols() {
                    if layer.weight.get(i, j).abs() > *c {
                        masked.set(i, j, 0.0);
                    }
                }
            }
            (masked, None)
        }
        NormData::Spectral { sigma, u, v } => {
            let lambda = g_eff.frobenius_dot(w_bar);
            let rank_one = Matrix::outer(u, v);
            (g_eff.sub(&rank_one.scale(lambda)).scale(1.0 / sigma), None)
        }
        NormData::Reparam { sigma, u, v, gamma } => {
            let w_sn = w_bar.scale(1.0 / gamma);
            let lambda = g_eff.frobenius_dot(&w_sn);
            let rank_one = Matrix::outer(u, v);
            let raw = g_eff.sub(&rank_one.scale(lambda)).scale(gamma / sigma);
            (raw, Some(lambda))
        }
        NormData::WeightNorm { row_norms } => {
            let mut raw = Matrix::zeros(g_eff.rows(), g_eff.cols());
            for (i, &row_norm) in row_norms.iter().enumerate() {
                let g_row = g_eff.row(i);
                let w_row = w_bar.row(i);
                let along: f64 = g_row.iter().zip(w_row).map(|(a, b)| a * b).sum();
                let out = raw.row_mut(i);
                for ((dst, &g), &wn) in out.iter_mut().zip(g_row).zip(w_row) {
                    *dst = (g - along * wn) / row_norm;
                }
            }
            (raw, None)
        }
        NormData::Frobenius { norm } => {
            let lambda = g_eff.frobenius_dot(w_bar);
            (g_eff.sub(&w_bar.scale(lambda)).scale(1.0 / norm), None)
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (s, &v) in sums.iter_mut().zip(m.row(i)) {
            *s += v;
        }
    }
    sums
}

fn semi_orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Matrix, NetError> {
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g
        })
        .collect();
    let gauss = Matrix::new(rows, cols, values)?;
    let svd = svd_oracle(&gauss)?;
    Ok(svd.u.matmul_transb(&svd.v))
}
