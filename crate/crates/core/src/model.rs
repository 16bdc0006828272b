//! Two-stream architecture: click VAE (encoder φx, decoder θx) and review
//! VAE (encoder φy, decoder θy) sharing one latent dimension `K`.
//!
//! Each encoder is a tanh MLP followed by a linear head emitting `2K`
//! values: the first `K` are the posterior mean, the last `K` are `ln σ`.
//! Decoders are tanh MLPs whose last layer emits item (or word) logits.
//! Forward passes record a trace so the matching backward pass can
//! accumulate exact gradients.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VcmError};
use crate::linalg::{affine, affine_sparse, dropout_mask, softmax, DenseMatrix, RngStream};

/// Layer widths and input transforms of both streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_items: usize,
    pub vocab_size: usize,
    pub latent_dim: usize,
    pub enc_x_hidden: Vec<usize>,
    pub dec_x_hidden: Vec<usize>,
    pub enc_y_hidden: Vec<usize>,
    pub dec_y_hidden: Vec<usize>,
    pub dropout_rate: f64,
}

impl Architecture {
    /// `[I → 600 → K → 600 → I]` for clicks and `[V → 500 → K → V]` for reviews.
    pub fn standard(n_items: usize, vocab_size: usize, latent_dim: usize) -> Self {
        Architecture {
            n_items,
            vocab_size,
            latent_dim,
            enc_x_hidden: vec![600],
            dec_x_hidden: vec![600],
            enc_y_hidden: vec![500],
            dec_y_hidden: vec![],
            dropout_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    EncoderX,
    EncoderY,
    DecoderX,
    DecoderY,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::EncoderX,
        ParamGroup::EncoderY,
        ParamGroup::DecoderX,
        ParamGroup::DecoderY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::EncoderX => "phi_x",
            ParamGroup::EncoderY => "phi_y",
            ParamGroup::DecoderX => "theta_x",
            ParamGroup::DecoderY => "theta_y",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Affine layer `out = W·in + b`, `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        Layer {
            weights: DenseMatrix::zeros(n_out, n_in),
            bias: vec![0.0; n_out],
        }
    }

    /// Weights uniform in `±1/√fan_in`, zero biases.
    pub fn uniform(n_out: usize, n_in: usize, rng: &mut RngStream) -> Self {
        let a = 1.0 / (n_in as f64).sqrt();
        let mut layer = Self::zeros(n_out, n_in);
        for w in layer.weights.as_mut_slice() {
            *w = (2.0 * rng.uniform() - 1.0) * a;
        }
        layer
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        affine(&self.weights, &self.bias, x).expect("layer shapes fixed at construction")
    }

    fn forward_sparse(&self, x: &SparseInput) -> Vec<f64> {
        affine_sparse(&self.weights, &self.bias, &x.idx, &x.val).expect("input indices checked by caller")
    }

    /// Accumulate `scale·(d ⊗ x)` and `scale·d` into `grad`; returns `Wᵀd`.
    fn backward(&self, x: &[f64], d: &[f64], grad: &mut Layer, scale: f64, need_input_grad: bool) -> Vec<f64> {
        grad.weights.add_outer(d, x, scale);
        for (g, v) in grad.bias.iter_mut().zip(d) {
            *g += scale * v;
        }
        if need_input_grad {
            self.weights.transpose_mul(d)
        } else {
            Vec::new()
        }
    }

    fn backward_sparse(&self, x: &SparseInput, d: &[f64], grad: &mut Layer, scale: f64) {
        for (r, &dr) in d.iter().enumerate() {
            let s = scale * dr;
            if s != 0.0 {
                let row = grad.weights.row_mut(r);
                for (&i, &v) in x.idx.iter().zip(&x.val) {
                    row[i] += s * v;
                }
            }
            grad.bias[r] += s;
        }
    }

    fn tensors(&self) -> [&[f64]; 2] {
        [self.weights.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weights.as_mut_slice(), &mut self.bias]
    }
}

/// Sparse encoder input as parallel index/value arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseInput {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

/// Binary click row scaled to unit L2 norm.
pub fn click_input(items: &[u32]) -> SparseInput {
    let v = if items.is_empty() {
        0.0
    } else {
        1.0 / (items.len() as f64).sqrt()
    };
    SparseInput {
        idx: items.iter().map(|&i| i as usize).collect(),
        val: vec![v; items.len()],
    }
}

/// Word counts scaled to unit L1 mass, then by `ln(1 + W_u)`.
pub fn review_input(words: &[(u32, u32)]) -> SparseInput {
    let total: f64 = words.iter().map(|&(_, c)| c as f64).sum();
    let scale = if total > 0.0 { total.ln_1p() / total } else { 0.0 };
    SparseInput {
        idx: words.iter().map(|&(w, _)| w as usize).collect(),
        val: words.iter().map(|&(_, c)| c as f64 * scale).collect(),
    }
}

/// Diagonal Gaussian `N(μ, diag σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(VcmError::shape(
                "GaussianPosterior",
                format!("mu dim {}", mu.len()),
                format!("sigma dim {}", sigma.len()),
            ));
        }
        let q = GaussianPosterior { mu, sigma };
        q.check_scale()?;
        Ok(q)
    }

    pub fn standard(k: usize) -> Self {
        GaussianPosterior {
            mu: vec![0.0; k],
            sigma: vec![1.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub(crate) fn check_scale(&self) -> Result<()> {
        match self.sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            Some(index) => Err(VcmError::NonPositiveScale {
                index,
                value: self.sigma[index],
            }),
            None => Ok(()),
        }
    }
}

/// `z = μ + ε ⊙ σ`.
pub fn reparameterize(q: &GaussianPosterior, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != q.dim() {
        return Err(VcmError::shape(
            "reparameterize",
            format!("K={}", q.dim()),
            format!("eps dim {}", eps.len()),
        ));
    }
    Ok(q.mu
        .iter()
        .zip(&q.sigma)
        .zip(eps)
        .map(|((m, s), e)| m + e * s)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub hidden: Vec<Layer>,
    pub head: Layer,
}

/// Activations recorded by [`EncoderParams::forward`].
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    input: SparseInput,
    hidden: Vec<Vec<f64>>,
    pub posterior: GaussianPosterior,
}

impl EncoderParams {
    fn build(n_in: usize, hidden: &[usize], latent: usize, mut make: impl FnMut(usize, usize) -> Layer) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = n_in;
        for &h in hidden {
            layers.push(make(h, width));
            width = h;
        }
        EncoderParams {
            hidden: layers,
            head: make(2 * latent, width),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.head.n_out() / 2
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.head).n_in()
    }

    pub fn forward(&self, input: SparseInput) -> Result<EncoderTrace> {
        let n_in = self.input_dim();
        if let Some(&bad) = input.idx.iter().find(|&&i| i >= n_in) {
            return Err(VcmError::shape(
                "encoder input",
                format!("dim {n_in}"),
                format!("index {bad}"),
            ));
        }
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        for (l, layer) in self.hidden.iter().enumerate() {
            let pre = if l == 0 {
                layer.forward_sparse(&input)
            } else {
                layer.forward(&hidden[l - 1])
            };
            hidden.push(pre.into_iter().map(f64::tanh).collect::<Vec<_>>());
        }
        let out = match hidden.last() {
            Some(h) => self.head.forward(h),
            None => self.head.forward_sparse(&input),
        };
        let k = self.latent_dim();
        let posterior = GaussianPosterior {
            mu: out[..k].to_vec(),
            sigma: out[k..].iter().map(|ls| ls.exp()).collect(),
        };
        posterior.check_scale()?;
        Ok(EncoderTrace {
            input,
            hidden,
            posterior,
        })
    }

    /// Accumulate `scale · ∂/∂φ` given the objective's sensitivity to μ and ln σ.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        d_mu: &[f64],
        d_log_sigma: &[f64],
        grad: &mut EncoderParams,
        scale: f64,
    ) {
        let d_out: Vec<f64> = d_mu.iter().chain(d_log_sigma).copied().collect();
        let Some(last) = trace.hidden.last() else {
            self.head.backward_sparse(&trace.input, &d_out, &mut grad.head, scale);
            return;
        };
        let mut d = self.head.backward(last, &d_out, &mut grad.head, scale, true);
        for l in (0..self.hidden.len()).rev() {
            let act = &trace.hidden[l];
            let d_pre: Vec<f64> = d.iter().zip(act).map(|(g, a)| g * (1.0 - a * a)).collect();
            if l == 0 {
                self.hidden[0].backward_sparse(&trace.input, &d_pre, &mut grad.hidden[0], scale);
            } else {
                d = self.hidden[l].backward(&trace.hidden[l - 1], &d_pre, &mut grad.hidden[l], scale, true);
            }
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(Layer::tensors)
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(Layer::tensors_mut)
            .collect()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|l| l.weights.shape())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub layers: Vec<Layer>,
}

/// Activations recorded by [`DecoderParams::forward`].
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    /// `acts[0]` is the latent input, `acts[l]` the tanh output of layer `l-1`.
    acts: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl DecoderParams {
    fn build(latent: usize, hidden: &[usize], n_out: usize, mut make: impl FnMut(usize, usize) -> Layer) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = latent;
        for &h in hidden.iter().chain(std::iter::once(&n_out)) {
            layers.push(make(h, width));
            width = h;
        }
        DecoderParams { layers }
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("decoder has an output layer").n_out()
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace_logits(z)?.1)
    }

    fn trace_logits(&self, z: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if z.len() != self.latent_dim() {
            return Err(VcmError::shape(
                "decoder input",
                format!("K={}", self.latent_dim()),
                format!("z dim {}", z.len()),
            ));
        }
        let mut acts = vec![z.to_vec()];
        let n = self.layers.len();
        for layer in &self.layers[..n - 1] {
            let pre = layer.forward(acts.last().unwrap());
            acts.push(pre.into_iter().map(f64::tanh).collect());
        }
        let logits = self.layers[n - 1].forward(acts.last().unwrap());
        Ok((acts, logits))
    }

    pub fn forward(&self, z: &[f64]) -> Result<DecoderTrace> {
        let (acts, logits) = self.trace_logits(z)?;
        Ok(DecoderTrace {
            acts,
            probs: softmax(&logits)?,
        })
    }

    /// Accumulate `scale · ∂/∂θ` given `d_logits`; returns the gradient w.r.t. `z`.
    pub fn backward(&self, trace: &DecoderTrace, d_logits: &[f64], grad: &mut DecoderParams, scale: f64) -> Vec<f64> {
        let n = self.layers.len();
        let mut d = self.layers[n - 1].backward(&trace.acts[n - 1], d_logits, &mut grad.layers[n - 1], scale, true);
        for l in (0..n - 1).rev() {
            let act = &trace.acts[l + 1];
            let d_pre: Vec<f64> = d.iter().zip(act).map(|(g, a)| g * (1.0 - a * a)).collect();
            d = self.layers[l].backward(&trace.acts[l], &d_pre, &mut grad.layers[l], scale, true);
        }
        // backward() scaled parameter grads only; the returned input grad is unscaled
        d
    }

    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::tensors_mut).collect()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.shape()).collect()
    }
}

/// All trainable parameters `φ = {φx, φy}`, `θ = {θx, θy}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub enc_x: EncoderParams,
    pub enc_y: EncoderParams,
    pub dec_x: DecoderParams,
    pub dec_y: DecoderParams,
}

/// Same shape as [`ModelParams`]; holds `∂objective/∂param`.
pub type ParamGradients = ModelParams;

impl ModelParams {
    fn build(arch: &Architecture, mut make: impl FnMut(usize, usize) -> Layer) -> Self {
        let k = arch.latent_dim;
        ModelParams {
            arch: arch.clone(),
            enc_x: EncoderParams::build(arch.n_items, &arch.enc_x_hidden, k, &mut make),
            enc_y: EncoderParams::build(arch.vocab_size, &arch.enc_y_hidden, k, &mut make),
            dec_x: DecoderParams::build(k, &arch.dec_x_hidden, arch.n_items, &mut make),
            dec_y: DecoderParams::build(k, &arch.dec_y_hidden, arch.vocab_size, &mut make),
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self::build(arch, Layer::zeros)
    }

    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = RngStream::derive(seed, &[0x1417]);
        Self::build(arch, |o, i| Layer::uniform(o, i, &mut rng))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch)
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn n_items(&self) -> usize {
        self.arch.n_items
    }

    pub fn vocab_size(&self) -> usize {
        self.arch.vocab_size
    }

    /// Flat parameter tensors in a fixed order: φx, φy, θx, θy; within each
    /// group layer by layer, weights before bias.
    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::new();
        out.extend(self.enc_x.tensors().into_iter().map(|t| (ParamGroup::EncoderX, t)));
        out.extend(self.enc_y.tensors().into_iter().map(|t| (ParamGroup::EncoderY, t)));
        out.extend(self.dec_x.tensors().into_iter().map(|t| (ParamGroup::DecoderX, t)));
        out.extend(self.dec_y.tensors().into_iter().map(|t| (ParamGroup::DecoderY, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        out.extend(self.enc_x.tensors_mut().into_iter().map(|t| (ParamGroup::EncoderX, t)));
        out.extend(self.enc_y.tensors_mut().into_iter().map(|t| (ParamGroup::EncoderY, t)));
        out.extend(self.dec_x.tensors_mut().into_iter().map(|t| (ParamGroup::DecoderX, t)));
        out.extend(self.dec_y.tensors_mut().into_iter().map(|t| (ParamGroup::DecoderY, t)));
        out
    }

    /// Weight-matrix shapes per group, in [`ModelParams::tensors`] order.
    pub fn shapes(&self) -> Vec<(ParamGroup, Vec<(usize, usize)>)> {
        vec![
            (ParamGroup::EncoderX, self.enc_x.shapes()),
            (ParamGroup::EncoderY, self.enc_y.shapes()),
            (ParamGroup::DecoderX, self.dec_x.shapes()),
            (ParamGroup::DecoderY, self.dec_y.shapes()),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// First group holding a non-finite entry.
    pub fn non_finite_group(&self) -> Option<ParamGroup> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(g, _)| g)
    }

    pub fn encode_clicks(&self, items: &[u32], rng: Option<&mut RngStream>) -> Result<GaussianPosterior> {
        let mut input = click_input(items);
        if let Some(rng) = rng {
            let keep = dropout_mask(input.idx.len(), self.arch.dropout_rate, rng, true)?;
            apply_dropout(&mut input, &keep, self.arch.dropout_rate);
        }
        Ok(self.enc_x.forward(input)?.posterior)
    }

    pub fn encode_reviews(&self, words: &[(u32, u32)]) -> Result<GaussianPosterior> {
        Ok(self.enc_y.forward(review_input(words))?.posterior)
    }

    pub fn decode_items(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.dec_x.forward(z)?.probs)
    }

    pub fn decode_words(&self, r: &[f64]) -> Result<Vec<f64>> {
        Ok(self.dec_y.forward(r)?.probs)
    }

    /// Item distribution from the click posterior mean (no dropout, no sampling).
    pub fn predict_scores(&self, items: &[u32]) -> Result<Vec<f64>> {
        let q = self.encode_clicks(items, None)?;
        self.decode_items(&q.mu)
    }

    /// Item distribution from the review posterior mean, decoded by the click decoder.
    pub fn predict_cross_domain(&self, words: &[(u32, u32)]) -> Result<Vec<f64>> {
        let q = self.encode_reviews(words)?;
        self.decode_items(&q.mu)
    }
}

/// Zero dropped entries of a sparse input and rescale survivors.
pub(crate) fn apply_dropout(input: &mut SparseInput, keep: &[bool], rate: f64) {
    let scale = 1.0 / (1.0 - rate);
    for (v, &k) in input.val.iter_mut().zip(keep) {
        *v = if k { *v * scale } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture {
            n_items: 6,
            vocab_size: 5,
            latent_dim: 2,
            enc_x_hidden: vec![3],
            dec_x_hidden: vec![4],
            enc_y_hidden: vec![3],
            dec_y_hidden: vec![],
            dropout_rate: 0.5,
        }
    }

    /// Plain nested-loop forward pass, written against the flat tensors only.
    fn oracle_mlp(tensors: &[&[f64]], shapes: &[(usize, usize)], x: &[f64], tanh_last: bool) -> Vec<f64> {
        let mut h = x.to_vec();
        for (l, &(rows, cols)) in shapes.iter().enumerate() {
            let (w, b) = (tensors[2 * l], tensors[2 * l + 1]);
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                let mut acc = b[r];
                for c in 0..cols {
                    acc += w[r * cols + c] * h[c];
                }
                out[r] = if l + 1 < shapes.len() || tanh_last {
                    acc.tanh()
                } else {
                    acc
                };
            }
            h = out;
        }
        h
    }

    fn oracle_softmax(v: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn group_tensors(m: &ModelParams, g: ParamGroup) -> Vec<&[f64]> {
        m.tensors()
            .into_iter()
            .filter(|(gg, _)| *gg == g)
            .map(|(_, t)| t)
            .collect()
    }

    fn group_shapes(m: &ModelParams, g: ParamGroup) -> Vec<(usize, usize)> {
        m.shapes().into_iter().find(|(gg, _)| *gg == g).unwrap().1
    }

    #[test]
    fn zero_encoder_gives_standard_posterior() {
        let m = ModelParams::zeros(&tiny_arch());
        let q = m.encode_clicks(&[0, 3], None).unwrap();
        assert_eq!(q, GaussianPosterior::standard(2));
        let q = m.encode_reviews(&[(1, 4)]).unwrap();
        assert_eq!(q, GaussianPosterior::standard(2));
        let q = m.encode_clicks(&[], None).unwrap();
        assert_eq!(q, GaussianPosterior::standard(2));
    }

    #[test]
    fn zero_decoder_is_uniform() {
        let m = ModelParams::zeros(&tiny_arch());
        let p = m.decode_items(&[0.3, -2.0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
        let p = m.decode_words(&[0.3, -2.0]).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn bias_shift_leaves_item_distribution_unchanged() {
        let mut m = ModelParams::init(&tiny_arch(), 3);
        let before = m.decode_items(&[0.5, 0.1]).unwrap();
        for b in &mut m.dec_x.layers.last_mut().unwrap().bias {
            *b += 7.25;
        }
        let after = m.decode_items(&[0.5, 0.1]).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encoders_match_independent_forward() {
        let m = ModelParams::init(&tiny_arch(), 11);
        let items = [1u32, 4, 5];
        let mut dense = vec![0.0; 6];
        for &i in &items {
            dense[i as usize] = 1.0 / 3f64.sqrt();
        }
        let out = oracle_mlp(
            &group_tensors(&m, ParamGroup::EncoderX),
            &group_shapes(&m, ParamGroup::EncoderX),
            &dense,
            false,
        );
        let q = m.encode_clicks(&items, None).unwrap();
        for k in 0..2 {
            assert!((q.mu[k] - out[k]).abs() < 1e-14);
            assert!((q.sigma[k] - out[2 + k].exp()).abs() < 1e-14);
        }

        let words = [(0u32, 3u32), (2, 1)];
        let w = 4.0f64;
        let mut dense = vec![0.0; 5];
        dense[0] = 3.0 / w * (1.0 + w).ln();
        dense[2] = 1.0 / w * (1.0 + w).ln();
        let out = oracle_mlp(
            &group_tensors(&m, ParamGroup::EncoderY),
            &group_shapes(&m, ParamGroup::EncoderY),
            &dense,
            false,
        );
        let q = m.encode_reviews(&words).unwrap();
        for k in 0..2 {
            assert!((q.mu[k] - out[k]).abs() < 1e-14);
            assert!((q.sigma[k] - out[2 + k].exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn decoders_and_predictions_match_independent_forward() {
        let m = ModelParams::init(&tiny_arch(), 5);
        let z = [0.4, -1.1];
        let logits = oracle_mlp(
            &group_tensors(&m, ParamGroup::DecoderX),
            &group_shapes(&m, ParamGroup::DecoderX),
            &z,
            false,
        );
        let want = oracle_softmax(&logits);
        let got = m.decode_items(&z).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
        let logits = oracle_mlp(
            &group_tensors(&m, ParamGroup::DecoderY),
            &group_shapes(&m, ParamGroup::DecoderY),
            &z,
            false,
        );
        let want = oracle_softmax(&logits);
        let got = m.decode_words(&z).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }

        // End to end: posterior mean through the click decoder.
        let items = [0u32, 2];
        let mut dense = vec![0.0; 6];
        dense[0] = 1.0 / 2f64.sqrt();
        dense[2] = 1.0 / 2f64.sqrt();
        let enc = oracle_mlp(
            &group_tensors(&m, ParamGroup::EncoderX),
            &group_shapes(&m, ParamGroup::EncoderX),
            &dense,
            false,
        );
        let logits = oracle_mlp(
            &group_tensors(&m, ParamGroup::DecoderX),
            &group_shapes(&m, ParamGroup::DecoderX),
            &enc[..2],
            false,
        );
        let want = oracle_softmax(&logits);
        let got = m.predict_scores(&items).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }

        let words = [(1u32, 2u32)];
        let mut dense = vec![0.0; 5];
        dense[1] = 3f64.ln();
        let enc = oracle_mlp(
            &group_tensors(&m, ParamGroup::EncoderY),
            &group_shapes(&m, ParamGroup::EncoderY),
            &dense,
            false,
        );
        let logits = oracle_mlp(
            &group_tensors(&m, ParamGroup::DecoderX),
            &group_shapes(&m, ParamGroup::DecoderX),
            &enc[..2],
            false,
        );
        let want = oracle_softmax(&logits);
        let got = m.predict_cross_domain(&words).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn predictions_are_deterministic_and_use_posterior_mean() {
        let m = ModelParams::init(&tiny_arch(), 8);
        let a = m.predict_scores(&[1, 2]).unwrap();
        let b = m.predict_scores(&[1, 2]).unwrap();
        assert_eq!(a, b);
        let q = m.encode_clicks(&[1, 2], None).unwrap();
        let z = reparameterize(&q, &[0.0, 0.0]).unwrap();
        assert_eq!(m.decode_items(&z).unwrap(), a);
        assert_eq!(
            m.predict_cross_domain(&[(0, 1)]).unwrap(),
            m.predict_cross_domain(&[(0, 1)]).unwrap()
        );
        assert_eq!(
            m.encode_clicks(&[3], None).unwrap(),
            m.encode_clicks(&[3], None).unwrap()
        );
    }

    #[test]
    fn cross_domain_shares_click_decoder() {
        let arch = Architecture {
            vocab_size: 6,
            ..tiny_arch()
        };
        let mut m = ModelParams::init(&arch, 2);
        // Input-independent encoders with equal heads give equal posterior means.
        m.enc_x.hidden[0].weights.as_mut_slice().fill(0.0);
        m.enc_x.hidden[0].bias = vec![0.3, -0.2, 0.9];
        m.enc_y = m.enc_x.clone();
        let qx = m.encode_clicks(&[1, 3], None).unwrap();
        let qy = m.encode_reviews(&[(0, 2), (5, 1)]).unwrap();
        assert_eq!(qx.mu, qy.mu);
        assert_eq!(
            m.predict_scores(&[1, 3]).unwrap(),
            m.predict_cross_domain(&[(0, 2), (5, 1)]).unwrap()
        );
    }

    #[test]
    fn reparameterize_examples() {
        let q = GaussianPosterior::new(vec![0.5, -1.0], vec![0.1, 3.0]).unwrap();
        assert_eq!(reparameterize(&q, &[0.0, 0.0]).unwrap(), q.mu);
        let q = GaussianPosterior::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        assert_eq!(reparameterize(&q, &[1.0, -1.0]).unwrap(), vec![2.0, -2.0]);
        assert!(reparameterize(&q, &[1.0]).is_err());
        assert!(GaussianPosterior::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn reparameterized_draws_match_posterior_moments() {
        let q = GaussianPosterior::new(vec![1.5, -0.5], vec![0.5, 2.0]).unwrap();
        let n = 100_000;
        let mut rng = RngStream::new(77);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let eps = crate::linalg::sample_standard_normal(2, &mut rng);
            let z = reparameterize(&q, &eps).unwrap();
            for k in 0..2 {
                sum[k] += z[k];
                sq[k] += z[k] * z[k];
            }
        }
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let sd = var.sqrt();
            // sd of the sample mean is σ/√n; of the sample sd about σ/√(2n).
            assert!(
                (mean - q.mu[k]).abs() < 3.0 * q.sigma[k] / (n as f64).sqrt(),
                "mean {mean}"
            );
            assert!(
                (sd - q.sigma[k]).abs() < 3.0 * q.sigma[k] / (2.0 * n as f64).sqrt(),
                "sd {sd}"
            );
        }
    }

    #[test]
    fn standard_architecture_widths() {
        let m = ModelParams::zeros(&Architecture::standard(30, 20, 100));
        let shapes = m.shapes();
        assert_eq!(shapes[0].1, vec![(600, 30), (200, 600)]);
        assert_eq!(shapes[1].1, vec![(500, 20), (200, 500)]);
        assert_eq!(shapes[2].1, vec![(600, 100), (30, 600)]);
        assert_eq!(shapes[3].1, vec![(20, 100)]);
    }

    #[test]
    fn encoder_rejects_out_of_range_input() {
        let m = ModelParams::zeros(&tiny_arch());
        assert!(m.encode_clicks(&[6], None).is_err());
    }
}
