//! Per-user Monte-Carlo objective and its exact reparameterized gradient.
//!
//! All noise (dropout keep-mask and ε draws) is sampled up front into a
//! [`UserNoise`], so the objective is a deterministic function of the
//! parameters and finite differences can check the analytic gradient.

use rayon::prelude::*;

use crate::error::{Result, VcmError};
use crate::linalg::{sample_standard_normal, RngStream};
use crate::model::{apply_dropout, click_input, reparameterize, review_input, ModelParams, ParamGradients};
use crate::objective::{
    kl_between, kl_between_grad, kl_to_prior, kl_to_prior_grad, multinomial_log_likelihood_checked, nv_penalty,
    nv_penalty_grad, per_user_objective, ObjectiveBreakdown, ObjectiveForm, ObjectiveTerms, PosteriorGrad,
    LOG_PROB_FLOOR,
};

/// One user's observed rows.
#[derive(Debug, Clone, Copy)]
pub struct UserRows<'a> {
    pub clicks: &'a [u32],
    pub words: &'a [(u32, u32)],
}

/// Pre-drawn randomness for one user's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct UserNoise {
    /// Keep flag per click in the (training) input; `None` disables dropout.
    pub keep: Option<Vec<bool>>,
    /// One ε per Monte-Carlo sample for the click stream.
    pub eps_x: Vec<Vec<f64>>,
    /// One ε per Monte-Carlo sample for the review stream.
    pub eps_y: Vec<Vec<f64>>,
}

const LANE_CLICKS: u64 = 0xc11c;
const LANE_REVIEWS: u64 = 0x7e71;

impl UserNoise {
    /// Draw noise for a training step. Click and review streams come from
    /// separate derived RNG lanes so neither depends on the other's data.
    pub fn draw(params: &ModelParams, n_clicks: usize, samples: usize, seed: u64, keys: &[u64]) -> Self {
        let k = params.latent_dim();
        let mut kx: Vec<u64> = keys.to_vec();
        kx.push(LANE_CLICKS);
        let mut ky: Vec<u64> = keys.to_vec();
        ky.push(LANE_REVIEWS);
        let mut rx = RngStream::derive(seed, &kx);
        let mut ry = RngStream::derive(seed, &ky);
        let rate = params.arch.dropout_rate;
        let keep = (rate > 0.0).then(|| (0..n_clicks).map(|_| rx.uniform() >= rate).collect());
        UserNoise {
            keep,
            eps_x: (0..samples).map(|_| sample_standard_normal(k, &mut rx)).collect(),
            eps_y: (0..samples).map(|_| sample_standard_normal(k, &mut ry)).collect(),
        }
    }

    /// No dropout and the given fixed ε (used by gradient checks).
    pub fn fixed(eps_x: Vec<f64>, eps_y: Vec<f64>) -> Self {
        UserNoise {
            keep: None,
            eps_x: vec![eps_x],
            eps_y: vec![eps_y],
        }
    }
}

/// Objective terms for one user and, if `grad` is given, accumulate
/// `scale · ∂total/∂params` into it.
#[allow(clippy::too_many_arguments)]
pub fn user_objective(
    params: &ModelParams,
    rows: UserRows<'_>,
    noise: &UserNoise,
    form: ObjectiveForm,
    beta_x: f64,
    beta_y: f64,
    beta_cap: f64,
    mut grad: Option<&mut ParamGradients>,
    scale: f64,
) -> Result<ObjectiveBreakdown> {
    let w = form.weights(beta_x, beta_y);
    let k = params.latent_dim();
    let mut terms = ObjectiveTerms::default();

    let x_trace = if form.uses_clicks() {
        let mut input = click_input(rows.clicks);
        if let Some(keep) = &noise.keep {
            apply_dropout(&mut input, keep, params.arch.dropout_rate);
        }
        Some(params.enc_x.forward(input)?)
    } else {
        None
    };
    let y_trace = params.enc_y.forward(review_input(rows.words))?;
    let qy = &y_trace.posterior;

    let mut gx = PosteriorGrad::zeros(k);
    let mut gy = PosteriorGrad::zeros(k);

    if let Some(xt) = &x_trace {
        let qx = &xt.posterior;
        let samples = noise.eps_x.len();
        for eps in &noise.eps_x {
            let z = reparameterize(qx, eps)?;
            let dec = params.dec_x.forward(&z)?;
            let (ll, floored) =
                multinomial_log_likelihood_checked(rows.clicks.iter().map(|&i| (i as usize, 1.0)), &dec.probs);
            terms.recon_x += ll / samples as f64;
            if let Some(g) = grad.as_deref_mut() {
                let coef = w.recon_x / samples as f64;
                let d_logits =
                    multinomial_logit_grad(rows.clicks.iter().map(|&i| (i as usize, 1.0)), &dec.probs, floored);
                let dz = params.dec_x.backward(&dec, &d_logits, &mut g.dec_x, scale * coef);
                accumulate_reparam(&mut gx, &dz, eps, &qx.sigma, coef);
            }
        }
        terms.kl_prior_x = kl_to_prior(qx)?;
        gx.add_scaled(&kl_to_prior_grad(qx), w.kl_prior_x);
        terms.kl_xy = kl_between(qx, qy)?;
        terms.kl_yx = kl_between(qy, qx)?;
        terms.nv_penalty = nv_penalty(qx, qy)?;
        if w.kl_xy != 0.0 {
            let (a, b) = kl_between_grad(qx, qy);
            gx.add_scaled(&a, w.kl_xy);
            gy.add_scaled(&b, w.kl_xy);
        }
        if w.kl_yx != 0.0 {
            let (a, b) = kl_between_grad(qy, qx);
            gy.add_scaled(&a, w.kl_yx);
            gx.add_scaled(&b, w.kl_yx);
        }
        if w.nv != 0.0 {
            let (a, b) = nv_penalty_grad(qx, qy);
            gx.add_scaled(&a, w.nv);
            gy.add_scaled(&b, w.nv);
        }
    }

    if form.reconstructs_reviews() {
        let samples = noise.eps_y.len();
        for eps in &noise.eps_y {
            let r = reparameterize(qy, eps)?;
            let dec = params.dec_y.forward(&r)?;
            let counts = || rows.words.iter().map(|&(v, c)| (v as usize, c as f64));
            let (ll, floored) = multinomial_log_likelihood_checked(counts(), &dec.probs);
            terms.recon_y += ll / samples as f64;
            if let Some(g) = grad.as_deref_mut() {
                let coef = w.recon_y / samples as f64;
                let d_logits = multinomial_logit_grad(counts(), &dec.probs, floored);
                let dr = params.dec_y.backward(&dec, &d_logits, &mut g.dec_y, scale * coef);
                accumulate_reparam(&mut gy, &dr, eps, &qy.sigma, coef);
            }
        }
        terms.kl_prior_y = kl_to_prior(qy)?;
        gy.add_scaled(&kl_to_prior_grad(qy), w.kl_prior_y);
    }

    if let Some(g) = grad {
        if let Some(xt) = &x_trace {
            params
                .enc_x
                .backward(xt, &gx.d_mu, &gx.d_log_sigma, &mut g.enc_x, scale);
        }
        if gy.d_mu.iter().chain(&gy.d_log_sigma).any(|v| *v != 0.0) {
            params
                .enc_y
                .backward(&y_trace, &gy.d_mu, &gy.d_log_sigma, &mut g.enc_y, scale);
        }
    }

    per_user_objective(&terms, beta_x, beta_y, beta_cap, form)
}

/// `∂/∂logits Σ c_i ln softmax_i`, i.e. `Σ c_i (e_i − p)` over terms whose
/// probability is above the log floor (floored terms are constant).
fn multinomial_logit_grad(counts: impl Iterator<Item = (usize, f64)>, probs: &[f64], floored: bool) -> Vec<f64> {
    let mut d = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for (i, c) in counts {
        if c == 0.0 || (floored && probs[i] < LOG_PROB_FLOOR) {
            continue;
        }
        d[i] += c;
        mass += c;
    }
    for (di, p) in d.iter_mut().zip(probs) {
        *di -= mass * p;
    }
    d
}

/// Chain `∂/∂z` through `z = μ + ε⊙exp(ln σ)`.
fn accumulate_reparam(g: &mut PosteriorGrad, dz: &[f64], eps: &[f64], sigma: &[f64], coef: f64) {
    for k in 0..dz.len() {
        g.d_mu[k] += coef * dz[k];
        g.d_log_sigma[k] += coef * dz[k] * eps[k] * sigma[k];
    }
}

/// One user of a batch with its noise.
#[derive(Debug, Clone)]
pub struct BatchEntry<'a> {
    pub rows: UserRows<'a>,
    pub noise: UserNoise,
}

/// Mean objective over `batch` and the mean gradient.
///
/// The batch is cut into `lanes` contiguous chunks; each chunk is summed
/// sequentially (possibly on its own thread) and chunk results are added in
/// chunk order, so the result depends on `lanes` but not on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn compute_gradients(
    params: &ModelParams,
    batch: &[BatchEntry<'_>],
    form: ObjectiveForm,
    beta_x: f64,
    beta_y: f64,
    beta_cap: f64,
    lanes: usize,
    scratch: &mut Vec<ParamGradients>,
) -> Result<(ObjectiveBreakdown, ParamGradients)> {
    if batch.is_empty() {
        return Err(VcmError::EmptyDataset("empty batch".into()));
    }
    let lanes = lanes.clamp(1, batch.len());
    let chunk = batch.len().div_ceil(lanes);
    let lanes = batch.len().div_ceil(chunk);
    while scratch.len() < lanes {
        scratch.push(params.zeros_like());
    }
    let scale = 1.0 / batch.len() as f64;
    let lane_results: Vec<Result<ObjectiveBreakdown>> = scratch[..lanes]
        .par_iter_mut()
        .zip(batch.par_chunks(chunk))
        .map(|(acc, users)| {
            acc.fill_zero();
            let mut mean = ObjectiveBreakdown::default();
            for e in users {
                let b = user_objective(
                    params,
                    e.rows,
                    &e.noise,
                    form,
                    beta_x,
                    beta_y,
                    beta_cap,
                    Some(acc),
                    scale,
                )?;
                mean.add_scaled(&b, scale);
            }
            Ok(mean)
        })
        .collect();
    let mut mean = ObjectiveBreakdown::default();
    for r in lane_results {
        mean.add_scaled(&r?, 1.0);
    }
    let mut total = scratch[0].clone();
    for acc in &scratch[1..lanes] {
        total.add_scaled(acc, 1.0);
    }
    if let Some(g) = total.non_finite_group() {
        return Err(VcmError::NonFiniteGradient(g));
    }
    Ok((mean, total))
}
