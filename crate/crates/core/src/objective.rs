//! Loss terms and their assembly into the per-user objective.
//!
//! The objective is **maximized**: reconstruction log-likelihoods enter with
//! weight `+1` and every divergence with a non-positive weight. Checkpoints,
//! logs and gradients all use this ascent convention.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VcmError};
use crate::model::GaussianPosterior;

/// Lower bound applied to probabilities inside `ln`.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainingVariant {
    /// Both streams coupled by the bidirectional KL.
    #[default]
    #[serde(rename = "vcm")]
    Vcm,
    /// Streams trained independently.
    #[serde(rename = "vcm-se")]
    Separate,
    /// Review stream trained first and frozen; clicks follow it one way.
    #[serde(rename = "vcm-od")]
    OneDirectional,
    /// Squared distance between means instead of the KL pair.
    #[serde(rename = "vcm-nv")]
    NoVariance,
}

impl TrainingVariant {
    pub const ALL: [TrainingVariant; 4] = [
        TrainingVariant::Vcm,
        TrainingVariant::Separate,
        TrainingVariant::OneDirectional,
        TrainingVariant::NoVariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingVariant::Vcm => "vcm",
            TrainingVariant::Separate => "vcm-se",
            TrainingVariant::OneDirectional => "vcm-od",
            TrainingVariant::NoVariance => "vcm-nv",
        }
    }
}

impl fmt::Display for TrainingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingVariant {
    type Err = VcmError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        TrainingVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| VcmError::UnknownVariant(s.to_string()))
    }
}

/// Which objective a gradient step optimizes. Each training variant maps to
/// one form, except VCM-OD which runs [`ObjectiveForm::ReviewOnly`] first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveForm {
    Vcm,
    Separate,
    OneDirectional,
    NoVariance,
    ReviewOnly,
}

impl From<TrainingVariant> for ObjectiveForm {
    fn from(v: TrainingVariant) -> Self {
        match v {
            TrainingVariant::Vcm => ObjectiveForm::Vcm,
            TrainingVariant::Separate => ObjectiveForm::Separate,
            TrainingVariant::OneDirectional => ObjectiveForm::OneDirectional,
            TrainingVariant::NoVariance => ObjectiveForm::NoVariance,
        }
    }
}

impl ObjectiveForm {
    pub fn uses_clicks(self) -> bool {
        self != ObjectiveForm::ReviewOnly
    }

    /// Whether the review reconstruction term (and hence θy) is active.
    pub fn reconstructs_reviews(self) -> bool {
        self != ObjectiveForm::OneDirectional
    }

    /// Coefficient of each term in `total`.
    pub fn weights(self, beta_x: f64, beta_y: f64) -> TermWeights {
        let mut w = TermWeights::default();
        match self {
            ObjectiveForm::Vcm => {
                w.recon_x = 1.0;
                w.recon_y = 1.0;
                w.kl_prior_x = -beta_x;
                w.kl_prior_y = -beta_y;
                w.kl_xy = -beta_x;
                w.kl_yx = -beta_y;
            }
            ObjectiveForm::Separate => {
                w.recon_x = 1.0;
                w.recon_y = 1.0;
                w.kl_prior_x = -beta_x;
                w.kl_prior_y = -beta_y;
            }
            ObjectiveForm::OneDirectional => {
                w.recon_x = 1.0;
                w.kl_prior_x = -beta_x;
                w.kl_xy = -beta_x;
            }
            ObjectiveForm::NoVariance => {
                w.recon_x = 1.0;
                w.recon_y = 1.0;
                w.kl_prior_x = -beta_x;
                w.kl_prior_y = -beta_y;
                w.nv = -(beta_x + beta_y) / 2.0;
            }
            ObjectiveForm::ReviewOnly => {
                w.recon_y = 1.0;
                w.kl_prior_y = -beta_y;
            }
        }
        w
    }
}

/// Signed coefficients of the seven objective terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermWeights {
    pub recon_x: f64,
    pub recon_y: f64,
    pub kl_prior_x: f64,
    pub kl_prior_y: f64,
    pub kl_xy: f64,
    pub kl_yx: f64,
    pub nv: f64,
}

/// Raw (unweighted) term values for one user, or their mean over users.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub recon_x: f64,
    pub recon_y: f64,
    pub kl_prior_x: f64,
    pub kl_prior_y: f64,
    pub kl_xy: f64,
    pub kl_yx: f64,
    pub nv_penalty: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub recon_x: f64,
    pub recon_y: f64,
    pub kl_prior_x: f64,
    pub kl_prior_y: f64,
    pub kl_xy: f64,
    pub kl_yx: f64,
    pub nv_penalty: f64,
    pub total: f64,
    pub beta_x: f64,
    pub beta_y: f64,
}

impl ObjectiveBreakdown {
    pub const CSV_FIELDS: [&'static str; 10] = [
        "recon_x",
        "recon_y",
        "kl_prior_x",
        "kl_prior_y",
        "kl_xy",
        "kl_yx",
        "nv_penalty",
        "total",
        "beta_x",
        "beta_y",
    ];

    pub fn csv_values(&self) -> [f64; 10] {
        [
            self.recon_x,
            self.recon_y,
            self.kl_prior_x,
            self.kl_prior_y,
            self.kl_xy,
            self.kl_yx,
            self.nv_penalty,
            self.total,
            self.beta_x,
            self.beta_y,
        ]
    }

    /// Accumulate `scale · other` field by field (used for batch means).
    pub fn add_scaled(&mut self, other: &ObjectiveBreakdown, scale: f64) {
        self.recon_x += scale * other.recon_x;
        self.recon_y += scale * other.recon_y;
        self.kl_prior_x += scale * other.kl_prior_x;
        self.kl_prior_y += scale * other.kl_prior_y;
        self.kl_xy += scale * other.kl_xy;
        self.kl_yx += scale * other.kl_yx;
        self.nv_penalty += scale * other.nv_penalty;
        self.total += scale * other.total;
        self.beta_x += scale * other.beta_x;
        self.beta_y += scale * other.beta_y;
    }

    pub fn terms(&self) -> ObjectiveTerms {
        ObjectiveTerms {
            recon_x: self.recon_x,
            recon_y: self.recon_y,
            kl_prior_x: self.kl_prior_x,
            kl_prior_y: self.kl_prior_y,
            kl_xy: self.kl_xy,
            kl_yx: self.kl_yx,
            nv_penalty: self.nv_penalty,
        }
    }
}

/// `Σ_i counts[i]·ln probs[i]` over non-zero counts, with `ln` floored at
/// `ln(1e-12)`. Returns the value and whether the floor was hit.
pub fn multinomial_log_likelihood_checked<C>(counts: impl IntoIterator<Item = (usize, C)>, probs: &[f64]) -> (f64, bool)
where
    C: Into<f64>,
{
    let mut floored = false;
    let mut total = 0.0;
    for (i, c) in counts {
        let c: f64 = c.into();
        if c == 0.0 {
            continue;
        }
        let p = probs[i];
        if p < LOG_PROB_FLOOR {
            floored = true;
            total += c * LOG_PROB_FLOOR.ln();
        } else {
            total += c * p.ln();
        }
    }
    (total, floored)
}

/// Dense-count convenience wrapper over [`multinomial_log_likelihood_checked`].
pub fn multinomial_log_likelihood(counts: &[f64], probs: &[f64]) -> f64 {
    let (v, floored) = multinomial_log_likelihood_checked(counts.iter().copied().enumerate(), probs);
    if floored {
        log::warn!("multinomial log-likelihood hit the probability floor {LOG_PROB_FLOOR:e}");
    }
    v
}

/// `KL(q ‖ N(0, I)) = Σ ½(σ² + μ² − 1 − 2 ln σ)`.
pub fn kl_to_prior(q: &GaussianPosterior) -> Result<f64> {
    q.check_scale()?;
    Ok(q.mu
        .iter()
        .zip(&q.sigma)
        .map(|(m, s)| 0.5 * (s * s + m * m - 1.0) - s.ln())
        .sum())
}

/// `KL(a ‖ b) = Σ ln(σ_b/σ_a) + (σ_a² + (μ_a − μ_b)²)/(2σ_b²) − ½`.
pub fn kl_between(a: &GaussianPosterior, b: &GaussianPosterior) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(VcmError::shape(
            "kl_between",
            format!("K={}", a.dim()),
            format!("K={}", b.dim()),
        ));
    }
    a.check_scale()?;
    b.check_scale()?;
    Ok((0..a.dim())
        .map(|k| {
            let (ma, sa, mb, sb) = (a.mu[k], a.sigma[k], b.mu[k], b.sigma[k]);
            let d = ma - mb;
            (sb / sa).ln() + (sa * sa + d * d) / (2.0 * sb * sb) - 0.5
        })
        .sum())
}

/// `‖μ_a − μ_b‖²`; ignores both scales.
pub fn nv_penalty(a: &GaussianPosterior, b: &GaussianPosterior) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(VcmError::shape(
            "nv_penalty",
            format!("K={}", a.dim()),
            format!("K={}", b.dim()),
        ));
    }
    Ok(a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Sensitivity of a term to one posterior's `(μ, ln σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrad {
    pub d_mu: Vec<f64>,
    pub d_log_sigma: Vec<f64>,
}

impl PosteriorGrad {
    pub fn zeros(k: usize) -> Self {
        PosteriorGrad {
            d_mu: vec![0.0; k],
            d_log_sigma: vec![0.0; k],
        }
    }

    pub(crate) fn add_scaled(&mut self, other: &PosteriorGrad, scale: f64) {
        for (d, o) in self.d_mu.iter_mut().zip(&other.d_mu) {
            *d += scale * o;
        }
        for (d, o) in self.d_log_sigma.iter_mut().zip(&other.d_log_sigma) {
            *d += scale * o;
        }
    }
}

/// `∂ KL(q‖prior) / ∂(μ, ln σ) = (μ, σ² − 1)`.
pub fn kl_to_prior_grad(q: &GaussianPosterior) -> PosteriorGrad {
    PosteriorGrad {
        d_mu: q.mu.clone(),
        d_log_sigma: q.sigma.iter().map(|s| s * s - 1.0).collect(),
    }
}

/// Gradients of `KL(a‖b)` with respect to both arguments.
pub fn kl_between_grad(a: &GaussianPosterior, b: &GaussianPosterior) -> (PosteriorGrad, PosteriorGrad) {
    let k = a.dim();
    let mut ga = PosteriorGrad::zeros(k);
    let mut gb = PosteriorGrad::zeros(k);
    for i in 0..k {
        let vb = b.sigma[i] * b.sigma[i];
        let va = a.sigma[i] * a.sigma[i];
        let d = a.mu[i] - b.mu[i];
        ga.d_mu[i] = d / vb;
        gb.d_mu[i] = -d / vb;
        ga.d_log_sigma[i] = va / vb - 1.0;
        gb.d_log_sigma[i] = 1.0 - (va + d * d) / vb;
    }
    (ga, gb)
}

/// Gradients of `‖μ_a − μ_b‖²`.
pub fn nv_penalty_grad(a: &GaussianPosterior, b: &GaussianPosterior) -> (PosteriorGrad, PosteriorGrad) {
    let k = a.dim();
    let mut ga = PosteriorGrad::zeros(k);
    let mut gb = PosteriorGrad::zeros(k);
    for i in 0..k {
        let d = 2.0 * (a.mu[i] - b.mu[i]);
        ga.d_mu[i] = d;
        gb.d_mu[i] = -d;
    }
    (ga, gb)
}

/// Weighted total for one user under `form`. Both betas must lie in `[0, beta_cap]`.
pub fn per_user_objective(
    terms: &ObjectiveTerms,
    beta_x: f64,
    beta_y: f64,
    beta_cap: f64,
    form: ObjectiveForm,
) -> Result<ObjectiveBreakdown> {
    for beta in [beta_x, beta_y] {
        if !(0.0..=beta_cap).contains(&beta) {
            return Err(VcmError::BetaOutOfRange {
                value: beta,
                cap: beta_cap,
            });
        }
    }
    let w = form.weights(beta_x, beta_y);
    let total = w.recon_x * terms.recon_x
        + w.recon_y * terms.recon_y
        + w.kl_prior_x * terms.kl_prior_x
        + w.kl_prior_y * terms.kl_prior_y
        + w.kl_xy * terms.kl_xy
        + w.kl_yx * terms.kl_yx
        + w.nv * terms.nv_penalty;
    Ok(ObjectiveBreakdown {
        recon_x: terms.recon_x,
        recon_y: terms.recon_y,
        kl_prior_x: terms.kl_prior_x,
        kl_prior_y: terms.kl_prior_y,
        kl_xy: terms.kl_xy,
        kl_yx: terms.kl_yx,
        nv_penalty: terms.nv_penalty,
        total,
        beta_x,
        beta_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(mu: &[f64], sigma: &[f64]) -> GaussianPosterior {
        GaussianPosterior::new(mu.to_vec(), sigma.to_vec()).unwrap()
    }

    #[test]
    fn multinomial_examples() {
        let third = 1.0 / 3.0;
        let v = multinomial_log_likelihood(&[1.0, 0.0, 1.0], &[third; 3]);
        assert!((v - 2.0 * third.ln()).abs() < 1e-15);
        assert!((v + 2.1972).abs() < 1e-4);
        assert_eq!(multinomial_log_likelihood(&[0.0; 3], &[third; 3]), 0.0);
        let v = multinomial_log_likelihood(&[2.0, 0.0, 1.0], &[0.5, 0.25, 0.25]);
        assert!((v - (2.0 * 0.5f64.ln() + 0.25f64.ln())).abs() < 1e-15);
        assert!((v + 2.7726).abs() < 1e-4);
    }

    #[test]
    fn multinomial_floor() {
        let (v, floored) = multinomial_log_likelihood_checked([(0usize, 1.0), (1, 0.0)], &[0.0, 1.0]);
        assert!(floored);
        assert_eq!(v, LOG_PROB_FLOOR.ln());
        // zero count on a zero probability is not a floor hit
        let (v, floored) = multinomial_log_likelihood_checked([(0usize, 0.0), (1, 2.0)], &[0.0, 1.0]);
        assert!(!floored);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn kl_prior_examples() {
        assert_eq!(kl_to_prior(&GaussianPosterior::standard(7)).unwrap(), 0.0);
        assert!((kl_to_prior(&q(&[1.0], &[1.0])).unwrap() - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        let want = 0.5 * (e * e - 1.0 - 2.0);
        assert!((kl_to_prior(&q(&[0.0], &[e])).unwrap() - want).abs() < 1e-14);
        assert!((want - 2.1945).abs() < 1e-4);
        let bad = GaussianPosterior {
            mu: vec![0.0],
            sigma: vec![-1.0],
        };
        assert!(kl_to_prior(&bad).is_err());
    }

    #[test]
    fn kl_between_examples() {
        let a = q(&[0.3, -1.0], &[0.5, 2.0]);
        assert_eq!(kl_between(&a, &a).unwrap(), 0.0);
        assert!((kl_between(&q(&[0.0], &[1.0]), &q(&[1.0], &[1.0])).unwrap() - 0.5).abs() < 1e-15);
        let n1 = q(&[0.0], &[1.0]);
        let n2 = q(&[0.0], &[2.0]);
        let fwd = kl_between(&n1, &n2).unwrap();
        let bwd = kl_between(&n2, &n1).unwrap();
        assert!((fwd - (2f64.ln() + 1.0 / 8.0 - 0.5)).abs() < 1e-15);
        assert!((bwd - (-(2f64.ln()) + 2.0 - 0.5)).abs() < 1e-15);
        assert!((bwd - 0.8069).abs() < 5e-5);
        // The quoted forward value belongs to variance 2 rather than 4.
        let fwd2 = kl_between(&n1, &q(&[0.0], &[2f64.sqrt()])).unwrap();
        assert!((fwd2 - 0.0966).abs() < 5e-5);
        assert!(kl_between(&n1, &a).is_err());
    }

    #[test]
    fn nv_examples() {
        let a = q(&[1.0, 0.0], &[1.0, 1.0]);
        let b = q(&[0.0, 1.0], &[3.0, 0.2]);
        assert_eq!(nv_penalty(&a, &a).unwrap(), 0.0);
        assert_eq!(nv_penalty(&a, &b).unwrap(), 2.0);
        let b2 = q(&[0.0, 1.0], &[0.01, 9.0]);
        assert_eq!(nv_penalty(&a, &b).unwrap(), nv_penalty(&a, &b2).unwrap());
    }

    fn terms() -> ObjectiveTerms {
        ObjectiveTerms {
            recon_x: -12.5,
            recon_y: -40.25,
            kl_prior_x: 3.0,
            kl_prior_y: 2.5,
            kl_xy: 0.75,
            kl_yx: 1.25,
            nv_penalty: 0.5,
        }
    }

    #[test]
    fn zero_beta_leaves_only_reconstruction() {
        let t = terms();
        for form in [ObjectiveForm::Vcm, ObjectiveForm::Separate, ObjectiveForm::NoVariance] {
            let b = per_user_objective(&t, 0.0, 0.0, 0.4, form).unwrap();
            assert_eq!(b.total, t.recon_x + t.recon_y);
        }
        let b = per_user_objective(&t, 0.0, 0.0, 0.4, ObjectiveForm::OneDirectional).unwrap();
        assert_eq!(b.total, t.recon_x);
    }

    #[test]
    fn identical_posteriors_make_vcm_equal_separate() {
        let a = q(&[0.2, -0.4], &[0.7, 1.3]);
        let mut t = terms();
        t.kl_xy = kl_between(&a, &a).unwrap();
        t.kl_yx = kl_between(&a, &a).unwrap();
        let v = per_user_objective(&t, 0.3, 0.3, 0.4, ObjectiveForm::Vcm).unwrap();
        let s = per_user_objective(&t, 0.3, 0.3, 0.4, ObjectiveForm::Separate).unwrap();
        assert_eq!(v.total, s.total);
    }

    #[test]
    fn totals_recompose_from_fields() {
        let t = terms();
        let (bx, by) = (0.3, 0.1);
        let v = per_user_objective(&t, bx, by, 0.4, ObjectiveForm::Vcm).unwrap();
        let want = v.recon_x + v.recon_y - bx * (v.kl_prior_x + v.kl_xy) - by * (v.kl_prior_y + v.kl_yx);
        assert!((v.total - want).abs() < 1e-12);
        let s = per_user_objective(&t, bx, by, 0.4, ObjectiveForm::Separate).unwrap();
        assert!((s.total - (s.recon_x + s.recon_y - bx * s.kl_prior_x - by * s.kl_prior_y)).abs() < 1e-12);
        let o = per_user_objective(&t, bx, by, 0.4, ObjectiveForm::OneDirectional).unwrap();
        assert!((o.total - (o.recon_x - bx * (o.kl_prior_x + o.kl_xy))).abs() < 1e-12);
        let n = per_user_objective(&t, bx, by, 0.4, ObjectiveForm::NoVariance).unwrap();
        let want = n.recon_x + n.recon_y - bx * n.kl_prior_x - by * n.kl_prior_y - (bx + by) / 2.0 * n.nv_penalty;
        assert!((n.total - want).abs() < 1e-12);
    }

    #[test]
    fn beta_outside_cap_is_rejected() {
        let t = terms();
        assert!(per_user_objective(&t, 0.5, 0.1, 0.4, ObjectiveForm::Vcm).is_err());
        assert!(per_user_objective(&t, 0.1, -0.1, 0.4, ObjectiveForm::Vcm).is_err());
    }

    #[test]
    fn vcm_symmetric_under_stream_swap() {
        let t = terms();
        let swapped = ObjectiveTerms {
            recon_x: t.recon_y,
            recon_y: t.recon_x,
            kl_prior_x: t.kl_prior_y,
            kl_prior_y: t.kl_prior_x,
            kl_xy: t.kl_yx,
            kl_yx: t.kl_xy,
            nv_penalty: t.nv_penalty,
        };
        let a = per_user_objective(&t, 0.25, 0.25, 0.4, ObjectiveForm::Vcm).unwrap();
        let b = per_user_objective(&swapped, 0.25, 0.25, 0.4, ObjectiveForm::Vcm).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn variant_names_parse() {
        for v in TrainingVariant::ALL {
            assert_eq!(v.name().parse::<TrainingVariant>().unwrap(), v);
        }
        assert_eq!("VCM_SE".parse::<TrainingVariant>().unwrap(), TrainingVariant::Separate);
        let err = "vcm-xx".parse::<TrainingVariant>().unwrap_err().to_string();
        assert!(err.contains("vcm-se") && err.contains("vcm-nv"));
    }

    /// Central differences of a scalar function of (μ, ln σ).
    fn fd_grad(f: impl Fn(&GaussianPosterior) -> f64, q0: &GaussianPosterior) -> PosteriorGrad {
        let h = 1e-6;
        let k = q0.dim();
        let mut g = PosteriorGrad::zeros(k);
        for i in 0..k {
            let mut p = q0.clone();
            let mut m = q0.clone();
            p.mu[i] += h;
            m.mu[i] -= h;
            g.d_mu[i] = (f(&p) - f(&m)) / (2.0 * h);
            let mut p = q0.clone();
            let mut m = q0.clone();
            p.sigma[i] = (q0.sigma[i].ln() + h).exp();
            m.sigma[i] = (q0.sigma[i].ln() - h).exp();
            g.d_log_sigma[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(a: &PosteriorGrad, b: &PosteriorGrad) {
        for (x, y) in a
            .d_mu
            .iter()
            .chain(&a.d_log_sigma)
            .zip(b.d_mu.iter().chain(&b.d_log_sigma))
        {
            assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn closed_form_gradients_match_finite_differences() {
        let a = q(&[0.4, -1.2, 0.0], &[0.6, 1.7, 1.0]);
        let b = q(&[-0.3, 0.5, 2.0], &[1.3, 0.4, 0.9]);
        assert_grad_close(&kl_to_prior_grad(&a), &fd_grad(|x| kl_to_prior(x).unwrap(), &a));
        let (ga, gb) = kl_between_grad(&a, &b);
        assert_grad_close(&ga, &fd_grad(|x| kl_between(x, &b).unwrap(), &a));
        assert_grad_close(&gb, &fd_grad(|x| kl_between(&a, x).unwrap(), &b));
        let (ga, gb) = nv_penalty_grad(&a, &b);
        assert_grad_close(&ga, &fd_grad(|x| nv_penalty(x, &b).unwrap(), &a));
        assert_grad_close(&gb, &fd_grad(|x| nv_penalty(&a, x).unwrap(), &b));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn posterior(k: usize) -> impl Strategy<Value = GaussianPosterior> {
            (
                prop::collection::vec(-5.0f64..5.0, k),
                prop::collection::vec(-3.0f64..3.0, k),
            )
                .prop_map(|(mu, ls)| GaussianPosterior {
                    mu,
                    sigma: ls.into_iter().map(f64::exp).collect(),
                })
        }

        proptest! {
            #[test]
            fn kls_are_non_negative(pair in (1usize..6).prop_flat_map(|k| (posterior(k), posterior(k)))) {
                let (a, b) = pair;
                prop_assert!(kl_to_prior(&a).unwrap() >= 0.0);
                prop_assert!(kl_between(&a, &b).unwrap() >= 0.0);
                prop_assert_eq!(kl_between(&a, &a).unwrap(), 0.0);
            }
        }
    }
}
