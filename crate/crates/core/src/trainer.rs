//! Mini-batch training with annealed KL weights, Adam and best-epoch selection.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{ReviewMatrix, SplitDataset};
use crate::error::{Result, VcmError};
use crate::evaluator::{evaluate, HeldOutSplit, PredictionMode};
use crate::grad::{compute_gradients, BatchEntry, UserNoise, UserRows};
use crate::linalg::RngStream;
use crate::model::{Architecture, ModelParams, ParamGroup};
use crate::objective::{multinomial_log_likelihood_checked, ObjectiveBreakdown, ObjectiveForm, TrainingVariant};
use crate::optim::{adam_step, anneal_beta, AdamState};

const KEY_SHUFFLE: u64 = 0x5f1e;
const KEY_NOISE: u64 = 0x7015;

fn default_latent_dim() -> usize {
    100
}
fn default_beta_cap() -> f64 {
    0.4
}
fn default_anneal_steps() -> u64 {
    40_000
}
fn default_batch_size() -> usize {
    128
}
fn default_epochs() -> usize {
    200
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_eval_r() -> usize {
    100
}
fn default_enc_x_hidden() -> Vec<usize> {
    vec![600]
}
fn default_dec_x_hidden() -> Vec<usize> {
    vec![600]
}
fn default_enc_y_hidden() -> Vec<usize> {
    vec![500]
}
fn default_dropout() -> f64 {
    0.5
}
fn one() -> usize {
    1
}

/// Training hyperparameters. The TOML keys are the field names, except
/// `K` and `eval_R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "K", default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_beta_cap")]
    pub beta_cap: f64,
    #[serde(default = "default_anneal_steps")]
    pub anneal_steps: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variant: TrainingVariant,
    #[serde(rename = "eval_R", default = "default_eval_r")]
    pub eval_r: usize,
    #[serde(default = "default_enc_x_hidden")]
    pub enc_x_hidden: Vec<usize>,
    #[serde(default = "default_dec_x_hidden")]
    pub dec_x_hidden: Vec<usize>,
    #[serde(default = "default_enc_y_hidden")]
    pub enc_y_hidden: Vec<usize>,
    #[serde(default)]
    pub dec_y_hidden: Vec<usize>,
    /// Input dropout on the click stream only.
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    /// Monte-Carlo ε draws per user and step.
    #[serde(default = "one")]
    pub mc_samples: usize,
    /// Fixed number of reduction chunks per batch. Results depend on this
    /// value but not on the thread count.
    #[serde(default = "one")]
    pub grad_lanes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: default_latent_dim(),
            beta_cap: default_beta_cap(),
            anneal_steps: default_anneal_steps(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            seed: 0,
            variant: TrainingVariant::Vcm,
            eval_r: default_eval_r(),
            enc_x_hidden: default_enc_x_hidden(),
            dec_x_hidden: default_dec_x_hidden(),
            enc_y_hidden: default_enc_y_hidden(),
            dec_y_hidden: Vec::new(),
            dropout_rate: default_dropout(),
            mc_samples: 1,
            grad_lanes: 1,
        }
    }
}

impl TrainConfig {
    /// Parse and validate, reporting every problem at once.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| VcmError::InvalidConfig(vec![e.message().to_string()]))?;
        let mut problems = Vec::new();
        if let Some(v) = table.get("variant").cloned() {
            match v.as_str().map(str::parse::<TrainingVariant>) {
                Some(Ok(variant)) => {
                    table.insert("variant".into(), toml::Value::String(variant.name().into()));
                }
                Some(Err(e)) => {
                    problems.push(e.to_string());
                    table.remove("variant");
                }
                None => {
                    problems.push("variant must be a string".into());
                    table.remove("variant");
                }
            }
        }
        let config: TrainConfig = match table.try_into() {
            Ok(c) => c,
            Err(e) => {
                problems.push(e.message().to_string());
                return Err(VcmError::InvalidConfig(problems));
            }
        };
        if let Err(VcmError::InvalidConfig(more)) = config.validate() {
            problems.extend(more);
        }
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(VcmError::InvalidConfig(problems))
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VcmError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.latent_dim == 0 {
            p.push("K must be positive".to_string());
        }
        if !(self.beta_cap.is_finite() && self.beta_cap >= 0.0) {
            p.push(format!("beta_cap must be finite and >= 0, got {}", self.beta_cap));
        }
        if self.anneal_steps == 0 {
            p.push("anneal_steps must be positive".into());
        }
        if self.batch_size == 0 {
            p.push("batch_size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            p.push(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            ));
        }
        if self.eval_r == 0 {
            p.push("eval_R must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            p.push(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.mc_samples == 0 {
            p.push("mc_samples must be positive".into());
        }
        if self.grad_lanes == 0 {
            p.push("grad_lanes must be positive".into());
        }
        for (name, widths) in [
            ("enc_x_hidden", &self.enc_x_hidden),
            ("dec_x_hidden", &self.dec_x_hidden),
            ("enc_y_hidden", &self.enc_y_hidden),
            ("dec_y_hidden", &self.dec_y_hidden),
        ] {
            if widths.contains(&0) {
                p.push(format!("{name} widths must be positive"));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(VcmError::InvalidConfig(p))
        }
    }

    pub fn architecture(&self, n_items: usize, vocab_size: usize) -> Architecture {
        Architecture {
            n_items,
            vocab_size,
            latent_dim: self.latent_dim,
            enc_x_hidden: self.enc_x_hidden.clone(),
            dec_x_hidden: self.dec_x_hidden.clone(),
            enc_y_hidden: self.enc_y_hidden.clone(),
            dec_y_hidden: self.dec_y_hidden.clone(),
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Review stream alone (first phase of the one-directional variant).
    #[serde(rename = "review")]
    Review,
    #[serde(rename = "joint")]
    Joint,
}

impl Phase {
    fn key(self) -> u64 {
        match self {
            Phase::Review => 1,
            Phase::Joint => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Review => "review",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    /// Updates applied so far in this phase.
    pub iteration: u64,
    /// β used for the last update of the epoch.
    pub beta: f64,
    /// Mean over the epoch's users.
    pub breakdown: ObjectiveBreakdown,
    /// NDCG@eval_R on the validation clicks (joint phase).
    pub validation_ndcg: Option<f64>,
    /// Review perplexity under posterior means (review phase).
    pub review_perplexity: Option<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub review_phase: Vec<EpochRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// CSV of all epochs (review phase first). Wall-clock is left out so the
    /// file is reproducible; see [`TrainHistory::timings_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,epoch,iteration");
        for f in ObjectiveBreakdown::CSV_FIELDS {
            out.push(',');
            out.push_str(f);
        }
        out.push_str(",validation_ndcg,review_perplexity\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in self.review_phase.iter().chain(&self.epochs) {
            write!(out, "{},{},{}", r.phase.name(), r.epoch, r.iteration).unwrap();
            for v in r.breakdown.csv_values() {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{},{}", opt(r.validation_ndcg), opt(r.review_perplexity)).unwrap();
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("phase,epoch,wall_clock_secs\n");
        for r in self.review_phase.iter().chain(&self.epochs) {
            writeln!(out, "{},{},{}", r.phase.name(), r.epoch, r.wall_clock_secs).unwrap();
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters (initial parameters when no epoch ran).
    pub params: ModelParams,
    pub history: TrainHistory,
    /// Set when training stopped on a non-finite objective or gradient;
    /// `params` then holds the last good selection.
    pub aborted: Option<VcmError>,
}

/// `exp(−Σ_u log p(y_u) / Σ_u W_u)` with the review posterior mean decoded.
pub fn review_perplexity(params: &ModelParams, reviews: &ReviewMatrix) -> Result<f64> {
    let mut ll = 0.0;
    let mut words = 0u64;
    for (u, row) in reviews.rows().iter().enumerate() {
        if row.is_empty() {
            continue;
        }
        let q = params.encode_reviews(row)?;
        let probs = params.decode_words(&q.mu)?;
        ll += multinomial_log_likelihood_checked(row.iter().map(|&(w, c)| (w as usize, c)), &probs).0;
        words += reviews.row_total(u);
    }
    if words == 0 {
        return Ok(f64::NAN);
    }
    Ok((-ll / words as f64).exp())
}

struct PhaseRun<'a> {
    config: &'a TrainConfig,
    split: &'a SplitDataset,
    reviews: &'a ReviewMatrix,
    form: ObjectiveForm,
    phase: Phase,
    groups: &'a [ParamGroup],
}

impl PhaseRun<'_> {
    /// Runs `config.epochs` epochs from `params`; returns the best
    /// parameters, the records, and an abort error if one occurred.
    fn run(&self, params: &mut ModelParams) -> (ModelParams, Vec<EpochRecord>, Option<usize>, Option<VcmError>) {
        let c = self.config;
        let n_users = self.split.train.n_users();
        let mut order: Vec<usize> = (0..n_users).collect();
        let mut adam = AdamState::new(params);
        let mut scratch = Vec::new();
        let mut iteration = 0u64;
        let mut best = params.clone();
        let mut best_score: Option<f64> = None;
        let mut best_epoch = None;
        let mut records = Vec::new();
        for epoch in 1..=c.epochs {
            let started = Instant::now();
            RngStream::derive(c.seed, &[KEY_SHUFFLE, self.phase.key(), epoch as u64]).shuffle(&mut order);
            let mut mean = ObjectiveBreakdown::default();
            let mut beta = 0.0;
            for users in order.chunks(c.batch_size) {
                beta = anneal_beta(iteration, c.anneal_steps, c.beta_cap);
                let batch: Vec<BatchEntry<'_>> = users
                    .iter()
                    .map(|&u| {
                        let clicks = self.split.train.row(u);
                        BatchEntry {
                            rows: UserRows {
                                clicks,
                                words: self.reviews.row(u),
                            },
                            noise: UserNoise::draw(
                                params,
                                clicks.len(),
                                c.mc_samples,
                                c.seed,
                                &[KEY_NOISE, self.phase.key(), iteration, u as u64],
                            ),
                        }
                    })
                    .collect();
                let step = compute_gradients(
                    params,
                    &batch,
                    self.form,
                    beta,
                    beta,
                    c.beta_cap,
                    c.grad_lanes,
                    &mut scratch,
                )
                .and_then(|(b, g)| {
                    if !b.total.is_finite() {
                        return Err(VcmError::NonFiniteObjective { epoch, iteration });
                    }
                    adam_step(params, &g, &mut adam, c.learning_rate, self.groups)?;
                    Ok(b)
                });
                match step {
                    Ok(b) => mean.add_scaled(&b, users.len() as f64 / n_users as f64),
                    Err(e) => {
                        log::error!("{} phase stopped at epoch {epoch}: {e}", self.phase.name());
                        return (best, records, best_epoch, Some(e));
                    }
                }
                iteration += 1;
            }
            let (score, validation_ndcg, review_perplexity) = match self.phase {
                Phase::Joint => {
                    let v = evaluate(
                        params,
                        self.split,
                        self.reviews,
                        HeldOutSplit::Validation,
                        PredictionMode::Standard,
                        &[c.eval_r],
                    )
                    .map(|r| r.ndcg_mean(c.eval_r).unwrap_or(0.0));
                    match v {
                        Ok(v) => (v, Some(v), None),
                        Err(e) => return (best, records, best_epoch, Some(e)),
                    }
                }
                Phase::Review => match review_perplexity(params, self.reviews) {
                    Ok(p) => (-p, None, Some(p)),
                    Err(e) => return (best, records, best_epoch, Some(e)),
                },
            };
            if best_score.is_none_or(|b| score > b) {
                best_score = Some(score);
                best = params.clone();
                best_epoch = Some(epoch);
            }
            log::info!(
                "{} epoch {epoch}: objective {:.4}, beta {beta:.4}, {}",
                self.phase.name(),
                mean.total,
                match (validation_ndcg, review_perplexity) {
                    (Some(v), _) => format!("val NDCG@{} {v:.4}", c.eval_r),
                    (_, Some(p)) => format!("review perplexity {p:.2}"),
                    _ => String::new(),
                }
            );
            records.push(EpochRecord {
                phase: self.phase,
                epoch,
                iteration,
                beta,
                breakdown: mean,
                validation_ndcg,
                review_perplexity,
                wall_clock_secs: started.elapsed().as_secs_f64(),
            });
        }
        (best, records, best_epoch, None)
    }
}

/// Train `config.variant` on the training clicks and the review matrix,
/// keeping the parameters of the epoch with the best validation NDCG@eval_R.
///
/// The one-directional variant first trains the review stream alone (best
/// epoch by review perplexity), then freezes it and trains the click stream.
pub fn train(config: &TrainConfig, split: &SplitDataset, reviews: &ReviewMatrix) -> Result<TrainOutcome> {
    config.validate()?;
    let n_users = split.train.n_users();
    if n_users == 0 {
        return Err(VcmError::EmptyDataset("no users to train on".into()));
    }
    if reviews.n_users() != n_users {
        return Err(VcmError::shape(
            "train",
            format!("{n_users} users"),
            format!("{} review rows", reviews.n_users()),
        ));
    }
    let arch = config.architecture(split.train.n_items(), reviews.vocab_size());
    let mut params = ModelParams::init(&arch, config.seed);
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            history,
            aborted: None,
        });
    }
    let joint_groups: &[ParamGroup] = match config.variant {
        TrainingVariant::OneDirectional => {
            let (best, records, _, aborted) = PhaseRun {
                config,
                split,
                reviews,
                form: ObjectiveForm::ReviewOnly,
                phase: Phase::Review,
                groups: &[ParamGroup::EncoderY, ParamGroup::DecoderY],
            }
            .run(&mut params);
            history.review_phase = records;
            if aborted.is_some() {
                return Ok(TrainOutcome {
                    params: best,
                    history,
                    aborted,
                });
            }
            params = best;
            &[ParamGroup::EncoderX, ParamGroup::DecoderX]
        }
        _ => &ParamGroup::ALL,
    };
    let (best, records, best_epoch, aborted) = PhaseRun {
        config,
        split,
        reviews,
        form: config.variant.into(),
        phase: Phase::Joint,
        groups: joint_groups,
    }
    .run(&mut params);
    history.epochs = records;
    history.best_epoch = best_epoch;
    Ok(TrainOutcome {
        params: best,
        history,
        aborted,
    })
}
