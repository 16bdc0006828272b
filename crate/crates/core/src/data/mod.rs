//! Raw interaction/review ingestion and the processed sparse matrices.
//!
//! The pipeline is: [`binarize`] explicit ratings, [`filter_activity`] to a
//! joint user/item degree fixed point, index users and items
//! ([`ClickMatrix::from_pairs`]), build a [`Vocabulary`] from the merged
//! per-user review documents, [`vectorize_reviews`], and finally
//! [`split_per_user`] into train/validation/test clicks.

mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VcmError};
use crate::linalg::RngStream;

pub use io::{
    read_interactions, read_reviews, DatasetIndex, ParseReport, ProcessedDataset, DATASET_FILES, INPUT_NORMALIZATION,
};

/// Stop words shipped with the crate, one per line.
pub const DEFAULT_STOP_WORDS: &str = include_str!("../../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReview {
    pub user: String,
    pub text: String,
}

/// Binary user×item matrix stored as sorted per-user item lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickMatrix {
    n_items: usize,
    rows: Vec<Vec<u32>>,
}

impl ClickMatrix {
    /// Rows are sorted and deduplicated; indices must lie in `[0, n_items)`.
    pub fn new(n_items: usize, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if let Some(&bad) = row.last().filter(|&&i| i as usize >= n_items) {
                return Err(VcmError::shape(
                    "ClickMatrix::new",
                    format!("{n_items} items"),
                    format!("item index {bad}"),
                ));
            }
        }
        Ok(ClickMatrix { n_items, rows })
    }

    /// Index (user, item) pairs; user and item ids are numbered in sorted order.
    pub fn from_pairs(pairs: &[(String, String)]) -> (Self, Vec<String>, Vec<String>) {
        let users: Vec<String> = pairs
            .iter()
            .map(|(u, _)| u.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let items: Vec<String> = pairs
            .iter()
            .map(|(_, i)| i.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let user_ix: HashMap<&str, usize> = users.iter().enumerate().map(|(k, u)| (u.as_str(), k)).collect();
        let item_ix: HashMap<&str, u32> = items.iter().enumerate().map(|(k, i)| (i.as_str(), k as u32)).collect();
        let mut rows = vec![Vec::new(); users.len()];
        for (u, i) in pairs {
            rows[user_ix[u.as_str()]].push(item_ix[i.as_str()]);
        }
        let m = ClickMatrix::new(items.len(), rows).expect("indices are in range by construction");
        (m, users, items)
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, u: usize) -> &[u32] {
        &self.rows[u]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Per-user bag-of-words counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewMatrix {
    vocab_size: usize,
    rows: Vec<Vec<(u32, u32)>>,
}

impl ReviewMatrix {
    /// Rows are sorted by word index; zero counts are dropped.
    pub fn new(vocab_size: usize, mut rows: Vec<Vec<(u32, u32)>>) -> Result<Self> {
        for row in &mut rows {
            row.retain(|&(_, c)| c > 0);
            row.sort_unstable_by_key(|&(w, _)| w);
            if row.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(VcmError::shape(
                    "ReviewMatrix::new",
                    "unique word indices",
                    "duplicate word index",
                ));
            }
            if let Some(&(bad, _)) = row.last().filter(|&&(w, _)| w as usize >= vocab_size) {
                return Err(VcmError::shape(
                    "ReviewMatrix::new",
                    format!("{vocab_size} words"),
                    format!("word index {bad}"),
                ));
            }
        }
        Ok(ReviewMatrix { vocab_size, rows })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn row(&self, u: usize) -> &[(u32, u32)] {
        &self.rows[u]
    }

    pub fn rows(&self) -> &[Vec<(u32, u32)>] {
        &self.rows
    }

    /// `W_u`, the total word count of user `u`.
    pub fn row_total(&self, u: usize) -> u64 {
        self.rows[u].iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&u| self.rows[u].is_empty()).collect()
    }

    /// Copy with rows reordered: row `k` of the result is row `perm[k]` here.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        ReviewMatrix {
            vocab_size: self.vocab_size,
            rows: perm.iter().map(|&p| self.rows[p].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Words in rank order. Duplicates are rejected.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (k, w) in words.iter().enumerate() {
            if index.insert(w.clone(), k as u32).is_some() {
                return Err(VcmError::shape(
                    "Vocabulary",
                    "unique words",
                    format!("duplicate `{w}`"),
                ));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, k: usize) -> &str {
        &self.words[k]
    }

    pub fn lookup(&self, w: &str) -> Option<u32> {
        self.index.get(w).copied()
    }
}

/// Parse a stop-word list (one word per line, `#` comments allowed).
pub fn parse_stop_words(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn default_stop_words() -> HashSet<String> {
    parse_stop_words(DEFAULT_STOP_WORDS)
}

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Keep `(user, item)` pairs rated at or above `threshold`, first occurrence wins.
pub fn binarize(interactions: &[RawInteraction], threshold: f64) -> Vec<(String, String)> {
    let mut seen = HashSet::new();
    interactions
        .iter()
        .filter(|r| r.rating >= threshold)
        .filter_map(|r| {
            let pair = (r.user.clone(), r.item.clone());
            seen.insert(pair.clone()).then_some(pair)
        })
        .collect()
}

/// Alternately drop users with fewer than `min_user_clicks` and items with
/// fewer than `min_item_users` until neither constraint removes anything.
pub fn filter_activity(
    pairs: Vec<(String, String)>,
    min_user_clicks: usize,
    min_item_users: usize,
) -> Vec<(String, String)> {
    let mut pairs = pairs;
    loop {
        let before = pairs.len();
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        for (u, _) in &pairs {
            *user_deg.entry(u.as_str()).or_default() += 1;
        }
        let keep_users: HashSet<String> = user_deg
            .into_iter()
            .filter(|&(_, d)| d >= min_user_clicks)
            .map(|(u, _)| u.to_owned())
            .collect();
        pairs.retain(|(u, _)| keep_users.contains(u));

        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (_, i) in &pairs {
            *item_deg.entry(i.as_str()).or_default() += 1;
        }
        let keep_items: HashSet<String> = item_deg
            .into_iter()
            .filter(|&(_, d)| d >= min_item_users)
            .map(|(i, _)| i.to_owned())
            .collect();
        pairs.retain(|(_, i)| keep_items.contains(i));

        if pairs.len() == before {
            break;
        }
    }
    if pairs.is_empty() {
        log::warn!("activity filter (users >= {min_user_clicks}, items >= {min_item_users}) removed every interaction");
    }
    pairs
}

/// Concatenate each user's reviews into one document, keyed by user id.
pub fn merge_reviews(reviews: &[RawReview]) -> BTreeMap<String, String> {
    let mut docs: BTreeMap<String, String> = BTreeMap::new();
    for r in reviews {
        let doc = docs.entry(r.user.clone()).or_default();
        if !doc.is_empty() {
            doc.push(' ');
        }
        doc.push_str(&r.text);
    }
    docs
}

/// Top-`max_words` non-stop-word tokens by corpus frequency, ties broken
/// lexicographically.
pub fn build_vocabulary<'a>(
    documents: impl IntoIterator<Item = &'a str>,
    stop_words: &HashSet<String>,
    max_words: usize,
) -> Result<Vocabulary> {
    assert!(max_words >= 1, "vocabulary size must be at least 1");
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in documents {
        for tok in tokenize(doc) {
            if !stop_words.contains(&tok) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(VcmError::EmptyCorpus);
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_words);
    Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w).collect())
}

#[derive(Debug, Clone)]
pub struct VectorizedReviews {
    pub matrix: ReviewMatrix,
    /// Users whose document has no in-vocabulary token.
    pub empty_rows: Vec<usize>,
}

/// Count vocabulary words in each document; row `k` corresponds to `documents[k]`.
pub fn vectorize_reviews<'a>(documents: impl IntoIterator<Item = &'a str>, vocab: &Vocabulary) -> VectorizedReviews {
    let rows: Vec<Vec<(u32, u32)>> = documents
        .into_iter()
        .map(|doc| {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for tok in tokenize(doc) {
                if let Some(w) = vocab.lookup(&tok) {
                    *counts.entry(w).or_default() += 1;
                }
            }
            counts.into_iter().collect()
        })
        .collect();
    let matrix = ReviewMatrix::new(vocab.len(), rows).expect("vocabulary indices are in range");
    let empty_rows = matrix.empty_rows();
    if !empty_rows.is_empty() {
        log::warn!("{} users have an empty review document", empty_rows.len());
    }
    VectorizedReviews { matrix, empty_rows }
}

/// Fractions of each user's clicks assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(VcmError::InvalidConfig(vec![format!(
                "split fractions must be in [0,1] and sum to 1, got {parts:?}"
            )]));
        }
        if self.train <= 0.0 {
            return Err(VcmError::InvalidConfig(vec!["train fraction must be positive".into()]));
        }
        Ok(())
    }

    /// `(train, validation, test)` sizes for a user with `n` clicks:
    /// train = ⌈train·n⌉, the remainder divided between validation and test
    /// in proportion, validation rounded down.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        if n < 3 {
            return (n, 0, 0);
        }
        let n_train = ((self.train * n as f64) - 1e-9).ceil().max(1.0) as usize;
        let n_train = n_train.min(n);
        let rest = n - n_train;
        let held = self.validation + self.test;
        let n_val = if held > 0.0 {
            ((rest as f64 * self.validation / held) + 1e-9).floor() as usize
        } else {
            0
        };
        (n_train, n_val, rest - n_val)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: ClickMatrix,
    pub validation: ClickMatrix,
    pub test: ClickMatrix,
}

impl SplitDataset {
    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }
}

/// Random per-user partition of clicks. Users with fewer than three clicks
/// keep everything in train.
pub fn split_per_user(clicks: &ClickMatrix, fractions: SplitFractions, seed: u64) -> Result<SplitDataset> {
    fractions.validate()?;
    let mut train = Vec::with_capacity(clicks.n_users());
    let mut validation = Vec::with_capacity(clicks.n_users());
    let mut test = Vec::with_capacity(clicks.n_users());
    let mut degenerate = 0usize;
    for (u, row) in clicks.rows().iter().enumerate() {
        let mut items = row.clone();
        if items.len() < 3 {
            degenerate += 1;
        }
        let mut rng = RngStream::derive(seed, &[0x5e1, u as u64]);
        rng.shuffle(&mut items);
        let (a, b, _) = fractions.sizes(items.len());
        test.push(items.split_off(a + b));
        validation.push(items.split_off(a));
        train.push(items);
    }
    if degenerate > 0 {
        log::warn!("{degenerate} users have fewer than 3 clicks; all assigned to train");
    }
    let n = clicks.n_items();
    Ok(SplitDataset {
        train: ClickMatrix::new(n, train)?,
        validation: ClickMatrix::new(n, validation)?,
        test: ClickMatrix::new(n, test)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity: f64,
}

/// `interactions / (users · items)`; zero for an empty shape.
pub fn sparsity(interactions: usize, users: usize, items: usize) -> f64 {
    let cells = users as f64 * items as f64;
    if cells == 0.0 {
        0.0
    } else {
        interactions as f64 / cells
    }
}

/// Table of users/items/interactions/sparsity. An empty matrix is an error
/// unless `allow_empty` asks for a zero report.
pub fn dataset_stats(clicks: &ClickMatrix, allow_empty: bool) -> Result<DatasetStats> {
    let users = clicks.n_users();
    let items = clicks.n_items();
    let interactions = clicks.nnz();
    if interactions == 0 && !allow_empty {
        return Err(VcmError::EmptyDataset("click matrix has no interactions".into()));
    }
    Ok(DatasetStats {
        users,
        items,
        interactions,
        sparsity: sparsity(interactions, users, items),
    })
}

/// Knobs for the end-to-end [`preprocess`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub rating_threshold: f64,
    pub min_user_clicks: usize,
    pub min_item_users: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub split: SplitFractions,
    /// Optional stop-word file; the bundled list is used when absent.
    pub stop_words: Option<std::path::PathBuf>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            rating_threshold: 4.0,
            min_user_clicks: 5,
            min_item_users: 1,
            vocab_size: 10_000,
            seed: 0,
            split: SplitFractions::default(),
            stop_words: None,
        }
    }
}

impl PreprocessConfig {
    /// Per-dataset defaults: `yelp` (no item threshold), `clothing` (items
    /// bought by ≥5 users), `movies` (items watched by ≥10 users).
    pub fn preset(name: &str) -> Option<Self> {
        let base = Self::default();
        match name {
            "yelp" => Some(base),
            "clothing" => Some(PreprocessConfig {
                min_item_users: 5,
                ..base
            }),
            "movies" => Some(PreprocessConfig {
                min_item_users: 10,
                ..base
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !self.rating_threshold.is_finite() {
            errs.push("rating_threshold must be finite".to_string());
        }
        if self.min_user_clicks == 0 {
            errs.push("min_user_clicks must be >= 1".to_string());
        }
        if self.min_item_users == 0 {
            errs.push("min_item_users must be >= 1".to_string());
        }
        if self.vocab_size == 0 {
            errs.push("vocab_size must be >= 1".to_string());
        }
        if let Err(VcmError::InvalidConfig(e)) = self.split.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(VcmError::InvalidConfig(errs))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub stats: DatasetStats,
    pub kept_pairs_after_binarize: usize,
    pub empty_review_users: Vec<String>,
}

/// Binarize, filter, index, vectorize and split.
pub fn preprocess(
    interactions: &[RawInteraction],
    reviews: &[RawReview],
    config: &PreprocessConfig,
    stop_words: &HashSet<String>,
) -> Result<(ProcessedDataset, PreprocessReport)> {
    config.validate()?;
    let pairs = binarize(interactions, config.rating_threshold);
    let kept_pairs_after_binarize = pairs.len();
    let pairs = filter_activity(pairs, config.min_user_clicks, config.min_item_users);
    if pairs.is_empty() {
        return Err(VcmError::EmptyDataset(
            "no interactions left after binarization and activity filtering".into(),
        ));
    }
    let (clicks, users, items) = ClickMatrix::from_pairs(&pairs);
    let stats = dataset_stats(&clicks, false)?;

    let mut docs = merge_reviews(reviews);
    let user_docs: Vec<String> = users.iter().map(|u| docs.remove(u).unwrap_or_default()).collect();
    let vocab = build_vocabulary(user_docs.iter().map(String::as_str), stop_words, config.vocab_size)?;
    let vectorized = vectorize_reviews(user_docs.iter().map(String::as_str), &vocab);
    let split = split_per_user(&clicks, config.split, config.seed)?;

    let empty_review_users = vectorized.empty_rows.iter().map(|&u| users[u].clone()).collect();
    let index = DatasetIndex::new(&split, &vectorized.matrix, config);
    let dataset = ProcessedDataset {
        index,
        users,
        items,
        vocab,
        split,
        reviews: vectorized.matrix,
    };
    Ok((
        dataset,
        PreprocessReport {
            stats,
            kept_pairs_after_binarize,
            empty_review_users,
        },
    ))
}
