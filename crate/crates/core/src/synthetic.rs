//! Seeded clustered click/review data for tests and smoke runs.
//!
//! Every user belongs to one of `clusters` groups. A group prefers its own
//! slice of the items and its own slice of the vocabulary, so both the
//! click rows and the review rows carry the group identity.

use serde::{Deserialize, Serialize};

use crate::data::{
    split_per_user, ClickMatrix, DatasetIndex, PreprocessConfig, ProcessedDataset, ReviewMatrix, SplitFractions,
    Vocabulary,
};
use crate::error::{Result, VcmError};
use crate::linalg::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub words: usize,
    pub clusters: usize,
    /// Click counts are drawn uniformly from this inclusive range.
    pub min_clicks: usize,
    pub max_clicks: usize,
    /// Probability that a click lands in the user's own item slice.
    pub item_affinity: f64,
    /// Review length range (tokens, inclusive).
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a token comes from the user's own word slice.
    pub word_affinity: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 200,
            items: 50,
            words: 60,
            clusters: 2,
            min_clicks: 5,
            max_clicks: 25,
            item_affinity: 0.9,
            min_words: 20,
            max_words: 60,
            word_affinity: 0.8,
            seed: 0,
        }
    }
}

/// A generated dataset plus each user's cluster.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: ProcessedDataset,
    pub clusters: Vec<usize>,
}

fn slice(n: usize, clusters: usize, c: usize) -> std::ops::Range<usize> {
    (c * n / clusters)..((c + 1) * n / clusters)
}

/// Draw from `own` with probability `affinity`, otherwise uniformly from `0..n`.
fn draw(rng: &mut RngStream, own: &std::ops::Range<usize>, n: usize, affinity: f64) -> usize {
    if rng.uniform() < affinity {
        // Skewed within the slice: lower indices are more popular.
        let len = own.len();
        let r = rng.uniform();
        own.start + ((r * r) * len as f64) as usize % len
    } else {
        rng.below(n)
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.clusters == 0
        || spec.items < spec.clusters
        || spec.words < spec.clusters
        || spec.min_clicks == 0
        || spec.min_clicks > spec.max_clicks
        || spec.max_clicks > spec.items
        || spec.min_words > spec.max_words
    {
        return Err(VcmError::InvalidConfig(vec![format!(
            "inconsistent synthetic spec {spec:?}"
        )]));
    }
    let mut clicks = Vec::with_capacity(spec.users);
    let mut reviews = Vec::with_capacity(spec.users);
    let mut clusters = Vec::with_capacity(spec.users);
    for u in 0..spec.users {
        let mut rng = RngStream::derive(spec.seed, &[0x5e7, u as u64]);
        let c = u % spec.clusters;
        clusters.push(c);
        let n = spec.min_clicks + rng.below(spec.max_clicks - spec.min_clicks + 1);
        let own_items = slice(spec.items, spec.clusters, c);
        let mut row: Vec<u32> = Vec::with_capacity(n);
        while row.len() < n {
            let i = draw(&mut rng, &own_items, spec.items, spec.item_affinity) as u32;
            if !row.contains(&i) {
                row.push(i);
            }
        }
        clicks.push(row);
        let own_words = slice(spec.words, spec.clusters, c);
        let len = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
        let mut counts = vec![0u32; spec.words];
        for _ in 0..len {
            counts[draw(&mut rng, &own_words, spec.words, spec.word_affinity)] += 1;
        }
        reviews.push(
            counts
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(w, &n)| (w as u32, n))
                .collect(),
        );
    }
    let clicks = ClickMatrix::new(spec.items, clicks)?;
    let reviews = ReviewMatrix::new(spec.words, reviews)?;
    let config = PreprocessConfig {
        min_user_clicks: spec.min_clicks,
        seed: spec.seed,
        vocab_size: spec.words,
        ..PreprocessConfig::default()
    };
    let split = split_per_user(&clicks, SplitFractions::default(), spec.seed)?;
    let dataset = ProcessedDataset {
        index: DatasetIndex::new(&split, &reviews, &config),
        users: (0..spec.users).map(|u| format!("u{u}")).collect(),
        items: (0..spec.items).map(|i| format!("i{i}")).collect(),
        vocab: Vocabulary::from_words((0..spec.words).map(|w| format!("w{w}")).collect())?,
        split,
        reviews,
    };
    Ok(SyntheticData { dataset, clusters })
}
