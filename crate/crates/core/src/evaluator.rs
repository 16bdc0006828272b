//! Top-R ranking metrics, per-user reports, capacity diagnostics and the
//! review word-probability report.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClickMatrix, ReviewMatrix, SplitDataset, Vocabulary};
use crate::error::{Result, VcmError};
use crate::linalg::RngStream;
use crate::model::ModelParams;
use crate::objective::kl_to_prior;

/// Item indices by descending score, training items removed, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList(pub Vec<u32>);

pub fn rank_items(scores: &[f64], training_items: &[u32]) -> RankedList {
    let masked: HashSet<u32> = training_items.iter().copied().collect();
    let mut items: Vec<u32> = (0..scores.len() as u32).filter(|i| !masked.contains(i)).collect();
    items.sort_unstable_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    RankedList(items)
}

/// Hits in the top `r` over `min(r, |held_out|)`; `None` when `held_out` is empty.
pub fn recall_at_r(ranked: &RankedList, held_out: &[u32], r: usize) -> Option<f64> {
    assert!(r >= 1, "R must be at least 1");
    if held_out.is_empty() {
        return None;
    }
    let held: HashSet<u32> = held_out.iter().copied().collect();
    let found = ranked.0.iter().take(r).filter(|i| held.contains(i)).count();
    Some(found as f64 / r.min(held.len()) as f64)
}

/// Binary-gain DCG over the top `r`, base-2 discount `1/log₂(rank+1)`.
pub fn dcg_at_r(ranked: &RankedList, held_out: &[u32], r: usize) -> f64 {
    let held: HashSet<u32> = held_out.iter().copied().collect();
    ranked
        .0
        .iter()
        .take(r)
        .enumerate()
        .filter(|(_, i)| held.contains(i))
        .map(|(k, _)| 1.0 / ((k + 2) as f64).log2())
        .sum()
}

/// DCG divided by the DCG of placing `min(r, |held_out|)` relevant items first.
pub fn ndcg_at_r(ranked: &RankedList, held_out: &[u32], r: usize) -> Option<f64> {
    assert!(r >= 1, "R must be at least 1");
    let n_rel = held_out.iter().collect::<HashSet<_>>().len();
    if n_rel == 0 {
        return None;
    }
    let ideal: f64 = (0..r.min(n_rel)).map(|k| 1.0 / ((k + 2) as f64).log2()).sum();
    Some(dcg_at_r(ranked, held_out, r) / ideal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionMode {
    /// Click posterior mean through the click decoder.
    #[serde(rename = "standard")]
    Standard,
    /// Review posterior mean through the click decoder.
    #[serde(rename = "cross-domain")]
    CrossDomain,
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionMode::Standard => "standard",
            PredictionMode::CrossDomain => "cross-domain",
        })
    }
}

impl FromStr for PredictionMode {
    type Err = VcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "vcm" => Ok(PredictionMode::Standard),
            "cross-domain" | "vcm-cd" => Ok(PredictionMode::CrossDomain),
            other => Err(VcmError::InvalidConfig(vec![format!(
                "unknown prediction mode `{other}` (expected standard or cross-domain)"
            )])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeldOutSplit {
    #[serde(rename = "validation")]
    Validation,
    #[serde(rename = "test")]
    Test,
}

impl HeldOutSplit {
    pub fn select(self, split: &SplitDataset) -> &ClickMatrix {
        match self {
            HeldOutSplit::Validation => &split.validation,
            HeldOutSplit::Test => &split.test,
        }
    }
}

impl FromStr for HeldOutSplit {
    type Err = VcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(HeldOutSplit::Validation),
            "test" => Ok(HeldOutSplit::Test),
            other => Err(VcmError::InvalidConfig(vec![format!(
                "unknown split `{other}` (expected validation or test)"
            )])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub n_train: usize,
    pub n_held_out: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub r: usize,
    pub recall_mean: f64,
    pub recall_se: f64,
    pub ndcg_mean: f64,
    pub ndcg_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: PredictionMode,
    pub r_values: Vec<usize>,
    pub per_user: Vec<UserMetrics>,
    pub summary: Vec<MetricSummary>,
    /// Users skipped because their held-out set is empty.
    pub excluded_users: usize,
}

impl MetricReport {
    pub fn ndcg_mean(&self, r: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.r == r).map(|s| s.ndcg_mean)
    }

    pub fn recall_mean(&self, r: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.r == r).map(|s| s.recall_mean)
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Build a report from per-user score vectors (`scores(u)` for user `u`).
pub fn report_from_scores(
    train: &ClickMatrix,
    held_out: &ClickMatrix,
    mode: PredictionMode,
    r_values: &[usize],
    scores: impl Fn(usize) -> Result<Vec<f64>> + Sync,
) -> Result<MetricReport> {
    let users: Vec<usize> = (0..train.n_users()).filter(|&u| !held_out.row(u).is_empty()).collect();
    let per_user: Vec<UserMetrics> = users
        .par_iter()
        .map(|&u| {
            let s = scores(u)?;
            let ranked = rank_items(&s, train.row(u));
            let held = held_out.row(u);
            Ok(UserMetrics {
                user: u,
                n_train: train.row(u).len(),
                n_held_out: held.len(),
                recall: r_values
                    .iter()
                    .map(|&r| recall_at_r(&ranked, held, r).unwrap())
                    .collect(),
                ndcg: r_values.iter().map(|&r| ndcg_at_r(&ranked, held, r).unwrap()).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let summary = r_values
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let rec: Vec<f64> = per_user.iter().map(|m| m.recall[k]).collect();
            let nd: Vec<f64> = per_user.iter().map(|m| m.ndcg[k]).collect();
            let (recall_mean, recall_se) = mean_and_se(&rec);
            let (ndcg_mean, ndcg_se) = mean_and_se(&nd);
            MetricSummary {
                r,
                recall_mean,
                recall_se,
                ndcg_mean,
                ndcg_se,
            }
        })
        .collect();
    Ok(MetricReport {
        mode,
        r_values: r_values.to_vec(),
        excluded_users: train.n_users() - per_user.len(),
        per_user,
        summary,
    })
}

/// Rank unseen items for every user with a non-empty held-out set.
pub fn evaluate(
    model: &ModelParams,
    split: &SplitDataset,
    reviews: &ReviewMatrix,
    held_out: HeldOutSplit,
    mode: PredictionMode,
    r_values: &[usize],
) -> Result<MetricReport> {
    let train = &split.train;
    report_from_scores(train, held_out.select(split), mode, r_values, |u| match mode {
        PredictionMode::Standard => model.predict_scores(train.row(u)),
        PredictionMode::CrossDomain => model.predict_cross_domain(reviews.row(u)),
    })
}

/// Mean NDCG@R of uniformly random rankings, estimated by simulation over
/// the same train masks and held-out sets.
pub fn random_baseline(train: &ClickMatrix, held_out: &ClickMatrix, r: usize, trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = RngStream::derive(seed, &[0xba5e]);
    let n_items = train.n_items();
    let mut ndcg = Vec::new();
    let mut recall = Vec::new();
    for u in 0..train.n_users() {
        let held = held_out.row(u);
        if held.is_empty() {
            continue;
        }
        let mask: HashSet<u32> = train.row(u).iter().copied().collect();
        let mut items: Vec<u32> = (0..n_items as u32).filter(|i| !mask.contains(i)).collect();
        for _ in 0..trials {
            rng.shuffle(&mut items);
            let ranked = RankedList(items.clone());
            ndcg.push(ndcg_at_r(&ranked, held, r).unwrap());
            recall.push(recall_at_r(&ranked, held, r).unwrap());
        }
    }
    (mean_and_se(&ndcg).0, mean_and_se(&recall).0)
}

/// Expected Recall@R of a random ranking: hits follow a hypergeometric law
/// with mean `R·h/n` over the `n` unmasked items.
pub fn analytic_random_recall(n_candidates: usize, n_held_out: usize, r: usize) -> f64 {
    let draws = r.min(n_candidates) as f64;
    draws * n_held_out as f64 / n_candidates as f64 / r.min(n_held_out) as f64
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Activity bucket `[lo, hi)`; `hi = None` is open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub lo: usize,
    pub hi: Option<usize>,
    pub users: usize,
    pub mean_capacity: Option<f64>,
    pub mean_ndcg10: Option<f64>,
}

impl BucketSummary {
    pub fn label(&self) -> String {
        match self.hi {
            Some(h) => format!("{}-{}", self.lo, h),
            None => format!("{}-max", self.lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    /// `ĉ_u = KL(q_φx(z|x_u) ‖ N(0, I))` in inference mode, per user.
    pub capacity: Vec<f64>,
    /// Training-click count per user.
    pub activity: Vec<usize>,
    pub buckets: Vec<BucketSummary>,
    /// Spearman correlation between activity and capacity.
    pub activity_capacity_spearman: f64,
}

impl CapacityReport {
    pub fn mean_capacity(&self) -> f64 {
        mean_and_se(&self.capacity).0
    }
}

/// Default bucket edges (training-click counts) per dataset.
pub fn default_bucket_edges(dataset: &str) -> Option<Vec<usize>> {
    match dataset {
        "yelp" => Some(vec![5, 20, 40, 60, 80]),
        "clothing" => Some(vec![5, 6, 8, 10, 12]),
        _ => None,
    }
}

/// Capacity per user, bucketed by activity; NDCG@10 is measured on `held_out`.
pub fn capacity_report(
    model: &ModelParams,
    split: &SplitDataset,
    held_out: HeldOutSplit,
    bucket_edges: &[usize],
) -> Result<CapacityReport> {
    let train = &split.train;
    let capacity: Vec<f64> = (0..train.n_users())
        .into_par_iter()
        .map(|u| kl_to_prior(&model.encode_clicks(train.row(u), None)?))
        .collect::<Result<_>>()?;
    let activity: Vec<usize> = train.rows().iter().map(Vec::len).collect();
    let metrics = report_from_scores(train, held_out.select(split), PredictionMode::Standard, &[10], |u| {
        model.predict_scores(train.row(u))
    })?;
    let mut ndcg: Vec<Option<f64>> = vec![None; train.n_users()];
    for m in &metrics.per_user {
        ndcg[m.user] = Some(m.ndcg[0]);
    }

    let mut edges = bucket_edges.to_vec();
    edges.sort_unstable();
    edges.dedup();
    let buckets = edges
        .iter()
        .enumerate()
        .map(|(k, &lo)| {
            let hi = edges.get(k + 1).copied();
            let members: Vec<usize> = (0..activity.len())
                .filter(|&u| activity[u] >= lo && hi.is_none_or(|h| activity[u] < h))
                .collect();
            let caps: Vec<f64> = members.iter().map(|&u| capacity[u]).collect();
            let nds: Vec<f64> = members.iter().filter_map(|&u| ndcg[u]).collect();
            BucketSummary {
                lo,
                hi,
                users: members.len(),
                mean_capacity: (!caps.is_empty()).then(|| mean_and_se(&caps).0),
                mean_ndcg10: (!nds.is_empty()).then(|| mean_and_se(&nds).0),
            }
        })
        .collect();
    let act_f: Vec<f64> = activity.iter().map(|&a| a as f64).collect();
    Ok(CapacityReport {
        activity_capacity_spearman: spearman(&act_f, &capacity),
        capacity,
        activity,
        buckets,
    })
}

/// Top-`k` words of `p_u = decode_words(μ_φy(y_u))`, ties broken by
/// vocabulary rank. With `restrict`, only words present in `y_u` are listed.
pub fn top_words_report(
    model: &ModelParams,
    words: &[(u32, u32)],
    vocab: &Vocabulary,
    k: usize,
    restrict: bool,
) -> Result<Vec<(String, f64)>> {
    assert!(k >= 1, "k must be at least 1");
    let q = model.encode_reviews(words)?;
    let p = model.decode_words(&q.mu)?;
    let present: HashSet<u32> = words.iter().map(|&(w, _)| w).collect();
    let mut idx: Vec<u32> = (0..p.len() as u32)
        .filter(|w| !restrict || present.contains(w))
        .collect();
    idx.sort_by(|&a, &b| {
        p[b as usize]
            .partial_cmp(&p[a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(idx
        .into_iter()
        .take(k)
        .map(|w| (vocab.word(w as usize).to_owned(), p[w as usize]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_items(&[0.1, 0.5, 0.4], &[]).0, vec![1, 2, 0]);
        assert_eq!(rank_items(&[0.1, 0.5, 0.4], &[1]).0, vec![2, 0]);
        assert_eq!(rank_items(&[0.3; 4], &[]).0, vec![0, 1, 2, 3]);
    }

    #[test]
    fn recall_examples() {
        let ranked = RankedList(vec![7, 3, 5, 1]);
        assert_eq!(recall_at_r(&ranked, &[7], 2), Some(1.0));
        assert_eq!(recall_at_r(&ranked, &[7, 1], 2), Some(0.5));
        assert_eq!(recall_at_r(&ranked, &[7, 3, 1], 2), Some(1.0));
        assert_eq!(recall_at_r(&ranked, &[], 2), None);
    }

    #[test]
    fn ndcg_examples() {
        let ranked = RankedList(vec![4, 2, 9, 0, 1, 3]);
        assert_eq!(ndcg_at_r(&ranked, &[4], 5), Some(1.0));
        let v = ndcg_at_r(&ranked, &[2], 5).unwrap();
        assert_eq!(v, 1.0 / 3f64.log2());
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_r(&ranked, &[3], 5), Some(0.0));
        assert_eq!(ndcg_at_r(&ranked, &[], 5), None);
    }

    #[test]
    fn dcg_uses_base_two() {
        let ranked = RankedList(vec![0, 1, 2]);
        let d = dcg_at_r(&ranked, &[0, 2], 3);
        assert!((d - (1.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn perfect_scores_give_unit_metrics() {
        let train = ClickMatrix::new(6, vec![vec![0], vec![5]]).unwrap();
        let held = ClickMatrix::new(6, vec![vec![3, 4], vec![1]]).unwrap();
        let rep = report_from_scores(&train, &held, PredictionMode::Standard, &[1, 2, 5], |u| {
            let mut s = vec![0.0; 6];
            for &i in held.row(u) {
                s[i as usize] = 1.0;
            }
            Ok(s)
        })
        .unwrap();
        for s in &rep.summary {
            assert_eq!(s.recall_mean, 1.0);
            assert_eq!(s.ndcg_mean, 1.0);
        }
    }

    #[test]
    fn empty_held_out_users_are_excluded() {
        let train = ClickMatrix::new(4, vec![vec![0], vec![1]]).unwrap();
        let held = ClickMatrix::new(4, vec![vec![2], vec![]]).unwrap();
        let rep = report_from_scores(&train, &held, PredictionMode::Standard, &[2], |_| Ok(vec![0.0; 4])).unwrap();
        assert_eq!(rep.excluded_users, 1);
        assert_eq!(rep.per_user.len(), 1);
    }

    #[test]
    fn random_scores_match_analytic_recall() {
        let n_users = 400;
        let n_items = 60;
        let mut rng = RngStream::new(5);
        let mut train_rows = Vec::new();
        let mut held_rows = Vec::new();
        for _ in 0..n_users {
            let mut items: Vec<u32> = (0..n_items as u32).collect();
            rng.shuffle(&mut items);
            train_rows.push(items[..6].to_vec());
            held_rows.push(items[6..9].to_vec());
        }
        let train = ClickMatrix::new(n_items, train_rows).unwrap();
        let held = ClickMatrix::new(n_items, held_rows).unwrap();
        let rep = report_from_scores(&train, &held, PredictionMode::Standard, &[10], |u| {
            let mut r = RngStream::derive(99, &[u as u64]);
            Ok((0..n_items).map(|_| r.uniform()).collect())
        })
        .unwrap();
        let s = &rep.summary[0];
        let want = analytic_random_recall(n_items - 6, 3, 10);
        assert!(
            (s.recall_mean - want).abs() < 3.0 * s.recall_se,
            "{} vs {want} (se {})",
            s.recall_mean,
            s.recall_se
        );
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // monotone but nonlinear
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 8.0, 27.0, 64.0]) - 1.0).abs() < 1e-12);
        // ties: ranks [1.5,1.5,3] vs [1,2,3] → r = √3/2
        assert!((spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]) - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn bucket_labels() {
        let b = BucketSummary {
            lo: 80,
            hi: None,
            users: 0,
            mean_capacity: None,
            mean_ndcg10: None,
        };
        assert_eq!(b.label(), "80-max");
        assert_eq!(default_bucket_edges("yelp").unwrap(), vec![5, 20, 40, 60, 80]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn metrics_invariant_under_monotone_transform(
                scores in prop::collection::vec(-3.0f64..3.0, 5..30),
                held_seed in 0u64..1000,
                r in 1usize..12,
            ) {
                let n = scores.len();
                let mut rng = RngStream::new(held_seed);
                let held: Vec<u32> = (0..n as u32).filter(|_| rng.uniform() < 0.3).collect();
                prop_assume!(!held.is_empty());
                let a = rank_items(&scores, &[]);
                let t: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
                let b = rank_items(&t, &[]);
                prop_assert_eq!(recall_at_r(&a, &held, r), recall_at_r(&b, &held, r));
                prop_assert_eq!(ndcg_at_r(&a, &held, r), ndcg_at_r(&b, &held, r));
            }

            #[test]
            fn ndcg_is_one_iff_top_slots_are_relevant(
                perm_seed in 0u64..10_000,
                n in 4usize..25,
                h in 1usize..6,
                r in 1usize..10,
            ) {
                let mut rng = RngStream::new(perm_seed);
                let mut items: Vec<u32> = (0..n as u32).collect();
                rng.shuffle(&mut items);
                let held: Vec<u32> = items.iter().copied().take(h.min(n)).collect();
                rng.shuffle(&mut items);
                let ranked = RankedList(items);
                let top = r.min(held.len());
                let all_top = ranked.0[..top].iter().all(|i| held.contains(i));
                let v = ndcg_at_r(&ranked, &held, r).unwrap();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
                prop_assert_eq!((v - 1.0).abs() < 1e-12, all_top);
            }
        }
    }
}
