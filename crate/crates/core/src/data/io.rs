//! On-disk layout of a processed dataset directory.
//!
//! ```text
//! index.json        DatasetIndex (shapes, seed, thresholds, normalization)
//! users.txt         user ids, one per line, row order
//! items.txt         item ids, one per line, column order
//! vocab.txt         vocabulary words, one per line, rank order
//! train.tsv         click triplets  `user<TAB>item<TAB>1`
//! validation.tsv    click triplets
//! test.tsv          click triplets
//! reviews.tsv       review triplets `user<TAB>word<TAB>count`
//! ```
//!
//! Every triplet file starts with a header line `# <rows> <cols> <nnz>`
//! followed by rows in (row, column) order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ClickMatrix, PreprocessConfig, RawInteraction, RawReview, ReviewMatrix, SplitDataset, SplitFractions, Vocabulary,
};
use crate::error::{Result, VcmError};

/// Encoder input transform applied by the model, recorded in every index.
pub const INPUT_NORMALIZATION: &str = "clicks: l2-normalized binary row; reviews: counts/W_u * ln(1+W_u)";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub n_users: usize,
    pub n_items: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub rating_threshold: f64,
    pub min_user_clicks: usize,
    pub min_item_users: usize,
    pub max_vocab_size: usize,
    pub split: SplitFractions,
    pub input_normalization: String,
}

impl DatasetIndex {
    pub fn new(split: &SplitDataset, reviews: &ReviewMatrix, config: &PreprocessConfig) -> Self {
        DatasetIndex {
            format_version: FORMAT_VERSION,
            n_users: split.n_users(),
            n_items: split.n_items(),
            vocab_size: reviews.vocab_size(),
            seed: config.seed,
            rating_threshold: config.rating_threshold,
            min_user_clicks: config.min_user_clicks,
            min_item_users: config.min_item_users,
            max_vocab_size: config.vocab_size,
            split: config.split,
            input_normalization: INPUT_NORMALIZATION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedDataset {
    pub index: DatasetIndex,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub vocab: Vocabulary,
    pub split: SplitDataset,
    pub reviews: ReviewMatrix,
}

/// Names of the files written by [`ProcessedDataset::save`], in a fixed order.
pub const DATASET_FILES: [&str; 8] = [
    "index.json",
    "users.txt",
    "items.txt",
    "vocab.txt",
    "train.tsv",
    "validation.tsv",
    "test.tsv",
    "reviews.tsv",
];

impl ProcessedDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| VcmError::io(dir, e))?;
        let mut index = serde_json::to_string_pretty(&self.index)?;
        index.push('\n');
        write(dir.join("index.json"), &index)?;
        write(dir.join("users.txt"), &lines(&self.users))?;
        write(dir.join("items.txt"), &lines(&self.items))?;
        write(dir.join("vocab.txt"), &lines(self.vocab.words()))?;
        write(dir.join("train.tsv"), &clicks_to_triplets(&self.split.train))?;
        write(dir.join("validation.tsv"), &clicks_to_triplets(&self.split.validation))?;
        write(dir.join("test.tsv"), &clicks_to_triplets(&self.split.test))?;
        write(dir.join("reviews.tsv"), &reviews_to_triplets(&self.reviews))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.json");
        let index: DatasetIndex = serde_json::from_str(&read(&index_path)?).map_err(|e| VcmError::Malformed {
            what: "dataset index",
            path: index_path.clone(),
            detail: e.to_string(),
        })?;
        if index.format_version != FORMAT_VERSION {
            return Err(VcmError::Malformed {
                what: "dataset index",
                path: index_path,
                detail: format!("unsupported format version {}", index.format_version),
            });
        }
        let users = read_lines(&dir.join("users.txt"))?;
        let items = read_lines(&dir.join("items.txt"))?;
        let vocab = Vocabulary::from_words(read_lines(&dir.join("vocab.txt"))?)?;
        let train = triplets_to_clicks(&dir.join("train.tsv"))?;
        let validation = triplets_to_clicks(&dir.join("validation.tsv"))?;
        let test = triplets_to_clicks(&dir.join("test.tsv"))?;
        let reviews = triplets_to_reviews(&dir.join("reviews.tsv"))?;

        let consistent = users.len() == index.n_users
            && items.len() == index.n_items
            && vocab.len() == index.vocab_size
            && [&train, &validation, &test]
                .iter()
                .all(|m| m.n_users() == index.n_users && m.n_items() == index.n_items)
            && reviews.n_users() == index.n_users
            && reviews.vocab_size() == index.vocab_size;
        if !consistent {
            return Err(VcmError::Malformed {
                what: "dataset directory",
                path: dir.to_path_buf(),
                detail: "file shapes disagree with index.json".into(),
            });
        }
        Ok(ProcessedDataset {
            index,
            users,
            items,
            vocab,
            split: SplitDataset {
                train,
                validation,
                test,
            },
            reviews,
        })
    }
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| VcmError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| VcmError::io(path, e))
}

fn lines(items: &[String]) -> String {
    let mut out = String::new();
    for i in items {
        out.push_str(i);
        out.push('\n');
    }
    out
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?.lines().map(str::to_owned).collect())
}

fn clicks_to_triplets(m: &ClickMatrix) -> String {
    let mut out = format!("# {} {} {}\n", m.n_users(), m.n_items(), m.nnz());
    for (u, row) in m.rows().iter().enumerate() {
        for i in row {
            let _ = writeln!(out, "{u}\t{i}\t1");
        }
    }
    out
}

fn reviews_to_triplets(m: &ReviewMatrix) -> String {
    let nnz: usize = m.rows().iter().map(Vec::len).sum();
    let mut out = format!("# {} {} {}\n", m.n_users(), m.vocab_size(), nnz);
    for (u, row) in m.rows().iter().enumerate() {
        for (w, c) in row {
            let _ = writeln!(out, "{u}\t{w}\t{c}");
        }
    }
    out
}

fn malformed(path: &Path, detail: impl Into<String>) -> VcmError {
    VcmError::Malformed {
        what: "triplet file",
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// `(rows, cols, per-row (col, value) lists)`.
type Triplets = (usize, usize, Vec<Vec<(u32, u32)>>);

fn parse_triplets(path: &Path) -> Result<Triplets> {
    let text = read(path)?;
    let mut it = text.lines();
    let header = it.next().ok_or_else(|| malformed(path, "missing header"))?;
    let dims: Vec<usize> = header
        .strip_prefix("# ")
        .ok_or_else(|| malformed(path, "header must start with `# `"))?
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| malformed(path, format!("header: {e}")))?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(malformed(path, "header must hold rows, cols, nnz"));
    };
    let mut out = vec![Vec::new(); rows];
    let mut seen = 0usize;
    for (lineno, line) in it.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = match f[..] {
            [r, c, v] => r
                .parse::<usize>()
                .ok()
                .zip(c.parse::<u32>().ok())
                .zip(v.parse::<u32>().ok()),
            _ => None,
        };
        let ((r, c), v) = parsed.ok_or_else(|| malformed(path, format!("line {}: `{line}`", lineno + 2)))?;
        if r >= rows || c as usize >= cols {
            return Err(malformed(path, format!("line {}: index out of range", lineno + 2)));
        }
        out[r].push((c, v));
        seen += 1;
    }
    if seen != nnz {
        return Err(malformed(path, format!("header says {nnz} entries, found {seen}")));
    }
    Ok((rows, cols, out))
}

fn triplets_to_clicks(path: &Path) -> Result<ClickMatrix> {
    let (_, cols, rows) = parse_triplets(path)?;
    ClickMatrix::new(
        cols,
        rows.into_iter()
            .map(|r| r.into_iter().map(|(c, _)| c).collect())
            .collect(),
    )
}

fn triplets_to_reviews(path: &Path) -> Result<ReviewMatrix> {
    let (_, cols, rows) = parse_triplets(path)?;
    ReviewMatrix::new(cols, rows)
}

/// Row counts from parsing a raw TSV input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows: usize,
    pub malformed: usize,
}

impl ParseReport {
    pub fn malformed_fraction(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.malformed as f64 / self.rows as f64
        }
    }
}

/// Parse `user<TAB>item<TAB>rating` lines. A first line whose rating field
/// is not numeric is treated as a header; other bad lines are counted and skipped.
pub fn read_interactions(path: &Path) -> Result<(Vec<RawInteraction>, ParseReport)> {
    let text = read(path)?;
    let mut out = Vec::new();
    let mut report = ParseReport::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = match f[..] {
            [u, i, r] if !u.is_empty() && !i.is_empty() => {
                r.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|r| r.is_finite())
                    .map(|rating| RawInteraction {
                        user: u.to_owned(),
                        item: i.to_owned(),
                        rating,
                    })
            }
            _ => None,
        };
        match parsed {
            Some(r) => {
                report.rows += 1;
                out.push(r);
            }
            None if lineno == 0 && f.len() == 3 => {}
            None => {
                report.rows += 1;
                report.malformed += 1;
            }
        }
    }
    Ok((out, report))
}

/// Parse `user<TAB>text` lines; the text is everything after the first tab.
pub fn read_reviews(path: &Path) -> Result<(Vec<RawReview>, ParseReport)> {
    let text = read(path)?;
    let mut out = Vec::new();
    let mut report = ParseReport::default();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        report.rows += 1;
        match line.split_once('\t') {
            Some((u, t)) if !u.is_empty() => out.push(RawReview {
                user: u.to_owned(),
                text: t.to_owned(),
            }),
            _ => report.malformed += 1,
        }
    }
    Ok((out, report))
}
