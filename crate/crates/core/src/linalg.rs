//! Dense numerical kernels and the seeded random source used by the model.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; matrices are row-major
//! [`DenseMatrix`] values. All randomness flows through [`RngStream`], which
//! wraps ChaCha8 so that draws depend only on the seed and the call order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VcmError};

/// Name recorded in manifests and checkpoints for the PRNG in use.
pub const RNG_ALGORITHM: &str = "chacha8/splitmix64-derived";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(VcmError::shape(
                "DenseMatrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", values.len()),
            ));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `Wᵀ·v`, the backward pass of a matrix-vector product.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &g) in v.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += g * w;
            }
        }
        out
    }

    /// `self += scale · a·bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], scale: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s == 0.0 {
                continue;
            }
            for (w, &bc) in self.row_mut(r).iter_mut().zip(b) {
                *w += s * bc;
            }
        }
    }
}

fn shape_str(m: &DenseMatrix) -> String {
    format!("W {}x{}", m.rows, m.cols)
}

/// `W·x + b`.
pub fn affine(w: &DenseMatrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(VcmError::shape("affine", shape_str(w), format!("x dim {}", x.len())));
    }
    if w.rows != b.len() {
        return Err(VcmError::shape("affine", shape_str(w), format!("b dim {}", b.len())));
    }
    Ok((0..w.rows)
        .map(|r| w.row(r).iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b[r])
        .collect())
}

/// `W·x + b` for a sparse `x` given as parallel (index, value) arrays.
pub fn affine_sparse(w: &DenseMatrix, b: &[f64], idx: &[usize], val: &[f64]) -> Result<Vec<f64>> {
    if w.rows != b.len() {
        return Err(VcmError::shape(
            "affine_sparse",
            shape_str(w),
            format!("b dim {}", b.len()),
        ));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= w.cols) {
        return Err(VcmError::shape("affine_sparse", shape_str(w), format!("index {bad}")));
    }
    Ok((0..w.rows)
        .map(|r| {
            let row = w.row(r);
            idx.iter().zip(val).map(|(&i, v)| row[i] * v).sum::<f64>() + b[r]
        })
        .collect())
}

pub fn tanh_activation(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(VcmError::EmptySoftmax);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)` so inference is the identity.
pub fn dropout(x: &[f64], rate: f64, rng: &mut RngStream, training: bool) -> Result<Vec<f64>> {
    let keep = dropout_mask(x.len(), rate, rng, training)?;
    if !training {
        return Ok(x.to_vec());
    }
    let scale = 1.0 / (1.0 - rate);
    Ok(x.iter()
        .zip(keep)
        .map(|(v, k)| if k { v * scale } else { 0.0 })
        .collect())
}

/// Keep-mask used by [`dropout`]; all `true` outside training or at rate 0.
pub fn dropout_mask(n: usize, rate: f64, rng: &mut RngStream, training: bool) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(VcmError::InvalidDropoutRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(vec![true; n]);
    }
    Ok((0..n).map(|_| rng.uniform() >= rate).collect())
}

pub fn sample_standard_normal(k: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..k).map(|_| rng.standard_normal()).collect()
}

/// Seeded random source. Child streams are derived by mixing the root seed
/// with integer keys through splitmix64, so a draw depends only on
/// `(seed, keys, position)` and never on thread scheduling.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `keys` under the root `seed`.
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        let mut s = splitmix64(seed);
        for &k in keys {
            s = splitmix64(s ^ splitmix64(k.wrapping_add(0x632b_e59b_d9b4_e019)));
        }
        Self::new(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
