use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SparsitySpec {
    /// Keep the `⌈ρ·N⌉` largest-magnitude weights of the whole tensor.
    Unstructured { keep_ratio: f64 },
    /// Keep the `n` largest-magnitude weights of every `m`-block along rows.
    Structured { n: usize, m: usize },
}

impl SparsitySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SparsitySpec::Unstructured { keep_ratio } if !(keep_ratio > 0.0 && keep_ratio <= 1.0) => {
                Err(Error::Config(format!("keep ratio {keep_ratio} outside (0, 1]")))
            }
            SparsitySpec::Structured { n, m } if n == 0 || n > m => {
                Err(Error::Config(format!("invalid {n}:{m} pattern")))
            }
            _ => Ok(()),
        }
    }

    /// Weights kept out of `len`.
    pub fn kept(&self, len: usize) -> usize {
        match *self {
            SparsitySpec::Unstructured { keep_ratio } => ((keep_ratio * len as f64).ceil() as usize).min(len),
            SparsitySpec::Structured { n, m } => len / m * n,
        }
    }

    /// Bits needed to store the mask of a `len`-weight tensor: one per weight
    /// when unstructured, `⌈log2 C(m, n)⌉` per block when structured.
    pub fn mask_bits(&self, len: usize) -> u64 {
        match *self {
            SparsitySpec::Unstructured { .. } => len as u64,
            SparsitySpec::Structured { n, m } => (len / m) as u64 * ceil_log2(binomial(m as u64, n as u64)),
        }
    }

    /// Mask bits per weight as a real number.
    pub fn mask_bits_per_weight(&self) -> f64 {
        match *self {
            SparsitySpec::Unstructured { .. } => 1.0,
            SparsitySpec::Structured { n, m } => ceil_log2(binomial(m as u64, n as u64)) as f64 / m as f64,
        }
    }
}

fn binomial(m: u64, n: u64) -> u128 {
    let n = n.min(m - n);
    (0..n).fold(1u128, |acc, i| acc * (m - i) as u128 / (i + 1) as u128)
}

fn ceil_log2(c: u128) -> u64 {
    if c <= 1 {
        0
    } else {
        (128 - (c - 1).leading_zeros()) as u64
    }
}

/// Indices of the `k` largest magnitudes in `xs`; equal magnitudes prefer the
/// lower index.
fn top_k(xs: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].abs().total_cmp(&xs[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Zeroes all but the selected weights and returns the sparse tensor and its mask.
pub fn sparsify(tensor: &Matrix, spec: &SparsitySpec) -> Result<(Matrix, Vec<bool>)> {
    spec.validate()?;
    let mut mask = vec![false; tensor.len()];
    match *spec {
        SparsitySpec::Unstructured { .. } => {
            for i in top_k(&tensor.data, spec.kept(tensor.len())) {
                mask[i] = true;
            }
        }
        SparsitySpec::Structured { n, m } => {
            if !tensor.cols.is_multiple_of(m) {
                return Err(Error::Shape(format!("row length {} is not divisible by block size {m}", tensor.cols)));
            }
            for (b, block) in tensor.data.chunks(m).enumerate() {
                for i in top_k(block, n) {
                    mask[b * m + i] = true;
                }
            }
        }
    }
    let data = tensor.data.iter().zip(&mask).map(|(&v, &k)| if k { v } else { 0.0 }).collect();
    Ok((Matrix { rows: tensor.rows, cols: tensor.cols, data }, mask))
}
