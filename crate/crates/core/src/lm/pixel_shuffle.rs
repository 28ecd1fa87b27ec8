//! Space-to-depth merge of `r × r` blocks of visual patches into single tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid of `rows × cols` patches, each a vector of `dim` reals, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::Shape("patch grid dimensions must be positive".into()));
        }
        if data.len() != rows * cols * dim {
            return Err(Error::Shape(format!(
                "grid {rows}x{cols}x{dim} needs {} values, got {}",
                rows * cols * dim,
                data.len()
            )));
        }
        Ok(Self { rows, cols, dim, data })
    }

    pub fn patch(&self, r: usize, c: usize) -> &[f32] {
        let start = (r * self.cols + c) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Number of patches, i.e. the visual sequence length.
    pub fn seq_len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Merges each `r × r` block into one patch of dimension `r²·dim`, concatenating
/// the block's patches in row-major order. Sequence length shrinks by `r²`.
pub fn pixel_shuffle(grid: &PatchGrid, r: usize) -> Result<PatchGrid> {
    if r == 0 || !grid.rows.is_multiple_of(r) || !grid.cols.is_multiple_of(r) {
        return Err(Error::Shape(format!("{}x{} grid is not divisible by block {r}", grid.rows, grid.cols)));
    }
    let (rows, cols, dim) = (grid.rows / r, grid.cols / r, grid.dim * r * r);
    let mut data = Vec::with_capacity(grid.data.len());
    for br in 0..rows {
        for bc in 0..cols {
            for a in 0..r {
                for b in 0..r {
                    data.extend_from_slice(grid.patch(br * r + a, bc * r + b));
                }
            }
        }
    }
    Ok(PatchGrid { rows, cols, dim, data })
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(grid: &PatchGrid, r: usize) -> Result<PatchGrid> {
    if r == 0 || !grid.dim.is_multiple_of(r * r) {
        return Err(Error::Shape(format!("patch dim {} is not divisible by {}", grid.dim, r * r)));
    }
    let (rows, cols, dim) = (grid.rows * r, grid.cols * r, grid.dim / (r * r));
    let mut data = vec![0.0; grid.data.len()];
    for br in 0..grid.rows {
        for bc in 0..grid.cols {
            let merged = grid.patch(br, bc);
            for a in 0..r {
                for b in 0..r {
                    let src = &merged[(a * r + b) * dim..(a * r + b + 1) * dim];
                    let dst = ((br * r + a) * cols + bc * r + b) * dim;
                    data[dst..dst + dim].copy_from_slice(src);
                }
            }
        }
    }
    Ok(PatchGrid { rows, cols, dim, data })
}
