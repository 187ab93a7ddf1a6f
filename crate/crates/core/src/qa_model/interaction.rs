//! Sentence-pair interaction grid and the dynamic 2D interaction kernels.
//!
//! These are the direct, general forms of the operations. The forward pass
//! in the parent module uses an equivalent factorized evaluation that
//! exploits the concatenated structure of the grid cells.

use ndarray::{Array1, Array3, ArrayView2};

use super::{Activation, KernelBank};
use crate::error::{Error, Result};

/// Cell `(i, j)` is `[q_sent[i]; a_sent[j]]`, giving an `m × n × 2d` array.
pub fn build_interaction_matrix(q_sent: ArrayView2<f64>, a_sent: ArrayView2<f64>) -> Result<Array3<f64>> {
    let (m, d) = q_sent.dim();
    let (n, da) = a_sent.dim();
    if d != da {
        return Err(Error::Shape(format!("question rows have {d} dims, answer rows {da}")));
    }
    let mut out = Array3::zeros((m, n, 2 * d));
    for i in 0..m {
        for j in 0..n {
            for c in 0..d {
                out[[i, j, c]] = q_sent[[i, c]];
                out[[i, j, d + c]] = a_sent[[j, c]];
            }
        }
    }
    Ok(out)
}

/// PyTorch-style adaptive pooling windows: output cell `i` covers
/// `[floor(i*len/out), ceil((i+1)*len/out))`.
pub fn adaptive_bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| {
            let start = i * len / out;
            let end = ((i + 1) * len).div_ceil(out);
            (start, end.max(start + 1))
        })
        .collect()
}

/// Valid convolution of every kernel bank over the grid, adaptive max
/// pooling to `pool × pool`, activation, and flattening. Output layout is
/// bank-major, then filter, then pooled row, then pooled column; its length
/// is `banks · F · pool²` whatever the grid size.
pub fn apply_interaction_kernels(
    grid: &Array3<f64>,
    kernels: &[KernelBank],
    pool: usize,
    activation: Activation,
) -> Result<Array1<f64>> {
    let (m, n, ch) = grid.dim();
    let mut out = Vec::new();
    for bank in kernels {
        let (f_count, kh, kw, wch) = bank.weight.dim();
        if wch != ch {
            return Err(Error::Shape(format!("kernel has {wch} channels, grid has {ch}")));
        }
        if kh > m || kw > n {
            return Err(Error::Shape(format!("kernel {kh}x{kw} does not fit a {m}x{n} grid")));
        }
        let (rows, cols) = (m - kh + 1, n - kw + 1);
        let row_bins = adaptive_bins(rows, pool);
        let col_bins = adaptive_bins(cols, pool);
        for f in 0..f_count {
            let mut conv = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    let mut acc = bank.bias[f];
                    for di in 0..kh {
                        for dj in 0..kw {
                            for z in 0..ch {
                                acc += bank.weight[[f, di, dj, z]] * grid[[r + di, c + dj, z]];
                            }
                        }
                    }
                    conv[r * cols + c] = acc;
                }
            }
            for &(r0, r1) in &row_bins {
                for &(c0, c1) in &col_bins {
                    let mut best = f64::NEG_INFINITY;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            best = best.max(conv[r * cols + c]);
                        }
                    }
                    out.push(activation.apply(best));
                }
            }
        }
    }
    Ok(Array1::from(out))
}
