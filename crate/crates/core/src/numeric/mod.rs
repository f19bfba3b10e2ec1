//! Dense numeric core: matrix type, blocked GEMM, pivoted LU, FFT and a
//! seeded random source.

mod fft;
mod gemm;
mod lu;
mod matrix;
mod rng;

pub use fft::{dft_halfspectrum_sqrtmag, half_spectrum_len, halfspectrum_sqrtmag_with, FftPlan};
pub use gemm::gemm;
pub(crate) use gemm::{gemm_into, Update, View};
pub use lu::{solve_dense, LuFactors};
pub use matrix::{dot, Matrix};
pub use rng::{sample_without_replacement, RngState};

use crate::error::{Error, Result};

/// `R^T X` for a one-hot assignment `R` given as one cluster index per row.
///
/// Row `q` of the result is the sum of the rows of `x` assigned to `q`,
/// accumulated in row order. Runs in `O(N M)` without forming `R`.
pub fn sparse_onehot_gemm(assignment: &[usize], clusters: usize, x: &Matrix) -> Result<Matrix> {
    if assignment.len() != x.rows() {
        return Err(Error::dim(
            "sparse_onehot_gemm",
            format!("{} assignments for {} rows", assignment.len(), x.rows()),
        ));
    }
    let m = x.cols();
    let mut out = Matrix::zeros(clusters, m);
    for (row, &q) in x.row_iter().zip(assignment) {
        if q >= clusters {
            return Err(Error::InvalidArgument(format!(
                "assignment {q} out of range for {clusters} clusters"
            )));
        }
        out.row_mut(q)
            .iter_mut()
            .zip(row)
            .for_each(|(o, v)| *o += v);
    }
    Ok(out)
}

/// Converts a dense 0/1 assignment matrix (one 1 per row) to indices.
pub fn onehot_rows_to_indices(r: &Matrix) -> Result<Vec<usize>> {
    r.row_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut hit = None;
            for (q, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    if hit.is_some() {
                        return Err(Error::InvalidArgument(format!(
                            "row {i} has multiple assignments"
                        )));
                    }
                    hit = Some(q);
                } else if v != 0.0 {
                    return Err(Error::InvalidArgument(format!("row {i} is not binary")));
                }
            }
            hit.ok_or_else(|| Error::InvalidArgument(format!("row {i} has no assignment")))
        })
        .collect()
}
