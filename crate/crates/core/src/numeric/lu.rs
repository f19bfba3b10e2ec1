//! Dense LU factorization with partial (row) pivoting.
//!
//! Right-looking blocked variant: each `NB`-wide column panel is factored
//! with unblocked elimination, the matching block row of U is obtained by a
//! unit-lower triangular solve, and the trailing submatrix is updated with
//! one `gemm` call. The bordered LS-SVM matrix is symmetric indefinite (its
//! leading diagonal entry is zero), so pivoting is mandatory.

use super::gemm::{gemm_into, Update, View};
use super::matrix::Matrix;
use crate::error::{Error, Result};

const NB: usize = 64;

/// Packed `P A = L U` factors.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: Matrix,
    /// `perm[i]` is the original row now stored at row `i`.
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factors `a` in place.
    pub fn factor(mut a: Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::dim(
                "lu",
                format!("{}x{} is not square", n, a.cols()),
            ));
        }
        let scale = a.max_abs();
        // pivots at or below this are treated as exact zeros
        let tiny = (n as f64) * f64::EPSILON * scale;
        let mut perm: Vec<usize> = (0..n).collect();
        if scale == 0.0 && n > 0 {
            return Err(Error::Singular { pivot: 0 });
        }

        let data = a.as_mut_slice();
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + NB).min(n);
            factor_panel(data, n, j0, j1, tiny, &mut perm)?;
            if j1 < n {
                solve_block_row(data, n, j0, j1);
                update_trailing(data, n, j0, j1);
            }
            j0 = j1;
        }
        Ok(Self { lu: a, perm })
    }

    pub fn order(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.order();
        if b.rows() != n {
            return Err(Error::dim(
                "lu solve",
                format!("system order {n}, right-hand side has {} rows", b.rows()),
            ));
        }
        let k = b.cols();
        let mut x = b.select_rows(&self.perm);
        let lu = self.lu.as_slice();
        let xs = x.as_mut_slice();
        // forward substitution, unit lower triangle
        for i in 0..n {
            let (done, rest) = xs.split_at_mut(i * k);
            let xi = &mut rest[..k];
            for (j, &l) in lu[i * n..i * n + i].iter().enumerate() {
                if l != 0.0 {
                    let xj = &done[j * k..(j + 1) * k];
                    xi.iter_mut()
                        .zip(xj)
                        .for_each(|(v, &w)| *v = (-l).mul_add(w, *v));
                }
            }
        }
        // back substitution
        for i in (0..n).rev() {
            let (head, tail) = xs.split_at_mut((i + 1) * k);
            let xi = &mut head[i * k..];
            for (jj, &u) in lu[i * n + i + 1..(i + 1) * n].iter().enumerate() {
                if u != 0.0 {
                    let xj = &tail[jj * k..(jj + 1) * k];
                    xi.iter_mut()
                        .zip(xj)
                        .for_each(|(v, &w)| *v = (-u).mul_add(w, *v));
                }
            }
            let inv = 1.0 / lu[i * n + i];
            xi.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(x)
    }
}

/// Solves the dense system `A X = B`.
pub fn solve_dense(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() {
        return Err(Error::dim(
            "solve_dense",
            format!("{:?} is not square", a.shape()),
        ));
    }
    if b.rows() != a.rows() {
        return Err(Error::dim(
            "solve_dense",
            format!("A is {:?}, B has {} rows", a.shape(), b.rows()),
        ));
    }
    LuFactors::factor(a.clone())?.solve(b)
}

/// Unblocked elimination of columns `j0..j1`; row swaps span full rows.
fn factor_panel(
    a: &mut [f64],
    n: usize,
    j0: usize,
    j1: usize,
    tiny: f64,
    perm: &mut [usize],
) -> Result<()> {
    for c in j0..j1 {
        let mut p = c;
        let mut best = a[c * n + c].abs();
        for r in c + 1..n {
            let v = a[r * n + c].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best <= tiny {
            return Err(Error::Singular { pivot: c });
        }
        if p != c {
            swap_rows(a, n, c, p);
            perm.swap(c, p);
        }
        let inv = 1.0 / a[c * n + c];
        let (top, below) = a.split_at_mut((c + 1) * n);
        let pivot_row = &top[c * n + c + 1..c * n + j1];
        for r in 0..n - c - 1 {
            let row = &mut below[r * n..(r + 1) * n];
            let l = row[c] * inv;
            row[c] = l;
            if l != 0.0 {
                row[c + 1..j1]
                    .iter_mut()
                    .zip(pivot_row)
                    .for_each(|(v, &u)| *v = (-l).mul_add(u, *v));
            }
        }
    }
    Ok(())
}

fn swap_rows(a: &mut [f64], n: usize, r1: usize, r2: usize) {
    let (lo, hi) = (r1.min(r2), r1.max(r2));
    let (head, tail) = a.split_at_mut(hi * n);
    head[lo * n..(lo + 1) * n].swap_with_slice(&mut tail[..n]);
}

/// `U12 = L11^{-1} A12` for rows `j0..j1`, columns `j1..n`.
fn solve_block_row(a: &mut [f64], n: usize, j0: usize, j1: usize) {
    for c in j0..j1 {
        let (top, below) = a.split_at_mut((c + 1) * n);
        let src = &top[c * n + j1..(c + 1) * n];
        for r in c + 1..j1 {
            let row = &mut below[(r - c - 1) * n..(r - c) * n];
            let l = row[c];
            if l != 0.0 {
                row[j1..]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(v, &u)| *v = (-l).mul_add(u, *v));
            }
        }
    }
}

/// `A22 -= L21 * U12`.
fn update_trailing(a: &mut [f64], n: usize, j0: usize, j1: usize) {
    let nb = j1 - j0;
    let m = n - j1;
    let mut l21 = Vec::with_capacity(m * nb);
    for r in j1..n {
        l21.extend_from_slice(&a[r * n + j0..r * n + j1]);
    }
    let mut u12 = Vec::with_capacity(nb * m);
    for r in j0..j1 {
        u12.extend_from_slice(&a[r * n + j1..(r + 1) * n]);
    }
    gemm_into(
        m,
        m,
        nb,
        View {
            data: &l21,
            ld: nb,
            trans: false,
        },
        View {
            data: &u12,
            ld: m,
            trans: false,
        },
        &mut a[j1 * n + j1..],
        n,
        Update::Sub,
    );
}
