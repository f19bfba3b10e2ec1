//! Cache-blocked dense matrix multiplication.
//!
//! Layout follows the usual packed-panel scheme: a `KC x NC` panel of B is
//! packed into `NR`-wide strips, each `MC x KC` block of A into `MR`-tall
//! strips, and a register-tiled microkernel accumulates `MR x NR` tiles.
//! Row blocks of C are distributed over the rayon pool.
//!
//! Every product term is a fused multiply-add (vector FMA in the x86
//! kernels, `f64::mul_add` in the portable one) and the depth blocking `KC`
//! is fixed, so each output element sees the same rounding sequence
//! regardless of the microkernel width, the instruction set picked at
//! runtime, or the number of threads.

use rayon::prelude::*;

use super::matrix::Matrix;
use crate::error::{Error, Result};

const KC: usize = 256;
const MC_TARGET: usize = 128;
const NC: usize = 2048;

/// How the product is merged into the destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Update {
    Overwrite,
    Add,
    Sub,
}

/// Read-only strided view of a row-major operand.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub ld: usize,
    /// Treat the stored matrix as transposed.
    pub trans: bool,
}

impl<'a> View<'a> {
    pub fn of(m: &'a Matrix, trans: bool) -> Self {
        Self {
            data: m.as_slice(),
            ld: m.cols(),
            trans,
        }
    }

    #[inline(always)]
    fn at(&self, r: usize, c: usize) -> f64 {
        if self.trans {
            self.data[c * self.ld + r]
        } else {
            self.data[r * self.ld + c]
        }
    }
}

/// `A * B`, or `A * B^T` when `transpose_b` is set.
pub fn gemm(a: &Matrix, b: &Matrix, transpose_b: bool) -> Result<Matrix> {
    let (m, k) = a.shape();
    let (kb, n) = if transpose_b {
        (b.cols(), b.rows())
    } else {
        (b.rows(), b.cols())
    };
    if k != kb {
        return Err(Error::dim(
            "gemm",
            format!(
                "{}x{} times {}x{}{}",
                m,
                k,
                b.rows(),
                b.cols(),
                if transpose_b { " (transposed)" } else { "" }
            ),
        ));
    }
    let mut c = vec![0.0; m * n];
    gemm_into(
        m,
        n,
        k,
        View::of(a, false),
        View::of(b, transpose_b),
        &mut c,
        n,
        Update::Overwrite,
    );
    Ok(Matrix::from_parts(m, n, c))
}

/// `C (op)= A * B` on strided operands. `c` holds rows of length `ldc`;
/// only the leading `n` columns of the first `m` rows are touched.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into(
    m: usize,
    n: usize,
    k: usize,
    a: View<'_>,
    b: View<'_>,
    c: &mut [f64],
    ldc: usize,
    update: Update,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(ldc >= n);
    debug_assert!(c.len() >= (m - 1) * ldc + n);
    if k == 0 {
        if update == Update::Overwrite {
            for r in 0..m {
                c[r * ldc..r * ldc + n].fill(0.0);
            }
        }
        return;
    }
    match Isa::detect() {
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => blocked::<Avx512>(m, n, k, a, b, c, ldc, update),
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 => blocked::<Avx2>(m, n, k, a, b, c, ldc, update),
        Isa::Portable => blocked::<Portable>(m, n, k, a, b, c, ldc, update),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Isa {
    #[cfg(target_arch = "x86_64")]
    Avx512,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    Portable,
}

impl Isa {
    fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx512f") && std::is_x86_feature_detected!("fma") {
                return Isa::Avx512;
            }
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                return Isa::Avx2;
            }
        }
        Isa::Portable
    }
}

trait Kernel {
    const MR: usize;
    const NR: usize;
    /// Writes the `MR x NR` product of packed strips into `out` (row-major).
    ///
    /// # Safety
    /// The CPU must support the instruction set the implementation targets.
    unsafe fn tile(kc: usize, a: &[f64], b: &[f64], out: &mut [f64]);
}

#[inline]
fn tile_generic<const MR: usize, const NR: usize>(
    kc: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) {
    let mut acc = [[0.0f64; NR]; MR];
    for (ap, bp) in a.chunks_exact(MR).zip(b.chunks_exact(NR)).take(kc) {
        for i in 0..MR {
            let ai = ap[i];
            for j in 0..NR {
                acc[i][j] = ai.mul_add(bp[j], acc[i][j]);
            }
        }
    }
    for i in 0..MR {
        out[i * NR..(i + 1) * NR].copy_from_slice(&acc[i]);
    }
}

#[cfg(target_arch = "x86_64")]
struct Avx512;

#[cfg(target_arch = "x86_64")]
impl Kernel for Avx512 {
    const MR: usize = 8;
    const NR: usize = 16;
    #[target_feature(enable = "avx512f,fma")]
    unsafe fn tile(kc: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
        use std::arch::x86_64::*;
        debug_assert!(a.len() >= kc * 8 && b.len() >= kc * 16 && out.len() >= 128);
        let (ap, bp) = (a.as_ptr(), b.as_ptr());
        let mut acc = [[_mm512_setzero_pd(); 2]; 8];
        for p in 0..kc {
            let b0 = _mm512_loadu_pd(bp.add(p * 16));
            let b1 = _mm512_loadu_pd(bp.add(p * 16 + 8));
            for (i, row) in acc.iter_mut().enumerate() {
                let ai = _mm512_set1_pd(*ap.add(p * 8 + i));
                row[0] = _mm512_fmadd_pd(ai, b0, row[0]);
                row[1] = _mm512_fmadd_pd(ai, b1, row[1]);
            }
        }
        let op = out.as_mut_ptr();
        for (i, row) in acc.iter().enumerate() {
            _mm512_storeu_pd(op.add(i * 16), row[0]);
            _mm512_storeu_pd(op.add(i * 16 + 8), row[1]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
struct Avx2;

#[cfg(target_arch = "x86_64")]
impl Kernel for Avx2 {
    const MR: usize = 6;
    const NR: usize = 8;
    #[target_feature(enable = "avx2,fma")]
    unsafe fn tile(kc: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
        use std::arch::x86_64::*;
        debug_assert!(a.len() >= kc * 6 && b.len() >= kc * 8 && out.len() >= 48);
        let (ap, bp) = (a.as_ptr(), b.as_ptr());
        let mut acc = [[_mm256_setzero_pd(); 2]; 6];
        for p in 0..kc {
            let b0 = _mm256_loadu_pd(bp.add(p * 8));
            let b1 = _mm256_loadu_pd(bp.add(p * 8 + 4));
            for (i, row) in acc.iter_mut().enumerate() {
                let ai = _mm256_broadcast_sd(&*ap.add(p * 6 + i));
                row[0] = _mm256_fmadd_pd(ai, b0, row[0]);
                row[1] = _mm256_fmadd_pd(ai, b1, row[1]);
            }
        }
        let op = out.as_mut_ptr();
        for (i, row) in acc.iter().enumerate() {
            _mm256_storeu_pd(op.add(i * 8), row[0]);
            _mm256_storeu_pd(op.add(i * 8 + 4), row[1]);
        }
    }
}

struct Portable;

impl Kernel for Portable {
    const MR: usize = 4;
    const NR: usize = 4;
    unsafe fn tile(kc: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
        tile_generic::<4, 4>(kc, a, b, out)
    }
}

/// Packs `B[pc..pc+kc, jc..jc+nc]` into NR-wide strips, zero padded.
fn pack_b(b: View<'_>, pc: usize, kc: usize, jc: usize, nc: usize, nr: usize, dst: &mut Vec<f64>) {
    let strips = nc.div_ceil(nr);
    dst.clear();
    dst.resize(strips * kc * nr, 0.0);
    for s in 0..strips {
        let j0 = jc + s * nr;
        let width = nr.min(jc + nc - j0);
        let strip = &mut dst[s * kc * nr..(s + 1) * kc * nr];
        for p in 0..kc {
            let row = &mut strip[p * nr..p * nr + width];
            if b.trans {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = b.at(pc + p, j0 + j);
                }
            } else {
                let start = (pc + p) * b.ld + j0;
                row.copy_from_slice(&b.data[start..start + width]);
            }
        }
    }
}

/// Packs `A[ic..ic+mc, pc..pc+kc]` into MR-tall strips, zero padded.
fn pack_a(a: View<'_>, ic: usize, mc: usize, pc: usize, kc: usize, mr: usize, dst: &mut Vec<f64>) {
    let strips = mc.div_ceil(mr);
    dst.clear();
    dst.resize(strips * kc * mr, 0.0);
    for s in 0..strips {
        let i0 = ic + s * mr;
        let height = mr.min(ic + mc - i0);
        let strip = &mut dst[s * kc * mr..(s + 1) * kc * mr];
        for i in 0..height {
            if a.trans {
                for p in 0..kc {
                    strip[p * mr + i] = a.at(i0 + i, pc + p);
                }
            } else {
                let src = &a.data[(i0 + i) * a.ld + pc..(i0 + i) * a.ld + pc + kc];
                for (p, &v) in src.iter().enumerate() {
                    strip[p * mr + i] = v;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn blocked<K: Kernel>(
    m: usize,
    n: usize,
    k: usize,
    a: View<'_>,
    b: View<'_>,
    c: &mut [f64],
    ldc: usize,
    update: Update,
) {
    let mc = (MC_TARGET / K::MR).max(1) * K::MR;
    let mut bpack = Vec::new();
    let mut jc = 0;
    while jc < n {
        let nc = NC.min(n - jc);
        let mut pc = 0;
        while pc < k {
            let kc = KC.min(k - pc);
            pack_b(b, pc, kc, jc, nc, K::NR, &mut bpack);
            let merge = match update {
                Update::Overwrite if pc > 0 => Update::Add,
                u => u,
            };
            let bpack = &bpack;
            // Row blocks of C are disjoint, so they can be processed in parallel.
            let c_len = c.len();
            let c = &mut c[..c_len.min(m * ldc)];
            c.par_chunks_mut(mc * ldc).enumerate().for_each_init(
                || (Vec::new(), vec![0.0; K::MR * K::NR]),
                |(apack, tile), (blk, c_blk)| {
                    let ic = blk * mc;
                    let mcur = mc.min(m - ic);
                    pack_a(a, ic, mcur, pc, kc, K::MR, apack);
                    macro_tile::<K>(mcur, nc, kc, apack, bpack, c_blk, ldc, jc, merge, tile);
                },
            );
            pc += kc;
        }
        jc += nc;
    }
}

#[allow(clippy::too_many_arguments)]
fn macro_tile<K: Kernel>(
    mc: usize,
    nc: usize,
    kc: usize,
    apack: &[f64],
    bpack: &[f64],
    c: &mut [f64],
    ldc: usize,
    jc: usize,
    merge: Update,
    tile: &mut [f64],
) {
    let (mr, nr) = (K::MR, K::NR);
    for js in 0..nc.div_ceil(nr) {
        let bstrip = &bpack[js * kc * nr..(js + 1) * kc * nr];
        let j0 = js * nr;
        let width = nr.min(nc - j0);
        for is in 0..mc.div_ceil(mr) {
            let astrip = &apack[is * kc * mr..(is + 1) * kc * mr];
            // SAFETY: `K` was selected by runtime feature detection in `gemm_into`.
            unsafe { K::tile(kc, astrip, bstrip, tile) };
            let i0 = is * mr;
            let height = mr.min(mc - i0);
            for i in 0..height {
                let start = (i0 + i) * ldc + jc + j0;
                let dst = &mut c[start..start + width];
                let src = &tile[i * nr..i * nr + width];
                match merge {
                    Update::Overwrite => dst.copy_from_slice(src),
                    Update::Add => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                    Update::Sub => dst.iter_mut().zip(src).for_each(|(d, s)| *d -= s),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix, tb: bool) -> Matrix {
        let bb = if tb { b.transpose() } else { b.clone() };
        let mut c = Matrix::zeros(a.rows(), bb.cols());
        for i in 0..a.rows() {
            for j in 0..bb.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * bb.get(p, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn filled(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn two_by_two() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = gemm(&a, &b, false).unwrap();
        assert_eq!(c.as_slice(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn mismatch_is_an_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(gemm(&a, &b, false), Err(Error::Dimension { .. })));
        assert_eq!(gemm(&a, &b, true).unwrap().shape(), (2, 2));
    }

    #[test]
    fn identity_is_neutral() {
        let a = filled(37, 19, 3);
        assert_eq!(gemm(&a, &Matrix::identity(19), false).unwrap(), a);
    }

    #[test]
    fn crosses_every_block_boundary() {
        // depth > KC, rows > MC, cols > NC with ragged edges
        for &(m, k, n) in &[(131, 517, 29), (9, 3, 2100), (1, 784, 392)] {
            let a = filled(m, k, 1);
            let b = filled(k, n, 2);
            let c = gemm(&a, &b, false).unwrap();
            assert!(c.max_abs_diff(&naive(&a, &b, false)) < 1e-11);
            let bt = b.transpose();
            let c2 = gemm(&a, &bt, true).unwrap();
            assert_eq!(c, c2);
        }
    }

    #[test]
    fn sub_update_on_strided_window() {
        let a = filled(5, 4, 7);
        let b = filled(4, 3, 8);
        let mut c = filled(6, 10, 9);
        let before = c.clone();
        gemm_into(
            5,
            3,
            4,
            View::of(&a, false),
            View::of(&b, false),
            &mut c.as_mut_slice()[12..],
            10,
            Update::Sub,
        );
        let prod = naive(&a, &b, false);
        for r in 0..6 {
            for col in 0..10 {
                let inside = (1..6).contains(&r) && (2..5).contains(&col);
                let expect = if inside {
                    before.get(r, col) - prod.get(r - 1, col - 2)
                } else {
                    before.get(r, col)
                };
                assert!((c.get(r, col) - expect).abs() < 1e-14);
            }
        }
    }
}
