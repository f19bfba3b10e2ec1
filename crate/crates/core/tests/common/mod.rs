//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance run.
#![allow(dead_code)]

use std::path::PathBuf;

use kkc::kmeans::assign;
use kkc::numeric::{gemm, solve_dense, FftPlan, RngState};
use kkc::Matrix;

pub fn uniform(rng: &mut RngState, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

pub fn random_matrix(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| uniform(rng, -1.0, 1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_unit_rows(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    let mut m = random_matrix(rng, rows, cols);
    m.normalize_rows();
    m
}

/// Triple loop, `i-j-k` order, plain multiply and add.
pub fn naive_gemm(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(i, p) * b.get(p, j);
            }
            c.set(i, j, s);
        }
    }
    c
}

/// Largest `|C_ij - R_ij| / sum_p |A_ip||B_pj|`.
pub fn gemm_relative_error(a: &Matrix, b: &Matrix, c: &Matrix, reference: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let scale: f64 = (0..a.cols())
                .map(|p| (a.get(i, p) * b.get(p, j)).abs())
                .sum();
            let d = (c.get(i, j) - reference.get(i, j)).abs();
            if scale > 0.0 {
                worst = worst.max(d / scale);
            } else {
                worst = worst.max(d);
            }
        }
    }
    worst
}

/// Textbook Gaussian elimination with partial pivoting on an augmented
/// matrix, column by column, followed by back substitution.
pub fn naive_solve(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let k = b.cols();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| a.row(i).iter().chain(b.row(i)).copied().collect())
        .collect();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, p);
        for r in col + 1..n {
            let f = aug[r][col] / aug[col][col];
            for c in col..n + k {
                aug[r][c] -= f * aug[col][c];
            }
        }
    }
    let mut x = Matrix::zeros(n, k);
    for j in 0..k {
        for i in (0..n).rev() {
            let mut s = aug[i][n + j];
            for c in i + 1..n {
                s -= aug[i][c] * x.get(c, j);
            }
            x.set(i, j, s / aug[i][i]);
        }
    }
    x
}

/// `O(M^2)` DFT magnitudes with twiddles from `sin_cos` of the reduced
/// index, so no recurrence error accumulates.
pub fn naive_dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let m = x.len();
    (0..m)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let idx = (k * n) % m;
                let (s, c) = (-2.0 * std::f64::consts::PI * idx as f64 / m as f64).sin_cos();
                re += v * c;
                im += v * s;
            }
            re.hypot(im)
        })
        .collect()
}

/// Scans every centroid for every sample; first maximum wins.
pub fn brute_assign(x: &Matrix, centroids: &Matrix) -> Vec<usize> {
    x.row_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (q, c) in centroids.row_iter().enumerate() {
                let v: f64 = row.iter().zip(c).map(|(a, b)| a * b).sum();
                if v > best_v {
                    best_v = v;
                    best = q;
                }
            }
            best
        })
        .collect()
}

/// Outcome of one oracle comparison: worst error seen and the bound.
pub struct Check {
    pub worst: f64,
    pub bound: f64,
    pub cases: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.bound
    }
}

pub fn gemm_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        // mostly small shapes, with a few crossing the packing block sizes
        let cap = if case % 10 == 0 { 300 } else { 70 };
        let m = 1 + rng.next_below(cap) as usize;
        let k = 1 + rng.next_below(cap) as usize;
        let n = 1 + rng.next_below(cap) as usize;
        let a = random_matrix(&mut rng, m, k);
        let b = random_matrix(&mut rng, k, n);
        let c = gemm(&a, &b, false).unwrap();
        let reference = naive_gemm(&a, &b);
        worst = worst.max(gemm_relative_error(&a, &b, &c, &reference));
        let bt = b.transpose();
        let c_t = gemm(&a, &bt, true).unwrap();
        worst = worst.max(gemm_relative_error(&a, &b, &c_t, &reference));
    }
    Check {
        worst,
        bound: 1e-12,
        cases,
    }
}

pub fn solve_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let a = random_matrix(&mut rng, 50, 50);
        let b = random_matrix(&mut rng, 50, 3);
        let x = solve_dense(&a, &b).unwrap();
        let r = naive_solve(&a, &b);
        worst = worst.max(x.max_abs_diff(&r) / r.max_abs());
    }
    Check {
        worst,
        bound: 1e-10,
        cases,
    }
}

pub fn dft_oracle(seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for len in [4usize, 17, 784] {
        for _ in 0..5 {
            let x: Vec<f64> = (0..len).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
            let plan = FftPlan::new(len).unwrap();
            let fast = plan.forward_real(&x).unwrap();
            let slow = naive_dft_magnitudes(&x);
            let scale: f64 = x.iter().map(|v| v.abs()).sum();
            for (f, s) in fast.iter().zip(&slow) {
                worst = worst.max((f.norm() - s).abs() / scale);
            }
            cases += 1;
        }
    }
    Check {
        worst,
        bound: 1e-9,
        cases,
    }
}

/// Counts assignment disagreements; the bound is zero.
pub fn assign_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = RngState::new(seed);
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let n = 1 + rng.next_below(300) as usize;
        let q = 1 + rng.next_below(40) as usize;
        let dim = 1 + rng.next_below(64) as usize;
        let x = random_unit_rows(&mut rng, n, dim);
        let c = random_unit_rows(&mut rng, q, dim);
        let got = assign(&x, &c).unwrap().index;
        mismatches += got
            .iter()
            .zip(brute_assign(&x, &c))
            .filter(|(a, b)| **a != *b)
            .count();
    }
    Check {
        worst: mismatches as f64,
        bound: 0.0,
        cases,
    }
}

/// Directory holding the four uncompressed MNIST IDX files: `$MNIST_DIR`,
/// else `data/mnist` at the workspace root.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let files = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ];
    files.iter().all(|f| dir.join(f).is_file()).then_some(dir)
}

/// Small `side x side` images of three stroke classes on a noisy
/// background: 0 horizontal bar, 1 vertical bar, 2 main diagonal.
pub fn synthetic_strokes(
    n: usize,
    side: usize,
    seed: u64,
) -> (kkc::mnist_io::ImageSet, kkc::mnist_io::LabelSet) {
    let mut rng = RngState::new(seed);
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 3;
        let at = 1 + rng.next_below(side as u64 - 2) as usize;
        for r in 0..side {
            for c in 0..side {
                let on = match class {
                    0 => r == at || r == at + 1,
                    1 => c == at || c == at + 1,
                    _ => r == c || r == c + 1,
                };
                let noise = rng.next_below(40) as u8;
                pixels.push(if on { 215 + noise } else { noise });
            }
        }
        labels.push(class);
    }
    (
        kkc::mnist_io::ImageSet::new(n, side, side, pixels).unwrap(),
        kkc::mnist_io::LabelSet::new(labels, Some(3)).unwrap(),
    )
}
