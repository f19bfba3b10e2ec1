//! Rough GEMM / LU throughput numbers for the current machine.
//!
//! `cargo run --release -p kkc --example throughput`

use std::time::Instant;

use kkc::numeric::{gemm, solve_dense, Matrix, RngState};

fn random(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.next_f64() - 0.5).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn main() {
    let mut rng = RngState::new(1);
    for &(m, k, n, tb) in &[
        (6000, 784, 100, true),
        (2000, 2000, 2000, false),
        (10000, 784, 1000, true),
    ] {
        let a = random(m, k, &mut rng);
        let b = if tb {
            random(n, k, &mut rng)
        } else {
            random(k, n, &mut rng)
        };
        let t = Instant::now();
        let c = gemm(&a, &b, tb).unwrap();
        let s = t.elapsed().as_secs_f64();
        println!(
            "gemm {m}x{k}x{n}: {s:.3}s, {:.1} GFLOP/s ({})",
            2.0 * (m * k * n) as f64 / s / 1e9,
            c.get(0, 0)
        );
    }
    for &n in &[1001, 3001] {
        let a = random(n, n, &mut rng);
        let b = random(n, 10, &mut rng);
        let t = Instant::now();
        let x = solve_dense(&a, &b).unwrap();
        let s = t.elapsed().as_secs_f64();
        let r = gemm(&a, &x, false).unwrap().sub(&b).unwrap();
        println!(
            "solve {n}: {s:.3}s, {:.1} GFLOP/s, rel residual {:.2e}",
            2.0 / 3.0 * (n as f64).powi(3) / s / 1e9,
            r.frobenius_norm() / b.frobenius_norm()
        );
    }
}
