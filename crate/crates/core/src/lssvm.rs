//! Least-squares kernel classifier on a (reduced) labelled training set.
//!
//! With `S` training vectors and `K` one-hot classes the model solves the
//! bordered system
//!
//! ```text
//! [ 0   1^T         ] [ b ]   [ 0 ]
//! [ 1   Omega + eI  ] [ A ] = [ Y ]
//! ```
//!
//! for the bias row `b` (1 x K) and the weights `A` (S x K) in one pivoted
//! LU solve. A sample is scored by `f_j(x) = sum_q k(x, s_q) A_qj + b_j`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kmeans::PrototypeTrainingSet;
use crate::numeric::{dot, gemm, LuFactors, Matrix};

/// Test rows scored per kernel block.
const SCORE_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    /// `<x, y>^degree`
    Poly { degree: u32 },
    /// `exp(-gamma |x - y|^2)`
    Gaussian { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Poly { degree } if degree >= 1 => Ok(()),
            KernelSpec::Gaussian { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            other => Err(Error::InvalidArgument(format!("invalid kernel {other}"))),
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Poly { degree: 4 }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Poly { degree } => write!(f, "poly:{degree}"),
            KernelSpec::Gaussian { gamma } => write!(f, "gaussian:{gamma}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// `poly:<d>` or `gaussian[:<gamma>]` (gamma defaults to 1).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (kind, arg) = s
            .split_once(':')
            .map_or((s.as_str(), None), |(k, a)| (k, Some(a)));
        let bad = || Error::InvalidArgument(format!("bad kernel spec {s:?}"));
        let spec = match kind {
            "poly" => KernelSpec::Poly {
                degree: arg.unwrap_or("4").parse().map_err(|_| bad())?,
            },
            "gaussian" | "gauss" | "rbf" => KernelSpec::Gaussian {
                gamma: arg.unwrap_or("1").parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Kernel values between the rows of `a` (P x M) and `b` (S x M).
pub fn kernel_matrix(a: &Matrix, b: &Matrix, spec: &KernelSpec) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(
            "kernel_matrix",
            format!("{} vs {} columns", a.cols(), b.cols()),
        ));
    }
    let mut g = gemm(a, b, true)?;
    match *spec {
        KernelSpec::Poly { degree } => {
            let d = degree as i32;
            g.as_mut_slice().iter_mut().for_each(|v| *v = v.powi(d));
        }
        KernelSpec::Gaussian { gamma } => {
            let na: Vec<f64> = a.row_iter().map(|r| dot(r, r)).collect();
            let nb: Vec<f64> = b.row_iter().map(|r| dot(r, r)).collect();
            let s = b.rows();
            for (i, row) in g
                .as_mut_slice()
                .chunks_exact_mut(s.max(1))
                .enumerate()
                .take(a.rows())
            {
                for (j, v) in row.iter_mut().enumerate() {
                    let d2 = (na[i] + nb[j] - 2.0 * *v).max(0.0);
                    *v = (-gamma * d2).exp();
                }
            }
        }
    }
    Ok(g)
}

/// `Phi` and right-hand side of the bordered system.
#[derive(Clone, Debug)]
pub struct ExtendedSystem {
    pub phi: Matrix,
    pub rhs: Matrix,
}

/// Builds the bordered system for training vectors and one-hot targets.
pub fn assemble_system(
    vectors: &Matrix,
    onehot: &Matrix,
    spec: &KernelSpec,
    epsilon: f64,
) -> Result<ExtendedSystem> {
    let s = vectors.rows();
    if s == 0 {
        return Err(Error::InvalidArgument("no training vectors".into()));
    }
    if onehot.rows() != s {
        return Err(Error::dim(
            "assemble",
            format!("{s} vectors, {} label rows", onehot.rows()),
        ));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    spec.validate()?;
    let omega = kernel_matrix(vectors, vectors, spec)?;
    let n = s + 1;
    let mut phi = Matrix::zeros(n, n);
    for i in 0..s {
        phi.set(0, i + 1, 1.0);
        phi.set(i + 1, 0, 1.0);
        // upper triangle computed once and mirrored
        for j in i..s {
            let v = omega.get(i, j);
            phi.set(i + 1, j + 1, v);
            phi.set(j + 1, i + 1, v);
        }
        phi.set(i + 1, i + 1, omega.get(i, i) + epsilon);
    }
    let k = onehot.cols();
    let mut rhs = Matrix::zeros(n, k);
    for i in 0..s {
        rhs.row_mut(i + 1).copy_from_slice(onehot.row(i));
    }
    Ok(ExtendedSystem { phi, rhs })
}

pub fn assemble(
    prototypes: &PrototypeTrainingSet,
    spec: &KernelSpec,
    epsilon: f64,
) -> Result<ExtendedSystem> {
    assemble_system(&prototypes.vectors, &prototypes.onehot, spec, epsilon)
}

/// Trained classifier: support vectors, weights, biases.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelModel {
    pub support: Matrix,
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub kernel: KernelSpec,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    /// `|Phi W - Y|_F / |Y|_F`
    pub residual: f64,
    pub system_order: usize,
}

/// Fits a model on arbitrary vectors with one-hot targets.
pub fn train_on(
    vectors: &Matrix,
    onehot: &Matrix,
    spec: &KernelSpec,
    epsilon: f64,
) -> Result<(KernelModel, TrainStats)> {
    let system = assemble_system(vectors, onehot, spec, epsilon)?;
    let order = system.phi.rows();
    let rhs_norm = system.rhs.frobenius_norm();
    let lu = LuFactors::factor(system.phi)?;
    let w = lu.solve(&system.rhs)?;
    drop(lu);

    let k = onehot.cols();
    let bias = w.row(0).to_vec();
    let weights = Matrix::from_parts(vectors.rows(), k, w.as_slice()[k..].to_vec());
    let model = KernelModel {
        support: vectors.clone(),
        weights,
        bias,
        kernel: *spec,
        epsilon,
    };
    let residual = system_residual(&model, onehot)? / rhs_norm.max(f64::MIN_POSITIVE);
    Ok((
        model,
        TrainStats {
            residual,
            system_order: order,
        },
    ))
}

pub fn train(
    prototypes: &PrototypeTrainingSet,
    spec: &KernelSpec,
    epsilon: f64,
) -> Result<(KernelModel, TrainStats)> {
    train_on(&prototypes.vectors, &prototypes.onehot, spec, epsilon)
}

/// `|Phi W - Y|_F` recomputed from the support vectors in row blocks, so
/// the factored system need not be kept.
fn system_residual(model: &KernelModel, onehot: &Matrix) -> Result<f64> {
    let s = model.support.rows();
    let k = model.bias.len();
    // border row: sum of the weight rows
    let mut total = 0.0;
    for j in 0..k {
        let col: f64 = (0..s).map(|q| model.weights.get(q, j)).sum();
        total += col * col;
    }
    for start in (0..s).step_by(SCORE_CHUNK) {
        let end = (start + SCORE_CHUNK).min(s);
        let idx: Vec<usize> = (start..end).collect();
        let block = model.support.select_rows(&idx);
        let mut f = scores_block(model, &block)?;
        for (r, i) in (start..end).enumerate() {
            for j in 0..k {
                let v = f.get(r, j) + model.epsilon * model.weights.get(i, j) - onehot.get(i, j);
                f.set(r, j, v);
            }
        }
        total += f.as_slice().iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total.sqrt())
}

fn scores_block(model: &KernelModel, x: &Matrix) -> Result<Matrix> {
    let kx = kernel_matrix(x, &model.support, &model.kernel)?;
    let mut f = gemm(&kx, &model.weights, false)?;
    for row in f.as_mut_slice().chunks_exact_mut(model.bias.len().max(1)) {
        row.iter_mut().zip(&model.bias).for_each(|(v, b)| *v += b);
    }
    Ok(f)
}

impl KernelModel {
    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dimension(&self) -> usize {
        self.support.cols()
    }

    fn check_dim(&self, cols: usize) -> Result<()> {
        if cols != self.dimension() {
            return Err(Error::dim(
                "KernelModel",
                format!("model expects {} features, got {cols}", self.dimension()),
            ));
        }
        Ok(())
    }

    /// `f_j(x)` for every row of `x` (P x K).
    pub fn decision_scores_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_dim(x.cols())?;
        let k = self.classes();
        let mut out = Vec::with_capacity(x.rows() * k);
        for start in (0..x.rows()).step_by(SCORE_CHUNK) {
            let end = (start + SCORE_CHUNK).min(x.rows());
            let idx: Vec<usize> = (start..end).collect();
            out.extend_from_slice(scores_block(self, &x.select_rows(&idx))?.as_slice());
        }
        Ok(Matrix::from_parts(x.rows(), k, out))
    }

    pub fn decision_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.decision_scores_batch(&m)?.into_vec())
    }

    /// Literal softmax of term-wise exponentials,
    /// `g_j = sum_q exp(k(x,s_q) A_qj + b_j) / sum_i sum_q exp(k(x,s_q) A_qi + b_i)`,
    /// shifted by the largest exponent. Diagnostic only; classification
    /// uses [`decision_scores`](Self::decision_scores).
    pub fn softmax_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let kx = kernel_matrix(&xm, &self.support, &self.kernel)?;
        let k = self.classes();
        let s = self.support.rows();
        let exponent = |q: usize, j: usize| kx.get(0, q) * self.weights.get(q, j) + self.bias[j];
        let mut shift = f64::NEG_INFINITY;
        for q in 0..s {
            for j in 0..k {
                shift = shift.max(exponent(q, j));
            }
        }
        let mut g: Vec<f64> = (0..k)
            .map(|j| (0..s).map(|q| (exponent(q, j) - shift).exp()).sum())
            .collect();
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= total);
        Ok(g)
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax_lowest(&self.decision_scores(x)?))
    }

    pub fn classify_batch(&self, x: &Matrix) -> Result<Vec<usize>> {
        let f = self.decision_scores_batch(x)?;
        Ok(f.row_iter().map(argmax_lowest).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_kernel_values() {
        let h = 0.5f64;
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![h, (1.0 - h * h).sqrt()],
        ])
        .unwrap();
        let k = kernel_matrix(&a, &b, &KernelSpec::Poly { degree: 4 }).unwrap();
        assert_eq!(k.row(0), &[1.0, 0.0, 0.0625]);
        assert!(kernel_matrix(&a, &Matrix::zeros(1, 3), &KernelSpec::default()).is_err());
    }

    #[test]
    fn gaussian_kernel_values() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let k = kernel_matrix(&a, &b, &KernelSpec::Gaussian { gamma: 0.5 }).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert!((k.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_spec_parsing() {
        assert_eq!(
            "poly:4".parse::<KernelSpec>().unwrap(),
            KernelSpec::Poly { degree: 4 }
        );
        assert_eq!(
            "gaussian".parse::<KernelSpec>().unwrap(),
            KernelSpec::Gaussian { gamma: 1.0 }
        );
        assert!("poly:0".parse::<KernelSpec>().is_err());
        assert!("gaussian:-1".parse::<KernelSpec>().is_err());
        assert!("linear".parse::<KernelSpec>().is_err());
        assert_eq!(KernelSpec::Poly { degree: 4 }.to_string(), "poly:4");
    }

    #[test]
    fn orthogonal_pair_layout() {
        let v = Matrix::identity(2);
        let y = Matrix::identity(2);
        let sys = assemble_system(&v, &y, &KernelSpec::Poly { degree: 4 }, 0.1).unwrap();
        let want = [[0.0, 1.0, 1.0], [1.0, 1.1, 0.0], [1.0, 0.0, 1.1]];
        for (i, row) in want.iter().enumerate() {
            assert_eq!(sys.phi.row(i), row);
        }
        assert_eq!(sys.rhs.row(0), &[0.0, 0.0]);
        assert_eq!(sys.rhs.row(2), &[0.0, 1.0]);
        assert!(assemble_system(&v, &y, &KernelSpec::default(), 0.0).is_err());
    }

    #[test]
    fn zero_weights_return_bias() {
        let model = KernelModel {
            support: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            weights: Matrix::zeros(1, 3),
            bias: vec![1.0, 0.0, 0.0],
            kernel: KernelSpec::default(),
            epsilon: 1e-6,
        };
        assert_eq!(
            model.decision_scores(&[0.3, 0.4]).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        assert_eq!(model.classify(&[0.0, 1.0]).unwrap(), 0);
        assert!(model.decision_scores(&[1.0]).is_err());
    }

    #[test]
    fn single_support_vector_score() {
        let model = KernelModel {
            support: Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap(),
            weights: Matrix::from_rows(&[vec![2.0, -1.0]]).unwrap(),
            bias: vec![0.5, 0.25],
            kernel: KernelSpec::Poly { degree: 4 },
            epsilon: 1e-6,
        };
        let f = model.decision_scores(&[0.6, 0.8]).unwrap();
        // <x, x> = 0.36 + 0.64, one rounding at most
        assert!((f[0] - 2.5).abs() < 1e-14 && (f[1] + 0.75).abs() < 1e-14);
    }

    #[test]
    fn symmetric_tie_goes_to_class_zero() {
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn softmax_equal_exponents() {
        let model = KernelModel {
            support: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            weights: Matrix::from_rows(&[vec![0.3, 0.3], vec![0.3, 0.3]]).unwrap(),
            bias: vec![0.1, 0.1],
            kernel: KernelSpec::Poly { degree: 2 },
            epsilon: 1e-6,
        };
        let g = model.softmax_scores(&[0.6, 0.8]).unwrap();
        assert_eq!(g, vec![0.5, 0.5]);
    }
}
