//! Spherical K-means on unit-norm rows, written as matrix products.
//!
//! One iteration: similarities `R = X C^T` (dense GEMM), assignment of each
//! sample to its most similar centroid, new centroids `R_hat^T X` from the
//! one-hot assignment (sparse product), row normalization, then the
//! alignment deviation `delta = 1 - mean_q <c_new_q, c_old_q>` against the
//! previous centroids. Iteration stops once `delta <= tau`.

use crate::error::{Error, Result};
use crate::mnist_io::{one_hot_matrix, LabeledDataset};
use crate::numeric::{
    dot, gemm_into, sample_without_replacement, sparse_onehot_gemm, Matrix, RngState, Update, View,
};

/// Rows of `X` scored against the centroids per GEMM call.
const ASSIGN_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansParams {
    pub tau: f64,
    pub max_iter: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            tau: 1e-6,
            max_iter: 300,
        }
    }
}

/// Cluster index per sample; the compressed form of the one-hot matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub clusters: usize,
    pub index: Vec<usize>,
}

impl Assignment {
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.clusters];
        for &q in &self.index {
            counts[q] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug)]
pub struct CentroidSet {
    pub centroids: Matrix,
    pub class_id: usize,
    pub iterations: usize,
    pub final_delta: f64,
    /// Alignment deviation after each iteration.
    pub delta_trace: Vec<f64>,
    /// Total number of empty clusters re-seeded over the run.
    pub reseeded: usize,
}

impl CentroidSet {
    pub fn converged(&self, tau: f64) -> bool {
        self.final_delta <= tau
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (q, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = q;
        }
    }
    best
}

/// Nearest centroid by inner product; ties go to the lowest index.
pub fn assign(x: &Matrix, centroids: &Matrix) -> Result<Assignment> {
    if x.cols() != centroids.cols() {
        return Err(Error::dim(
            "kmeans::assign",
            format!(
                "samples have {} columns, centroids {}",
                x.cols(),
                centroids.cols()
            ),
        ));
    }
    let q = centroids.rows();
    if q == 0 {
        return Err(Error::InvalidArgument("no centroids".into()));
    }
    let m = x.cols();
    let mut index = Vec::with_capacity(x.rows());
    let mut sims = vec![0.0; ASSIGN_CHUNK.min(x.rows()) * q];
    for start in (0..x.rows()).step_by(ASSIGN_CHUNK) {
        let rows = ASSIGN_CHUNK.min(x.rows() - start);
        let block = View {
            data: &x.as_slice()[start * m..(start + rows) * m],
            ld: m,
            trans: false,
        };
        gemm_into(
            rows,
            q,
            m,
            block,
            View::of(centroids, true),
            &mut sims,
            q,
            Update::Overwrite,
        );
        index.extend(sims.chunks_exact(q).take(rows).map(argmax_lowest));
    }
    Ok(Assignment { clusters: q, index })
}

/// Normalized per-cluster sums. Clusters that end up with no direction
/// (no members, or members summing to zero) are re-seeded from a random
/// sample drawn from `rng` and reported in the returned list.
pub fn update_centroids(
    assignment: &Assignment,
    x: &Matrix,
    rng: &mut RngState,
) -> Result<(Matrix, Vec<usize>)> {
    let mut sums = sparse_onehot_gemm(&assignment.index, assignment.clusters, x)?;
    let mut empties = sums.normalize_rows();
    let counts = assignment.counts();
    for (q, &c) in counts.iter().enumerate() {
        if c == 0 && !empties.contains(&q) {
            empties.push(q);
        }
    }
    empties.sort_unstable();
    if !empties.is_empty() && x.rows() == 0 {
        return Err(Error::InvalidArgument(
            "cannot re-seed from an empty sample set".into(),
        ));
    }
    for &q in &empties {
        let pick = rng.next_below(x.rows() as u64) as usize;
        sums.row_mut(q).copy_from_slice(x.row(pick));
    }
    Ok((sums, empties))
}

/// `1 - (1/Q) sum_q <new_q, old_q>`, rows matched by index.
pub fn alignment_delta(new: &Matrix, old: &Matrix) -> Result<f64> {
    if new.shape() != old.shape() {
        return Err(Error::dim(
            "kmeans::alignment_delta",
            format!("{:?} vs {:?}", new.shape(), old.shape()),
        ));
    }
    if new.rows() == 0 {
        return Err(Error::InvalidArgument("empty centroid sets".into()));
    }
    let total: f64 = new
        .row_iter()
        .zip(old.row_iter())
        .map(|(a, b)| dot(a, b))
        .sum();
    Ok(1.0 - total / new.rows() as f64)
}

fn check_unit_rows(x: &Matrix) -> Result<()> {
    for (i, row) in x.row_iter().enumerate() {
        let n2 = dot(row, row);
        if (n2 - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has squared norm {n2}, expected unit norm"
            )));
        }
    }
    Ok(())
}

/// Clusters unit-norm rows of `x` into `q` centroids.
pub fn fit(x: &Matrix, q: usize, params: &KMeansParams, rng: &mut RngState) -> Result<CentroidSet> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("no samples to cluster".into()));
    }
    if q == 0 || q > n {
        return Err(Error::InvalidArgument(format!(
            "cannot extract {q} centroids from {n} samples"
        )));
    }
    if params.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    check_unit_rows(x)?;

    let init = sample_without_replacement(rng, n, q)?;
    let mut centroids = x.select_rows(&init);
    let mut trace = Vec::new();
    let mut reseeded = 0;
    loop {
        let a = assign(x, &centroids)?;
        let (next, empties) = update_centroids(&a, x, rng)?;
        reseeded += empties.len();
        let delta = alignment_delta(&next, &centroids)?;
        centroids = next;
        trace.push(delta);
        if delta <= params.tau || trace.len() >= params.max_iter {
            break;
        }
    }
    Ok(CentroidSet {
        centroids,
        class_id: 0,
        iterations: trace.len(),
        final_delta: *trace.last().expect("at least one iteration"),
        delta_trace: trace,
        reseeded,
    })
}

/// Per-class summary of a prototype extraction run.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassFit {
    pub class_id: usize,
    pub samples: usize,
    pub iterations: usize,
    pub final_delta: f64,
    pub reseeded: usize,
}

/// `K * Q` labelled prototypes, class blocks contiguous in class order.
#[derive(Clone, Debug)]
pub struct PrototypeTrainingSet {
    pub vectors: Matrix,
    pub onehot: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub per_class: Vec<ClassFit>,
}

impl PrototypeTrainingSet {
    pub fn total_iterations(&self) -> usize {
        self.per_class.iter().map(|c| c.iterations).sum()
    }

    /// Stacks per-class centroid sets (given in class order).
    pub fn from_centroid_sets(sets: Vec<(CentroidSet, usize)>, classes: usize) -> Result<Self> {
        let mut labels = Vec::new();
        let mut blocks = Vec::with_capacity(sets.len());
        let mut per_class = Vec::with_capacity(sets.len());
        for (set, samples) in sets {
            labels.extend(std::iter::repeat_n(set.class_id, set.centroids.rows()));
            per_class.push(ClassFit {
                class_id: set.class_id,
                samples,
                iterations: set.iterations,
                final_delta: set.final_delta,
                reseeded: set.reseeded,
            });
            blocks.push(set.centroids);
        }
        let vectors = Matrix::vstack(&blocks)?;
        let onehot = one_hot_matrix(&labels, classes)?;
        Ok(Self {
            vectors,
            onehot,
            labels,
            classes,
            per_class,
        })
    }
}

/// Runs [`fit`] once per class on the samples `class_samples(k)` yields,
/// each class drawing from its own stream `RngState::for_stream(seed, k)`.
/// Classes are processed one at a time so only one class matrix is alive.
pub fn build_prototypes_with<F>(
    classes: usize,
    q: usize,
    params: &KMeansParams,
    seed: u64,
    mut class_samples: F,
) -> Result<PrototypeTrainingSet>
where
    F: FnMut(usize) -> Result<Matrix>,
{
    if classes == 0 {
        return Err(Error::InvalidArgument("no classes".into()));
    }
    let mut sets = Vec::with_capacity(classes);
    for k in 0..classes {
        let xk = class_samples(k)?;
        if xk.rows() < q {
            return Err(Error::InvalidArgument(format!(
                "class {k} has {} samples, fewer than Q = {q}",
                xk.rows()
            )));
        }
        let mut rng = RngState::for_stream(seed, k as u64);
        let mut set = fit(&xk, q, params, &mut rng)?;
        set.class_id = k;
        sets.push((set, xk.rows()));
    }
    PrototypeTrainingSet::from_centroid_sets(sets, classes)
}

/// Per-class prototypes of a labelled dataset of unit-norm samples.
pub fn build_prototype_training_set(
    dataset: &LabeledDataset,
    q: usize,
    params: &KMeansParams,
    seed: u64,
) -> Result<PrototypeTrainingSet> {
    build_prototypes_with(dataset.classes(), q, params, seed, |k| {
        Ok(dataset.class_samples(k))
    })
}
