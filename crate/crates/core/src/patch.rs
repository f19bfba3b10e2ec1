//! Patch-level prototypes and image classification by patch majority vote.
//!
//! Training pools the valid patches of every image of a class, clusters
//! them into `Q` centroids per class and fits the kernel classifier on the
//! `K * Q` patch centroids. At test time every valid patch of an image
//! casts one vote; flat patches abstain.

use crate::error::{Error, Result};
use crate::features::{extract_patches, patch_count, vectorize_columns};
use crate::kmeans::{build_prototypes_with, KMeansParams, PrototypeTrainingSet};
use crate::lssvm::{argmax_lowest, train, KernelModel, KernelSpec, TrainStats};
use crate::mnist_io::{ImageSet, LabelSet};
use crate::numeric::Matrix;

/// Images whose patches are scored together.
const VOTE_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchModel {
    pub inner: KernelModel,
    pub patch_side: usize,
    pub image_side: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoteResult {
    pub votes: Vec<usize>,
    pub score_sums: Vec<f64>,
    pub winner: usize,
    pub valid_patches: usize,
}

#[derive(Clone, Debug)]
pub struct PatchTraining {
    pub model: PatchModel,
    pub prototypes: PrototypeTrainingSet,
    pub stats: TrainStats,
    /// Valid training patches pooled over all classes.
    pub pooled_patches: usize,
}

/// Settings shared by the patch trainer.
#[derive(Clone, Copy, Debug)]
pub struct PatchTrainConfig {
    pub patch_side: usize,
    pub q: usize,
    pub kmeans: KMeansParams,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    pub seed: u64,
}

fn image_side(images: &ImageSet) -> Result<usize> {
    if images.rows != images.cols {
        return Err(Error::InvalidArgument(format!(
            "images must be square, got {}x{}",
            images.rows, images.cols
        )));
    }
    Ok(images.rows)
}

/// Valid, normalized patches of the images at `indices`, stacked.
fn pooled_patches(images: &ImageSet, indices: &[usize], side: usize) -> Result<Matrix> {
    let l = image_side(images)?;
    let dim = side * side;
    let mut data = Vec::with_capacity(indices.len() * patch_count(l, side) * dim);
    let mut rows = 0;
    for &i in indices {
        let ps = extract_patches(&image_f64(images, i), l, side)?;
        for (p, ok) in ps.patches.row_iter().zip(&ps.valid_mask) {
            if *ok {
                data.extend_from_slice(p);
                rows += 1;
            }
        }
    }
    Matrix::from_vec(rows, dim, data)
}

fn image_f64(images: &ImageSet, i: usize) -> Vec<f64> {
    images.image(i).iter().map(|&p| f64::from(p)).collect()
}

/// Clusters per-class patch populations and fits the classifier on the
/// resulting patch centroids. Classes are processed one at a time.
pub fn train_patch_model(
    images: &ImageSet,
    labels: &LabelSet,
    config: &PatchTrainConfig,
) -> Result<PatchTraining> {
    let l = image_side(images)?;
    if images.count != labels.count() {
        return Err(Error::dim(
            "train_patch_model",
            format!("{} images, {} labels", images.count, labels.count()),
        ));
    }
    if config.patch_side == 0 || config.patch_side > l {
        return Err(Error::InvalidArgument(format!(
            "patch side {} must be within 1..={l}",
            config.patch_side
        )));
    }
    let mut pooled = 0;
    let prototypes =
        build_prototypes_with(labels.classes, config.q, &config.kmeans, config.seed, |k| {
            let xk = pooled_patches(images, &labels.indices_of(k), config.patch_side)?;
            if xk.rows() < config.q {
                return Err(Error::InvalidArgument(format!(
                    "class {k} has {} valid patches, fewer than Q = {}",
                    xk.rows(),
                    config.q
                )));
            }
            pooled += xk.rows();
            Ok(xk)
        })?;
    let (inner, stats) = train(&prototypes, &config.kernel, config.epsilon)?;
    Ok(PatchTraining {
        model: PatchModel {
            inner,
            patch_side: config.patch_side,
            image_side: l,
        },
        prototypes,
        stats,
        pooled_patches: pooled,
    })
}

/// Majority winner; ties go to the larger score sum, then the lower class.
pub fn vote_winner(votes: &[usize], score_sums: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..votes.len() {
        let better =
            votes[j] > votes[best] || (votes[j] == votes[best] && score_sums[j] > score_sums[best]);
        if better {
            best = j;
        }
    }
    best
}

/// Tallies per-patch decision scores (rows of `scores`) into a vote.
pub fn tally(scores: &Matrix) -> Result<VoteResult> {
    let k = scores.cols();
    if scores.rows() == 0 {
        return Err(Error::Degenerate("no valid patches to vote with".into()));
    }
    let mut votes = vec![0; k];
    let mut score_sums = vec![0.0; k];
    for row in scores.row_iter() {
        votes[argmax_lowest(row)] += 1;
        score_sums.iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    Ok(VoteResult {
        winner: vote_winner(&votes, &score_sums),
        valid_patches: scores.rows(),
        votes,
        score_sums,
    })
}

impl PatchModel {
    fn check_image(&self, pixels: usize) -> Result<()> {
        if pixels != self.image_side * self.image_side {
            return Err(Error::dim(
                "classify_by_vote",
                format!("{pixels} pixels for a {0}x{0} image", self.image_side),
            ));
        }
        Ok(())
    }

    /// Classifies one row-major image by patch majority vote.
    pub fn classify_by_vote(&self, image: &[f64]) -> Result<VoteResult> {
        self.check_image(image.len())?;
        let ps = extract_patches(image, self.image_side, self.patch_side)?;
        let valid: Vec<usize> = (0..ps.valid_mask.len())
            .filter(|&i| ps.valid_mask[i])
            .collect();
        let scores = self
            .inner
            .decision_scores_batch(&ps.patches.select_rows(&valid))?;
        tally(&scores)
    }

    /// Votes for every image of the set, scoring patches in batches.
    /// Images without any valid patch yield an error entry.
    pub fn classify_images(&self, images: &ImageSet) -> Result<Vec<Result<VoteResult>>> {
        self.check_image(images.pixels_per_image())?;
        if images.rows != self.image_side {
            return Err(Error::dim(
                "classify_images",
                "image side differs from model",
            ));
        }
        let mut out = Vec::with_capacity(images.count);
        for start in (0..images.count).step_by(VOTE_BATCH) {
            let end = (start + VOTE_BATCH).min(images.count);
            let mut blocks = Vec::with_capacity(end - start);
            let mut owners = Vec::new();
            for i in start..end {
                let ps = extract_patches(&image_f64(images, i), self.image_side, self.patch_side)?;
                let valid: Vec<usize> = (0..ps.valid_mask.len())
                    .filter(|&p| ps.valid_mask[p])
                    .collect();
                owners.push(valid.len());
                blocks.push(ps.patches.select_rows(&valid));
            }
            let scores = self
                .inner
                .decision_scores_batch(&Matrix::vstack(&blocks)?)?;
            let mut row = 0;
            for n in owners {
                let idx: Vec<usize> = (row..row + n).collect();
                out.push(tally(&scores.select_rows(&idx)));
                row += n;
            }
        }
        Ok(out)
    }
}

/// Column-vectorized single-patch view, used to compare `side == L` models
/// against whole-image models.
pub fn whole_image_vector(images: &ImageSet, i: usize) -> Vec<f64> {
    vectorize_columns(images.image(i), images.rows, images.cols)
}
