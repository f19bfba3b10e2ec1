//! End-to-end training and prediction for every feature regime.

use crate::error::{Error, Result};
use crate::features::{featurize_images, FeatureMode};
use crate::kmeans::{build_prototype_training_set, ClassFit, KMeansParams};
use crate::lssvm::{train, KernelModel, KernelSpec};
use crate::mnist_io::{ImageSet, LabelSet, LabeledDataset};
use crate::patch::{train_patch_model, PatchModel, PatchTrainConfig};

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub mode: FeatureMode,
    pub q: usize,
    pub kmeans: KMeansParams,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: FeatureMode, q: usize, seed: u64) -> Self {
        Self {
            mode,
            q,
            kmeans: KMeansParams::default(),
            epsilon: 1e-6,
            kernel: KernelSpec::default(),
            seed,
        }
    }
}

/// A trained model together with the feature regime it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub mode: FeatureMode,
    pub image_side: usize,
    pub model: KernelModel,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub classifier: Classifier,
    pub kmeans_iters: usize,
    pub residual: f64,
    pub per_class: Vec<ClassFit>,
    /// Training images dropped because they have no usable features.
    pub skipped_images: usize,
}

fn square_side(images: &ImageSet) -> Result<usize> {
    if images.rows != images.cols {
        return Err(Error::InvalidArgument(format!(
            "images must be square, got {}x{}",
            images.rows, images.cols
        )));
    }
    Ok(images.rows)
}

pub fn fit(images: &ImageSet, labels: &LabelSet, config: &TrainConfig) -> Result<TrainOutcome> {
    let side = square_side(images)?;
    if images.count != labels.count() {
        return Err(Error::dim(
            "fit",
            format!("{} images, {} labels", images.count, labels.count()),
        ));
    }
    config.kernel.validate()?;
    match config.mode {
        FeatureMode::Patch { side: patch_side } => {
            let pc = PatchTrainConfig {
                patch_side,
                q: config.q,
                kmeans: config.kmeans,
                epsilon: config.epsilon,
                kernel: config.kernel,
                seed: config.seed,
            };
            let t = train_patch_model(images, labels, &pc)?;
            Ok(TrainOutcome {
                kmeans_iters: t.prototypes.total_iterations(),
                residual: t.stats.residual,
                per_class: t.prototypes.per_class,
                skipped_images: 0,
                classifier: Classifier {
                    mode: config.mode,
                    image_side: side,
                    model: t.model.inner,
                },
            })
        }
        mode => {
            let feats = featurize_images(images, mode)?;
            let keep: Vec<usize> = (0..images.count).filter(|&i| feats.valid[i]).collect();
            let kept_labels = LabelSet::new(
                keep.iter().map(|&i| labels.labels[i]).collect(),
                Some(labels.classes),
            )?;
            let dataset = LabeledDataset::new(feats.matrix.select_rows(&keep), kept_labels)?;
            let prototypes =
                build_prototype_training_set(&dataset, config.q, &config.kmeans, config.seed)?;
            let (model, stats) = train(&prototypes, &config.kernel, config.epsilon)?;
            Ok(TrainOutcome {
                kmeans_iters: prototypes.total_iterations(),
                residual: stats.residual,
                per_class: prototypes.per_class,
                skipped_images: images.count - keep.len(),
                classifier: Classifier {
                    mode,
                    image_side: side,
                    model,
                },
            })
        }
    }
}

impl Classifier {
    pub fn as_patch_model(&self) -> Option<PatchModel> {
        match self.mode {
            FeatureMode::Patch { side } => Some(PatchModel {
                inner: self.model.clone(),
                patch_side: side,
                image_side: self.image_side,
            }),
            _ => None,
        }
    }

    /// Predicted class per image; `None` marks an unclassifiable image
    /// (flat image, or no valid patch).
    pub fn predict(&self, images: &ImageSet) -> Result<Vec<Option<usize>>> {
        if images.rows != self.image_side || images.cols != self.image_side {
            return Err(Error::dim(
                "predict",
                format!(
                    "{}x{} images for a model trained on {2}x{2}",
                    images.rows, images.cols, self.image_side
                ),
            ));
        }
        if let Some(pm) = self.as_patch_model() {
            return pm
                .classify_images(images)?
                .into_iter()
                .map(|v| match v {
                    Ok(v) => Ok(Some(v.winner)),
                    Err(Error::Degenerate(_)) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect();
        }
        let feats = featurize_images(images, self.mode)?;
        let keep: Vec<usize> = (0..images.count).filter(|&i| feats.valid[i]).collect();
        let classes = self
            .model
            .classify_batch(&feats.matrix.select_rows(&keep))?;
        let mut out = vec![None; images.count];
        for (i, c) in keep.into_iter().zip(classes) {
            out[i] = Some(c);
        }
        Ok(out)
    }
}

/// Percentage of wrong predictions; unclassifiable samples count as wrong.
pub fn error_rate(predictions: &[Option<usize>], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::dim(
            "error_rate",
            format!("{} predictions, {} labels", predictions.len(), truth.len()),
        ));
    }
    let wrong = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p != Some(**t))
        .count();
    Ok(100.0 * wrong as f64 / truth.len() as f64)
}
