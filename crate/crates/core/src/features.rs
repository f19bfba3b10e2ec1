//! Feature regimes: centred unit-norm pixels, pixels augmented with the
//! square-rooted half spectrum, and centred unit-norm overlapping patches.
//!
//! Images are vectorized by concatenating their columns, for whole images
//! and patches alike, so a patch covering the full image is bit-identical
//! to the raw feature vector of that image.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mnist_io::ImageSet;
use crate::numeric::{half_spectrum_len, halfspectrum_sqrtmag_with, FftPlan, Matrix};

/// Which transform turns an image into classifier input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    Raw,
    RawFft,
    Patch { side: usize },
}

impl FeatureMode {
    /// Short name used in CSV reports and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMode::Raw => "raw",
            FeatureMode::RawFft => "rawfft",
            FeatureMode::Patch { .. } => "patch",
        }
    }

    /// Feature dimension for square `image_side x image_side` inputs.
    pub fn dimension(&self, image_side: usize) -> usize {
        let m = image_side * image_side;
        match self {
            FeatureMode::Raw => m,
            FeatureMode::RawFft => m + half_spectrum_len(m),
            FeatureMode::Patch { side } => side * side,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::Patch { side } => write!(f, "patch{side}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    /// Accepts `raw`, `rawfft`, `patch` (side 25) or `patch:<side>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "raw" => Ok(FeatureMode::Raw),
            "rawfft" | "raw_fft" | "raw-fft" => Ok(FeatureMode::RawFft),
            "patch" => Ok(FeatureMode::Patch { side: 25 }),
            _ => {
                let side = s
                    .strip_prefix("patch:")
                    .or_else(|| s.strip_prefix("patch"))
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown feature mode {s:?}")))?;
                Ok(FeatureMode::Patch { side })
            }
        }
    }
}

/// Rows of features plus a per-row flag; invalid rows are all zero.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    pub matrix: Matrix,
    pub valid: Vec<bool>,
}

impl FeatureMatrix {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Overlapping patches of one image.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patches: Matrix,
    pub valid_mask: Vec<bool>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Centres `x` in place and scales to unit norm. Returns false, leaving
/// the centred vector unscaled, when nothing is left after centring.
fn center_and_scale(x: &mut [f64]) -> bool {
    let scale = norm(x);
    let mu = mean(x);
    x.iter_mut().for_each(|v| *v -= mu);
    let n = norm(x);
    if n == 0.0 || n <= 1e-12 * scale {
        return false;
    }
    let inv = 1.0 / n;
    x.iter_mut().for_each(|v| *v *= inv);
    true
}

/// `(x - mean(x)) / |x - mean(x)|`.
pub fn normalize_raw(image: &[f64]) -> Result<Vec<f64>> {
    if image.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 pixels, got {}",
            image.len()
        )));
    }
    let mut x = image.to_vec();
    if center_and_scale(&mut x) {
        Ok(x)
    } else {
        Err(Error::Degenerate("image is constant".into()))
    }
}

/// Pixel vector concatenated with its square-rooted half spectrum, both
/// centred and unit-normalized, scaled by `1/sqrt(2)`.
pub fn fft_augment(image: &[f64]) -> Result<Vec<f64>> {
    let plan = FftPlan::new(image.len())?;
    fft_augment_with(&plan, image)
}

pub fn fft_augment_with(plan: &FftPlan, image: &[f64]) -> Result<Vec<f64>> {
    if image.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 pixels, got {}",
            image.len()
        )));
    }
    let mu = mean(image);
    let mut x: Vec<f64> = image.iter().map(|v| v - mu).collect();
    let x_norm = norm(&x);
    if x_norm == 0.0 || x_norm <= 1e-12 * norm(image) {
        return Err(Error::Degenerate("image is constant".into()));
    }

    let mut f = halfspectrum_sqrtmag_with(plan, &x)?;
    // Rounding noise of the transform: |X_m| below M * eps * sum|x_n| is zero.
    let noise_mag = x.len() as f64 * f64::EPSILON * x.iter().map(|v| v.abs()).sum::<f64>();
    let f_floor = (f.len() as f64 * noise_mag).sqrt();
    let f_mu = mean(&f);
    f.iter_mut().for_each(|v| *v -= f_mu);
    let f_norm = norm(&f);
    if f_norm <= f_floor {
        return Err(Error::Degenerate(
            "spectrum is flat over the retained half".into(),
        ));
    }

    let (sx, sf) = (
        std::f64::consts::FRAC_1_SQRT_2 / x_norm,
        std::f64::consts::FRAC_1_SQRT_2 / f_norm,
    );
    x.iter_mut().for_each(|v| *v *= sx);
    x.extend(f.iter().map(|v| v * sf));
    Ok(x)
}

/// Column-concatenated vector of a row-major `rows x cols` image.
pub fn vectorize_columns(image: &[u8], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(image.len(), rows * cols);
    let mut out = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            out.push(f64::from(image[r * cols + c]));
        }
    }
    out
}

/// All stride-1 `side x side` patches of a row-major `image_side x image_side`
/// image, origins in row-major order, each vectorized column by column.
pub fn extract_patches(image: &[f64], image_side: usize, side: usize) -> Result<PatchSet> {
    if image.len() != image_side * image_side {
        return Err(Error::dim(
            "extract_patches",
            format!(
                "{} pixels for a {image_side}x{image_side} image",
                image.len()
            ),
        ));
    }
    if side == 0 || side > image_side {
        return Err(Error::InvalidArgument(format!(
            "patch side {side} must be within 1..={image_side}"
        )));
    }
    let per_axis = image_side - side + 1;
    let dim = side * side;
    let mut data = Vec::with_capacity(per_axis * per_axis * dim);
    let mut valid_mask = Vec::with_capacity(per_axis * per_axis);
    let mut patch = vec![0.0; dim];
    for i in 0..per_axis {
        for j in 0..per_axis {
            for c in 0..side {
                for r in 0..side {
                    patch[r + c * side] = image[(i + r) * image_side + j + c];
                }
            }
            let ok = center_and_scale(&mut patch);
            if !ok {
                patch.fill(0.0);
            }
            valid_mask.push(ok);
            data.extend_from_slice(&patch);
        }
    }
    Ok(PatchSet {
        patches: Matrix::from_parts(per_axis * per_axis, dim, data),
        valid_mask,
    })
}

pub fn patch_count(image_side: usize, side: usize) -> usize {
    let per_axis = image_side + 1 - side;
    per_axis * per_axis
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

/// Whole-image features (`Raw` or `RawFft`) for every image. Degenerate
/// images produce zero rows flagged invalid.
pub fn featurize_images(images: &ImageSet, mode: FeatureMode) -> Result<FeatureMatrix> {
    let m = images.pixels_per_image();
    let side = square_side(images)?;
    let dim = match mode {
        FeatureMode::Raw | FeatureMode::RawFft => mode.dimension(side),
        FeatureMode::Patch { .. } => {
            return Err(Error::InvalidArgument(
                "patch features are per image; use extract_patches".into(),
            ))
        }
    };
    let plan = FftPlan::new(m.max(1))?;
    let mut data = vec![0.0; images.count * dim];
    let mut valid = vec![false; images.count];
    data.par_chunks_mut(dim.max(1))
        .zip(valid.par_iter_mut())
        .enumerate()
        .try_for_each(|(i, (row, ok))| -> Result<()> {
            let v = vectorize_columns(images.image(i), images.rows, images.cols);
            let feat = match mode {
                FeatureMode::Raw => normalize_raw(&v),
                _ => fft_augment_with(&plan, &v),
            };
            match feat {
                Ok(f) => {
                    row.copy_from_slice(&f);
                    *ok = true;
                }
                Err(Error::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
            Ok(())
        })?;
    Ok(FeatureMatrix {
        matrix: Matrix::from_parts(images.count, dim, data),
        valid,
    })
}

/// Patches of image `i` of the set.
pub fn image_patches(images: &ImageSet, i: usize, side: usize) -> Result<PatchSet> {
    let l = square_side(images)?;
    let img: Vec<f64> = images.image(i).iter().map(|&p| f64::from(p)).collect();
    extract_patches(&img, l, side)
}
