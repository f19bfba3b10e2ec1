//! IDX container parsing (the MNIST distribution format) and label encoding.
//!
//! ```text
//! images: [0x00000803 BE][N BE][rows BE][cols BE][N*rows*cols u8]
//! labels: [0x00000801 BE][N BE][N u8]
//! ```
//!
//! Files starting with the gzip signature are inflated first. Parsing is
//! strict: a wrong magic, a short payload or trailing bytes are errors.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

/// Raw image intensities, one image per row in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
}

impl ImageSet {
    pub fn new(count: usize, rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        let expected = count * rows * cols;
        if pixels.len() != expected {
            return Err(Error::Length {
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self {
            count,
            rows,
            cols,
            pixels,
        })
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    /// Image `i` as `rows * cols` bytes, row-major.
    pub fn image(&self, i: usize) -> &[u8] {
        let m = self.pixels_per_image();
        &self.pixels[i * m..(i + 1) * m]
    }

    pub fn raw(&self) -> &[u8] {
        &self.pixels
    }

    /// Intensities as an `N x (rows*cols)` matrix, unscaled.
    pub fn pixel_matrix(&self) -> Matrix {
        Matrix::from_parts(
            self.count,
            self.pixels_per_image(),
            self.pixels.iter().map(|&p| f64::from(p)).collect(),
        )
    }

    /// The first `n` images (all of them if `n >= count`).
    pub fn truncated(&self, n: usize) -> ImageSet {
        let n = n.min(self.count);
        ImageSet {
            count: n,
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.pixels_per_image()].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabelSet {
    /// Validates labels against `classes`, or infers `max + 1` when `None`.
    pub fn new(labels: Vec<usize>, classes: Option<usize>) -> Result<Self> {
        let inferred = labels.iter().max().map_or(0, |m| m + 1);
        let classes = classes.unwrap_or(inferred);
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self { labels, classes })
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn truncated(&self, n: usize) -> LabelSet {
        LabelSet {
            labels: self.labels[..n.min(self.labels.len())].to_vec(),
            classes: self.classes,
        }
    }

    /// Indices of the samples of class `k`, ascending.
    pub fn indices_of(&self, k: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == k).then_some(i))
            .collect()
    }
}

/// Feature matrix with integer labels and their one-hot encoding.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub samples: Matrix,
    pub labels: LabelSet,
    pub onehot: Matrix,
}

impl LabeledDataset {
    pub fn new(samples: Matrix, labels: LabelSet) -> Result<Self> {
        if samples.rows() != labels.count() {
            return Err(Error::dim(
                "LabeledDataset::new",
                format!("{} samples, {} labels", samples.rows(), labels.count()),
            ));
        }
        let onehot = one_hot_matrix(&labels.labels, labels.classes)?;
        Ok(Self {
            samples,
            labels,
            onehot,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.labels.classes
    }

    /// Rows of class `k`, in dataset order.
    pub fn class_samples(&self, k: usize) -> Matrix {
        self.samples.select_rows(&self.labels.indices_of(k))
    }
}

/// Binary indicator vector with a single 1 at `label`.
pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    Ok(v)
}

pub fn one_hot_matrix(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        m.set(i, l, 1.0);
    }
    Ok(m)
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_payload(bytes: &[u8], header: usize, payload: usize) -> Result<()> {
    let expected = header + payload;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image magic {magic}, expected {IMAGE_MAGIC}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    check_payload(bytes, 16, payload)?;
    ImageSet::new(count, rows, cols, bytes[16..].to_vec())
}

pub fn parse_idx_labels(bytes: &[u8], classes: Option<usize>) -> Result<LabelSet> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label magic {magic}, expected {LABEL_MAGIC}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, count)?;
    LabelSet::new(
        bytes[8..].iter().map(|&b| usize::from(b)).collect(),
        classes,
    )
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    parse_idx_images(&read_maybe_gzip(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>, classes: Option<usize>) -> Result<LabelSet> {
    parse_idx_labels(&read_maybe_gzip(path.as_ref())?, classes)
}

/// Serializes images in IDX layout (used for fixtures and subsets).
pub fn encode_idx_images(images: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGE_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &LabelSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.count());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.count() as u32).to_be_bytes());
    out.extend(labels.labels.iter().map(|&l| l as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn image_bytes(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_images_verbatim() {
        let payload: Vec<u8> = (0..12).map(|v| v * 20).collect();
        let set = parse_idx_images(&image_bytes(3, 2, 2, &payload)).unwrap();
        assert_eq!((set.count, set.rows, set.cols), (3, 2, 2));
        assert_eq!(set.image(1), &[80, 100, 120, 140]);
        assert_eq!(set.pixel_matrix().row(2), &[160.0, 180.0, 200.0, 220.0]);
    }

    #[test]
    fn label_magic_in_image_loader() {
        let mut b = image_bytes(1, 1, 1, &[0]);
        b[..4].copy_from_slice(&LABEL_MAGIC.to_be_bytes());
        assert!(matches!(parse_idx_images(&b), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_and_oversized_payloads() {
        assert!(matches!(
            parse_idx_images(&image_bytes(2, 2, 2, &[0; 7])),
            Err(Error::Length {
                expected: 24,
                found: 23
            })
        ));
        assert!(matches!(
            parse_idx_images(&image_bytes(1, 2, 2, &[0; 5])),
            Err(Error::Length { .. })
        ));
        assert!(matches!(
            parse_idx_images(&[0, 0, 8]),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn labels_infer_and_enforce_class_count() {
        let mut b = LABEL_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[0, 9, 4]);
        let set = parse_idx_labels(&b, None).unwrap();
        assert_eq!(set.classes, 10);
        assert_eq!(set.labels, vec![0, 9, 4]);

        let mut bad = LABEL_MAGIC.to_be_bytes().to_vec();
        bad.extend_from_slice(&1u32.to_be_bytes());
        bad.push(11);
        assert!(matches!(
            parse_idx_labels(&bad, Some(10)),
            Err(Error::LabelOutOfRange {
                label: 11,
                classes: 10
            })
        ));
    }

    #[test]
    fn empty_label_file_is_valid() {
        let mut b = LABEL_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&0u32.to_be_bytes());
        let set = parse_idx_labels(&b, None).unwrap();
        assert_eq!(set.count(), 0);
        assert_eq!(set.classes, 0);
    }

    #[test]
    fn one_hot_cases() {
        assert_eq!(
            one_hot(2, 10).unwrap(),
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(one_hot(0, 1).unwrap(), vec![1.0]);
        let last = one_hot(9, 10).unwrap();
        assert_eq!(last[9], 1.0);
        assert_eq!(last.iter().sum::<f64>(), 1.0);
        assert!(one_hot(10, 10).is_err());
    }

    #[test]
    fn gzip_is_transparent() {
        let raw = image_bytes(1, 2, 2, &[1, 2, 3, 4]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        fs::write(&path, enc.finish().unwrap()).unwrap();
        let set = load_idx_images(&path).unwrap();
        assert_eq!(set.image(0), &[1, 2, 3, 4]);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_idx_labels("/nonexistent/labels", None),
            Err(Error::Io { .. })
        ));
    }
}
