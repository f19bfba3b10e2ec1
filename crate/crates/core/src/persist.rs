//! Binary model container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "KKCM"  u32 version
//! u8 mode (0 raw, 1 rawfft, 2 patch)  u32 patch_side  u32 image_side
//! u32 feature convention
//! u8 kernel (0 poly, 1 gaussian)  u32 degree  f64 gamma
//! f64 epsilon  u64 S  u64 M  u64 K
//! f64 support[S*M]  f64 weights[S*K]  f64 bias[K]     (row-major)
//! u32 crc32 of everything above
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::lssvm::{KernelModel, KernelSpec};
use crate::numeric::Matrix;
use crate::pipeline::Classifier;

pub const MAGIC: &[u8; 4] = b"KKCM";
pub const VERSION: u32 = 1;
/// Column-major image vectorization, centered, unit norm.
pub const FEATURE_CONVENTION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 4 + 1 + 4 + 8 + 8 + 8 * 3;

pub fn encode(c: &Classifier) -> Vec<u8> {
    let m = &c.model;
    let (s, dim, k) = (m.support.rows(), m.support.cols(), m.bias.len());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (s * dim + s * k + k) + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (tag, patch_side) = match c.mode {
        FeatureMode::Raw => (0u8, 0),
        FeatureMode::RawFft => (1, 0),
        FeatureMode::Patch { side } => (2, side as u32),
    };
    out.push(tag);
    out.extend_from_slice(&patch_side.to_le_bytes());
    out.extend_from_slice(&(c.image_side as u32).to_le_bytes());
    out.extend_from_slice(&FEATURE_CONVENTION.to_le_bytes());
    let (kind, degree, gamma) = match m.kernel {
        KernelSpec::Poly { degree } => (0u8, degree, 0.0),
        KernelSpec::Gaussian { gamma } => (1, 0, gamma),
    };
    out.push(kind);
    out.extend_from_slice(&degree.to_le_bytes());
    out.extend_from_slice(&gamma.to_le_bytes());
    out.extend_from_slice(&m.epsilon.to_le_bytes());
    for n in [s, dim, k] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in m
        .support
        .as_slice()
        .iter()
        .chain(m.weights.as_slice())
        .chain(&m.bias)
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Length {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Model(format!("dimension {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Model("array too large".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Classifier> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Model("bad magic, not a model file".into()));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Length {
            expected: HEADER_LEN + 4,
            found: bytes.len(),
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Model(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let tag = r.u8()?;
    let patch_side = r.u32()? as usize;
    let image_side = r.u32()? as usize;
    let convention = r.u32()?;
    if convention != FEATURE_CONVENTION {
        return Err(Error::Model(format!(
            "unknown feature convention {convention}"
        )));
    }
    let kind = r.u8()?;
    let degree = r.u32()?;
    let gamma = r.f64()?;
    let epsilon = r.f64()?;
    let (s, dim, k) = (r.u64()?, r.u64()?, r.u64()?);

    let payload = s
        .checked_mul(dim)
        .and_then(|a| s.checked_mul(k).and_then(|b| a.checked_add(b)))
        .and_then(|n| n.checked_add(k))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Model("dimensions overflow".into()))?;
    let expected = HEADER_LEN + payload + 4;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mode = match tag {
        0 => FeatureMode::Raw,
        1 => FeatureMode::RawFft,
        2 => FeatureMode::Patch { side: patch_side },
        t => return Err(Error::Model(format!("unknown feature mode tag {t}"))),
    };
    let kernel = match kind {
        0 => KernelSpec::Poly { degree },
        1 => KernelSpec::Gaussian { gamma },
        t => return Err(Error::Model(format!("unknown kernel tag {t}"))),
    };
    kernel.validate()?;
    if mode.dimension(image_side) != dim {
        return Err(Error::Model(format!(
            "feature dimension {dim} does not fit mode {mode} on {image_side}x{image_side} images"
        )));
    }
    let support = Matrix::from_vec(s, dim, r.f64s(s * dim)?)?;
    let weights = Matrix::from_vec(s, k, r.f64s(s * k)?)?;
    let bias = r.f64s(k)?;
    if let Some(index) = bias.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(Classifier {
        mode,
        image_side,
        model: KernelModel {
            support,
            weights,
            bias,
            kernel,
            epsilon,
        },
    })
}

pub fn save_model(c: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(c)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Classifier> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
