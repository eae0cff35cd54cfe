//! Reader for the IDX container used by MNIST-style datasets.
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for rank-3 `u8` images,
//! `0x00000801` for rank-1 `u8` labels), one big-endian `u32` per dimension,
//! then the raw bytes.

use std::path::Path;

use thiserror::Error;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("{file}: bad magic 0x{found:08x} at offset {offset}, expected 0x{expected:08x}")]
    BadMagic {
        file: String,
        offset: usize,
        expected: u32,
        found: u32,
    },
    #[error("{file}: truncated at offset {offset}, needed {needed} more bytes")]
    Truncated {
        file: String,
        offset: usize,
        needed: usize,
    },
    #[error("{images} images but {labels} labels (count field at offset {offset})")]
    CountMismatch {
        images: usize,
        labels: usize,
        offset: usize,
    },
}

struct Reader<'a> {
    file: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], IdxError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            IdxError::Truncated {
                file: self.file.to_string(),
                offset: self.bytes.len(),
                needed: self.pos + n - self.bytes.len(),
            }
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, IdxError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> std::result::Result<(), IdxError> {
        let offset = self.pos;
        let found = self.u32()?;
        if found != expected {
            return Err(IdxError::BadMagic {
                file: self.file.to_string(),
                offset,
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Parses an image file into `(count, rows·cols, pixels scaled to [0,1])`.
pub fn parse_images(file: &str, bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f64>), IdxError> {
    let mut r = Reader { file, bytes, pos: 0 };
    r.magic(IMAGES_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.take(count * rows * cols)?;
    Ok((count, rows * cols, pixels.iter().map(|&p| f64::from(p) / 255.0).collect()))
}

pub fn parse_labels(file: &str, bytes: &[u8]) -> std::result::Result<Vec<usize>, IdxError> {
    let mut r = Reader { file, bytes, pos: 0 };
    r.magic(LABELS_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(r.take(count)?.iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair. The class count is `max(label) + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let label_bytes = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (count, dim, pixels) = parse_images(&ip.display().to_string(), &image_bytes)?;
    let labels = parse_labels(&lp.display().to_string(), &label_bytes)?;
    if labels.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: labels.len(),
            offset: 4,
        }
        .into());
    }
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(DenseMatrix::new(count, dim, pixels)?, labels, num_classes)
}

/// Encodes images in the IDX layout (used for fixtures and exports).
pub fn encode_images(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scales_pixels() {
        let bytes = encode_images(2, 2, &[vec![0, 255, 255, 0], vec![255, 0, 0, 255]]);
        let (count, dim, px) = parse_images("img", &bytes).unwrap();
        assert_eq!((count, dim), (2, 4));
        assert_eq!(px, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn truncated_names_offset() {
        let mut bytes = encode_images(2, 2, &[vec![1, 2, 3, 4]]);
        bytes[7] = 2; // claim two images
        let err = parse_images("img", &bytes).unwrap_err();
        assert_eq!(
            err,
            IdxError::Truncated {
                file: "img".into(),
                offset: 20,
                needed: 4
            }
        );
        assert!(matches!(parse_labels("lbl", &[0, 0, 8]), Err(IdxError::Truncated { .. })));
    }

    #[test]
    fn wrong_magic() {
        let bytes = encode_labels(&[1, 2]);
        let err = parse_images("x", &bytes).unwrap_err();
        assert!(matches!(err, IdxError::BadMagic { offset: 0, found: LABELS_MAGIC, .. }));
    }
}
