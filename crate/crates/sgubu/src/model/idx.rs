//! Reader for the IDX image/label format used by the MNIST distribution,
//! plus a loader that filters two digit classes into a binary logistic
//! regression problem.
//!
//! Layout is big-endian: a u32 magic (0x0000_0803 for 3-dimensional u8
//! image tensors, 0x0000_0801 for 1-dimensional u8 label vectors), one u32
//! per dimension, then the raw bytes.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::LogisticRegressionPotential;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::Parameter("idx file truncated in header".into()))?;
    Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Reads an IDX image file into row-major pixel rows scaled to [0, 1].
pub fn read_idx_images(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = read_all(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parameter(format!(
            "expected image magic {IMAGE_MAGIC:#010x}, got {magic:#010x}"
        )));
    }
    let n = read_u32_be(&bytes, 4)? as usize;
    let rows = read_u32_be(&bytes, 8)? as usize;
    let cols = read_u32_be(&bytes, 12)? as usize;
    let pixels = rows * cols;
    let data = &bytes[16..];
    if data.len() != n * pixels {
        return Err(Error::Parameter(format!(
            "idx image payload has {} bytes, header promises {}",
            data.len(),
            n * pixels
        )));
    }
    Ok(data
        .chunks_exact(pixels)
        .map(|img| img.iter().map(|b| *b as f64 / 255.0).collect())
        .collect())
}

/// Reads an IDX label file into raw byte labels.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Parameter(format!(
            "expected label magic {LABEL_MAGIC:#010x}, got {magic:#010x}"
        )));
    }
    let n = read_u32_be(&bytes, 4)? as usize;
    let data = &bytes[8..];
    if data.len() != n {
        return Err(Error::Parameter(format!(
            "idx label payload has {} bytes, header promises {n}",
            data.len()
        )));
    }
    Ok(data.to_vec())
}

/// Loads an MNIST-format image/label pair, keeps only the two requested
/// digits, and builds a logistic regression potential where the second
/// digit maps to label 1. Pixels are the features; no bias column.
pub fn load_binary_classification(
    images_path: &Path,
    labels_path: &Path,
    digits: (u8, u8),
    prior_variance: f64,
) -> Result<LogisticRegressionPotential> {
    if digits.0 == digits.1 || digits.0 > 9 || digits.1 > 9 {
        return Err(Error::Parameter(format!(
            "digit filter needs two distinct digits in 0..=9, got {digits:?}"
        )));
    }
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "image count {} does not match label count {}",
            images.len(),
            labels.len()
        )));
    }
    let mut features = Vec::new();
    let mut binary = Vec::new();
    for (img, lab) in images.into_iter().zip(labels) {
        if lab == digits.0 {
            features.push(img);
            binary.push(0.0);
        } else if lab == digits.1 {
            features.push(img);
            binary.push(1.0);
        }
    }
    if features.is_empty() {
        return Err(Error::Parameter(format!(
            "no observations with digits {digits:?} in the data"
        )));
    }
    LogisticRegressionPotential::new(features, binary, prior_variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Potential;
    use std::io::Write;

    fn write_images(path: &Path, images: &[[u8; 4]]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        for img in images {
            bytes.extend_from_slice(img);
        }
        File::create(path).unwrap().write_all(&bytes).unwrap();
    }

    fn write_labels(path: &Path, labels: &[u8]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        File::create(path).unwrap().write_all(&bytes).unwrap();
    }

    #[test]
    fn loads_and_filters_synthetic_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx");
        let lab_path = dir.path().join("labels.idx");
        let images: Vec<[u8; 4]> = (0..10u8).map(|i| [255, 0, i, 128]).collect();
        let labels = [3u8, 5, 3, 5, 1, 7, 3, 5, 5, 0];
        write_images(&img_path, &images);
        write_labels(&lab_path, &labels);

        let pot = load_binary_classification(&img_path, &lab_path, (3, 5), 1.0).unwrap();
        // Seven of the ten labels are 3 or 5.
        assert_eq!(pot.n_observations(), 7);
        assert_eq!(pot.dim(), 4);
        // First kept row is index 0 (digit 3 -> class 0) with pixel 255 -> 1.0.
        assert_eq!(pot.labels()[0], 0.0);
        assert_eq!(pot.features()[0][0], 1.0);
        assert_eq!(pot.features()[0][1], 0.0);
        // Second kept row is index 1 (digit 5 -> class 1).
        assert_eq!(pot.labels()[1], 1.0);
        let class_one = pot.labels().iter().filter(|y| **y == 1.0).count();
        assert_eq!(class_one, 4);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("bad.idx");
        write_labels(&img_path, &[3, 5]);
        assert!(read_idx_images(&img_path).is_err());

        let trunc = dir.path().join("trunc.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        File::create(&trunc).unwrap().write_all(&bytes).unwrap();
        assert!(read_idx_images(&trunc).is_err());
    }

    #[test]
    fn rejects_equal_digits_and_missing_classes() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx");
        let lab_path = dir.path().join("labels.idx");
        write_images(&img_path, &[[0, 0, 0, 0]]);
        write_labels(&lab_path, &[9]);
        assert!(load_binary_classification(&img_path, &lab_path, (3, 3), 1.0).is_err());
        assert!(load_binary_classification(&img_path, &lab_path, (3, 5), 1.0).is_err());
    }
}
