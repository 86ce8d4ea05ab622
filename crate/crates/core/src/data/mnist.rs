use std::path::Path;

use super::{Dataset, Normalization, Split};
use crate::error::{DatasetError, Error, Result};
use crate::tensor::Tensor;

pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn check_len(file: &str, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(DatasetError::Truncated {
            file: file.into(),
            expected,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(DatasetError::TrailingBytes {
            file: file.into(),
            expected,
            extra: bytes.len() - expected,
        }
        .into());
    }
    Ok(())
}

fn check_magic(file: &str, bytes: &[u8], expected: u32, header: usize) -> Result<()> {
    check_min(file, bytes, header)?;
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(DatasetError::BadMagic {
            file: file.into(),
            found,
            expected,
        }
        .into());
    }
    Ok(())
}

fn check_min(file: &str, bytes: &[u8], n: usize) -> Result<()> {
    if bytes.len() < n {
        return Err(DatasetError::Truncated {
            file: file.into(),
            expected: n,
            found: bytes.len(),
        }
        .into());
    }
    Ok(())
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(file: &str, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(file, bytes, IMAGE_MAGIC, 16)?;
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let body = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| DatasetError::Truncated {
            file: file.into(),
            expected: usize::MAX,
            found: bytes.len(),
        })?;
    check_len(file, bytes, body)?;
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(file: &str, bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(file, bytes, LABEL_MAGIC, 8)?;
    let n = be_u32(bytes, 4) as usize;
    check_len(file, bytes, 8 + n)?;
    Ok(bytes[8..].to_vec())
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(DatasetError::Missing(path).into());
    }
    std::fs::read(&path).map_err(|e| Error::io(&path, e))
}

fn split(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images, &read(dir, images)?)?;
    let raw_labels = parse_idx_labels(labels, &read(dir, labels)?)?;
    if raw_labels.len() != n {
        return Err(DatasetError::CountMismatch {
            images: n,
            labels: raw_labels.len(),
        }
        .into());
    }
    if let Some((index, &label)) = raw_labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(DatasetError::LabelRange {
            file: labels.into(),
            label: label as usize,
            index,
        }
        .into());
    }
    let data = pixels.iter().map(|&p| normalize_pixel(p)).collect();
    let images = Tensor::new(vec![n, 1, rows, cols], data)?;
    let mut ds = Dataset::new("mnist", split, images, raw_labels.into_iter().map(usize::from).collect(), 10)?;
    ds.normalization = Some(Normalization {
        mean: vec![MNIST_MEAN],
        std: vec![MNIST_STD],
    });
    Ok(ds)
}

/// `(p / 255 − mean) / std`, evaluated in 64-bit and rounded once.
pub(crate) fn normalize_pixel(p: u8) -> f32 {
    ((p as f64 / 255.0 - MNIST_MEAN) / MNIST_STD) as f32
}

/// Loads the four uncompressed IDX files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train)?;
    let test = split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Test)?;
    Ok((train, test))
}
