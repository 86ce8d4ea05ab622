use std::path::{Path, PathBuf};

use super::{Dataset, Normalization, Split};
use crate::error::{DatasetError, Error, Result};
use crate::tensor::Tensor;

/// One label byte followed by 32×32 pixels for each of R, G and B.
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Splits a batch file into `(labels, raw pixel planes)`.
pub(crate) fn parse_records(file: &str, bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(DatasetError::Misaligned {
            file: file.into(),
            offset,
            record: CIFAR_RECORD,
        }
        .into());
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (index, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(DatasetError::LabelRange {
                file: file.into(),
                label: rec[0] as usize,
                index,
            }
            .into());
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

fn locate(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(TEST_FILE).exists() && nested.join(TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load(dir: &Path, files: &[&str], split: Split) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for name in files {
        let path = dir.join(name);
        if !path.exists() {
            return Err(DatasetError::Missing(path).into());
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (l, p) = parse_records(name, &bytes)?;
        labels.extend(l);
        pixels.extend(p);
    }
    let n = labels.len();
    let plane = 32 * 32;
    let data = pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let c = (i / plane) % 3;
            ((p as f64 / 255.0 - CIFAR_MEAN[c]) / CIFAR_STD[c]) as f32
        })
        .collect();
    let images = Tensor::new(vec![n, 3, 32, 32], data)?;
    let mut ds = Dataset::new("cifar10", split, images, labels.into_iter().map(usize::from).collect(), 10)?;
    ds.normalization = Some(Normalization {
        mean: CIFAR_MEAN.to_vec(),
        std: CIFAR_STD.to_vec(),
    });
    Ok(ds)
}

/// Loads the binary-version CIFAR-10 batches (50,000 train, 10,000 test).
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = locate(dir);
    Ok((load(&dir, &TRAIN_FILES, Split::Train)?, load(&dir, &[TEST_FILE], Split::Test)?))
}

/// Per-channel mean and standard deviation of raw `[0, 1]` pixels across
/// the given CIFAR batch files, straight from the bytes.
pub fn channel_stats(files: &[&[u8]]) -> Result<([f64; 3], [f64; 3])> {
    let mut sum = [0u64; 3];
    let mut sq = [0u64; 3];
    let mut count = 0usize;
    for (i, bytes) in files.iter().enumerate() {
        let (_, pixels) = parse_records(&format!("batch {i}"), bytes)?;
        for rec in pixels.chunks_exact(CIFAR_RECORD - 1) {
            for (c, plane) in rec.chunks_exact(1024).enumerate() {
                for &p in plane {
                    sum[c] += p as u64;
                    sq[c] += p as u64 * p as u64;
                }
            }
            count += 1024;
        }
    }
    if count == 0 {
        return Err(Error::Domain("no CIFAR records to summarize".into()));
    }
    // Integer sums keep the statistics exact up to the final divisions.
    let n = count as f64;
    let mean = sum.map(|s| s as f64 / n / 255.0);
    let std = [0, 1, 2].map(|c| {
        let var = (count as u128 * sq[c] as u128 - sum[c] as u128 * sum[c] as u128) as f64;
        var.sqrt() / n / 255.0
    });
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_stride_and_misalignment() {
        assert_eq!(CIFAR_RECORD, 3073);
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[CIFAR_RECORD] = 7;
        let (labels, px) = parse_records("b", &bytes).unwrap();
        assert_eq!(labels, vec![0, 7]);
        assert_eq!(px.len(), 2 * 3072);
        bytes.push(0);
        match parse_records("b", &bytes) {
            Err(Error::Dataset(DatasetError::Misaligned { offset, .. })) => assert_eq!(offset, 2 * 3073),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn channel_stats_of_constant_planes() {
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(255u8, 1024));
        rec.extend(std::iter::repeat_n(0u8, 1024));
        rec.extend(std::iter::repeat_n(51u8, 1024));
        let (mean, std) = channel_stats(&[&rec]).unwrap();
        assert_eq!(mean, [1.0, 0.0, 0.2]);
        assert!(std.iter().all(|&s| s < 1e-7));
    }
}
