//! IDX image/label files, plain or gzip-compressed.
//!
//! Images: magic `0x00000803`, then big-endian `u32` count, rows, cols,
//! then one byte per pixel. Labels: magic `0x00000801`, count, one byte
//! per label.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Standard file names inside a dataset directory.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Features scaled into `[0, 1]` and one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class index of every row.
    pub fn classes(&self) -> Vec<usize> {
        self.labels
            .outer_iter()
            .map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Accepts `path` itself or `path.gz`.
pub fn resolve(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    if plain.exists() {
        return plain;
    }
    dir.join(format!("{name}.gz"))
}

struct Header<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl Header<'_> {
    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        self.bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| self.error(self.bytes.len(), "truncated header"))
    }
}

/// Reads images and labels, keeping at most `limit` leading rows.
pub fn load_idx_limited(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> Result<RawDataset> {
    let image_bytes = read_bytes(images_path)?;
    let images = Header {
        path: images_path,
        bytes: &image_bytes,
    };
    let magic = images.u32_at(0)?;
    if magic != IMAGE_MAGIC {
        return Err(images.error(0, format!("bad image magic {magic:#010x}")));
    }
    let count = images.u32_at(4)? as usize;
    let pixels = images.u32_at(8)? as usize * images.u32_at(12)? as usize;
    let needed = 16 + count * pixels;
    if image_bytes.len() < needed {
        return Err(images.error(
            image_bytes.len(),
            format!("truncated pixel data, need {needed} bytes"),
        ));
    }

    let label_bytes = read_bytes(labels_path)?;
    let labels = Header {
        path: labels_path,
        bytes: &label_bytes,
    };
    let magic = labels.u32_at(0)?;
    if magic != LABEL_MAGIC {
        return Err(labels.error(0, format!("bad label magic {magic:#010x}")));
    }
    let label_count = labels.u32_at(4)? as usize;
    if label_count != count {
        return Err(labels.error(4, format!("{label_count} labels for {count} images")));
    }
    if label_bytes.len() < 8 + count {
        return Err(labels.error(label_bytes.len(), "truncated label data"));
    }

    let rows = limit.map_or(count, |l| l.min(count));
    let raw_labels = &label_bytes[8..8 + rows];
    let classes = raw_labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let features = Array2::from_shape_fn((rows, pixels), |(i, k)| {
        image_bytes[16 + i * pixels + k] as f64 / 255.0
    });
    let mut one_hot = Array2::zeros((rows, classes));
    for (i, &l) in raw_labels.iter().enumerate() {
        one_hot[[i, l as usize]] = 1.0;
    }
    Ok(RawDataset {
        features,
        labels: one_hot,
    })
}

pub fn load_idx_dataset(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    load_idx_limited(images_path, labels_path, None)
}

/// Writes an uncompressed IDX pair; pixel values are bytes.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    let count = labels.len();
    assert_eq!(pixels.len(), count * rows * cols);
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    let mut lab = Vec::with_capacity(8 + count);
    for v in [LABEL_MAGIC, count as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}
