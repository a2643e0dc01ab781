//! Image datasets: IDX ingestion, RGB preprocessing, and the Gaussian shift
//! and augmentation operators.

mod idx;
mod preprocess;
mod shift;

pub use idx::{
    decode_images, decode_labels, encode_images, encode_labels, load_idx, load_idx_images,
    read_maybe_gzip, save_idx, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use preprocess::{preprocess_rgb32, RGB_LEN, RGB_SIDE};
pub use shift::{augment_gaussian, shift_apply, ShiftSpec, SHIFT_VARIANCE};

use std::path::PathBuf;
use thiserror::Error;

pub const IMAGE_SIDE: usize = 28;
/// Length of a flattened 28×28 grayscale sample.
pub const FEATURE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic number at offset {offset}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        offset: usize,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated payload at offset {offset}: header promises {expected} bytes, file has {actual}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("count mismatch: {images} holds {image_count} images but {labels} holds {label_count} labels")]
    CountMismatch {
        images: PathBuf,
        labels: PathBuf,
        image_count: usize,
        label_count: usize,
    },
    #[error("{path}: images are {rows}x{cols}, expected 28x28")]
    BadDimensions {
        path: PathBuf,
        rows: usize,
        cols: usize,
    },
    #[error("{path}: label {label} at offset {offset} is not a class index in 0..=9")]
    BadLabel {
        path: PathBuf,
        offset: usize,
        label: u8,
    },
    #[error("wrong input shape: expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Labelled 28×28 grayscale images flattened row-major into 784-vectors with
/// entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub name: String,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl ImageDataset {
    pub fn new(name: impl Into<String>, samples: Vec<Vec<f64>>, labels: Vec<u8>) -> Self {
        assert_eq!(samples.len(), labels.len(), "samples and labels differ in length");
        debug_assert!(samples.iter().all(|s| s.len() == FEATURE_LEN));
        Self {
            name: name.into(),
            samples,
            labels,
        }
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self::new(name, Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples `offset..offset + count`, clamped to the dataset size.
    pub fn slice(&self, offset: usize, count: usize) -> ImageDataset {
        let start = offset.min(self.len());
        let end = offset.saturating_add(count).min(self.len());
        ImageDataset {
            name: self.name.clone(),
            samples: self.samples[start..end].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> ImageDataset {
        ImageDataset {
            name: self.name.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}
