//! The IDX container: big-endian `u32` header fields followed by unsigned
//! byte payloads. Gzip-compressed files are detected by their magic bytes.

use super::{DataError, ImageDataset, IMAGE_SIDE, NUM_CLASSES};
use flate2::read::GzDecoder;
use std::fs;
use std::io::Read;
use std::path::Path;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected: offset + 4,
            actual: bytes.len(),
        }),
    }
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            offset: 0,
            expected,
            found,
        });
    }
    Ok(())
}

/// Decodes an IDX image file into raw pixel rows. `path` only labels errors.
pub fn decode_images(bytes: &[u8], path: &Path) -> Result<Vec<Vec<u8>>, DataError> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(DataError::BadDimensions {
            path: path.to_path_buf(),
            rows,
            cols,
        });
    }
    let stride = rows * cols;
    let header = 16;
    let expected = header + count * stride;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[header..expected]
        .chunks_exact(stride)
        .map(<[u8]>::to_vec)
        .collect())
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, DataError> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let header = 8;
    let expected = header + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    let labels = bytes[header..expected].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(DataError::BadLabel {
            path: path.to_path_buf(),
            offset: header + pos,
            label: labels[pos],
        });
    }
    Ok(labels)
}

pub fn encode_images(images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * IMAGE_SIDE * IMAGE_SIDE);
    for field in [
        IMAGES_MAGIC,
        images.len() as u32,
        IMAGE_SIDE as u32,
        IMAGE_SIDE as u32,
    ] {
        out.extend_from_slice(&field.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), IMAGE_SIDE * IMAGE_SIDE);
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn to_unit(pixels: Vec<u8>) -> Vec<f64> {
    pixels.into_iter().map(|p| f64::from(p) / 255.0).collect()
}

/// Loads an image file without labels, rescaling pixels to `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    let bytes = read_maybe_gzip(path)?;
    Ok(decode_images(&bytes, path)?
        .into_iter()
        .map(to_unit)
        .collect())
}

/// Loads a labelled dataset from an IDX image file and an IDX label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset, DataError> {
    let samples = load_idx_images(images_path)?;
    let labels = decode_labels(&read_maybe_gzip(labels_path)?, labels_path)?;
    if samples.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: images_path.to_path_buf(),
            labels: labels_path.to_path_buf(),
            image_count: samples.len(),
            label_count: labels.len(),
        });
    }
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ImageDataset::new(name, samples, labels))
}

/// Writes a dataset as uncompressed IDX, quantizing pixels to `round(255 v)`.
pub fn save_idx(
    dataset: &ImageDataset,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    let pixels: Vec<Vec<u8>> = dataset
        .samples
        .iter()
        .map(|s| {
            s.iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect()
        })
        .collect();
    fs::write(images_path, encode_images(&pixels)).map_err(io_err(images_path))?;
    fs::write(labels_path, encode_labels(&dataset.labels)).map_err(io_err(labels_path))?;
    Ok(())
}
