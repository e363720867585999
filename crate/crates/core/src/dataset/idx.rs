//! IDX reader/writer. Headers are big-endian u32: magic, count, then (for
//! images) rows and cols. Files ending in `.gz` are transparently
//! (de)compressed.

use super::{Dataset, DatasetError};
use crate::model::Matrix;
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("feature {value} at index {index} is outside [0, 1] and cannot be stored as a byte")]
    OutOfRange { index: usize, value: f64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn open(path: &Path) -> Result<Box<dyn Read>, IdxError> {
    let file = File::open(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_u32(r: &mut dyn Read, path: &str) -> Result<u32, IdxError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|source| IdxError::Io {
        path: path.to_string(),
        source,
    })?;
    Ok(u32::from_be_bytes(b))
}

fn read_bytes(r: &mut dyn Read, len: usize, path: &str) -> Result<Vec<u8>, IdxError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|source| IdxError::Io {
        path: path.to_string(),
        source,
    })?;
    Ok(buf)
}

/// Builds a dataset from raw IDX streams. Pixel bytes are divided by 255.
pub fn read_idx(
    images: &mut dyn Read,
    labels: &mut dyn Read,
    images_name: &str,
    labels_name: &str,
) -> Result<Dataset, IdxError> {
    let magic = read_u32(images, images_name)?;
    if magic != IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            path: images_name.into(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n_images = read_u32(images, images_name)? as usize;
    let rows = read_u32(images, images_name)? as usize;
    let cols = read_u32(images, images_name)? as usize;

    let magic = read_u32(labels, labels_name)?;
    if magic != LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            path: labels_name.into(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_u32(labels, labels_name)? as usize;
    if n_images != n_labels {
        return Err(IdxError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let dim = rows * cols;
    let pixels = read_bytes(images, n_images * dim, images_name)?;
    let raw_labels = read_bytes(labels, n_labels, labels_name)?;
    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Ok(Dataset::new(
        "idx",
        Matrix::new(n_images, dim, features),
        labels,
        num_classes,
    )?)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, IdxError> {
    let mut images = open(images_path)?;
    let mut labels = open(labels_path)?;
    let mut ds = read_idx(
        &mut *images,
        &mut *labels,
        &images_path.display().to_string(),
        &labels_path.display().to_string(),
    )?;
    ds.name = images_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(ds)
}

fn create(path: &Path) -> Result<Box<dyn Write>, IdxError> {
    let file = File::create(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let w = BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzEncoder::new(w, Compression::default())))
    } else {
        Ok(Box::new(w))
    }
}

/// Writes features (which must lie in `[0, 1]`) quantized to bytes. Square
/// feature counts are written as `side x side` images, others as `1 x d`.
pub fn write_idx(data: &Dataset, images_path: &Path, labels_path: &Path) -> Result<(), IdxError> {
    if let Some((index, &value)) = data
        .features
        .data
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(IdxError::OutOfRange { index, value });
    }
    let d = data.dim();
    let side = (d as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == d {
        (side, side)
    } else {
        (1, d)
    };
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| IdxError::Io { path, source }
    };

    let mut img = create(images_path)?;
    let mut header = Vec::with_capacity(16);
    for v in [IMAGES_MAGIC, data.len() as u32, rows as u32, cols as u32] {
        header.extend_from_slice(&v.to_be_bytes());
    }
    let bytes: Vec<u8> = data
        .features
        .data
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    img.write_all(&header).map_err(io_err(images_path))?;
    img.write_all(&bytes).map_err(io_err(images_path))?;
    img.flush().map_err(io_err(images_path))?;
    drop(img);

    let mut lab = create(labels_path)?;
    let mut header = Vec::with_capacity(8);
    for v in [LABELS_MAGIC, data.len() as u32] {
        header.extend_from_slice(&v.to_be_bytes());
    }
    let labels: Vec<u8> = data.labels.iter().map(|&l| l as u8).collect();
    lab.write_all(&header).map_err(io_err(labels_path))?;
    lab.write_all(&labels).map_err(io_err(labels_path))?;
    lab.flush().map_err(io_err(labels_path))?;
    Ok(())
}
