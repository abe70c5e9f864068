//! MNIST in the IDX format.
//!
//! Images: magic `0x00000803`, then big-endian u32 count, rows and cols,
//! followed by `count·rows·cols` pixel bytes. Labels: magic `0x00000801`,
//! then a u32 count and `count` label bytes.

use std::fs;
use std::path::Path;

use crate::data::{Batch, Dataset, Targets};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImagesHeader {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelsHeader {
    pub count: usize,
}

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_error(path, format!("truncated header (file has {} bytes)", bytes.len())))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn parse_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(ImagesHeader, &'a [u8])> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(idx_error(path, format!("bad images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let header = ImagesHeader {
        count: read_u32(bytes, 4, path)? as usize,
        rows: read_u32(bytes, 8, path)? as usize,
        cols: read_u32(bytes, 12, path)? as usize,
    };
    let want = header.count * header.rows * header.cols;
    let body = &bytes[16..];
    if body.len() < want {
        return Err(idx_error(
            path,
            format!("truncated pixel data: header promises {want} bytes, found {}", body.len()),
        ));
    }
    Ok((header, &body[..want]))
}

pub fn parse_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<(LabelsHeader, &'a [u8])> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(idx_error(path, format!("bad labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let header = LabelsHeader {
        count: read_u32(bytes, 4, path)? as usize,
    };
    let body = &bytes[8..];
    if body.len() < header.count {
        return Err(idx_error(
            path,
            format!("truncated label data: header promises {} bytes, found {}", header.count, body.len()),
        ));
    }
    Ok((header, &body[..header.count]))
}

pub fn read_headers(images_path: &Path, labels_path: &Path) -> Result<(ImagesHeader, LabelsHeader)> {
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    let (ih, _) = parse_images(&images, images_path)?;
    let (lh, _) = parse_labels(&labels, labels_path)?;
    Ok((ih, lh))
}

/// Loads the first `subset` records (all of them when `subset` is `None`).
/// Pixels are flattened row-major and scaled by 1/255; labels stay zero-based.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, subset: Option<usize>) -> Result<Dataset> {
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;
    let (ih, pixels) = parse_images(&image_bytes, images_path)?;
    let (lh, labels) = parse_labels(&label_bytes, labels_path)?;
    if ih.count != lh.count {
        return Err(idx_error(
            labels_path,
            format!("{} labels for {} images in {}", lh.count, ih.count, images_path.display()),
        ));
    }
    let take = subset.unwrap_or(ih.count);
    if take == 0 || take > ih.count {
        return Err(idx_error(images_path, format!("subset {take} outside 1..={}", ih.count)));
    }
    if let Some(bad) = labels[..take].iter().position(|&l| l as usize >= CLASSES) {
        return Err(idx_error(labels_path, format!("label {} at record {bad} is not a digit", labels[bad])));
    }
    let d = ih.rows * ih.cols;
    let inputs = pixels[..take * d].iter().map(|&p| p as f64 / 255.0).collect();
    let targets = Targets::Class {
        labels: labels[..take].iter().map(|&l| l as u32).collect(),
        classes: CLASSES,
    };
    Ok(Dataset {
        name: "mnist".into(),
        samples: Batch::new(d, inputs, targets)?,
    })
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
