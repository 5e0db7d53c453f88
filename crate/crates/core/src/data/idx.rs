use std::path::Path;

use super::{DomainTag, LabeledDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

fn check_magic(bytes: &[u8], want: u32, what: &str) -> Result<()> {
    let head = bytes
        .get(..4)
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))?;
    let got = u32::from_be_bytes([head[0], head[1], head[2], head[3]]);
    if got != want {
        return Err(Error::Format(format!(
            "{what}: bad magic {:02x} {:02x} {:02x} {:02x}, expected {want:08x}",
            head[0], head[1], head[2], head[3]
        )));
    }
    Ok(())
}

/// Parses an image file into `(N, H, W, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(bytes, IMAGES_MAGIC, "images")?;
    let n = read_u32(bytes, 4, "images")? as usize;
    let h = read_u32(bytes, 8, "images")? as usize;
    let w = read_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let want = n * h * w;
    if body.len() < want {
        return Err(Error::Format(format!(
            "images: expected {want} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok((n, h, w, &body[..want]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABELS_MAGIC, "labels")?;
    let n = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format(format!(
            "labels: expected {n} bytes, found {}",
            body.len()
        )));
    }
    Ok(&body[..n])
}

pub fn encode_idx_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * h * w, "pixel count");
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an IDX image/label pair; pixels are mapped from `[0, 255]` to
/// `[-1, 1]` and the class count is one past the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img_bytes = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbl_bytes = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (n, h, w, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    let data = pixels.iter().map(|&p| p as f32 / 127.5 - 1.0).collect();
    let images = Tensor::new(vec![n, 1, h, w], data)?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(name, DomainTag::Source, images, labels, classes)
}
