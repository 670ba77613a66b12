//! IDX archives (big-endian header, optional gzip wrapping).

use std::fs;
use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use flate2::read::GzDecoder;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nn::InputShape;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw `u8` images from an IDX file.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Truncated(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], expected: u32, dims: usize, what: &str) -> Result<Vec<usize>> {
    let mut r = bytes;
    let magic = r.read_u32::<BigEndian>().map_err(|_| Error::Truncated(format!("{what}: missing header")))?;
    if magic != expected {
        return Err(Error::BadMagic { found: magic, expected });
    }
    (0..dims)
        .map(|_| {
            r.read_u32::<BigEndian>()
                .map(|v| v as usize)
                .map_err(|_| Error::Truncated(format!("{what}: missing dimensions")))
        })
        .collect()
}

fn body<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes
        .get(offset..offset + len)
        .ok_or_else(|| Error::Truncated(format!("{what}: expected {len} data bytes, found {}", bytes.len().saturating_sub(offset))))
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let bytes = read_maybe_gz(path.as_ref())?;
    let dims = header(&bytes, IMAGES_MAGIC, 3, "images")?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = body(&bytes, 16, count * rows * cols, "images")?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path.as_ref())?;
    let count = header(&bytes, LABELS_MAGIC, 1, "labels")?[0];
    Ok(body(&bytes, 8, count, "labels")?.to_vec())
}

/// Non-overlapping `factor × factor` mean pooling of single-channel images
/// stored as rows of `x`.
pub fn downsample_mean(x: &DenseMatrix, height: usize, width: usize, factor: usize) -> Result<DenseMatrix> {
    if factor == 0 || height % factor != 0 || width % factor != 0 || x.cols() != height * width {
        return Err(Error::InvalidArgument(format!(
            "cannot downsample {height}x{width} images by {factor}"
        )));
    }
    let (h, w) = (height / factor, width / factor);
    let norm = (factor * factor) as f64;
    let mut out = DenseMatrix::zeros(x.rows(), h * w);
    for r in 0..x.rows() {
        let (src, dst) = (x.row(r), out.row_mut(r));
        for y in 0..height {
            for xx in 0..width {
                dst[(y / factor) * w + xx / factor] += src[y * width + xx] / norm;
            }
        }
    }
    Ok(out)
}

/// Loads an image/label IDX pair, scales pixels to `[0, 1]` and optionally
/// mean-pools by `downsample` (1 keeps full resolution). Standardization
/// happens later, per task.
pub fn ingest_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, downsample: usize) -> Result<Dataset> {
    let img = read_idx_images(images)?;
    let lab = read_idx_labels(labels)?;
    if img.count != lab.len() {
        return Err(Error::CountMismatch { images: img.count, labels: lab.len() });
    }
    if img.count == 0 {
        return Err(Error::EmptyDataset);
    }
    let scaled = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let mut x = DenseMatrix::from_vec(img.count, img.rows * img.cols, scaled)?;
    let (mut h, mut w) = (img.rows, img.cols);
    if downsample > 1 {
        x = downsample_mean(&x, h, w, downsample)?;
        h /= downsample;
        w /= downsample;
    }
    let labels: Vec<usize> = lab.iter().map(|&y| y as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(x, labels, InputShape::image(1, h, w), n_classes)
}
