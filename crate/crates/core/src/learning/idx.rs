//! Reader for the big-endian IDX files MNIST ships in.

use std::path::Path;

use super::data::Dataset;
use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Decodes an image file (dims `n, rows, cols`) and a label file (dim `n`).
/// Pixels are scaled by `1/255`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = Cursor::new(images, "image");
    let magic = img.u32()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("image file magic is {magic}, expected {IMAGE_MAGIC}")));
    }
    let (n, rows, cols) = (img.u32()? as usize, img.u32()? as usize, img.u32()? as usize);
    let width = rows * cols;
    let pixels = img.take(n * width)?;

    let mut lab = Cursor::new(labels, "label");
    let magic = lab.u32()?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("label file magic is {magic}, expected {LABEL_MAGIC}")));
    }
    let m = lab.u32()? as usize;
    if m != n {
        return Err(Error::Consistency(format!("{n} images but {m} labels")));
    }
    let ys: Vec<usize> = lab.take(m)?.iter().map(|&b| b as usize).collect();

    let features = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let num_classes = ys.iter().copied().max().unwrap_or(0).max(1) + 1;
    Dataset::new(features, width, ys, num_classes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("{} file truncated at byte {}", self.what, self.bytes.len()))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(magic: u32) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [magic, 2, 2, 2] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 4]);
        v
    }

    fn label_bytes(n: u32) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        v.extend_from_slice(&n.to_be_bytes());
        v.extend((0..n).map(|i| i as u8));
        v
    }

    #[test]
    fn two_tiny_images() {
        let d = parse_idx(&image_bytes(IMAGE_MAGIC), &label_bytes(2)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.width(), 4);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.labels(), &[0, 1]);
    }

    #[test]
    fn wrong_magic_names_value() {
        let err = parse_idx(&image_bytes(2050), &label_bytes(2)).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("2050")), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let err = parse_idx(&image_bytes(IMAGE_MAGIC), &label_bytes(3)).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }

    #[test]
    fn truncated() {
        let mut img = image_bytes(IMAGE_MAGIC);
        img.pop();
        assert!(matches!(parse_idx(&img, &label_bytes(2)), Err(Error::Format(_))));
    }
}
