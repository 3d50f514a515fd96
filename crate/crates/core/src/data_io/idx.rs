//! IDX reader (the MNIST distribution format). Header fields are big-endian;
//! gzip-compressed files are detected by their magic bytes.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;
/// Environment variable overriding where the MNIST files are looked up.
pub const MNIST_DIR_ENV: &str = "PICBNN_MNIST_DIR";

/// Reads a file, inflating it if it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(format!("{}: corrupt gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(format!("{what}: truncated header")))
}

/// Parses an IDX image payload into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!("images: bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let r = be_u32(bytes, 8, "images")? as usize;
    let c = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let want = n * r * c;
    if body.len() != want {
        return Err(Error::format(format!(
            "images: payload is {} bytes, header implies {want}",
            body.len()
        )));
    }
    Ok((n, r, c, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!("labels: bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(format!(
            "labels: payload is {} bytes, header implies {n}",
            body.len()
        )));
    }
    Ok(body)
}

/// Loads an image/label IDX pair with 10 classes.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_classes(images_path, labels_path, MNIST_CLASSES)
}

pub fn load_idx_classes(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    classes: usize,
) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let img_bytes = read_maybe_gz(images_path)?;
    let lab_bytes = read_maybe_gz(labels_path.as_ref())?;
    let (n, r, c, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lab_bytes)?;
    if labels.len() != n {
        return Err(Error::format(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::format(format!("label {l} outside 0..{classes}")));
    }
    let images = Array2::from_shape_vec((n, r * c), pixels.iter().map(|&p| p as f32 / 255.0).collect())
        .expect("shape checked against header");
    let name = images_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, images, labels.iter().map(|&l| l as u32).collect(), classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    fn prefix(self) -> &'static str {
        match self {
            MnistSplit::Train => "train",
            MnistSplit::Test => "t10k",
        }
    }
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{stem}[.gz] not found in {}", dir.display()),
    )))
}

/// Loads the standard MNIST file pair for `split` from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>, split: MnistSplit) -> Result<Dataset> {
    let dir = dir.as_ref();
    let p = split.prefix();
    let mut d = load_idx(
        find_file(dir, &format!("{p}-images-idx3-ubyte"))?,
        find_file(dir, &format!("{p}-labels-idx1-ubyte"))?,
    )?;
    d.name = format!("mnist-{p}");
    Ok(d)
}
