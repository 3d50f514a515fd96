//! Class-per-subfolder image datasets (the hand-gesture layout).

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GenericImageView};
use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

/// Rec. 601 luma of an 8-bit RGB pixel, in `[0, 1]`.
fn luminance(r: u8, g: u8, b: u8) -> f32 {
    (0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32) / 255.0
}

/// Center-crops to a square, resizes to `side x side` and converts to luma.
pub fn preprocess_image(img: &DynamicImage, side: u32) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    let cropped = img.crop_imm((w - s) / 2, (h - s) / 2, s, s);
    let resized = cropped.resize_exact(side, side, FilterType::Triangle).to_rgb8();
    resized.pixels().map(|p| luminance(p[0], p[1], p[2])).collect()
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() == want_dirs {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/<image>`; classes are indexed in sorted folder order
/// and files are read in sorted name order. Unreadable files are skipped with
/// a warning and counted in [`Dataset::skipped`].
pub fn load_image_folder(root: impl AsRef<Path>, side: u32) -> Result<Dataset> {
    let root = root.as_ref();
    if side == 0 {
        return Err(Error::Input("image side must be positive".into()));
    }
    let class_dirs = sorted_entries(root, true)?;
    if class_dirs.is_empty() {
        return Err(Error::format(format!("{}: no class folders", root.display())));
    }
    let dim = (side * side) as usize;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0;
    for (class, dir) in class_dirs.iter().enumerate() {
        let before = labels.len();
        for file in sorted_entries(dir, false)? {
            match image::open(&file) {
                Ok(img) => {
                    pixels.extend(preprocess_image(&img, side));
                    labels.push(class as u32);
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    skipped += 1;
                }
            }
        }
        if labels.len() == before {
            return Err(Error::format(format!("class folder {} has no readable images", dir.display())));
        }
    }
    let n = labels.len();
    let images = Array2::from_shape_vec((n, dim), pixels).expect("one row per image");
    let name = root
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| "folder".into());
    let mut d = Dataset::new(name, images, labels, class_dirs.len())?;
    d.skipped = skipped;
    Ok(d)
}
