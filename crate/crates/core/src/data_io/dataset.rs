use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bits::BitRow;
use crate::bnn::BinaryVector;
use crate::error::{Error, Result};

/// Default input binarization threshold on `[0, 1]` pixels.
pub const DEFAULT_BINARIZE_THRESHOLD: f32 = 0.5;

/// Labeled images with pixels scaled to `[0, 1]`, one image per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Array2<f32>,
    pub labels: Vec<u32>,
    pub classes: usize,
    /// Files skipped while loading (unreadable images).
    pub skipped: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        images: Array2<f32>,
        labels: Vec<u32>,
        classes: usize,
    ) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::shape("dataset labels", images.nrows(), labels.len()));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::format(format!("label {l} outside 0..{classes}")));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            classes,
            skipped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            skipped: self.skipped,
        }
    }

    /// Seeded shuffle followed by a `train_fraction` / remainder split.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
        let (a, b) = idx.split_at(cut);
        (self.select(a), self.select(b))
    }
}

/// Dataset after thresholding: every image is a ±1 vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryDataset {
    pub name: String,
    pub inputs: Vec<BinaryVector>,
    pub labels: Vec<u32>,
    pub classes: usize,
}

impl BinaryDataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<BinaryVector>,
        labels: Vec<u32>,
        classes: usize,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape("dataset labels", inputs.len(), labels.len()));
        }
        if let Some(w) = inputs.first().map(BinaryVector::len) {
            if let Some(bad) = inputs.iter().find(|x| x.len() != w) {
                return Err(Error::shape("input width", w, bad.len()));
            }
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Input(format!("label {l} outside 0..{classes}")));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, BinaryVector::len)
    }

    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            name: self.name.clone(),
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Back to `[0, 1]` pixels: `+1` becomes 1.0, `-1` becomes 0.0.
    pub fn to_dataset(&self) -> Dataset {
        let d = self.dim();
        let mut images = Array2::zeros((self.len(), d));
        for (mut row, x) in images.rows_mut().into_iter().zip(&self.inputs) {
            for (p, b) in row.iter_mut().zip(x.bits().iter()) {
                *p = if b { 1.0 } else { 0.0 };
            }
        }
        Dataset {
            name: self.name.clone(),
            images,
            labels: self.labels.clone(),
            classes: self.classes,
            skipped: 0,
        }
    }
}

/// `pixel >= threshold` becomes `+1`, everything else `-1`.
pub fn binarize_dataset(d: &Dataset, threshold: f32) -> Result<BinaryDataset> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Input(format!(
            "binarization threshold {threshold} outside [0, 1]"
        )));
    }
    let inputs = d
        .images
        .rows()
        .into_iter()
        .map(|row| BinaryVector::from_bits(row.iter().map(|&p| p >= threshold).collect::<BitRow>()))
        .collect();
    BinaryDataset::new(d.name.clone(), inputs, d.labels.clone(), d.classes)
}
