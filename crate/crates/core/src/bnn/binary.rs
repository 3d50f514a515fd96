use serde::{Deserialize, Serialize};

use crate::bits::BitRow;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A vector over {-1, +1}, stored as bits (`+1` is bit 1, `-1` is bit 0).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BinaryVector {
    bits: BitRow,
}

impl BinaryVector {
    pub fn from_bits(bits: BitRow) -> Self {
        Self { bits }
    }

    /// Entries must be `1` or `-1`.
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        signs
            .iter()
            .map(|&s| match s {
                1 => Ok(true),
                -1 => Ok(false),
                other => Err(Error::Input(format!("{other} is not a binary activation"))),
            })
            .collect::<Result<BitRow>>()
            .map(Self::from_bits)
    }

    pub fn bits(&self) -> &BitRow {
        &self.bits
    }

    pub fn into_bits(self) -> BitRow {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> i8 {
        if self.bits.get(i) {
            1
        } else {
            -1
        }
    }

    pub fn to_signs(&self) -> Vec<i8> {
        self.bits.iter().map(|b| if b { 1 } else { -1 }).collect()
    }
}

/// Element-wise sign with `sign(0) = +1`.
pub fn binarize<T: Real>(x: &[T]) -> Result<BinaryVector> {
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            if v.is_nan() {
                Err(Error::Numeric(format!("NaN at input position {i}")))
            } else {
                Ok(*v >= T::zero())
            }
        })
        .collect::<Result<BitRow>>()
        .map(BinaryVector::from_bits)
}

/// Fully connected binary layer: `out_dim` weight rows plus one integer
/// batch-norm constant per neuron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryLayer {
    in_dim: usize,
    weights: Vec<BitRow>,
    bn: Vec<i32>,
}

impl BinaryLayer {
    pub fn new(in_dim: usize, weights: Vec<BitRow>, bn: Vec<i32>) -> Result<Self> {
        if weights.len() != bn.len() {
            return Err(Error::shape("batch-norm constants", weights.len(), bn.len()));
        }
        if let Some(w) = weights.iter().find(|w| w.len() != in_dim) {
            return Err(Error::shape("weight row width", in_dim, w.len()));
        }
        Ok(Self {
            in_dim,
            weights,
            bn,
        })
    }

    /// Builds from a row-major sign matrix (`out_dim` rows of `in_dim`).
    pub fn from_signs(rows: &[Vec<i8>], bn: Vec<i32>) -> Result<Self> {
        let in_dim = rows.first().map_or(0, Vec::len);
        let weights = rows
            .iter()
            .map(|r| BinaryVector::from_signs(r).map(BinaryVector::into_bits))
            .collect::<Result<Vec<_>>>()?;
        Self::new(in_dim, weights, bn)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[BitRow] {
        &self.weights
    }

    pub fn weight_row(&self, j: usize) -> &BitRow {
        &self.weights[j]
    }

    pub fn bn_constants(&self) -> &[i32] {
        &self.bn
    }

    pub fn max_abs_bn(&self) -> u32 {
        self.bn.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    fn check_input(&self, x: &BinaryVector) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::shape("layer input", self.in_dim, x.len()));
        }
        Ok(())
    }

    /// `s_j = sum_i XNOR(W_ji, x_i) + C_j` with XNOR in {-1, +1}.
    pub fn pre_activation(&self, x: &BinaryVector) -> Result<Vec<i32>> {
        self.check_input(x)?;
        let n = self.in_dim as i32;
        Ok(self
            .weights
            .iter()
            .zip(&self.bn)
            .map(|(w, c)| n - 2 * w.hamming(x.bits()) as i32 + c)
            .collect())
    }

    /// `+1` where `s_j > 0`, otherwise `-1` (a zero sum reads as `-1`).
    pub fn forward(&self, x: &BinaryVector) -> Result<BinaryVector> {
        Ok(BinaryVector::from_bits(
            self.pre_activation(x)?.into_iter().map(|s| s > 0).collect(),
        ))
    }
}

pub fn layer_forward(layer: &BinaryLayer, x: &BinaryVector) -> Result<BinaryVector> {
    layer.forward(x)
}

/// A chain of binary layers; the last one produces the class logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryModel {
    layers: Vec<BinaryLayer>,
}

impl BinaryModel {
    pub fn new(layers: Vec<BinaryLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("a model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape("layer chain", pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[BinaryLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, BinaryLayer::out_dim)
    }

    /// Layer widths, input first, e.g. `[784, 128, 10]`.
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(BinaryLayer::out_dim))
            .collect()
    }

    pub fn weight_bits(&self) -> usize {
        self.layers.iter().map(|l| l.in_dim() * l.out_dim()).sum()
    }

    /// Binary activations entering the output layer.
    pub fn hidden_forward(&self, x: &BinaryVector) -> Result<BinaryVector> {
        let (_, hidden) = self.layers.split_last().expect("non-empty model");
        let mut a = x.clone();
        for layer in hidden {
            a = layer.forward(&a)?;
        }
        if hidden.is_empty() {
            self.layers[0].check_input(&a)?;
        }
        Ok(a)
    }

    /// Runs every layer and returns the raw ±1 output vector.
    pub fn forward(&self, x: &BinaryVector) -> Result<BinaryVector> {
        let h = self.hidden_forward(x)?;
        self.layers.last().expect("non-empty model").forward(&h)
    }

    /// Output-layer sums before the sign.
    pub fn scores(&self, x: &BinaryVector) -> Result<Vec<i32>> {
        let h = self.hidden_forward(x)?;
        self.layers.last().expect("non-empty model").pre_activation(&h)
    }

    /// Software baseline: argmax of the output sums, lowest index on ties.
    pub fn predict(&self, x: &BinaryVector) -> Result<usize> {
        Ok(argmax_first(&self.scores(x)?))
    }
}

pub fn model_forward(model: &BinaryModel, x: &BinaryVector) -> Result<BinaryVector> {
    model.forward(x)
}

/// Index of the first maximum; 0 for an empty slice.
pub fn argmax_first<V: PartialOrd + Copy>(v: &[V]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Summary of a model's shape that can be serialized next to reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub arch: Vec<usize>,
    pub weight_bits: usize,
    pub max_abs_bn: Vec<u32>,
}

impl From<&BinaryModel> for ModelShape {
    fn from(m: &BinaryModel) -> Self {
        Self {
            arch: m.arch(),
            weight_bits: m.weight_bits(),
            max_abs_bn: m.layers.iter().map(BinaryLayer::max_abs_bn).collect(),
        }
    }
}
