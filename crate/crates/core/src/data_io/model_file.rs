//! Binary model file.
//!
//! ```text
//! "PICB"  version:u16  layer_count:u32
//! per layer: in_dim:u32 out_dim:u32 bn:i16 x out_dim
//!            weight rows, each packed into ceil(in_dim/64) u64 words
//! ```
//! Every integer is little-endian. Weight bit `i` of a row sits in word
//! `i / 64` at bit `i % 64`; padding bits are zero.

use std::path::Path;

use crate::bits::{words_for, BitRow};
use crate::bnn::{BinaryLayer, BinaryModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"PICB";
pub const MODEL_VERSION: u16 = 1;

/// Exact encoded size of a model with the given layer widths.
pub fn model_file_size(arch: &[usize]) -> usize {
    10 + arch
        .windows(2)
        .map(|w| 8 + 2 * w[1] + 8 * w[1] * words_for(w[0]))
        .sum::<usize>()
}

pub fn model_to_bytes(model: &BinaryModel) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(model_file_size(&model.arch()));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        for &c in layer.bn_constants() {
            let c16 = i16::try_from(c)
                .map_err(|_| Error::format(format!("constant {c} does not fit in 16 bits")))?;
            out.extend_from_slice(&c16.to_le_bytes());
        }
        for row in layer.weights() {
            for w in row.words() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format("model file is truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<BinaryModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::format("bad model magic"));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::format(format!(
            "unsupported model version {version}, expected {MODEL_VERSION}"
        )));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        // reject absurd headers before allocating
        if out_dim.saturating_mul(2 + 8 * words_for(in_dim)) > bytes.len() {
            return Err(Error::format("layer header exceeds file size"));
        }
        let bn = (0..out_dim).map(|_| r.i16().map(i32::from)).collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            let words = (0..words_for(in_dim)).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let row = BitRow::from_words(in_dim, words.clone())?;
            if row.words() != words.as_slice() {
                return Err(Error::format("nonzero padding bits in weight row"));
            }
            rows.push(row);
        }
        layers.push(BinaryLayer::new(in_dim, rows, bn).map_err(|e| Error::format(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after last layer",
            bytes.len() - r.pos
        )));
    }
    BinaryModel::new(layers).map_err(|e| Error::format(e.to_string()))
}

pub fn save_model(path: impl AsRef<Path>, model: &BinaryModel) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BinaryModel> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(arch: &[usize], seed: u64) -> BinaryModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .windows(2)
            .map(|w| {
                let rows = (0..w[1])
                    .map(|_| (0..w[0]).map(|_| rng.random::<bool>()).collect())
                    .collect();
                let bn = (0..w[1]).map(|_| rng.random_range(-64..=64)).collect();
                BinaryLayer::new(w[0], rows, bn).unwrap()
            })
            .collect();
        BinaryModel::new(layers).unwrap()
    }

    #[test]
    fn round_trip_and_exact_size() {
        let m = random_model(&[784, 128, 10], 1);
        let bytes = model_to_bytes(&m).unwrap();
        assert_eq!(bytes.len(), model_file_size(&[784, 128, 10]));
        // header 10, hidden 8 + 256 + 128*13*8, output 8 + 20 + 10*2*8
        assert_eq!(bytes.len(), 10 + 13576 + 188);
        assert_eq!(model_from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = random_model(&[70, 5, 3], 2);
        let bytes = model_to_bytes(&m).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(model_from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(model_from_bytes(&long), Err(Error::Format(_))));
        // a set padding bit in the first 70-wide row (second word, bit 63)
        let mut pad = bytes.clone();
        let first_row = 10 + 8 + 2 * 5;
        pad[first_row + 15] |= 0x80;
        assert!(matches!(model_from_bytes(&pad), Err(Error::Format(_))));
    }

    #[test]
    fn oversized_constant_is_an_error() {
        let l = BinaryLayer::new(2, vec![BitRow::zeros(2)], vec![40_000]).unwrap();
        let m = BinaryModel::new(vec![l]).unwrap();
        assert!(model_to_bytes(&m).is_err());
    }
}
