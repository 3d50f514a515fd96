//! Fixed-width bit vectors packed into `u64` words.
//!
//! Bit `i` lives in word `i / 64` at position `i % 64`. Bits past `len` in the
//! last word are always zero, so word-wise XOR + popcount gives the exact
//! Hamming distance without masking.

use std::fmt;

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitRow {
    len: usize,
    words: Vec<u64>,
}

/// A CAM row or query: bit `i` drives searchline pair `i`.
pub type RowPattern = BitRow;

impl BitRow {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut row = Self {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        row.clear_tail();
        row
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % WORD_BITS == 0 {
                words.push(0);
            }
            if b {
                words[len / WORD_BITS] |= 1 << (len % WORD_BITS);
            }
            len += 1;
        }
        Self { len, words }
    }

    /// Builds a row from packed words; bits past `len` are cleared.
    pub fn from_words(len: usize, mut words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::shape("packed words", words_for(len), words.len()));
        }
        words.shrink_to_fit();
        let mut row = Self { len, words };
        row.clear_tail();
        Ok(row)
    }

    /// Parses a string of `0`/`1` characters, most useful in tests.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Input(format!("bad bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bools)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Hamming distance to `other`. Panics on width mismatch.
    #[inline]
    pub fn hamming(&self, other: &BitRow) -> u32 {
        assert_eq!(self.len, other.len, "hamming distance between unequal widths");
        hamming_words(&self.words, &other.words)
    }

    /// Bitwise complement within `len`.
    pub fn not(&self) -> Self {
        let mut out = Self {
            len: self.len,
            words: self.words.iter().map(|w| !w).collect(),
        };
        out.clear_tail();
        out
    }

    pub fn concat(&self, other: &BitRow) -> Self {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    pub fn extend_from(&mut self, other: &BitRow) {
        let total = self.len + other.len;
        self.words.resize(words_for(total), 0);
        let shift = self.len % WORD_BITS;
        let base = self.len / WORD_BITS;
        if shift == 0 {
            self.words[base..base + other.words.len()].copy_from_slice(&other.words);
        } else {
            for (k, &w) in other.words.iter().enumerate() {
                self.words[base + k] |= w << shift;
                if base + k + 1 < self.words.len() {
                    self.words[base + k + 1] |= w >> (WORD_BITS - shift);
                }
            }
        }
        self.len = total;
    }

    /// Copies bits `[start, start + len)`; panics if out of range.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len, "slice past end of row");
        let mut out = Self::zeros(len);
        let shift = start % WORD_BITS;
        let base = start / WORD_BITS;
        for k in 0..out.words.len() {
            let lo = self.words.get(base + k).copied().unwrap_or(0) >> shift;
            let hi = if shift == 0 {
                0
            } else {
                self.words.get(base + k + 1).copied().unwrap_or(0) << (WORD_BITS - shift)
            };
            out.words[k] = lo | hi;
        }
        out.clear_tail();
        out
    }

    /// Returns a copy widened to `len` bits, new bits set to `fill`.
    pub fn padded(&self, len: usize, fill: bool) -> Self {
        assert!(len >= self.len, "cannot pad to a shorter width");
        let tail = if fill {
            BitRow::ones(len - self.len)
        } else {
            BitRow::zeros(len - self.len)
        };
        self.concat(&tail)
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

impl fmt::Debug for BitRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitRow[{}](", self.len)?;
        for b in self.iter().take(128) {
            f.write_str(if b { "1" } else { "0" })?;
        }
        if self.len > 128 {
            f.write_str("...")?;
        }
        f.write_str(")")
    }
}

impl FromIterator<bool> for BitRow {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self::from_bools(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_and_get() {
        let r = BitRow::parse("1011_0").unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r.iter().collect::<Vec<_>>(), [true, false, true, true, false]);
        assert!(BitRow::parse("10x").is_err());
    }

    #[test]
    fn ones_clears_tail() {
        let r = BitRow::ones(70);
        assert_eq!(r.count_ones(), 70);
        assert_eq!(r.words()[1], (1 << 6) - 1);
        assert_eq!(r.not().count_ones(), 0);
    }

    #[test]
    fn from_words_rejects_wrong_length_and_masks_tail() {
        assert!(BitRow::from_words(65, vec![0]).is_err());
        let r = BitRow::from_words(3, vec![u64::MAX]).unwrap();
        assert_eq!(r.count_ones(), 3);
    }

    fn bits(max: usize) -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(any::<bool>(), 0..max)
    }

    proptest! {
        #[test]
        fn concat_then_slice_recovers_parts(a in bits(200), b in bits(200)) {
            let ra = BitRow::from_bools(a.clone());
            let rb = BitRow::from_bools(b.clone());
            let joined = ra.concat(&rb);
            prop_assert_eq!(joined.len(), a.len() + b.len());
            prop_assert_eq!(joined.slice(0, a.len()), ra);
            prop_assert_eq!(joined.slice(a.len(), b.len()), rb);
        }

        #[test]
        fn hamming_matches_bitwise_count(pair in (1usize..300).prop_flat_map(|n| {
            (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
        })) {
            let (a, b) = pair;
            let naive = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
            let ra = BitRow::from_bools(a);
            let rb = BitRow::from_bools(b);
            prop_assert_eq!(ra.hamming(&rb), naive);
            prop_assert_eq!(rb.hamming(&ra), naive);
        }
    }
}
