//! Programmed CAM contents and placement tables.
//!
//! ```text
//! "PICC"  version:u16  rows:u32 columns:u32 banks:u32  layer_count:u32
//! per layer: page_count:u32
//!   per page, per bank: valid:u8 x rows, then rows x ceil(columns/64) u64
//! ```
//! Little-endian throughout; cell bit `i` of a row sits in word `i / 64` at
//! bit `i % 64`.

use std::path::Path;

use crate::bits::words_for;
use crate::cam::{CamArray, CamBank, CamGeometry};
use crate::error::{Error, Result};
use crate::mapper::MappedModel;

pub const CAM_DUMP_MAGIC: &[u8; 4] = b"PICC";
pub const CAM_DUMP_VERSION: u16 = 1;

/// Pages of every mapped layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CamDump {
    pub geometry: CamGeometry,
    pub layers: Vec<Vec<CamArray>>,
}

impl CamDump {
    pub fn from_mapped(mapped: &MappedModel) -> Self {
        Self {
            geometry: mapped.geometry,
            layers: mapped.layers.iter().map(|l| l.pages.clone()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.geometry;
        let mut out = Vec::new();
        out.extend_from_slice(CAM_DUMP_MAGIC);
        out.extend_from_slice(&CAM_DUMP_VERSION.to_le_bytes());
        for v in [g.rows(), g.columns(), g.banks(), self.layers.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for pages in &self.layers {
            out.extend_from_slice(&(pages.len() as u32).to_le_bytes());
            for bank in pages.iter().flat_map(|p| p.banks()) {
                out.extend(bank.valid_flags().iter().map(|&v| v as u8));
                for w in bank.packed_cells() {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != CAM_DUMP_MAGIC {
            return Err(Error::format("bad CAM dump magic"));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != CAM_DUMP_VERSION {
            return Err(Error::format(format!("unsupported CAM dump version {version}")));
        }
        let head = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        let geometry = CamGeometry::new(head[0], head[1], head[2])
            .map_err(|e| Error::format(format!("bad CAM dump geometry: {e}")))?;
        let words = words_for(geometry.columns());
        let bank_bytes = geometry.rows() * (1 + 8 * words);
        let mut layers = Vec::with_capacity(head[3].min(1024));
        for _ in 0..head[3] {
            let pages = r.u32()?;
            if pages.saturating_mul(geometry.banks() * bank_bytes) > bytes.len() {
                return Err(Error::format("page count exceeds file size"));
            }
            let mut arrays = Vec::with_capacity(pages);
            for _ in 0..pages {
                let mut banks = Vec::with_capacity(geometry.banks());
                for _ in 0..geometry.banks() {
                    let valid = r.take(geometry.rows())?
                        .iter()
                        .map(|&b| match b {
                            0 => Ok(false),
                            1 => Ok(true),
                            _ => Err(Error::format(format!("bad valid flag {b}"))),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let cells = r.take(8 * geometry.rows() * words)?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    banks.push(CamBank::from_parts(geometry.rows(), geometry.columns(), cells, valid)?);
                }
                arrays.push(CamArray::from_banks(geometry, banks)?);
            }
            layers.push(arrays);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(format!("{} trailing bytes in CAM dump", bytes.len() - r.pos)));
        }
        Ok(Self { geometry, layers })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format("CAM dump is truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn save_cam_dump(path: impl AsRef<Path>, mapped: &MappedModel) -> Result<()> {
    std::fs::write(path, CamDump::from_mapped(mapped).to_bytes())?;
    Ok(())
}

pub fn load_cam_dump(path: impl AsRef<Path>) -> Result<CamDump> {
    CamDump::from_bytes(&std::fs::read(path)?)
}

/// Writes the placement table as pretty JSON.
pub fn save_placement_table(path: impl AsRef<Path>, mapped: &MappedModel) -> Result<()> {
    let json = serde_json::to_string_pretty(&mapped.placement_table())
        .map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitRow;
    use crate::bnn::{BinaryLayer, BinaryModel};
    use crate::mapper::{map_model, MapConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mapped() -> MappedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = |i: usize, o: usize| {
            let rows = (0..o).map(|_| (0..i).map(|_| rng.random::<bool>()).collect()).collect();
            let bn = (0..o).map(|_| rng.random_range(-5..=5)).collect();
            BinaryLayer::new(i, rows, bn).unwrap()
        };
        let m = BinaryModel::new(vec![layer(100, 40), layer(40, 3)]).unwrap();
        map_model(&m, CamGeometry::new(8, 70, 2).unwrap(), MapConfig { allow_reuse: true, ..Default::default() }).unwrap()
    }

    #[test]
    fn round_trip() {
        let m = mapped();
        let dump = CamDump::from_mapped(&m);
        let bytes = dump.to_bytes();
        let back = CamDump::from_bytes(&bytes).unwrap();
        assert_eq!(back, dump);
        assert_eq!(back.layers[0].len(), m.layers[0].cycles());
    }

    #[test]
    fn corruption_rejected() {
        let bytes = CamDump::from_mapped(&mapped()).to_bytes();
        assert!(CamDump::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(CamDump::from_bytes(&long).is_err());
        let mut flag = bytes.clone();
        flag[26] = 7;
        assert!(matches!(CamDump::from_bytes(&flag), Err(Error::Format(_))));
        let mut magic = bytes;
        magic[3] = b'B';
        assert!(CamDump::from_bytes(&magic).is_err());
    }

    #[test]
    fn padding_bits_are_masked() {
        let m = mapped();
        let mut bytes = CamDump::from_mapped(&m).to_bytes();
        // first bank: 8 valid bytes after the 26-byte header and page count, then
        // two words per 70-column row; set the top bit of the first row's tail word
        let tail = 26 + 8 + 15;
        bytes[tail] |= 0x80;
        let back = CamDump::from_bytes(&bytes).unwrap();
        let row = BitRow::from_words(70, back.layers[0][0].banks()[0].packed_cells()[..2].to_vec()).unwrap();
        assert_eq!(row.words(), &back.layers[0][0].banks()[0].packed_cells()[..2]);
        assert_eq!(back, CamDump::from_mapped(&m));
    }

    #[test]
    fn placement_json_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("placement.json");
        save_placement_table(&p, &mapped()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["layers"].as_array().unwrap().len(), 2);
    }
}
