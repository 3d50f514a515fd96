//! Functional model of the NOR-type CAM array.
//!
//! A [`CamBank`] stores bit-packed rows and performs one search per call: every
//! valid row is compared against the query at once and reports `Match` when its
//! mismatch count is within the HD tolerance threshold. Matching cells never
//! open a discharge path, so only the mismatch count matters.

use serde::{Deserialize, Serialize};

use crate::analog::{AnalogKnobs, AnalogModel};
use crate::bits::{hamming_words, words_for, BitRow, RowPattern};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Total storage of the accelerator: four 32-kbit banks.
pub const TOTAL_CAPACITY_BITS: usize = 131_072;
/// Physical bank shape (64 rows of 512 cells).
pub const PHYSICAL_BANK_ROWS: usize = 64;
pub const PHYSICAL_BANK_COLUMNS: usize = 512;
pub const PHYSICAL_BANKS: usize = 4;

/// Order in which a `AxB` shape string is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ShapeOrder {
    #[default]
    RowsByColumns,
    ColumnsByRows,
}

/// Shape of one logical bank and the number of banks searched together.
///
/// `rows * columns * banks` is the number of cells. Banks share the query, so
/// one search cycle covers `rows * banks` rows of `columns` cells each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CamGeometry {
    rows: usize,
    columns: usize,
    banks: usize,
}

impl CamGeometry {
    pub fn new(rows: usize, columns: usize, banks: usize) -> Result<Self> {
        if rows == 0 || columns == 0 || banks == 0 {
            return Err(Error::Input(format!(
                "geometry dimensions must be positive, got {rows}x{columns}x{banks}"
            )));
        }
        Ok(Self {
            rows,
            columns,
            banks,
        })
    }

    /// Four physical 64x512 banks.
    pub fn physical() -> Self {
        Self {
            rows: PHYSICAL_BANK_ROWS,
            columns: PHYSICAL_BANK_COLUMNS,
            banks: PHYSICAL_BANKS,
        }
    }

    /// The whole 128-kbit memory viewed as a single `rows x columns` array,
    /// e.g. 512x256, 1024x128, 2048x64 or the ganged 64x2048 layout.
    pub fn whole_memory(rows: usize, columns: usize) -> Result<Self> {
        let g = Self::new(rows, columns, 1)?;
        if g.capacity_bits() != TOTAL_CAPACITY_BITS {
            return Err(Error::Input(format!(
                "{rows}x{columns} = {} bits does not equal the {TOTAL_CAPACITY_BITS}-bit capacity",
                g.capacity_bits()
            )));
        }
        Ok(g)
    }

    /// Parses `"RxC"` (or `"RxCxB"`) according to `order`.
    pub fn parse(spec: &str, order: ShapeOrder) -> Result<Self> {
        let parts = spec
            .split(['x', 'X', '*'])
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Input(format!("bad geometry {spec:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (a, b, banks) = match parts[..] {
            [a, b] => (a, b, 1),
            [a, b, k] => (a, b, k),
            _ => return Err(Error::Input(format!("bad geometry {spec:?}"))),
        };
        let (rows, columns) = match order {
            ShapeOrder::RowsByColumns => (a, b),
            ShapeOrder::ColumnsByRows => (b, a),
        };
        Self::new(rows, columns, banks)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn banks(&self) -> usize {
        self.banks
    }

    pub fn capacity_bits(&self) -> usize {
        self.rows * self.columns * self.banks
    }

    pub fn rows_per_cycle(&self) -> usize {
        self.rows * self.banks
    }

    /// Number of 512-column physical segments ganged into one logical row.
    pub fn ganged_segments(&self) -> usize {
        self.columns.div_ceil(PHYSICAL_BANK_COLUMNS)
    }
}

impl Default for CamGeometry {
    fn default() -> Self {
        Self::physical()
    }
}

impl std::fmt::Display for CamGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.banks == 1 {
            write!(f, "{}x{}", self.rows, self.columns)
        } else {
            write!(f, "{}x{}x{}", self.rows, self.columns, self.banks)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowMatch {
    Match,
    Mismatch,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchResult {
    pub per_row: Vec<RowMatch>,
    /// Hamming distance per row; zero for invalid rows.
    pub mismatch_counts: Vec<u32>,
}

impl SearchResult {
    pub fn is_match(&self, row: usize) -> bool {
        self.per_row[row] == RowMatch::Match
    }

    pub fn matching_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_row
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == RowMatch::Match)
            .map(|(i, _)| i)
    }
}

/// One bank of CAM rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CamBank {
    rows: usize,
    columns: usize,
    words_per_row: usize,
    cells: Vec<u64>,
    valid: Vec<bool>,
}

impl CamBank {
    pub fn new(rows: usize, columns: usize) -> Self {
        let words_per_row = words_for(columns);
        Self {
            rows,
            columns,
            words_per_row,
            cells: vec![0; rows * words_per_row],
            valid: vec![false; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn is_valid(&self, row: usize) -> bool {
        self.valid.get(row).copied().unwrap_or(false)
    }

    pub fn valid_rows(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    fn row_words(&self, row: usize) -> &[u64] {
        &self.cells[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    fn check_width(&self, what: &'static str, pattern: &RowPattern) -> Result<()> {
        if pattern.len() != self.columns {
            return Err(Error::shape(what, self.columns, pattern.len()));
        }
        Ok(())
    }

    pub fn write_row(&mut self, row: usize, pattern: &RowPattern) -> Result<()> {
        if row >= self.rows {
            return Err(Error::Index {
                what: "CAM rows",
                index: row,
                len: self.rows,
            });
        }
        self.check_width("row pattern width", pattern)?;
        let start = row * self.words_per_row;
        self.cells[start..start + self.words_per_row].copy_from_slice(pattern.words());
        self.valid[row] = true;
        Ok(())
    }

    pub fn read_row(&self, row: usize) -> Result<RowPattern> {
        if row >= self.rows {
            return Err(Error::Index {
                what: "CAM rows",
                index: row,
                len: self.rows,
            });
        }
        if !self.valid[row] {
            return Err(Error::UninitializedRow { row });
        }
        BitRow::from_words(self.columns, self.row_words(row).to_vec())
    }

    /// Per-row Hamming distances to `query`; `None` for unwritten rows.
    pub fn mismatch_counts(&self, query: &RowPattern) -> Result<Vec<Option<u32>>> {
        self.check_width("query width", query)?;
        let q = query.words();
        Ok((0..self.rows)
            .map(|r| self.valid[r].then(|| hamming_words(self.row_words(r), q)))
            .collect())
    }

    fn search_with(
        &self,
        query: &RowPattern,
        threshold_of: impl Fn(usize) -> u32,
    ) -> Result<SearchResult> {
        let counts = self.mismatch_counts(query)?;
        let mut per_row = Vec::with_capacity(self.rows);
        let mut mismatch_counts = Vec::with_capacity(self.rows);
        for (r, c) in counts.into_iter().enumerate() {
            match c {
                None => {
                    per_row.push(RowMatch::Invalid);
                    mismatch_counts.push(0);
                }
                Some(d) => {
                    per_row.push(if d <= threshold_of(r) {
                        RowMatch::Match
                    } else {
                        RowMatch::Mismatch
                    });
                    mismatch_counts.push(d);
                }
            }
        }
        Ok(SearchResult {
            per_row,
            mismatch_counts,
        })
    }

    /// One search cycle with a single HD tolerance threshold for every row.
    pub fn search(&self, query: &RowPattern, hd_threshold: u32) -> Result<SearchResult> {
        self.search_with(query, |_| hd_threshold)
    }

    /// Search where each row senses against its own threshold (one sense
    /// reference per matchline). `thresholds` must cover every row.
    pub fn search_per_row(&self, query: &RowPattern, thresholds: &[u32]) -> Result<SearchResult> {
        if thresholds.len() != self.rows {
            return Err(Error::shape("per-row thresholds", self.rows, thresholds.len()));
        }
        self.search_with(query, |r| thresholds[r])
    }

    /// Search with the tolerance set by the three analog voltages.
    pub fn search_analog<T: Real>(
        &self,
        query: &RowPattern,
        knobs: &AnalogKnobs<T>,
        model: &AnalogModel<T>,
    ) -> Result<SearchResult> {
        let t = model.hd_threshold_of(knobs)?;
        self.search(query, t)
    }

    /// Analog search with individually tuned knobs per row.
    pub fn search_analog_per_row<T: Real>(
        &self,
        query: &RowPattern,
        knobs: &[AnalogKnobs<T>],
        model: &AnalogModel<T>,
    ) -> Result<SearchResult> {
        if knobs.len() != self.rows {
            return Err(Error::shape("per-row knobs", self.rows, knobs.len()));
        }
        let thresholds = knobs
            .iter()
            .map(|k| model.hd_threshold_of(k))
            .collect::<Result<Vec<_>>>()?;
        self.search_per_row(query, &thresholds)
    }

    /// Raw packed contents, row-major, `words_per_row` words per row.
    pub fn packed_cells(&self) -> &[u64] {
        &self.cells
    }

    pub fn valid_flags(&self) -> &[bool] {
        &self.valid
    }

    pub(crate) fn from_parts(
        rows: usize,
        columns: usize,
        cells: Vec<u64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let words_per_row = words_for(columns);
        if cells.len() != rows * words_per_row || valid.len() != rows {
            return Err(Error::format("bank payload size does not match its shape"));
        }
        let mut bank = Self {
            rows,
            columns,
            words_per_row,
            cells,
            valid,
        };
        // re-mask tails so stray padding bits cannot create phantom mismatches
        for r in 0..rows {
            let row = BitRow::from_words(columns, bank.row_words(r).to_vec())?;
            let start = r * words_per_row;
            bank.cells[start..start + words_per_row].copy_from_slice(row.words());
        }
        Ok(bank)
    }
}

/// A set of banks that share one query per search cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CamArray {
    geometry: CamGeometry,
    banks: Vec<CamBank>,
}

impl CamArray {
    pub fn new(geometry: CamGeometry) -> Self {
        Self {
            geometry,
            banks: (0..geometry.banks())
                .map(|_| CamBank::new(geometry.rows(), geometry.columns()))
                .collect(),
        }
    }

    pub(crate) fn from_banks(geometry: CamGeometry, banks: Vec<CamBank>) -> Result<Self> {
        if banks.len() != geometry.banks()
            || banks
                .iter()
                .any(|b| b.rows() != geometry.rows() || b.columns() != geometry.columns())
        {
            return Err(Error::format("banks do not match the array geometry"));
        }
        Ok(Self { geometry, banks })
    }

    pub fn geometry(&self) -> CamGeometry {
        self.geometry
    }

    pub fn banks(&self) -> &[CamBank] {
        &self.banks
    }

    pub fn bank(&self, index: usize) -> Result<&CamBank> {
        self.banks.get(index).ok_or(Error::Index {
            what: "banks",
            index,
            len: self.banks.len(),
        })
    }

    pub fn write_row(&mut self, bank: usize, row: usize, pattern: &RowPattern) -> Result<()> {
        let len = self.banks.len();
        self.banks
            .get_mut(bank)
            .ok_or(Error::Index {
                what: "banks",
                index: bank,
                len,
            })?
            .write_row(row, pattern)
    }

    /// Broadcast search over every bank.
    pub fn search(&self, query: &RowPattern, hd_threshold: u32) -> Result<Vec<SearchResult>> {
        self.banks.iter().map(|b| b.search(query, hd_threshold)).collect()
    }

    pub fn search_bank(
        &self,
        bank: usize,
        query: &RowPattern,
        hd_threshold: u32,
    ) -> Result<SearchResult> {
        self.bank(bank)?.search(query, hd_threshold)
    }
}
