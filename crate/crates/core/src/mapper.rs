//! Compiles a [`BinaryModel`] onto CAM pages.
//!
//! Each neuron becomes one logical row: its weight bits, then its batch-norm
//! cells, then padding. The query is the binary input followed by an all-ones
//! extension. A positive constant `C` is stored as `C` ones (always matching),
//! a negative one as `|C|` zeros (always mismatching). Unused extension and
//! padding cells store ones against a ones query, so they never mismatch and
//! never discharge the matchline.
//!
//! With `n_j = in_dim + |C_j|` cells in play and `d_j` mismatches, the neuron
//! sum is `s_j = n_j - 2 d_j`, so `s_j > 0` exactly when
//! `d_j <= floor((n_j - 1) / 2)`. Hidden layers sense every row against its
//! own majority threshold; the output layer is searched at caller-supplied
//! thresholds.
//!
//! Rows wider than the geometry's columns are cut into segments. Segment `g`
//! of every neuron is placed in the `g`-th group of cycles, and per-segment
//! mismatch counts are added digitally before thresholding; such layers are
//! reported as tiled.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::analog::{majority_threshold, AnalogKnobs, AnalogModel};
use crate::bits::BitRow;
use crate::bnn::{BinaryLayer, BinaryModel, BinaryVector, DEFAULT_BN_CAP};
use crate::cam::{CamArray, CamGeometry, RowMatch, TOTAL_CAPACITY_BITS};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cells realizing a batch-norm constant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnCellEncoding {
    pub stored: BitRow,
    pub query_extension: BitRow,
}

impl BnCellEncoding {
    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    /// Matching cells minus mismatching cells.
    pub fn contribution(&self) -> i32 {
        let mism = self.stored.hamming(&self.query_extension) as i32;
        self.len() as i32 - 2 * mism
    }
}

/// Minimal encoding: `|c|` matching cells for `c > 0`, `|c|` mismatching
/// cells for `c < 0`, nothing for zero. The query side is always ones.
pub fn encode_bn(c: i32, cap: i32) -> Result<BnCellEncoding> {
    if c.unsigned_abs() > cap.unsigned_abs() {
        return Err(Error::Capacity(format!(
            "batch-norm constant {c} exceeds the cap of {cap} cells"
        )));
    }
    let n = c.unsigned_abs() as usize;
    Ok(BnCellEncoding {
        stored: if c > 0 { BitRow::ones(n) } else { BitRow::zeros(n) },
        query_extension: BitRow::ones(n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnobsPolicy {
    /// Every row senses at its own majority threshold.
    FixedMajority,
    /// The caller supplies one threshold (or knob setting) per search.
    Swept,
}

/// Where one segment of one neuron lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub neuron: usize,
    pub segment: usize,
    pub cycle: usize,
    pub bank: usize,
    pub row: usize,
    /// Columns of the physical row holding weight bits.
    pub weight_columns: Range<usize>,
    /// Input positions whose weights sit in `weight_columns`.
    pub input_range: Range<usize>,
    /// Columns holding this neuron's batch-norm cells.
    pub bn_columns: Range<usize>,
}

/// Builds per-segment queries from a layer input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBuilder {
    pub in_dim: usize,
    /// Length of the all-ones extension driving the batch-norm cells.
    pub extension: usize,
    pub columns: usize,
    pub segments: usize,
}

impl QueryBuilder {
    pub fn logical_width(&self) -> usize {
        self.in_dim + self.extension
    }

    /// `x ++ ones(extension)`, padded with ones and cut into segments.
    pub fn build(&self, x: &BinaryVector) -> Result<Vec<BitRow>> {
        if x.len() != self.in_dim {
            return Err(Error::shape("layer input", self.in_dim, x.len()));
        }
        let full = x.bits().padded(self.segments * self.columns, true);
        Ok((0..self.segments)
            .map(|g| full.slice(g * self.columns, self.columns))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappedLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub policy: KnobsPolicy,
    pub bn_encoding: Vec<BnCellEncoding>,
    /// `in_dim + |C_j|` per neuron.
    pub row_width_total: Vec<usize>,
    pub query: QueryBuilder,
    /// Cycles needed for one segment group, `ceil(out_dim / rows_per_cycle)`.
    pub cycles_per_segment: usize,
    pub placements: Vec<Placement>,
    /// One programmed array per cycle.
    pub pages: Vec<CamArray>,
    /// Slot of each placement indexed by `[segment][neuron]`.
    slot_index: Vec<Vec<usize>>,
}

/// Output of one layer execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerOutput {
    /// `+1` on Match, `-1` on Mismatch.
    pub output: BinaryVector,
    /// Total mismatch count per neuron across segments.
    pub mismatches: Vec<u32>,
}

/// Sense configuration for one layer execution.
#[derive(Debug, Clone, Copy)]
pub enum Sense<'a, T> {
    /// Each row at `floor((n_j - 1) / 2)`.
    Majority,
    /// Majority via per-neuron analog knobs (one sense reference per row).
    MajorityAnalog(&'a AnalogModel<T>, &'a [AnalogKnobs<T>]),
    /// One HD threshold for every row.
    Threshold(u32),
    /// Explicit threshold per neuron (e.g. drawn by the variation hook).
    PerRow(&'a [u32]),
    /// One knob setting for every row.
    Analog(&'a AnalogModel<T>, &'a AnalogKnobs<T>),
}

impl MappedLayer {
    pub fn segments(&self) -> usize {
        self.query.segments
    }

    pub fn cycles(&self) -> usize {
        self.pages.len()
    }

    /// Rows wider than the geometry: mismatch counts are summed digitally.
    pub fn is_tiled(&self) -> bool {
        self.query.segments > 1
    }

    pub fn majority_thresholds(&self) -> Vec<u32> {
        self.row_width_total
            .iter()
            .map(|&n| majority_threshold(n as u32))
            .collect()
    }

    fn thresholds<T: Real>(&self, sense: &Sense<'_, T>) -> Result<Vec<u32>> {
        match sense {
            Sense::Majority => Ok(self.majority_thresholds()),
            Sense::MajorityAnalog(model, knobs) => {
                if knobs.len() != self.out_dim {
                    return Err(Error::shape("per-neuron knobs", self.out_dim, knobs.len()));
                }
                knobs.iter().map(|k| model.hd_threshold_of(k)).collect()
            }
            Sense::Threshold(t) => Ok(vec![*t; self.out_dim]),
            Sense::PerRow(t) => {
                if t.len() != self.out_dim {
                    return Err(Error::shape("per-neuron thresholds", self.out_dim, t.len()));
                }
                Ok(t.to_vec())
            }
            Sense::Analog(model, knobs) => Ok(vec![model.hd_threshold_of(knobs)?; self.out_dim]),
        }
    }

    fn slot_location(&self, slot: usize) -> (usize, usize, usize) {
        let geo = self.pages[0].geometry();
        let rpc = geo.rows_per_cycle();
        (slot / rpc, (slot % rpc) / geo.rows(), slot % geo.rows())
    }

    /// Searches every page with the layer input and senses each neuron.
    pub fn execute<T: Real>(&self, x: &BinaryVector, sense: &Sense<'_, T>) -> Result<LayerOutput> {
        let queries = self.query.build(x)?;
        let thresholds = self.thresholds(sense)?;
        let geo = self.pages[0].geometry();
        let mut matched = vec![false; self.out_dim];
        let mut mismatches = vec![0u32; self.out_dim];
        if !self.is_tiled() {
            // every neuron is one row: the CAM senses it directly
            for (c, page) in self.pages.iter().enumerate() {
                for (b, bank) in page.banks().iter().enumerate() {
                    let base = c * geo.rows_per_cycle() + b * geo.rows();
                    let row_t: Vec<u32> = (0..geo.rows())
                        .map(|r| thresholds.get(base + r).copied().unwrap_or(0))
                        .collect();
                    let res = bank.search_per_row(&queries[0], &row_t)?;
                    for r in 0..geo.rows() {
                        let j = base + r;
                        if j >= self.out_dim {
                            break;
                        }
                        match res.per_row[r] {
                            RowMatch::Invalid => return Err(Error::UninitializedRow { row: r }),
                            m => matched[j] = m == RowMatch::Match,
                        }
                        mismatches[j] = res.mismatch_counts[r];
                    }
                }
            }
        } else {
            let banks = geo.banks();
            for (g, q) in queries.iter().enumerate() {
                // one search per bank holding this segment
                let mut counts: Vec<Option<Vec<Option<u32>>>> = vec![None; self.pages.len() * banks];
                for (j, &slot) in self.slot_index[g].iter().enumerate() {
                    let (c, b, r) = self.slot_location(slot);
                    let bank_counts = match &mut counts[c * banks + b] {
                        Some(v) => v,
                        slot @ None => slot.insert(self.pages[c].banks()[b].mismatch_counts(q)?),
                    };
                    mismatches[j] += bank_counts[r].ok_or(Error::UninitializedRow { row: r })?;
                }
            }
            for j in 0..self.out_dim {
                matched[j] = mismatches[j] <= thresholds[j];
            }
        }
        Ok(LayerOutput {
            output: BinaryVector::from_bits(matched.into_iter().collect()),
            mismatches,
        })
    }

    /// Mismatch counts only (threshold-independent).
    pub fn mismatch_counts(&self, x: &BinaryVector) -> Result<Vec<u32>> {
        Ok(self.execute::<f64>(x, &Sense::Threshold(0))?.mismatches)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapConfig {
    pub bn_cap: i32,
    /// Allow the model to exceed the array capacity by reprogramming rows
    /// between cycles.
    pub allow_reuse: bool,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            bn_cap: DEFAULT_BN_CAP,
            allow_reuse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappedModel {
    pub geometry: CamGeometry,
    pub config: MapConfig,
    pub layers: Vec<MappedLayer>,
}

/// Bit budget of a mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementAudit {
    pub weight_bits: usize,
    pub bn_cells: usize,
    pub capacity_bits: usize,
    pub placements: usize,
    pub cycles_per_layer: Vec<usize>,
    pub tiled_layers: Vec<usize>,
}

/// Serializable placement table for audit files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementTable {
    pub geometry: CamGeometry,
    pub layers: Vec<PlacementTableLayer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementTableLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub policy: KnobsPolicy,
    pub segments: usize,
    pub cycles: usize,
    pub tiled: bool,
    pub bn_constants: Vec<i32>,
    pub placements: Vec<Placement>,
}

fn map_layer(
    layer: &BinaryLayer,
    geometry: CamGeometry,
    policy: KnobsPolicy,
    cap: i32,
) -> Result<MappedLayer> {
    let bn_encoding = layer
        .bn_constants()
        .iter()
        .map(|&c| encode_bn(c, cap))
        .collect::<Result<Vec<_>>>()?;
    let extension = bn_encoding.iter().map(BnCellEncoding::len).max().unwrap_or(0);
    let in_dim = layer.in_dim();
    let columns = geometry.columns();
    let query = QueryBuilder {
        in_dim,
        extension,
        columns,
        segments: (in_dim + extension).div_ceil(columns).max(1),
    };
    let rpc = geometry.rows_per_cycle();
    let out_dim = layer.out_dim();
    let cycles_per_segment = out_dim.div_ceil(rpc);
    let mut pages: Vec<CamArray> = (0..cycles_per_segment * query.segments)
        .map(|_| CamArray::new(geometry))
        .collect();
    let mut placements = Vec::with_capacity(out_dim * query.segments);
    let mut slot_index = vec![Vec::with_capacity(out_dim); query.segments];
    let padded = query.segments * columns;
    for (j, enc) in bn_encoding.iter().enumerate() {
        let mut logical = layer.weight_row(j).concat(&enc.stored);
        logical.extend_from(&BitRow::ones(padded - logical.len()));
        let bn_start = in_dim;
        let bn_end = in_dim + enc.len();
        for (g, index) in slot_index.iter_mut().enumerate() {
            let slot = g * cycles_per_segment * rpc + j;
            let (cycle, bank, row) = (slot / rpc, (slot % rpc) / geometry.rows(), slot % geometry.rows());
            let seg = g * columns..(g + 1) * columns;
            let clip = |r: Range<usize>| {
                let s = r.start.clamp(seg.start, seg.end);
                let e = r.end.clamp(seg.start, seg.end);
                s..e.max(s)
            };
            let w = clip(0..in_dim);
            let bnc = clip(bn_start..bn_end);
            pages[cycle].write_row(bank, row, &logical.slice(seg.start, columns))?;
            placements.push(Placement {
                neuron: j,
                segment: g,
                cycle,
                bank,
                row,
                weight_columns: w.start - seg.start..w.end - seg.start,
                input_range: w,
                bn_columns: bnc.start - seg.start..bnc.end - seg.start,
            });
            index.push(slot);
        }
    }
    Ok(MappedLayer {
        in_dim,
        out_dim,
        policy,
        row_width_total: bn_encoding.iter().map(|e| in_dim + e.len()).collect(),
        bn_encoding,
        query,
        cycles_per_segment,
        placements,
        pages,
        slot_index,
    })
}

/// Maps every layer; the last layer is swept, the others sense at majority.
pub fn map_model(model: &BinaryModel, geometry: CamGeometry, cfg: MapConfig) -> Result<MappedModel> {
    let bn_cells: usize = model
        .layers()
        .iter()
        .flat_map(|l| l.bn_constants().iter().map(|c| c.unsigned_abs() as usize))
        .sum();
    let used = model.weight_bits() + bn_cells;
    let capacity = geometry.capacity_bits().min(TOTAL_CAPACITY_BITS);
    if used > capacity && !cfg.allow_reuse {
        return Err(Error::Capacity(format!(
            "model needs {used} bits ({} weight + {bn_cells} batch-norm cells) but the array holds {capacity}; enable row reuse to time-multiplex",
            model.weight_bits()
        )));
    }
    let n = model.layers().len();
    let layers = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let policy = if i + 1 == n {
                KnobsPolicy::Swept
            } else {
                KnobsPolicy::FixedMajority
            };
            map_layer(l, geometry, policy, cfg.bn_cap)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MappedModel {
        geometry,
        config: cfg,
        layers,
    })
}

impl MappedModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn output_layer(&self) -> &MappedLayer {
        self.layers.last().expect("mapped model has layers")
    }

    pub fn hidden_layers(&self) -> &[MappedLayer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn cycles_per_layer(&self) -> Vec<usize> {
        self.layers.iter().map(MappedLayer::cycles).collect()
    }

    /// Runs the hidden layers at their majority thresholds.
    pub fn hidden_forward(&self, x: &BinaryVector) -> Result<BinaryVector> {
        let mut a = x.clone();
        for layer in self.hidden_layers() {
            a = layer.execute::<f64>(&a, &Sense::Majority)?.output;
        }
        Ok(a)
    }

    /// Every layer at its majority threshold; equals the reference forward pass.
    pub fn forward_majority(&self, x: &BinaryVector) -> Result<BinaryVector> {
        let h = self.hidden_forward(x)?;
        Ok(self.output_layer().execute::<f64>(&h, &Sense::Majority)?.output)
    }

    /// Checks placement totality and non-overlap, and that every page row
    /// holds exactly the bits the layer prescribes.
    pub fn audit(&self, model: &BinaryModel) -> Result<PlacementAudit> {
        if model.layers().len() != self.layers.len() {
            return Err(Error::shape("mapped layers", model.layers().len(), self.layers.len()));
        }
        let mut weight_bits = 0;
        let mut bn_cells = 0;
        let mut placements = 0;
        for (ml, src) in self.layers.iter().zip(model.layers()) {
            let mut covered = vec![vec![false; ml.in_dim]; ml.out_dim];
            let mut used = std::collections::HashSet::new();
            for p in &ml.placements {
                if !used.insert((p.cycle, p.bank, p.row)) {
                    return Err(Error::Capacity(format!(
                        "overlapping placement at cycle {} bank {} row {}",
                        p.cycle, p.bank, p.row
                    )));
                }
                let row = ml.pages[p.cycle].bank(p.bank)?.read_row(p.row)?;
                for (col, i) in p.weight_columns.clone().zip(p.input_range.clone()) {
                    if covered[p.neuron][i] {
                        return Err(Error::Capacity(format!(
                            "weight ({}, {i}) placed twice",
                            p.neuron
                        )));
                    }
                    covered[p.neuron][i] = true;
                    if row.get(col) != src.weight_row(p.neuron).get(i) {
                        return Err(Error::format(format!(
                            "stored bit mismatch for weight ({}, {i})",
                            p.neuron
                        )));
                    }
                    weight_bits += 1;
                }
                let enc = &ml.bn_encoding[p.neuron];
                let seg_start = p.segment * ml.query.columns;
                for col in p.bn_columns.clone() {
                    if row.get(col) != enc.stored.get(seg_start + col - ml.in_dim) {
                        return Err(Error::format("stored batch-norm cell mismatch"));
                    }
                    bn_cells += 1;
                }
                placements += 1;
            }
            if covered.iter().flatten().any(|c| !c) {
                return Err(Error::Capacity("a weight bit has no placement".into()));
            }
        }
        Ok(PlacementAudit {
            weight_bits,
            bn_cells,
            capacity_bits: self.geometry.capacity_bits(),
            placements,
            cycles_per_layer: self.cycles_per_layer(),
            tiled_layers: (0..self.layers.len()).filter(|&i| self.layers[i].is_tiled()).collect(),
        })
    }

    pub fn placement_table(&self) -> PlacementTable {
        PlacementTable {
            geometry: self.geometry,
            layers: self
                .layers
                .iter()
                .map(|l| PlacementTableLayer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    policy: l.policy,
                    segments: l.segments(),
                    cycles: l.cycles(),
                    tiled: l.is_tiled(),
                    bn_constants: l.bn_encoding.iter().map(BnCellEncoding::contribution).collect(),
                    placements: l.placements.clone(),
                })
                .collect(),
        }
    }
}
