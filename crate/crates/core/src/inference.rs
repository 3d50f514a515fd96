//! Multi-pass inference with a swept HD tolerance.
//!
//! The hidden layers run once at their majority thresholds. The output layer
//! is then searched once per threshold of the sweep; every class row that
//! matches casts one vote, and the class with the most votes wins. Because a
//! row matching at threshold `T` also matches at every larger threshold, a
//! class's vote count is the number of swept thresholds at or above its
//! Hamming distance to the query, so the vote ranks classes by proximity.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analog::{AnalogKnobs, AnalogModel, VariationHook};
use crate::bits::BitRow;
use crate::bnn::{argmax_first, BinaryVector};
use crate::data_io::BinaryDataset;
use crate::error::{Error, Result};
use crate::mapper::{MappedModel, Sense};
use crate::scalar::Real;

/// `{0, 2, ..., 64}`: 33 passes.
pub fn default_thresholds() -> Vec<u32> {
    (0..=64).step_by(2).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VoteRule {
    /// Most votes wins; equal counts go to the lowest class index and set
    /// the tie flag.
    #[default]
    ArgmaxCount,
    /// As `ArgmaxCount`, but the winner must also have matched in a strict
    /// majority of the passes; otherwise the decision is flagged as a tie.
    SimpleMajority,
}

/// How each pass's threshold reaches the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KnobSource {
    /// Integer thresholds applied directly.
    #[default]
    Digital,
    /// Knobs calibrated on the physical discharge model.
    AnalogPhysical,
    /// Knobs taken from the measured profile (output sweep only; hidden rows
    /// still use physically calibrated majority knobs).
    AnalogLookup,
}

/// Seeded per-row conductance variation for the output sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub thresholds: Vec<u32>,
    pub vote_rule: VoteRule,
    pub knob_source: KnobSource,
    /// Off unless set; only meaningful with analog knob sources.
    pub variation: Option<Variation>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            vote_rule: VoteRule::ArgmaxCount,
            knob_source: KnobSource::Digital,
            variation: None,
        }
    }
}

impl SweepConfig {
    /// The first `passes` thresholds of the default sweep.
    pub fn with_passes(passes: usize) -> Self {
        let mut cfg = Self::default();
        cfg.thresholds.truncate(passes.max(1));
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceTrace {
    /// One row per pass, one bit per class (1 = Match).
    pub per_pass_outputs: Vec<BitRow>,
    pub ones_count: Vec<u32>,
    pub predicted: usize,
    pub tie: bool,
}

impl InferenceTrace {
    fn from_passes(per_pass_outputs: Vec<BitRow>, classes: usize, rule: VoteRule) -> Self {
        let ones_count = count_ones(&per_pass_outputs, classes, per_pass_outputs.len());
        let (predicted, tie) = vote(&ones_count, per_pass_outputs.len(), rule);
        Self {
            per_pass_outputs,
            ones_count,
            predicted,
            tie,
        }
    }

    /// One JSON object per line for trace dumps.
    pub fn to_json_line(&self, index: usize, label: Option<u32>) -> String {
        let passes: Vec<String> = self
            .per_pass_outputs
            .iter()
            .map(|r| r.iter().map(|b| if b { '1' } else { '0' }).collect())
            .collect();
        serde_json::json!({
            "index": index,
            "label": label,
            "predicted": self.predicted,
            "tie": self.tie,
            "ones_count": self.ones_count,
            "passes": passes,
        })
        .to_string()
    }
}

fn count_ones(passes: &[BitRow], classes: usize, k: usize) -> Vec<u32> {
    let mut ones = vec![0u32; classes];
    for row in &passes[..k] {
        for (c, o) in ones.iter_mut().enumerate() {
            *o += row.get(c) as u32;
        }
    }
    ones
}

/// Predicted class and tie flag for per-class vote counts over `passes`.
pub fn vote(ones: &[u32], passes: usize, rule: VoteRule) -> (usize, bool) {
    let best = argmax_first(ones);
    let top = ones.get(best).copied().unwrap_or(0);
    let shared = ones.iter().filter(|&&o| o == top).count() > 1;
    match rule {
        VoteRule::ArgmaxCount => (best, shared),
        VoteRule::SimpleMajority => (best, shared || 2 * top as usize <= passes),
    }
}

/// Top-2 hit: fewer than two classes strictly outvote the true class.
fn top2_hit(ones: &[u32], label: usize) -> bool {
    ones.iter().filter(|&&o| o > ones[label]).count() < 2
}

enum HiddenSense<T> {
    Digital,
    Analog(Vec<Vec<AnalogKnobs<T>>>),
}

enum OutputSense<T> {
    Digital,
    Analog(AnalogModel<T>, Vec<AnalogKnobs<T>>),
}

/// A mapped model plus everything precomputed for a sweep.
pub struct Inference<'m, T> {
    mapped: &'m MappedModel,
    cfg: SweepConfig,
    physical: AnalogModel<T>,
    hidden: HiddenSense<T>,
    output: OutputSense<T>,
}

impl<'m, T: Real> Inference<'m, T> {
    /// Uses the default physical model and the measured lookup profile.
    pub fn new(mapped: &'m MappedModel, cfg: SweepConfig) -> Result<Self> {
        Self::with_models(
            mapped,
            cfg,
            AnalogModel::physical_default(),
            AnalogModel::lookup_default(),
        )
    }

    /// Calibrates every knob the sweep will use up front.
    pub fn with_models(
        mapped: &'m MappedModel,
        cfg: SweepConfig,
        physical: AnalogModel<T>,
        lookup: AnalogModel<T>,
    ) -> Result<Self> {
        if cfg.thresholds.is_empty() {
            return Err(Error::Input("sweep needs at least one threshold".into()));
        }
        let (hidden, output) = match cfg.knob_source {
            KnobSource::Digital => (HiddenSense::Digital, OutputSense::Digital),
            source => {
                let hidden = mapped
                    .hidden_layers()
                    .iter()
                    .map(|l| {
                        l.row_width_total
                            .iter()
                            .map(|&n| physical.majority_knobs(n as u32))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let out_model = if source == KnobSource::AnalogLookup {
                    lookup
                } else {
                    physical.clone()
                };
                let knobs = cfg
                    .thresholds
                    .iter()
                    .map(|&t| out_model.calibrate_knobs(t))
                    .collect::<Result<Vec<_>>>()?;
                (HiddenSense::Analog(hidden), OutputSense::Analog(out_model, knobs))
            }
        };
        Ok(Self {
            mapped,
            cfg,
            physical,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &SweepConfig {
        &self.cfg
    }

    /// Knobs used for each swept pass (empty for digital sweeps).
    pub fn output_knobs(&self) -> &[AnalogKnobs<T>] {
        match &self.output {
            OutputSense::Digital => &[],
            OutputSense::Analog(_, k) => k,
        }
    }

    fn hidden_forward(&self, x: &BinaryVector) -> Result<BinaryVector> {
        let mut a = x.clone();
        for (i, layer) in self.mapped.hidden_layers().iter().enumerate() {
            let sense = match &self.hidden {
                HiddenSense::Digital => Sense::Majority,
                HiddenSense::Analog(k) => Sense::MajorityAnalog(&self.physical, &k[i]),
            };
            a = layer.execute(&a, &sense)?.output;
        }
        Ok(a)
    }

    /// Runs one image through the sweep. `index` seeds the variation hook.
    pub fn infer_indexed(&self, image: &BinaryVector, index: usize) -> Result<InferenceTrace> {
        if image.len() != self.mapped.input_dim() {
            return Err(Error::shape("image width", self.mapped.input_dim(), image.len()));
        }
        let h = self.hidden_forward(image)?;
        let out = self.mapped.output_layer();
        let mut hook = self
            .cfg
            .variation
            .map(|v| VariationHook::new(v.sigma, v.seed.wrapping_add(index as u64)));
        let mut passes = Vec::with_capacity(self.cfg.thresholds.len());
        for (p, &t) in self.cfg.thresholds.iter().enumerate() {
            let res = match (&self.output, hook.as_mut()) {
                (OutputSense::Digital, _) => out.execute::<T>(&h, &Sense::Threshold(t))?,
                (OutputSense::Analog(model, knobs), None) => {
                    out.execute(&h, &Sense::Analog(model, &knobs[p]))?
                }
                (OutputSense::Analog(model, knobs), Some(hook)) => {
                    let per_row = hook.thresholds(model, &knobs[p], out.out_dim)?;
                    out.execute::<T>(&h, &Sense::PerRow(&per_row))?
                }
            };
            passes.push(res.output.into_bits());
        }
        Ok(InferenceTrace::from_passes(passes, out.out_dim, self.cfg.vote_rule))
    }

    pub fn infer(&self, image: &BinaryVector) -> Result<InferenceTrace> {
        self.infer_indexed(image, 0)
    }

    /// Traces for a whole dataset, in dataset order.
    pub fn traces(&self, data: &BinaryDataset) -> Result<Vec<InferenceTrace>> {
        if data.is_empty() {
            return Err(Error::Input("evaluation dataset is empty".into()));
        }
        if data.classes != self.mapped.classes() {
            return Err(Error::shape("class count", self.mapped.classes(), data.classes));
        }
        data.inputs
            .par_iter()
            .enumerate()
            .map(|(i, x)| self.infer_indexed(x, i))
            .collect()
    }

    pub fn evaluate(&self, data: &BinaryDataset) -> Result<Evaluation> {
        let traces = self.traces(data)?;
        let report = AccuracyReport::from_traces(&traces, &data.labels, &self.cfg);
        Ok(Evaluation { traces, report })
    }
}

/// Convenience wrapper with default analog models in `f64`.
pub fn infer(mapped: &MappedModel, image: &BinaryVector, cfg: &SweepConfig) -> Result<InferenceTrace> {
    Inference::<f64>::new(mapped, cfg.clone())?.infer(image)
}

pub fn evaluate(mapped: &MappedModel, data: &BinaryDataset, cfg: &SweepConfig) -> Result<Evaluation> {
    Inference::<f64>::new(mapped, cfg.clone())?.evaluate(data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub traces: Vec<InferenceTrace>,
    pub report: AccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixPoint {
    pub k: usize,
    pub threshold_max: u32,
    pub top1: f64,
    pub top2: f64,
    pub tie_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub images: usize,
    pub top1: f64,
    pub top2: f64,
    pub tie_rate: f64,
    /// Accuracy using only the first `k` passes, for `k = 1..=passes`.
    pub prefix: Vec<PrefixPoint>,
    /// Pass pairs `T1 < T2` where a class matched at `T1` but not at `T2`.
    pub monotonicity_violations: usize,
    pub thresholds: Vec<u32>,
    pub vote_rule: VoteRule,
    pub knob_source: KnobSource,
}

impl AccuracyReport {
    pub fn from_traces(traces: &[InferenceTrace], labels: &[u32], cfg: &SweepConfig) -> Self {
        let n = traces.len().max(1) as f64;
        let passes = cfg.thresholds.len();
        let classes = traces.first().map_or(0, |t| t.ones_count.len());
        let mut prefix = Vec::with_capacity(passes);
        for k in 1..=passes {
            let (mut t1, mut t2, mut ties) = (0usize, 0usize, 0usize);
            for (tr, &label) in traces.iter().zip(labels) {
                let ones = count_ones(&tr.per_pass_outputs, classes, k);
                let (pred, tie) = vote(&ones, k, cfg.vote_rule);
                t1 += (pred == label as usize) as usize;
                t2 += top2_hit(&ones, label as usize) as usize;
                ties += tie as usize;
            }
            prefix.push(PrefixPoint {
                k,
                threshold_max: cfg.thresholds[..k].iter().copied().max().unwrap_or(0),
                top1: t1 as f64 / n,
                top2: t2 as f64 / n,
                tie_rate: ties as f64 / n,
            });
        }
        let last = prefix.last().cloned().expect("at least one pass");
        Self {
            images: traces.len(),
            top1: last.top1,
            top2: last.top2,
            tie_rate: last.tie_rate,
            prefix,
            monotonicity_violations: traces
                .iter()
                .map(|t| monotonicity_violations(t, &cfg.thresholds))
                .sum(),
            thresholds: cfg.thresholds.clone(),
            vote_rule: cfg.vote_rule,
            knob_source: cfg.knob_source,
        }
    }

    /// `k,threshold_max,top1,top2,tie_rate` rows and a `# summary` JSON line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,threshold_max,top1,top2,tie_rate\n");
        for p in &self.prefix {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                p.k, p.threshold_max, p.top1, p.top2, p.tie_rate
            )
            .unwrap();
        }
        let summary = serde_json::json!({
            "images": self.images,
            "passes": self.thresholds.len(),
            "top1": self.top1,
            "top2": self.top2,
            "tie_rate": self.tie_rate,
            "monotonicity_violations": self.monotonicity_violations,
            "vote_rule": self.vote_rule,
            "knob_source": self.knob_source,
        });
        writeln!(out, "# summary {summary}").unwrap();
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Counts `(class, T1 < T2)` pairs where the class matched at `T1` but not `T2`.
pub fn monotonicity_violations(trace: &InferenceTrace, thresholds: &[u32]) -> usize {
    let classes = trace.ones_count.len();
    let mut count = 0;
    for a in 0..thresholds.len() {
        for b in 0..thresholds.len() {
            if thresholds[a] < thresholds[b] {
                let (ra, rb) = (&trace.per_pass_outputs[a], &trace.per_pass_outputs[b]);
                count += (0..classes).filter(|&c| ra.get(c) && !rb.get(c)).count();
            }
        }
    }
    count
}

/// One JSON line per image.
pub fn write_traces(path: impl AsRef<Path>, traces: &[InferenceTrace], labels: &[u32]) -> Result<()> {
    let mut out = String::new();
    for (i, t) in traces.iter().enumerate() {
        out.push_str(&t.to_json_line(i, labels.get(i).copied()));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{BinaryLayer, BinaryModel};
    use crate::cam::CamGeometry;
    use crate::mapper::{map_model, MapConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, arch: &[usize]) -> BinaryModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = arch.len();
        let layers = arch
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let rows = (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random::<bool>()).collect()).collect();
                let bn = (0..w[1])
                    .map(|_| if i + 2 == n { 0 } else { rng.random_range(-5..=5) })
                    .collect();
                BinaryLayer::new(w[0], rows, bn).unwrap()
            })
            .collect();
        BinaryModel::new(layers).unwrap()
    }

    fn random_data(seed: u64, n: usize, dim: usize, classes: usize) -> BinaryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..n)
            .map(|_| BinaryVector::from_bits((0..dim).map(|_| rng.random::<bool>()).collect()))
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes as u32)).collect();
        BinaryDataset::new("rand", inputs, labels, classes).unwrap()
    }

    fn geo() -> CamGeometry {
        CamGeometry::new(8, 64, 2).unwrap()
    }

    #[test]
    fn default_sweep_has_33_passes() {
        let t = default_thresholds();
        assert_eq!(t.len(), 33);
        assert_eq!((t[0], t[32]), (0, 64));
        assert_eq!(SweepConfig::with_passes(1).thresholds, vec![0]);
    }

    #[test]
    fn vote_rules() {
        assert_eq!(vote(&[3, 5, 5, 1], 6, VoteRule::ArgmaxCount), (1, true));
        assert_eq!(vote(&[3, 6, 5, 1], 6, VoteRule::ArgmaxCount), (1, false));
        assert_eq!(vote(&[3, 3, 2], 6, VoteRule::SimpleMajority), (0, true));
        assert_eq!(vote(&[4, 3, 2], 6, VoteRule::SimpleMajority), (0, false));
        assert_eq!(vote(&[3, 2, 2], 6, VoteRule::SimpleMajority), (0, true));
        assert!(top2_hit(&[5, 4, 3], 1));
        assert!(top2_hit(&[5, 4, 4], 2));
        assert!(!top2_hit(&[5, 4, 3], 2));
    }

    #[test]
    fn one_class_model_always_predicts_it() {
        let m = random_model(1, &[20, 6, 1]);
        let mapped = map_model(&m, geo(), MapConfig::default()).unwrap();
        let data = random_data(2, 10, 20, 1);
        let ev = evaluate(&mapped, &data, &SweepConfig::default()).unwrap();
        assert!(ev.traces.iter().all(|t| t.predicted == 0));
        assert_eq!(ev.report.top1, 1.0);
    }

    #[test]
    fn saturated_threshold_ties_all_classes() {
        let m = random_model(3, &[20, 6, 4]);
        let mapped = map_model(&m, geo(), MapConfig::default()).unwrap();
        let cfg = SweepConfig {
            thresholds: vec![6],
            ..SweepConfig::default()
        };
        let x = random_data(4, 1, 20, 4).inputs[0].clone();
        let t = infer(&mapped, &x, &cfg).unwrap();
        assert_eq!(t.ones_count, vec![1; 4]);
        assert!(t.tie);
        assert_eq!(t.predicted, 0);
    }

    #[test]
    fn ones_count_is_order_statistic_of_distance() {
        let m = random_model(5, &[30, 12, 5]);
        let mapped = map_model(&m, geo(), MapConfig::default()).unwrap();
        let cfg = SweepConfig {
            thresholds: (0..=12).collect(),
            ..SweepConfig::default()
        };
        let eng = Inference::<f64>::new(&mapped, cfg.clone()).unwrap();
        for x in random_data(6, 30, 30, 5).inputs {
            let t = eng.infer(&x).unwrap();
            let h = mapped.hidden_forward(&x).unwrap();
            let d = mapped.output_layer().mismatch_counts(&h).unwrap();
            for c in 0..5 {
                let want = cfg.thresholds.iter().filter(|&&th| th >= d[c]).count() as u32;
                assert_eq!(t.ones_count[c], want);
            }
            assert_eq!(monotonicity_violations(&t, &cfg.thresholds), 0);
        }
    }

    #[test]
    fn analog_physical_equals_digital() {
        let m = random_model(7, &[40, 16, 6]);
        let mapped = map_model(&m, geo(), MapConfig::default()).unwrap();
        let data = random_data(8, 40, 40, 6);
        let dig = evaluate(&mapped, &data, &SweepConfig::default()).unwrap();
        let cfg = SweepConfig {
            knob_source: KnobSource::AnalogPhysical,
            ..SweepConfig::default()
        };
        let ana = evaluate(&mapped, &data, &cfg).unwrap();
        assert_eq!(dig.traces, ana.traces);
    }

    #[test]
    fn lookup_source_needs_table_thresholds() {
        let m = random_model(9, &[20, 8, 3]);
        let mapped = map_model(&m, geo(), MapConfig::default()).unwrap();
        let ok = SweepConfig {
            thresholds: vec![0, 4, 8],
            knob_source: KnobSource::AnalogLookup,
            ..SweepConfig::default()
        };
        let data = random_data(10, 10, 20, 3);
        let dig = evaluate(&mapped, &data, &SweepConfig { thresholds: vec![0, 4, 8], ..SweepConfig::default() }).unwrap();
        assert_eq!(evaluate(&mapped, &data, &ok).unwrap().traces, dig.traces);
        let bad = SweepConfig {
            knob_source: KnobSource::AnalogLookup,
            ..SweepConfig::default()
        };
        assert!(matches!(Inference::<f64>::new(&mapped, bad), Err(Error::Calibration { .. })));
    }

    #[test]
    fn variation_hook_is_deterministic() {
        let m = random_model(11, &[30, 10, 4]);
        let mapped = map_model(&m, geo(), MapConfig::default()).unwrap();
        let data = random_data(12, 20, 30, 4);
        let cfg = SweepConfig {
            knob_source: KnobSource::AnalogPhysical,
            variation: Some(Variation { sigma: 0.2, seed: 3 }),
            ..SweepConfig::default()
        };
        let a = evaluate(&mapped, &data, &cfg).unwrap();
        let b = evaluate(&mapped, &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_single_datasets() {
        let m = random_model(13, &[10, 4, 2]);
        let mapped = map_model(&m, geo(), MapConfig::default()).unwrap();
        let empty = BinaryDataset::new("e", vec![], vec![], 2).unwrap();
        assert!(matches!(evaluate(&mapped, &empty, &SweepConfig::default()), Err(Error::Input(_))));
        let one = random_data(14, 1, 10, 2);
        let r = evaluate(&mapped, &one, &SweepConfig::default()).unwrap().report;
        assert!(r.top1 == 0.0 || r.top1 == 1.0);
    }

    #[test]
    fn csv_layout() {
        let m = random_model(15, &[10, 4, 2]);
        let mapped = map_model(&m, geo(), MapConfig::default()).unwrap();
        let r = evaluate(&mapped, &random_data(16, 5, 10, 2), &SweepConfig::with_passes(3))
            .unwrap()
            .report;
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,threshold_max,top1,top2,tie_rate");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("3,4,"));
        assert!(lines[4].starts_with("# summary {"));
        let json: serde_json::Value = serde_json::from_str(lines[4].trim_start_matches("# summary ")).unwrap();
        assert_eq!(json["passes"], 3);
    }
}
