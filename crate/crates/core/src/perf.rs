//! Analytic cycle, throughput and efficiency model.
//!
//! One search cycle evaluates one page of rows. An inference costs the hidden
//! layers' cycles once, the output layer's cycles once per pass, a per-image
//! overhead, and a share of the knob retuning cost: each pass needs its own
//! knob setting, and one setting serves a whole batch of images.
//!
//! Operation counting convention: every programmed cell that takes part in a
//! search performs `ops_per_cell_search` operations (default 2: one XNOR and
//! one accumulate).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cam::TOTAL_CAPACITY_BITS;
use crate::error::{Error, Result};
use crate::mapper::MappedModel;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig<T> {
    pub clock_hz: T,
    /// Fixed cycles per image (control, I/O); real-valued so a calibrated
    /// fit reproduces a measured rate exactly.
    pub overhead_cycles_per_image: T,
    /// Cycles spent retuning the three voltages once.
    pub tuning_cycles_per_retune: T,
    /// Images sharing one knob setting; may be infinite.
    pub batch_size: T,
    pub passes: usize,
}

impl<T: Real> Default for TimingConfig<T> {
    fn default() -> Self {
        Self {
            clock_hz: T::lit(25e6),
            overhead_cycles_per_image: T::zero(),
            tuning_cycles_per_retune: T::zero(),
            batch_size: T::one(),
            passes: 33,
        }
    }
}

impl<T: Real> TimingConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.clock_hz > T::zero()) || !self.clock_hz.is_finite() {
            return Err(Error::Input(format!("clock must be positive, got {}", self.clock_hz)));
        }
        if !(self.batch_size >= T::one()) {
            return Err(Error::Input(format!("batch size must be at least 1, got {}", self.batch_size)));
        }
        if !(self.overhead_cycles_per_image >= T::zero()) || !(self.tuning_cycles_per_retune >= T::zero()) {
            return Err(Error::Input("overhead and tuning cycles must be non-negative".into()));
        }
        if self.passes == 0 {
            return Err(Error::Input("at least one pass is required".into()));
        }
        Ok(())
    }

    fn tuning_share(&self) -> T {
        if self.batch_size.is_infinite() {
            T::zero()
        } else {
            T::from_count(self.passes) * self.tuning_cycles_per_retune / self.batch_size
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig<T> {
    pub power_watts: T,
    pub ops_per_cell_search: T,
}

impl<T: Real> Default for PowerConfig<T> {
    fn default() -> Self {
        Self {
            power_watts: T::lit(0.8e-3),
            ops_per_cell_search: T::lit(2.0),
        }
    }
}

/// Search cycles for one inference with every overhead at zero.
pub fn search_cycles(mapped: &MappedModel, passes: usize) -> usize {
    let hidden: usize = mapped.hidden_layers().iter().map(|l| l.cycles()).sum();
    hidden + passes * mapped.output_layer().cycles()
}

pub fn cycles_per_inference<T: Real>(mapped: &MappedModel, t: &TimingConfig<T>) -> T {
    T::from_count(search_cycles(mapped, t.passes)) + t.overhead_cycles_per_image + t.tuning_share()
}

pub fn throughput<T: Real>(mapped: &MappedModel, t: &TimingConfig<T>) -> T {
    t.clock_hz / cycles_per_inference(mapped, t)
}

/// Programmed cells (weights and batch-norm cells) searched per inference.
pub fn active_cell_searches(mapped: &MappedModel, passes: usize) -> usize {
    let cells = |l: &crate::mapper::MappedLayer| l.row_width_total.iter().sum::<usize>();
    let hidden: usize = mapped.hidden_layers().iter().map(cells).sum();
    hidden + passes * cells(mapped.output_layer())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency<T> {
    pub inferences_per_second: T,
    pub inferences_per_joule: T,
    pub ops_per_second: T,
    pub ops_per_joule: T,
}

pub fn efficiency<T: Real>(mapped: &MappedModel, t: &TimingConfig<T>, p: &PowerConfig<T>) -> Efficiency<T> {
    let ips = throughput(mapped, t);
    let ops = p.ops_per_cell_search * T::from_count(active_cell_searches(mapped, t.passes)) * ips;
    Efficiency {
        inferences_per_second: ips,
        inferences_per_joule: ips / p.power_watts,
        ops_per_second: ops,
        ops_per_joule: ops / p.power_watts,
    }
}

/// Operations per second with `active_cells` cells searched every cycle.
pub fn ops_per_second_at<T: Real>(active_cells: usize, clock_hz: T, p: &PowerConfig<T>) -> T {
    p.ops_per_cell_search * T::from_count(active_cells) * clock_hz
}

/// Every cell of the array searched every cycle.
pub fn peak_ops_per_second<T: Real>(clock_hz: T, p: &PowerConfig<T>) -> T {
    ops_per_second_at(TOTAL_CAPACITY_BITS, clock_hz, p)
}

/// Record of a fitted overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadFit<T> {
    pub target_throughput: T,
    pub search_cycles: usize,
    pub tuning_cycles: T,
    pub overhead_cycles: T,
}

/// Solves for the per-image overhead that makes `throughput` hit `target`,
/// keeping the tuning term fixed.
pub fn calibrate_overhead<T: Real>(
    target: T,
    mapped: &MappedModel,
    t: &TimingConfig<T>,
) -> Result<(TimingConfig<T>, OverheadFit<T>)> {
    t.validate()?;
    let fail = |reason: String| Error::Calibration {
        what: "throughput",
        target: target.as_f64(),
        reason,
    };
    if !(target > T::zero()) || !target.is_finite() {
        return Err(fail("target must be positive".into()));
    }
    let base = T::from_count(search_cycles(mapped, t.passes)) + t.tuning_share();
    let needed = t.clock_hz / target;
    let mut overhead = needed - base;
    let ceiling = t.clock_hz / base;
    if overhead < T::zero() {
        // a target at the ceiling may land a rounding step below zero
        if -overhead <= needed * T::lit(1e-9) {
            overhead = T::zero();
        } else {
            return Err(fail(format!("above the zero-overhead ceiling of {ceiling} inferences/s")));
        }
    }
    let out = TimingConfig {
        overhead_cycles_per_image: overhead,
        ..*t
    };
    Ok((
        out,
        OverheadFit {
            target_throughput: target,
            search_cycles: search_cycles(mapped, t.passes),
            tuning_cycles: t.tuning_share(),
            overhead_cycles: overhead,
        },
    ))
}

/// Static hardware parameters of the fabricated chip.
pub const HARDWARE_METADATA: [(&str, &str); 5] = [
    ("technology", "65 nm CMOS"),
    ("supply voltage", "1.2 V"),
    ("SoC area", "2.38 mm^2"),
    ("accelerator area", "0.87 mm^2"),
    ("reported energy efficiency", "184 TOPs/s (units as reported)"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub timing: TimingConfig<f64>,
    pub power: PowerConfig<f64>,
    pub cycles_per_inference: f64,
    pub efficiency: Efficiency<f64>,
    pub peak_ops_per_second: f64,
    pub capacity_bits: usize,
    pub fit: Option<OverheadFit<f64>>,
}

impl PerfReport {
    pub fn new(mapped: &MappedModel, timing: TimingConfig<f64>, power: PowerConfig<f64>, fit: Option<OverheadFit<f64>>) -> Self {
        Self {
            cycles_per_inference: cycles_per_inference(mapped, &timing),
            efficiency: efficiency(mapped, &timing, &power),
            peak_ops_per_second: peak_ops_per_second(timing.clock_hz, &power),
            capacity_bits: TOTAL_CAPACITY_BITS,
            timing,
            power,
            fit,
        }
    }

    /// Two-column text table.
    pub fn to_table(&self) -> String {
        let e = &self.efficiency;
        let rows = [
            ("operating frequency", format!("{:.3} MHz", self.timing.clock_hz / 1e6)),
            ("capacity", format!("{} bit ({} kbit)", self.capacity_bits, self.capacity_bits / 1024)),
            ("power", format!("{:.3} mW", self.power.power_watts * 1e3)),
            ("passes", self.timing.passes.to_string()),
            ("cycles / inference", format!("{:.3}", self.cycles_per_inference)),
            ("throughput", format!("{:.1} inferences/s", e.inferences_per_second)),
            ("energy efficiency", format!("{:.4e} inferences/s/W", e.inferences_per_joule)),
            ("ops / s (mapped model)", format!("{:.4e}", e.ops_per_second)),
            ("ops / J (mapped model)", format!("{:.4e}", e.ops_per_joule)),
            ("ops / s (full array)", format!("{:.4e}", self.peak_ops_per_second)),
            ("op counting", format!("{} ops per active cell per search", self.power.ops_per_cell_search)),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            writeln!(out, "{k:<28} {v}").unwrap();
        }
        match &self.fit {
            Some(f) => writeln!(
                out,
                "{:<28} {:.4} cycles/image (fit: {:.0} inferences/s target, {} search cycles, {:.4} tuning cycles)",
                "overhead", f.overhead_cycles, f.target_throughput, f.search_cycles, f.tuning_cycles
            )
            .unwrap(),
            None => writeln!(out, "{:<28} {:.4} cycles/image (set)", "overhead", self.timing.overhead_cycles_per_image).unwrap(),
        }
        for (k, v) in HARDWARE_METADATA {
            writeln!(out, "{k:<28} {v}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{BinaryLayer, BinaryModel};
    use crate::bits::BitRow;
    use crate::cam::CamGeometry;
    use crate::mapper::{map_model, MapConfig};

    fn mnist_shape() -> MappedModel {
        let layer = |i: usize, o: usize, c: i32| {
            BinaryLayer::new(i, vec![BitRow::zeros(i); o], vec![c; o]).unwrap()
        };
        let m = BinaryModel::new(vec![layer(784, 128, 3), layer(128, 10, 0)]).unwrap();
        map_model(&m, CamGeometry::whole_memory(64, 2048).unwrap(), MapConfig::default()).unwrap()
    }

    #[test]
    fn base_cycles() {
        let m = mnist_shape();
        let t = TimingConfig::<f64>::default();
        assert_eq!(cycles_per_inference(&m, &t), 35.0);
        let one = TimingConfig { passes: 1, overhead_cycles_per_image: 2.5, ..t };
        assert_eq!(cycles_per_inference(&m, &one), 2.0 + 1.0 + 2.5);
    }

    #[test]
    fn calibrated_to_measured_rate() {
        let m = mnist_shape();
        let (t, fit) = calibrate_overhead(560e3, &m, &TimingConfig::<f64>::default()).unwrap();
        assert!((fit.overhead_cycles - (25e6 / 560e3 - 35.0)).abs() < 1e-9);
        assert!((cycles_per_inference(&m, &t) - 44.642857).abs() < 1e-5);
        let e = efficiency(&m, &t, &PowerConfig::default());
        assert!((e.inferences_per_second / 560e3 - 1.0).abs() < 1e-9);
        assert!((e.inferences_per_joule / 703e6 - 1.0).abs() < 0.01);
    }

    #[test]
    fn ceiling_and_zero_overhead() {
        let m = mnist_shape();
        let t = TimingConfig::<f64>::default();
        let ceiling = throughput(&m, &t);
        let (z, _) = calibrate_overhead(ceiling, &m, &t).unwrap();
        assert_eq!(z.overhead_cycles_per_image, 0.0);
        assert!(matches!(calibrate_overhead(1e6, &m, &t), Err(Error::Calibration { .. })));
    }

    #[test]
    fn scaling_laws() {
        let m = mnist_shape();
        let t = TimingConfig::<f64> { overhead_cycles_per_image: 9.6, tuning_cycles_per_retune: 100.0, batch_size: 1.0, ..Default::default() };
        let base = throughput(&m, &t);
        let fast = TimingConfig { clock_hz: 50e6, ..t };
        assert!((throughput(&m, &fast) / base - 2.0).abs() < 1e-12);
        let inf = TimingConfig { batch_size: f64::INFINITY, ..t };
        let none = TimingConfig { tuning_cycles_per_retune: 0.0, ..t };
        assert_eq!(throughput(&m, &inf), throughput(&m, &none));
        assert!(throughput(&m, &TimingConfig { batch_size: 1000.0, ..t }) > base);
        assert!(throughput(&m, &TimingConfig { passes: 34, ..t }) < base);
    }

    #[test]
    fn ops_accounting() {
        let p = PowerConfig::<f64>::default();
        assert!((peak_ops_per_second(25e6, &p) - 6.5536e12).abs() < 1.0);
        assert_eq!(ops_per_second_at(0, 25e6, &p), 0.0);
        let m = mnist_shape();
        // 128 rows of 787 cells, then 33 passes over 10 rows of 128 cells
        assert_eq!(active_cell_searches(&m, 33), 128 * 787 + 33 * 1280);
    }

    #[test]
    fn invalid_timing_rejected() {
        let m = mnist_shape();
        for bad in [
            TimingConfig::<f64> { clock_hz: 0.0, ..Default::default() },
            TimingConfig { batch_size: 0.5, ..Default::default() },
            TimingConfig { passes: 0, ..Default::default() },
        ] {
            assert!(calibrate_overhead(1.0, &m, &bad).is_err());
        }
    }

    proptest::proptest! {
        #[test]
        fn throughput_monotone(
            passes in 1usize..64,
            overhead in 0.0f64..100.0,
            tuning in 0.0f64..1000.0,
            batch in 1.0f64..1e4,
            clock in 1e6f64..1e8,
        ) {
            let m = mnist_shape();
            let t = TimingConfig { clock_hz: clock, overhead_cycles_per_image: overhead, tuning_cycles_per_retune: tuning, batch_size: batch, passes };
            let base = throughput(&m, &t);
            let tp = |u: TimingConfig<f64>| throughput(&m, &u);
            let more_passes = tp(TimingConfig { passes: passes + 1, ..t });
            let more_overhead = tp(TimingConfig { overhead_cycles_per_image: overhead + 1.0, ..t });
            let faster = tp(TimingConfig { clock_hz: clock * 1.5, ..t });
            let more_tuning = tp(TimingConfig { tuning_cycles_per_retune: tuning + 1.0, ..t });
            let bigger_batch = tp(TimingConfig { batch_size: batch * 2.0, ..t });
            proptest::prop_assert!(more_passes < base);
            proptest::prop_assert!(more_overhead < base);
            proptest::prop_assert!(faster > base);
            proptest::prop_assert!(more_tuning < base);
            if tuning > 0.0 {
                proptest::prop_assert!(bigger_batch > base);
            }
            let (fitted, _) = calibrate_overhead(base, &m, &TimingConfig { overhead_cycles_per_image: 0.0, ..t }).unwrap();
            proptest::prop_assert!((throughput(&m, &fitted) / base - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn report_mentions_fit() {
        let m = mnist_shape();
        let (t, fit) = calibrate_overhead(560e3, &m, &TimingConfig::default()).unwrap();
        let table = PerfReport::new(&m, t, PowerConfig::default(), Some(fit)).to_table();
        assert!(table.contains("560000.0 inferences/s"));
        assert!(table.contains("fit:"));
    }
}
