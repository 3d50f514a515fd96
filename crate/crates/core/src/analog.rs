//! Mapping from the three sense voltages `(V_ref, V_eval, V_st)` to an
//! integer HD tolerance threshold.
//!
//! Two modes are provided. `Lookup` answers from a measured table of knob
//! settings (the silicon characterization ships as the default profile).
//! `Physical` uses an RC matchline: every mismatching cell adds a discharge
//! path whose square-law conductance is set by `V_eval`, the sense amplifier
//! samples at a time set by `V_st`, and a row still reads as a match when its
//! matchline is above `V_ref` at that instant.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Supply and precharge level in millivolts.
pub const SUPPLY_MV: f64 = 1200.0;

/// Measured knob combinations and the thresholds they produced on silicon:
/// `(v_ref, v_eval, v_st, threshold)` in millivolts.
pub const MEASURED_PROFILE: [(f64, f64, f64, u32); 10] = [
    (1200.0, 1200.0, 1200.0, 0),
    (750.0, 950.0, 1200.0, 4),
    (775.0, 600.0, 1200.0, 8),
    (1175.0, 350.0, 1150.0, 12),
    (950.0, 525.0, 1100.0, 16),
    (1025.0, 475.0, 1000.0, 20),
    (950.0, 500.0, 1025.0, 24),
    (775.0, 600.0, 1100.0, 28),
    (1175.0, 400.0, 1150.0, 32),
    (1000.0, 475.0, 725.0, 36),
];

/// Sense reference, evaluation gate and sampling-time control voltages (mV).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalogKnobs<T> {
    pub v_ref: T,
    pub v_eval: T,
    pub v_st: T,
}

impl<T: Real> AnalogKnobs<T> {
    /// Checks every voltage lies in `(0, 1200]` mV.
    pub fn new(v_ref: T, v_eval: T, v_st: T) -> Result<Self> {
        let k = Self {
            v_ref,
            v_eval,
            v_st,
        };
        k.check_range(T::lit(SUPPLY_MV))?;
        Ok(k)
    }

    pub fn check_range(&self, v_dd: T) -> Result<()> {
        for (name, v) in [
            ("v_ref", self.v_ref),
            ("v_eval", self.v_eval),
            ("v_st", self.v_st),
        ] {
            if !v.is_finite() || v <= T::zero() || v > v_dd {
                return Err(Error::Input(format!(
                    "{name} = {v} mV outside the legal range (0, {v_dd}]"
                )));
            }
        }
        Ok(())
    }

    fn distance2(&self, other: &Self) -> T {
        let d = |a: T, b: T| (a - b) * (a - b);
        d(self.v_ref, other.v_ref) + d(self.v_eval, other.v_eval) + d(self.v_st, other.v_st)
    }
}

/// Device constants of the matchline discharge model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DischargeParams<T> {
    /// Precharge level (mV).
    pub v_dd: T,
    /// Matchline capacitance, arbitrary consistent units.
    pub c_ml: T,
    /// Discharge conductance of one mismatching cell with `v_eval = v_dd`.
    pub g0: T,
    /// Threshold voltage of the evaluation transistor (mV).
    pub v_th: T,
    /// Sampling time at `v_st = v_dd`; sampling happens at `t0 * v_dd / v_st`.
    pub t0: T,
    /// Saturation value returned when no discharge happens at all. Equals the
    /// widest logical row, so every row matches.
    pub max_row_width: u32,
}

impl<T: Real> Default for DischargeParams<T> {
    fn default() -> Self {
        Self {
            v_dd: T::lit(SUPPLY_MV),
            c_ml: T::one(),
            g0: T::one(),
            v_th: T::lit(300.0),
            t0: T::lit(0.04),
            max_row_width: 2048,
        }
    }
}

impl<T: Real> DischargeParams<T> {
    /// Square-law conductance of one mismatching cell's discharge path.
    pub fn conductance(&self, v_eval: T) -> T {
        let over = (v_eval - self.v_th).max(T::zero());
        let span = self.v_dd - self.v_th;
        (self.g0 * over * over / (span * span)).max(T::zero())
    }

    /// Sampling instant selected by `v_st`; later sampling for lower `v_st`.
    pub fn sampling_time(&self, v_st: T) -> T {
        self.t0 * self.v_dd / v_st
    }

    /// Matchline voltage after `t` with `mismatches` parallel discharge paths.
    pub fn ml_voltage(&self, mismatches: u32, t: T, v_eval: T) -> T {
        self.ml_voltage_with_gain(mismatches, t, v_eval, T::one())
    }

    fn ml_voltage_with_gain(&self, mismatches: u32, t: T, v_eval: T, gain: T) -> T {
        if mismatches == 0 {
            return self.v_dd;
        }
        let rate = T::from_u32(mismatches).expect("mismatch count representable")
            * (self.conductance(v_eval) * gain)
            * t
            / self.c_ml;
        self.v_dd * (-rate).exp()
    }

    /// Largest mismatch count whose matchline is still above `v_ref` when
    /// sampled. A row with no mismatches never discharges and always matches.
    fn threshold(&self, knobs: &AnalogKnobs<T>, gain: T) -> u32 {
        let t = self.sampling_time(knobs.v_st);
        let above = |m: u32| self.ml_voltage_with_gain(m, t, knobs.v_eval, gain) > knobs.v_ref;
        let max = self.max_row_width;
        let rate = self.conductance(knobs.v_eval) * gain * t / self.c_ml;
        if !(rate > T::zero()) {
            return max;
        }
        if knobs.v_ref >= self.v_dd {
            return 0;
        }
        let est = ((self.v_dd / knobs.v_ref).ln() / rate).ceil() - T::one();
        let mut m = est.max(T::zero()).min(T::from_u32(max).unwrap()).to_u32().unwrap_or(0);
        // the closed form can land one step off under rounding; settle on the
        // exact predicate
        while m < max && above(m + 1) {
            m += 1;
        }
        while m > 0 && !above(m) {
            m -= 1;
        }
        m
    }
}

/// Ordered `(knobs, threshold)` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdProfile<T> {
    pub entries: Vec<(AnalogKnobs<T>, u32)>,
}

impl<T: Real> HdProfile<T> {
    /// The ten measured silicon settings.
    pub fn measured() -> Self {
        Self {
            entries: MEASURED_PROFILE
                .iter()
                .map(|&(r, e, s, t)| {
                    (
                        AnalogKnobs {
                            v_ref: T::lit(r),
                            v_eval: T::lit(e),
                            v_st: T::lit(s),
                        },
                        t,
                    )
                })
                .collect(),
        }
    }

    /// Parses `v_ref_mv v_eval_mv v_st_mv threshold` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::Profile(format!(
                    "line {}: expected 4 columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let volt = |s: &str| {
                s.parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| Error::Profile(format!("line {}: bad voltage {s:?}", lineno + 1)))
            };
            let knobs = AnalogKnobs::new(volt(cols[0])?, volt(cols[1])?, volt(cols[2])?)
                .map_err(|e| Error::Profile(format!("line {}: {e}", lineno + 1)))?;
            let threshold = cols[3].parse::<u32>().map_err(|_| {
                Error::Profile(format!("line {}: bad threshold {:?}", lineno + 1, cols[3]))
            })?;
            entries.push((knobs, threshold));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# v_ref_mv v_eval_mv v_st_mv threshold\n");
        for (k, t) in &self.entries {
            out.push_str(&format!("{} {} {} {}\n", k.v_ref, k.v_eval, k.v_st, t));
        }
        out
    }

    /// Exact entry if present, otherwise the nearest entry in voltage space;
    /// equal distances resolve to the earlier entry.
    pub fn lookup(&self, knobs: &AnalogKnobs<T>) -> Result<u32> {
        if let Some((_, t)) = self.entries.iter().find(|(k, _)| k == knobs) {
            return Ok(*t);
        }
        let mut best: Option<(T, u32)> = None;
        for (k, t) in &self.entries {
            let d = k.distance2(knobs);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, *t));
            }
        }
        best.map(|(_, t)| t)
            .ok_or_else(|| Error::Profile("profile has no entries".into()))
    }

    pub fn thresholds(&self) -> Vec<u32> {
        self.entries.iter().map(|(_, t)| *t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalogMode {
    Lookup,
    Physical,
}

/// Threshold model: either the measured table or the RC discharge physics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogModel<T> {
    pub mode: AnalogMode,
    pub discharge: DischargeParams<T>,
    pub profile: HdProfile<T>,
}

impl<T: Real> AnalogModel<T> {
    pub fn physical(discharge: DischargeParams<T>) -> Self {
        Self {
            mode: AnalogMode::Physical,
            discharge,
            profile: HdProfile::measured(),
        }
    }

    pub fn physical_default() -> Self {
        Self::physical(DischargeParams::default())
    }

    pub fn lookup(profile: HdProfile<T>) -> Self {
        Self {
            mode: AnalogMode::Lookup,
            discharge: DischargeParams::default(),
            profile,
        }
    }

    pub fn lookup_default() -> Self {
        Self::lookup(HdProfile::measured())
    }

    pub fn conductance(&self, v_eval: T) -> T {
        self.discharge.conductance(v_eval)
    }

    pub fn ml_voltage(&self, mismatches: u32, t: T, knobs: &AnalogKnobs<T>) -> T {
        self.discharge.ml_voltage(mismatches, t, knobs.v_eval)
    }

    pub fn hd_threshold_of(&self, knobs: &AnalogKnobs<T>) -> Result<u32> {
        match self.mode {
            AnalogMode::Lookup => self.profile.lookup(knobs),
            AnalogMode::Physical => {
                knobs.check_range(self.discharge.v_dd)?;
                Ok(self.discharge.threshold(knobs, T::one()))
            }
        }
    }

    /// Threshold with the per-cell conductance scaled by `gain` (variation hook).
    pub fn hd_threshold_with_gain(&self, knobs: &AnalogKnobs<T>, gain: T) -> Result<u32> {
        match self.mode {
            AnalogMode::Lookup => self.profile.lookup(knobs),
            AnalogMode::Physical => {
                knobs.check_range(self.discharge.v_dd)?;
                Ok(self.discharge.threshold(knobs, gain.max(T::zero())))
            }
        }
    }

    fn mid_eval(&self) -> T {
        (self.discharge.v_th + self.discharge.v_dd) / T::lit(2.0)
    }

    fn mid_st(&self) -> T {
        self.discharge.v_dd / T::lit(2.0)
    }

    /// Finds knobs whose threshold is exactly `target`.
    ///
    /// Physical mode bisects `v_ref` at mid-range `v_eval`/`v_st`; if the
    /// target falls outside what `v_ref` alone can reach there, it walks a
    /// fixed grid of slower `v_eval` and later `v_st` settings and retries.
    pub fn calibrate_knobs(&self, target: u32) -> Result<AnalogKnobs<T>> {
        match self.mode {
            AnalogMode::Lookup => self
                .profile
                .entries
                .iter()
                .find(|(_, t)| *t == target)
                .map(|(k, _)| *k)
                .ok_or_else(|| {
                    Error::threshold_calibration(
                        target,
                        format!("profile only provides {:?}", self.profile.thresholds()),
                    )
                }),
            AnalogMode::Physical => self.calibrate_physical(target),
        }
    }

    fn calibrate_physical(&self, target: u32) -> Result<AnalogKnobs<T>> {
        let max = self.discharge.max_row_width;
        if target > max {
            return Err(Error::threshold_calibration(
                target,
                format!("achievable thresholds are 0..={max}"),
            ));
        }
        let v_dd = self.discharge.v_dd;
        if target == 0 {
            return Ok(AnalogKnobs {
                v_ref: v_dd,
                v_eval: self.mid_eval(),
                v_st: self.mid_st(),
            });
        }
        const GRID: usize = 32;
        let v_eval_floor = self.discharge.v_th + (v_dd - self.discharge.v_th) * T::lit(0.01);
        for step in 0..=GRID {
            let f = T::from_count(step) / T::from_count(GRID);
            let v_eval = self.mid_eval() + (v_eval_floor - self.mid_eval()) * f;
            let v_st = self.mid_st() + (v_dd - self.mid_st()) * f;
            if let Some(v_ref) = self.bisect_v_ref(target, v_eval, v_st) {
                return Ok(AnalogKnobs {
                    v_ref,
                    v_eval,
                    v_st,
                });
            }
        }
        Err(Error::threshold_calibration(
            target,
            "no legal voltage combination on the calibration grid",
        ))
    }

    fn bisect_v_ref(&self, target: u32, v_eval: T, v_st: T) -> Option<T> {
        let v_dd = self.discharge.v_dd;
        let thr = |v_ref: T| {
            self.discharge.threshold(
                &AnalogKnobs {
                    v_ref,
                    v_eval,
                    v_st,
                },
                T::one(),
            )
        };
        // start from the geometric midpoint of the target's v_ref window
        let rate = self.conductance(v_eval) * self.discharge.sampling_time(v_st) / self.discharge.c_ml;
        if rate > T::zero() {
            let guess = v_dd * (-(T::from_u32(target)? + T::lit(0.5)) * rate).exp();
            if guess > T::zero() && guess <= v_dd && thr(guess) == target {
                return Some(guess);
            }
        }
        let mut lo = T::min_positive_value();
        let mut hi = v_dd;
        if thr(lo) < target {
            return None;
        }
        for _ in 0..400 {
            let mid = lo + (hi - lo) / T::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            match thr(mid).cmp(&target) {
                std::cmp::Ordering::Greater => lo = mid,
                std::cmp::Ordering::Less => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Knobs realizing a majority decision on a row of `row_width` cells:
    /// threshold `floor((row_width - 1) / 2)`, so an exact tie reads as a
    /// mismatch.
    pub fn majority_knobs(&self, row_width: u32) -> Result<AnalogKnobs<T>> {
        if row_width == 0 {
            return Err(Error::Input("row width must be at least 1".into()));
        }
        self.calibrate_knobs(majority_threshold(row_width))
    }
}

/// `floor((n - 1) / 2)`: matches strictly outnumber mismatches.
#[inline]
pub fn majority_threshold(row_width: u32) -> u32 {
    row_width.saturating_sub(1) / 2
}

/// Seeded Gaussian perturbation of the per-cell discharge conductance.
/// Off by default; each call to [`VariationHook::thresholds`] draws one
/// independent gain per row.
#[derive(Debug, Clone)]
pub struct VariationHook {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl VariationHook {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn thresholds<T: Real>(
        &mut self,
        model: &AnalogModel<T>,
        knobs: &AnalogKnobs<T>,
        rows: usize,
    ) -> Result<Vec<u32>> {
        (0..rows)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                model.hd_threshold_with_gain(knobs, T::lit(1.0 + self.sigma * z))
            })
            .collect()
    }
}
