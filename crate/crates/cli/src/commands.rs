use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::{json, Value};

use picbnn::analog::{AnalogModel, DischargeParams, HdProfile};
use picbnn::bits::BitRow;
use picbnn::bnn::{train, BinaryLayer, BinaryModel, Optimizer, TrainConfig};
use picbnn::cam::{CamGeometry, ShapeOrder};
use picbnn::data_io::{
    binarize_dataset, load_image_folder, load_mnist, load_model, save_cam_dump, save_model,
    save_placement_table, BinaryDataset, MnistSplit, MNIST_DIR_ENV,
};
use picbnn::inference::{default_thresholds, write_traces, Inference, KnobSource, SweepConfig, Variation, VoteRule};
use picbnn::mapper::{map_model, MapConfig, MappedModel};
use picbnn::perf::{calibrate_overhead, PerfReport, PowerConfig, TimingConfig};

use crate::args::*;
use crate::manifest::Manifest;

/// Bad flags or missing inputs; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Fills in defaults that depend on the environment so the manifest does not.
fn resolve(mut cmd: Command) -> Result<Command> {
    let data = match &mut cmd {
        Command::Train(a) => Some(&mut a.data),
        Command::Infer(a) | Command::Sweep(a) => Some(&mut a.data),
        _ => None,
    };
    if let Some(d) = data {
        d.data_dir = Some(resolve_data_dir(d)?);
    }
    Ok(cmd)
}

pub fn run(cmd: Command) -> Result<()> {
    let cmd = resolve(cmd)?;
    match &cmd {
        Command::Train(a) => cmd_train(a, &cmd),
        Command::Map(a) => cmd_map(a, &cmd),
        Command::Infer(a) => cmd_eval(a, &cmd, true),
        Command::Sweep(a) => cmd_eval(a, &cmd, false),
        Command::Calibrate(a) => cmd_calibrate(a, &cmd),
        Command::Report(a) => cmd_report(a, &cmd),
        Command::Replay(a) => {
            let inner = Manifest::read_command(&a.manifest)?;
            if matches!(inner, Command::Replay(_)) {
                return Err(usage("a manifest cannot record another replay"));
            }
            run(inner)
        }
    }
}

fn resolve_data_dir(d: &DataArgs) -> Result<PathBuf> {
    let dir = match (&d.data_dir, d.dataset) {
        (Some(p), _) => p.clone(),
        (None, DatasetKind::Mnist) => std::env::var_os(MNIST_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data/mnist")),
        (None, DatasetKind::Folder) => return Err(usage("--dataset folder needs --data-dir")),
    };
    if !dir.is_dir() {
        return Err(usage(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Train,
    Test,
}

fn load_data(d: &DataArgs, part: Part) -> Result<(BinaryDataset, Value)> {
    let dir = resolve_data_dir(d)?;
    let raw = match d.dataset {
        DatasetKind::Mnist => {
            let split = if part == Part::Train { MnistSplit::Train } else { MnistSplit::Test };
            load_mnist(&dir, split)?
        }
        DatasetKind::Folder => {
            let all = load_image_folder(&dir, d.image_side)?;
            let (tr, te) = all.split(d.train_fraction, d.split_seed);
            if part == Part::Train { tr } else { te }
        }
    };
    let bin = binarize_dataset(&raw, d.binarize_threshold)?;
    let info = json!({
        "dir": dir,
        "name": bin.name,
        "images": bin.len(),
        "dim": bin.dim(),
        "classes": bin.classes,
        "skipped_files": raw.skipped,
    });
    Ok((bin, info))
}

fn software_accuracy(model: &BinaryModel, data: &BinaryDataset) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &l) in data.inputs.iter().zip(&data.labels) {
        correct += (model.predict(x)? == l as usize) as usize;
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

fn cmd_train(a: &TrainArgs, cmd: &Command) -> Result<()> {
    let (train_set, train_info) = load_data(&a.data, Part::Train)?;
    let (test_set, test_info) = load_data(&a.data, Part::Test)?;
    let arch = a
        .arch
        .clone()
        .unwrap_or_else(|| vec![train_set.dim(), 128, train_set.classes]);
    if arch.len() < 2 || arch[0] != train_set.dim() || *arch.last().unwrap() < train_set.classes {
        return Err(usage(format!(
            "--arch {arch:?} does not fit inputs of width {} with {} classes",
            train_set.dim(),
            train_set.classes
        )));
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        bn_cap: a.bn_cap,
        optimizer: match a.optimizer {
            OptimizerKind::Adam => Optimizer::Adam,
            OptimizerKind::Sgd => Optimizer::SgdMomentum { momentum: a.momentum },
        },
        ..TrainConfig::default()
    };
    info!("training {arch:?} on {} images", train_set.len());
    let trained = train::<f32>(&train_set, &arch, &cfg)?;
    save_model(&a.out, &trained.model)?;
    let test_acc = software_accuracy(&trained.model, &test_set)?;
    let r = &trained.report;
    println!("model       {}", a.out.display());
    println!("arch        {arch:?}");
    println!("train acc   {:.4}", r.train_accuracy);
    println!("test acc    {test_acc:.4} (software argmax)");
    println!("clamped     {:?}  negated {:?}  bn range {:?}", r.clamped, r.negated, r.bn_range);
    Manifest::new(cmd)
        .param("train_config", &cfg)
        .param("arch", &arch)
        .param("train_data", train_info)
        .param("test_data", test_info)
        .output("model", &a.out)
        .result("report", r)
        .result("test_accuracy", test_acc)
        .write(&a.out)
}

fn geometry(g: &GeometryArgs) -> Result<CamGeometry> {
    if g.geometry.eq_ignore_ascii_case("physical") {
        return Ok(CamGeometry::physical());
    }
    let order = if g.columns_first { ShapeOrder::ColumnsByRows } else { ShapeOrder::RowsByColumns };
    CamGeometry::parse(&g.geometry, order).map_err(|e| usage(e.to_string()))
}

fn map_cfg(g: &GeometryArgs) -> MapConfig {
    MapConfig {
        bn_cap: g.bn_cap,
        allow_reuse: g.allow_reuse,
    }
}

fn map(model: &BinaryModel, g: &GeometryArgs) -> Result<MappedModel> {
    Ok(map_model(model, geometry(g)?, map_cfg(g))?)
}

fn cmd_map(a: &MapArgs, cmd: &Command) -> Result<()> {
    let model = load_model(&a.model)?;
    let mapped = map(&model, &a.geometry)?;
    save_cam_dump(&a.out, &mapped)?;
    save_placement_table(&a.placement, &mapped)?;
    let audit = mapped.audit(&model)?;
    println!("geometry    {:?}", mapped.geometry);
    println!("cycles      {:?}", audit.cycles_per_layer);
    println!("tiled       {:?}", audit.tiled_layers);
    println!(
        "bits        {} weight + {} batch-norm of {}",
        audit.weight_bits, audit.bn_cells, audit.capacity_bits
    );
    Manifest::new(cmd)
        .param("geometry", mapped.geometry)
        .param("map_config", mapped.config)
        .output("cam_dump", &a.out)
        .output("placement", &a.placement)
        .result("audit", &audit)
        .write(&a.out)
}

/// `0,4,8` or `start:end[:step]` (inclusive).
pub fn parse_thresholds(s: &str) -> Result<Vec<u32>> {
    let bad = || usage(format!("bad threshold list {s:?}"));
    let out: Vec<u32> = if s.contains(':') {
        let p = s
            .split(':')
            .map(|v| v.trim().parse::<u32>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let (lo, hi, step) = match p[..] {
            [lo, hi] => (lo, hi, 1),
            [lo, hi, step] if step > 0 => (lo, hi, step),
            _ => return Err(bad()),
        };
        (lo..=hi).step_by(step as usize).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<u32>().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn sweep_config(a: &SweepArgs) -> Result<SweepConfig> {
    let thresholds = match (&a.thresholds, a.passes) {
        (Some(s), _) => parse_thresholds(s)?,
        (None, Some(0)) => return Err(usage("--passes must be at least 1")),
        (None, Some(p)) if p > default_thresholds().len() => {
            return Err(usage(format!("--passes is at most {}", default_thresholds().len())))
        }
        (None, Some(p)) => SweepConfig::with_passes(p).thresholds,
        (None, None) => default_thresholds(),
    };
    let knob_source = match a.knob_mode {
        KnobMode::Digital => KnobSource::Digital,
        KnobMode::Physical => KnobSource::AnalogPhysical,
        KnobMode::Lookup => KnobSource::AnalogLookup,
    };
    if a.variation_sigma.is_some() && knob_source == KnobSource::Digital {
        return Err(usage("--variation-sigma needs an analog --knob-mode"));
    }
    Ok(SweepConfig {
        thresholds,
        vote_rule: match a.vote {
            VoteKind::Argmax => VoteRule::ArgmaxCount,
            VoteKind::Majority => VoteRule::SimpleMajority,
        },
        knob_source,
        variation: a.variation_sigma.map(|sigma| Variation { sigma, seed: a.variation_seed }),
    })
}

fn lookup_model(profile: &Option<PathBuf>) -> Result<AnalogModel<f64>> {
    Ok(match profile {
        Some(p) => AnalogModel::lookup(HdProfile::load(p)?),
        None => AnalogModel::lookup_default(),
    })
}

fn cmd_eval(a: &EvalArgs, cmd: &Command, traces: bool) -> Result<()> {
    let model = load_model(&a.model)?;
    let (mut data, data_info) = load_data(&a.data, Part::Test)?;
    if let Some(n) = a.limit {
        data = data.take(n);
    }
    let mapped = map(&model, &a.geometry)?;
    let cfg = sweep_config(&a.sweep)?;
    let engine = Inference::<f64>::with_models(
        &mapped,
        cfg.clone(),
        AnalogModel::physical_default(),
        lookup_model(&a.sweep.profile)?,
    )?;
    let eval = engine.evaluate(&data)?;
    let baseline = software_accuracy(&model, &data)?;
    let r = &eval.report;
    eval.report.write_csv(&a.csv)?;
    let mut m = Manifest::new(cmd)
        .param("sweep", &cfg)
        .param("geometry", mapped.geometry)
        .param("data", data_info)
        .output("csv", &a.csv);
    if traces {
        write_traces(&a.traces, &eval.traces, &data.labels)?;
        m = m.output("traces", &a.traces);
    }
    println!("images      {}", r.images);
    println!("passes      {}", cfg.thresholds.len());
    println!("top1        {:.4}", r.top1);
    println!("top2        {:.4}", r.top2);
    println!("tie rate    {:.4}", r.tie_rate);
    println!("software    {baseline:.4}");
    if !traces {
        for p in &r.prefix {
            println!("  k={:<3} T<={:<3} top1 {:.4}", p.k, p.threshold_max, p.top1);
        }
    }
    if r.monotonicity_violations > 0 {
        warn!("{} monotonicity violations", r.monotonicity_violations);
    }
    m.result("top1", r.top1)
        .result("top2", r.top2)
        .result("tie_rate", r.tie_rate)
        .result("software_accuracy", baseline)
        .result("monotonicity_violations", r.monotonicity_violations)
        .write(&a.csv)
}

fn cmd_calibrate(a: &CalibrateArgs, cmd: &Command) -> Result<()> {
    let thresholds = parse_thresholds(&a.thresholds)?;
    let model = match a.knob_mode {
        KnobMode::Physical => AnalogModel::physical(DischargeParams {
            v_th: a.vth,
            t0: a.t0,
            ..DischargeParams::default()
        }),
        KnobMode::Lookup => lookup_model(&a.profile)?,
        KnobMode::Digital => return Err(usage("calibrate needs --knob-mode physical or lookup")),
    };
    let mut csv = String::from("threshold,v_ref,v_eval,v_st,round_trip,status\n");
    let mut flagged = Vec::new();
    println!("{:>9} {:>10} {:>10} {:>10} {:>10}  status", "threshold", "v_ref", "v_eval", "v_st", "round-trip");
    for &t in &thresholds {
        let row = model
            .calibrate_knobs(t)
            .and_then(|k| model.hd_threshold_of(&k).map(|back| (k, back)));
        match row {
            Ok((k, back)) => {
                let status = if back == t { "ok" } else { "mismatch" };
                if back != t {
                    flagged.push(t);
                }
                println!(
                    "{t:>9} {:>10.3} {:>10.3} {:>10.3} {back:>10}  {status}",
                    k.v_ref, k.v_eval, k.v_st
                );
                csv.push_str(&format!("{t},{:.6},{:.6},{:.6},{back},{status}\n", k.v_ref, k.v_eval, k.v_st));
            }
            Err(e) => {
                flagged.push(t);
                println!("{t:>9} {:>10} {:>10} {:>10} {:>10}  FLAGGED: {e}", "-", "-", "-", "-");
                csv.push_str(&format!("{t},,,,,\"{e}\"\n"));
            }
        }
    }
    std::fs::write(&a.out, csv).with_context(|| format!("writing {}", a.out.display()))?;
    if !flagged.is_empty() {
        warn!("{} thresholds could not be calibrated: {flagged:?}", flagged.len());
    }
    Manifest::new(cmd)
        .param("thresholds", &thresholds)
        .param("mode", a.knob_mode)
        .output("knobs", &a.out)
        .result("flagged", &flagged)
        .write(&a.out)
}

fn shape_only_model(arch: &[usize]) -> Result<BinaryModel> {
    if arch.len() < 2 || arch.contains(&0) {
        return Err(usage(format!("bad --arch {arch:?}")));
    }
    let layers = arch
        .windows(2)
        .map(|w| BinaryLayer::new(w[0], vec![BitRow::zeros(w[0]); w[1]], vec![0; w[1]]))
        .collect::<picbnn::Result<Vec<_>>>()?;
    Ok(BinaryModel::new(layers)?)
}

fn cmd_report(a: &ReportArgs, cmd: &Command) -> Result<()> {
    let model = match (&a.model, &a.arch) {
        (Some(p), _) => load_model(p)?,
        (None, Some(arch)) => shape_only_model(arch)?,
        (None, None) => bail!(usage("report needs --model or --arch")),
    };
    let mapped = map(&model, &a.geometry)?;
    let batch: f64 = a
        .batch
        .parse()
        .map_err(|_| usage(format!("bad --batch {:?}", a.batch)))?;
    let timing = TimingConfig {
        clock_hz: a.clock,
        overhead_cycles_per_image: a.overhead.unwrap_or(0.0),
        tuning_cycles_per_retune: a.tuning_cycles,
        batch_size: batch,
        passes: a.passes,
    };
    timing.validate().map_err(|e| usage(e.to_string()))?;
    let power = PowerConfig {
        power_watts: a.power,
        ..PowerConfig::default()
    };
    if !(a.power > 0.0) {
        return Err(usage("--power must be positive"));
    }
    let (timing, fit) = match a.overhead {
        Some(_) => (timing, None),
        None => {
            let reference = TimingConfig {
                clock_hz: a.fit_clock,
                passes: a.passes,
                ..TimingConfig::default()
            };
            let (_, fit) = calibrate_overhead(a.target_throughput, &mapped, &reference)?;
            info!("fitted overhead {:.4} cycles/image", fit.overhead_cycles);
            let t = TimingConfig {
                overhead_cycles_per_image: fit.overhead_cycles,
                ..timing
            };
            (t, Some(fit))
        }
    };
    let report = PerfReport::new(&mapped, timing, power, fit);
    let table = report.to_table();
    print!("{table}");
    std::fs::write(&a.out, &table)?;
    Manifest::new(cmd)
        .param("geometry", mapped.geometry)
        .param("timing", timing)
        .param("power", power)
        .output("report", &a.out)
        .result("report", &report)
        .write(&a.out)
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
