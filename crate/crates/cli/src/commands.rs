//! One function per subcommand. Each returns what the manifest needs; the
//! caller adds timing and writes it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cspm_core::checkpoint::load_checkpoint;
use cspm_core::eval::{emit_report, evaluate, MetricsReport, ReportFormat};
use cspm_core::fsutil::write_atomic;
use cspm_core::model::{Cspmnet, ModelConfig, Variant};
use cspm_core::phase_motion::channel_names;
use cspm_core::signal::{
    read_container, split_dataset, synthesize_dataset, write_container, Dataset, GenerationConfig, Impairments, Split,
};
use cspm_core::train::{grad_check, train, AdamConfig, GradCheckConfig, Precision, TrainConfig, TrainOutcome};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    AblateArgs, Command, DumpArgs, EvalArgs, FitArgs, FormatArg, GenerateArgs, GradcheckArgs, InspectArgs, ModelArgs,
    PrecisionArg, TrainArgs, VariantArg,
};
use crate::error::{CliError, Result};
use crate::manifest;
use crate::parse;

/// Everything a finished command reports back for its manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub resolved: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// `None` when the command wrote no files.
    pub manifest: Option<PathBuf>,
    /// Set when the command completed and wrote its outputs but the result
    /// itself is a failure, as with a failed gradient check.
    pub failure: Option<CliError>,
}

pub fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::InspectFilters(a) => inspect_filters(a),
        Command::DumpFeatures(a) => dump_features(a),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be nested inside a manifest".into())),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| CliError::Serialize(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| CliError::Serialize(e.to_string()))
}

fn csv_row<I, T>(w: &mut csv::Writer<Vec<u8>>, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| CliError::Serialize(e.to_string()))
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Full => Variant::Full,
        VariantArg::PhaseMotionOnly => Variant::PhaseMotionOnly,
        VariantArg::FixedMorlet => Variant::FixedMorlet,
        VariantArg::LearnableMorlet => Variant::LearnableMorlet,
    }
}

fn model_config(m: &ModelArgs, v: Variant, ds: &Dataset) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        variant: v,
        seq_len: ds.seq_len(),
        num_classes: ds.num_classes(),
        num_subbands: m.subbands,
        kernel_len: m.kernel,
        lags: parse::lags(&m.lags)?,
        mix_channels: m.mix_channels,
        mix_kernel: m.mix_kernel,
        hidden: m.hidden,
        attention_dim: m.attention_dim,
        mlp_hidden: m.mlp_hidden,
        ..ModelConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(f: &FitArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: f.epochs,
        batch_size: f.batch,
        adam: AdamConfig {
            learning_rate: f.lr,
            ..AdamConfig::default()
        },
        seed,
        clip_norm: f.clip_norm,
        budget: Some(f.budget),
        ..TrainConfig::default()
    }
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{:.2}%", 100.0 * a))
}

fn print_report(report: &MetricsReport) {
    let s = &report.segment_accuracy;
    println!(
        "OA {:.2}%  low {}  mid {}  high {}  ({} examples, {} params, {} FLOPs)",
        100.0 * report.overall_accuracy,
        fmt_acc(s.low),
        fmt_acc(s.mid),
        fmt_acc(s.high),
        report.num_examples,
        report.params,
        report.flops
    );
}

fn emit(report: &MetricsReport, dir: &Path, format: FormatArg) -> Result<Vec<PathBuf>> {
    let formats: &[ReportFormat] = match format {
        FormatArg::Json => &[ReportFormat::Json],
        FormatArg::Csv => &[ReportFormat::Csv],
        FormatArg::Both => &[ReportFormat::Json, ReportFormat::Csv],
    };
    let mut out = Vec::new();
    for &f in formats {
        out.extend(emit_report(report, dir, f)?);
    }
    Ok(out)
}

fn generate(a: &GenerateArgs) -> Result<Outcome> {
    let cfg = GenerationConfig {
        classes: parse::classes(&a.classes)?,
        snr_grid: parse::snr_grid(&a.snr)?,
        per_cell: a.per_cell,
        length: a.length,
        seed: a.seed,
        impairments: if a.no_impairments {
            Impairments::none()
        } else {
            Impairments::default()
        },
        ..GenerationConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = synthesize_dataset(&cfg)?;
    write_container(&ds, &a.out)?;
    println!(
        "wrote {} examples ({} classes x {} SNRs x {}) to {}",
        ds.len(),
        ds.num_classes(),
        cfg.snr_grid.len(),
        cfg.per_cell,
        a.out.display()
    );
    Ok(Outcome {
        resolved: json!({ "generation": to_json(&cfg)? }),
        seeds: BTreeMap::from([("generation".to_string(), a.seed)]),
        inputs: vec![],
        outputs: vec![a.out.clone()],
        manifest: Some(manifest::for_file(&a.out)),
        failure: None,
    })
}

/// Trains one model into `dir` and scores its best checkpoint on the test
/// split.
fn fit_and_score(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split: &Split,
    dir: &Path,
    label: &str,
) -> Result<(TrainOutcome, MetricsReport)> {
    create_dir(dir)?;
    let outcome = train(model_cfg, train_cfg, &split.train, &split.val, Some(dir), |r| {
        eprintln!(
            "[{label}] epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  ({:.1}s)",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.seconds
        )
    })?;
    let report = evaluate(&outcome.best, &split.test, train_cfg.eval_batch)?;
    Ok((outcome, report))
}

fn write_split(split: &Split, dir: &Path) -> Result<Vec<PathBuf>> {
    let split_path = dir.join("split.json");
    let json = serde_json::to_vec(&split.indices).map_err(|e| CliError::Serialize(e.to_string()))?;
    write_atomic(&split_path, &json)?;
    let test_path = dir.join("test.cspm");
    write_container(&split.test, &test_path)?;
    Ok(vec![split_path, test_path])
}

fn train_cmd(a: &TrainArgs) -> Result<Outcome> {
    let ds = read_container(&a.data)?;
    let ratios = parse::split(&a.fit.split)?;
    let model_cfg = model_config(&a.model, variant(a.variant), &ds)?;
    let train_cfg = train_config(&a.fit, a.seed);
    let split = split_dataset(&ds, ratios, a.seed)?;
    create_dir(&a.out)?;
    let (outcome, report) = fit_and_score(&model_cfg, &train_cfg, &split, &a.out, model_cfg.variant.name())?;
    let mut outputs = vec![
        a.out.join("best.ckpt"),
        a.out.join("last.ckpt"),
        a.out.join("history.csv"),
    ];
    outputs.extend(write_split(&split, &a.out)?);
    outputs.extend(emit(&report, &a.out, FormatArg::Both)?);
    println!(
        "best epoch {} (val_acc {:.4}); test split:",
        outcome.history.best_epoch,
        outcome.history.best().val_acc
    );
    print_report(&report);
    Ok(Outcome {
        resolved: json!({
            "model": to_json(&model_cfg)?,
            "train": to_json(&train_cfg)?,
            "split": to_json(&ratios)?,
        }),
        seeds: BTreeMap::from([("split".to_string(), a.seed), ("train".to_string(), a.seed)]),
        inputs: vec![a.data.clone()],
        outputs,
        manifest: Some(manifest::for_dir(&a.out)),
        failure: None,
    })
}

fn eval_cmd(a: &EvalArgs) -> Result<Outcome> {
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = read_container(&a.data)?;
    let report = evaluate(&model, &ds, TrainConfig::default().eval_batch)?;
    create_dir(&a.out)?;
    let outputs = emit(&report, &a.out, a.format)?;
    print_report(&report);
    Ok(Outcome {
        resolved: json!({ "model": to_json(model.config())? }),
        seeds: BTreeMap::new(),
        inputs: vec![a.checkpoint.clone(), a.data.clone()],
        outputs,
        manifest: Some(manifest::for_dir(&a.out)),
        failure: None,
    })
}

#[derive(Debug, Serialize)]
struct AblationRun {
    variant: &'static str,
    seed: u64,
    params: u64,
    flops: u64,
    best_epoch: usize,
    overall_accuracy: f64,
    low: Option<f64>,
    mid: Option<f64>,
    high: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let all: Option<Vec<f64>> = v.collect();
    all.map(|xs| mean(xs.into_iter()))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn ablate(a: &AblateArgs) -> Result<Outcome> {
    let ds = read_container(&a.data)?;
    let ratios = parse::split(&a.fit.split)?;
    let seeds = parse::seeds(&a.seeds)?;
    let split = split_dataset(&ds, ratios, seeds[0])?;
    create_dir(&a.out)?;
    let mut outputs = write_split(&split, &a.out)?;
    let mut runs = Vec::new();
    let mut resolved_models = serde_json::Map::new();
    for v in Variant::ALL {
        let model_cfg = model_config(&a.model, v, &ds)?;
        resolved_models.insert(v.name().to_string(), to_json(&model_cfg)?);
        for &seed in &seeds {
            let dir = a.out.join(v.name()).join(format!("seed-{seed}"));
            let train_cfg = train_config(&a.fit, seed);
            let (outcome, report) = fit_and_score(
                &model_cfg,
                &train_cfg,
                &split,
                &dir,
                &format!("{} seed {seed}", v.name()),
            )?;
            outputs.extend(emit(&report, &dir, FormatArg::Both)?);
            outputs.extend(["best.ckpt", "last.ckpt", "history.csv"].map(|f| dir.join(f)));
            runs.push(AblationRun {
                variant: v.name(),
                seed,
                params: report.params,
                flops: report.flops,
                best_epoch: outcome.history.best_epoch,
                overall_accuracy: report.overall_accuracy,
                low: report.segment_accuracy.low,
                mid: report.segment_accuracy.mid,
                high: report.segment_accuracy.high,
            });
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &runs {
        w.serialize(r).map_err(|e| CliError::Serialize(e.to_string()))?;
    }
    let runs_path = a.out.join("ablation_runs.csv");
    write_atomic(&runs_path, &csv_bytes(w)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    csv_row(
        &mut w,
        [
            "variant",
            "params",
            "flops",
            "seeds",
            "overall_accuracy",
            "delta_vs_full",
            "low",
            "mid",
            "high",
        ],
    )?;
    let full_oa = mean(
        runs.iter()
            .filter(|r| r.variant == Variant::Full.name())
            .map(|r| r.overall_accuracy),
    );
    println!("{:<18} {:>9} {:>8} {:>9}", "variant", "params", "OA", "delta");
    for v in Variant::ALL {
        let rs: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == v.name()).collect();
        let oa = mean(rs.iter().map(|r| r.overall_accuracy));
        println!(
            "{:<18} {:>9} {:>7.2}% {:>+8.2}",
            v.name(),
            rs[0].params,
            100.0 * oa,
            100.0 * (oa - full_oa)
        );
        csv_row(
            &mut w,
            [
                v.name().to_string(),
                rs[0].params.to_string(),
                rs[0].flops.to_string(),
                rs.len().to_string(),
                format!("{oa:.6}"),
                format!("{:.6}", oa - full_oa),
                opt_cell(mean_opt(rs.iter().map(|r| r.low))),
                opt_cell(mean_opt(rs.iter().map(|r| r.mid))),
                opt_cell(mean_opt(rs.iter().map(|r| r.high))),
            ],
        )?;
    }
    let table_path = a.out.join("ablation.csv");
    write_atomic(&table_path, &csv_bytes(w)?)?;
    outputs.push(runs_path);
    outputs.push(table_path);

    let mut seed_map = BTreeMap::from([("split".to_string(), seeds[0])]);
    for (i, &s) in seeds.iter().enumerate() {
        seed_map.insert(format!("train.{i}"), s);
    }
    Ok(Outcome {
        resolved: json!({
            "models": serde_json::Value::Object(resolved_models),
            "train": to_json(&train_config(&a.fit, seeds[0]))?,
            "split": to_json(&ratios)?,
        }),
        seeds: seed_map,
        inputs: vec![a.data.clone()],
        outputs,
        manifest: Some(manifest::for_dir(&a.out)),
        failure: None,
    })
}

fn gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let precision = match a.precision {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    };
    let tolerance = a.tol.unwrap_or(match precision {
        Precision::F32 => 1e-4,
        Precision::F64 => 1e-6,
    });
    if !(tolerance > 0.0) {
        return Err(CliError::Usage(format!("tolerance must be positive, got {tolerance}")));
    }
    let cfg = GradCheckConfig {
        model: ModelConfig::tiny(variant(a.variant)),
        precision,
        tolerance,
        seed: a.seed,
        inject_fault: a.inject_fault,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&cfg)?;
    println!(
        "{:<22} {:>6} {:>12} {:>12}  status",
        "group", "size", "rel_error", "abs_error"
    );
    for g in &report.groups {
        println!(
            "{:<22} {:>6} {:>12.3e} {:>12.3e}  {}",
            g.name,
            g.len,
            g.rel_error,
            g.max_abs_error,
            if g.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{}: max relative error {:.3e} (tolerance {:.1e}, {:?})",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_rel_error,
        tolerance,
        precision
    );
    let mut outcome = Outcome {
        resolved: json!({ "gradcheck": to_json(&cfg)? }),
        seeds: BTreeMap::from([("gradcheck".to_string(), a.seed)]),
        ..Outcome::default()
    };
    if let Some(path) = &a.out {
        let json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Serialize(e.to_string()))?;
        write_atomic(path, &json)?;
        outcome.outputs.push(path.clone());
        outcome.manifest = Some(manifest::for_file(path));
    }
    if !report.passed {
        outcome.failure = Some(CliError::GradCheckFailed {
            max_rel_error: report.max_rel_error,
            tolerance,
        });
    }
    Ok(outcome)
}

fn inspect_filters(a: &InspectArgs) -> Result<Outcome> {
    let model = load_checkpoint(&a.checkpoint)?;
    let bank = model.frontend.as_ref().ok_or_else(|| {
        cspm_core::error::Error::Config(format!(
            "{} is a {} model and has no filter bank",
            a.checkpoint.display(),
            model.config().variant
        ))
    })?;
    let response = bank.frequency_response(a.nfft)?;
    let (re, im) = bank.taps();
    let k = bank.kernel_len();
    let mut w = csv::Writer::from_writer(Vec::new());
    csv_row(
        &mut w,
        ["filter", "domain", "index", "position", "re", "im", "magnitude"],
    )?;
    let half = (k / 2) as i64;
    for s in 0..bank.num_filters() {
        for n in 0..k {
            let (r, i) = (re[s * k + n] as f64, im[s * k + n] as f64);
            csv_row(
                &mut w,
                [
                    s.to_string(),
                    "tap".into(),
                    n.to_string(),
                    (n as i64 - half).to_string(),
                    format!("{r:.9e}"),
                    format!("{i:.9e}"),
                    format!("{:.9e}", r.hypot(i)),
                ],
            )?;
        }
        for (bin, c) in response[s].iter().enumerate() {
            csv_row(
                &mut w,
                [
                    s.to_string(),
                    "dft".into(),
                    bin.to_string(),
                    format!("{:.9e}", bin as f64 / a.nfft as f64),
                    format!("{:.9e}", c.re),
                    format!("{:.9e}", c.im),
                    format!("{:.9e}", c.norm()),
                ],
            )?;
        }
        let peak = response[s]
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()))
            .map(|(bin, _)| bin)
            .unwrap_or(0);
        let mut freq = peak as f64 / a.nfft as f64;
        if freq >= 0.5 {
            freq -= 1.0;
        }
        println!("filter {s}: peak response at {freq:+.4} cycles/sample");
    }
    write_atomic(&a.out, &csv_bytes(w)?)?;
    Ok(Outcome {
        resolved: json!({ "model": to_json(model.config())?, "nfft": a.nfft }),
        seeds: BTreeMap::new(),
        inputs: vec![a.checkpoint.clone()],
        outputs: vec![a.out.clone()],
        manifest: Some(manifest::for_file(&a.out)),
        failure: None,
    })
}

fn dump_features(a: &DumpArgs) -> Result<Outcome> {
    let ds = read_container(&a.data)?;
    let example = ds.examples().get(a.index).ok_or_else(|| {
        cspm_core::error::Error::Input(format!("index {} out of range for {} examples", a.index, ds.len()))
    })?;
    let (model, mut inputs) = match &a.checkpoint {
        Some(path) => (load_checkpoint(path)?, vec![path.clone()]),
        None => {
            let cfg = ModelConfig {
                seq_len: ds.seq_len(),
                num_classes: ds.num_classes(),
                ..ModelConfig::default()
            };
            (Cspmnet::<f32>::new(cfg, 42)?, vec![])
        }
    };
    inputs.push(a.data.clone());
    let map = model.feature_map(&example.signal)?;
    let cfg = model.config();
    let names = channel_names(cfg.effective_subbands(), &cfg.lags);
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["channel".to_string(), "name".to_string()]
        .into_iter()
        .chain((0..map.len).map(|t| format!("t{t}")));
    csv_row(&mut w, header)?;
    for (c, name) in names.iter().enumerate() {
        let row = [c.to_string(), name.clone()]
            .into_iter()
            .chain(map.channel(c).iter().map(|v| format!("{v:.9e}")));
        csv_row(&mut w, row)?;
    }
    write_atomic(&a.out, &csv_bytes(w)?)?;
    println!(
        "example {} ({} at {} dB): {} channels x {} samples -> {}",
        a.index,
        ds.class_names()[example.label as usize],
        example.snr_db,
        map.channels,
        map.len,
        a.out.display()
    );
    Ok(Outcome {
        resolved: json!({ "model": to_json(cfg)?, "index": a.index }),
        seeds: BTreeMap::new(),
        inputs,
        outputs: vec![a.out.clone()],
        manifest: Some(manifest::for_file(&a.out)),
        failure: None,
    })
}
