//! Test-set metrics plus parameter and FLOP accounting.
//!
//! SNR segments: low is `snr <= -10 dB`, mid is `-10 < snr <= 0 dB` and high
//! is `snr > 0 dB`. A segment's accuracy is the unweighted mean of the
//! per-SNR accuracies that fall inside it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{Cspmnet, ModelConfig, Variant};
use crate::scalar::Scalar;
use crate::signal::Dataset;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Low,
    Mid,
    High,
}

impl Segment {
    pub fn of(snr_db: f64) -> Segment {
        if snr_db <= -10.0 {
            Segment::Low
        } else if snr_db <= 0.0 {
            Segment::Mid
        } else {
            Segment::High
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Segment::Low => "low",
            Segment::Mid => "mid",
            Segment::High => "high",
        }
    }
}

/// Segment averages; `None` when no SNR point falls in the segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentAccuracy {
    pub low: Option<f64>,
    pub mid: Option<f64>,
    pub high: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrAccuracy {
    pub snr_db: f64,
    pub accuracy: f64,
    pub correct: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub class_names: Vec<String>,
    pub num_examples: u64,
    pub overall_accuracy: f64,
    pub segment_accuracy: SegmentAccuracy,
    pub per_snr: Vec<SnrAccuracy>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub params: u64,
    /// For a single input of shape `1 x 2 x T`.
    pub flops: u64,
}

/// Builds a report from labels, SNRs and predictions.
pub fn metrics_from_predictions(
    class_names: &[String],
    labels: &[u32],
    snrs: &[f32],
    predictions: &[u32],
    params: u64,
    flops: u64,
) -> Result<MetricsReport> {
    let n = labels.len();
    if snrs.len() != n || predictions.len() != n {
        return Err(Error::Shape("labels, SNRs and predictions differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Input("no examples to score".into()));
    }
    let c = class_names.len();
    if let Some(bad) = labels.iter().chain(predictions).find(|&&v| v as usize >= c) {
        return Err(Error::Config(format!("class index {bad} out of range for {c} classes")));
    }
    let mut confusion = vec![vec![0u64; c]; c];
    let mut grid: Vec<f32> = snrs.to_vec();
    grid.sort_by(f32::total_cmp);
    grid.dedup();
    let mut cells = vec![(0u64, 0u64); grid.len()];
    let mut correct = 0u64;
    for ((&y, &p), &snr) in labels.iter().zip(predictions).zip(snrs) {
        confusion[y as usize][p as usize] += 1;
        let cell = &mut cells[grid
            .binary_search_by(|g| g.total_cmp(&snr))
            .expect("snr is on the grid")];
        cell.1 += 1;
        if y == p {
            cell.0 += 1;
            correct += 1;
        }
    }
    let per_snr: Vec<SnrAccuracy> = grid
        .iter()
        .zip(&cells)
        .map(|(&snr, &(ok, count))| SnrAccuracy {
            snr_db: snr as f64,
            accuracy: ok as f64 / count as f64,
            correct: ok,
            count,
        })
        .collect();
    let segment = |s: Segment| -> Option<f64> {
        let accs: Vec<f64> = per_snr
            .iter()
            .filter(|p| Segment::of(p.snr_db) == s)
            .map(|p| p.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    };
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        class_names: class_names.to_vec(),
        num_examples: n as u64,
        overall_accuracy: correct as f64 / n as f64,
        segment_accuracy: SegmentAccuracy {
            low: segment(Segment::Low),
            mid: segment(Segment::Mid),
            high: segment(Segment::High),
        },
        per_snr,
        confusion,
        params,
        flops,
    })
}

/// Eval-mode scoring of `model` on `test`.
pub fn evaluate<F: Scalar>(model: &Cspmnet<F>, test: &Dataset, batch: usize) -> Result<MetricsReport> {
    let cfg = model.config();
    if test.num_classes() != cfg.num_classes {
        return Err(Error::Config(format!(
            "model predicts {} classes, dataset has {}",
            cfg.num_classes,
            test.num_classes()
        )));
    }
    if test.seq_len() != cfg.seq_len {
        return Err(Error::Config(format!(
            "model expects length {}, dataset has {}",
            cfg.seq_len,
            test.seq_len()
        )));
    }
    let seqs: Vec<_> = test.examples().iter().map(|e| &e.signal).collect();
    let predictions = model.predict(&seqs, batch)?;
    let labels: Vec<u32> = test.examples().iter().map(|e| e.label).collect();
    let snrs: Vec<f32> = test.examples().iter().map(|e| e.snr_db).collect();
    metrics_from_predictions(
        test.class_names(),
        &labels,
        &snrs,
        &predictions,
        count_params(model) as u64,
        count_flops(cfg),
    )
}

/// Trainable scalars only: frozen filters and normalisation buffers are
/// excluded.
pub fn count_params<F: Scalar>(model: &Cspmnet<F>) -> usize {
    model.num_trainable()
}

/// FLOPs of one transcendental (`exp`, `ln`, `sqrt`, `tanh`, sigmoid).
pub const TRANSCENDENTAL_FLOPS: u64 = 4;

/// Analytic FLOP count for one `1 x 2 x T` input in eval mode. A
/// multiply-accumulate is 2 FLOPs, other elementwise operations 1, and
/// transcendentals [`TRANSCENDENTAL_FLOPS`]. Bias additions are not counted.
pub fn count_flops(cfg: &ModelConfig) -> u64 {
    let tr = TRANSCENDENTAL_FLOPS;
    let t = cfg.seq_len as u64;
    let s = cfg.effective_subbands() as u64;
    let (c_in, c_mix) = (cfg.feature_channels() as u64, cfg.mix_channels as u64);
    let (h, a, m, c) = (
        cfg.hidden as u64,
        cfg.attention_dim as u64,
        cfg.mlp_hidden as u64,
        cfg.num_classes as u64,
    );
    // ln(1 + |u|): 2 mul + 1 add, sqrt, 1 add, ln
    let log_mag = 3 + tr + 1 + tr;
    let frontend = match cfg.variant {
        Variant::PhaseMotionOnly => 0,
        _ => 8 * s * cfg.kernel_len as u64 * t,
    };
    let base = log_mag * s * t;
    let valid: u64 = cfg.lags.lags().iter().map(|&l| t - l as u64).sum();
    let motion = (6 + log_mag) * s * valid;
    let bn = 2 * c_in * t;
    let mix = 2 * c_in * c_mix * cfg.mix_kernel as u64 * t;
    let gru_step = 2 * 3 * (c_mix * h + h * h) + (2 * tr + 4 + tr + 3) * h;
    let gru = 2 * t * gru_step;
    let attention = 2 * (2 * h) * a * t + tr * a * t + 2 * a * t + t + tr * t + 2 * (2 * h) * t;
    let mlp = 2 * (2 * h) * m + m + 2 * m * c;
    frontend + base + motion + bn + mix + gru + attention + mlp
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    /// `report.json`
    Json,
    /// `per_snr.csv` and `confusion.csv`
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

pub fn per_snr_csv(report: &MetricsReport) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        snr_db: f64,
        segment: &'static str,
        accuracy: f64,
        correct: u64,
        count: u64,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &report.per_snr {
        w.serialize(Row {
            snr_db: p.snr_db,
            segment: Segment::of(p.snr_db).name(),
            accuracy: p.accuracy,
            correct: p.correct,
            count: p.count,
        })
        .map_err(csv_error)?;
    }
    finish(w)
}

pub fn confusion_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(report.class_names.iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).map_err(csv_error)?;
    }
    finish(w)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Input(format!("CSV encoding: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Input(format!("CSV encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

/// Writes the report into `dir` and returns the paths written.
pub fn emit_report(
    report: &MetricsReport,
    dir: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = match format {
        ReportFormat::Json => {
            let json = serde_json::to_vec_pretty(report).expect("report serialises");
            vec![(dir.join("report.json"), json)]
        }
        ReportFormat::Csv => vec![
            (dir.join("per_snr.csv"), per_snr_csv(report)?.into_bytes()),
            (dir.join("confusion.csv"), confusion_csv(report)?.into_bytes()),
        ],
    };
    let mut written = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
