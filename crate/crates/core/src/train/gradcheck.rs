//! End-to-end gradient verification against central finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy;
use crate::error::{Error, Result};
use crate::model::{Cspmnet, IqBatch, ModelConfig, Variant};
use crate::nn::{Mode, Parameters, TensorKind};
use crate::scalar::Scalar;
use crate::signal::ComplexSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub precision: Precision,
    pub tolerance: f64,
    /// Finite-difference step, always applied in f64.
    pub step: f64,
    pub batch: usize,
    pub seed: u64,
    /// Flips the sign of one analytic gradient group. Negative control only.
    pub inject_fault: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            model: ModelConfig::tiny(Variant::Full),
            precision: Precision::F32,
            tolerance: 1e-4,
            step: 1e-5,
            batch: 4,
            seed: 7,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub len: usize,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|)` over the group.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub precision: Precision,
    pub tolerance: f64,
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    pub passed: bool,
}

const FAULT_GROUP: &str = "attn.score";

fn random_batch(cfg: &GradCheckConfig) -> Result<(Vec<ComplexSequence>, Vec<u32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let t = cfg.model.seq_len;
    let mut seqs = Vec::with_capacity(cfg.batch);
    let mut labels = Vec::with_capacity(cfg.batch);
    for b in 0..cfg.batch {
        let mut draw = || -> Vec<f32> { (0..t).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let (i, q) = (draw(), draw());
        seqs.push(ComplexSequence::new(i, q)?);
        labels.push((b % cfg.model.num_classes) as u32);
    }
    Ok((seqs, labels))
}

fn loss_and_grads<F: Scalar>(
    model: &Cspmnet<F>,
    seqs: &[ComplexSequence],
    labels: &[u32],
) -> Result<(f64, Cspmnet<F>)> {
    let pass = model.forward(IqBatch::from_sequences(seqs)?, Mode::Train)?;
    let (loss, dlogits) = cross_entropy(&pass.logits, labels, model.config().num_classes)?;
    let grads = model.backward(&pass.tape, &dlogits)?;
    Ok((loss.as_f64(), grads))
}

fn loss_only(model: &Cspmnet<f64>, seqs: &[ComplexSequence], labels: &[u32]) -> Result<f64> {
    let pass = model.forward(IqBatch::from_sequences(seqs)?, Mode::Train)?;
    Ok(cross_entropy(&pass.logits, labels, model.config().num_classes)?.0)
}

/// Compares analytic gradients of the mean cross-entropy on a random batch
/// against central differences of the f64 model. In f32 mode the analytic
/// gradients come from the f32 model and the differences from its exact f64
/// copy.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.batch == 0 || !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(Error::Config(
            "gradient check needs batch >= 1, step > 0 and tolerance > 0".into(),
        ));
    }
    let (seqs, labels) = random_batch(cfg)?;
    let base = Cspmnet::<f64>::new(cfg.model.clone(), cfg.seed)?;
    let (reference, analytic): (Cspmnet<f64>, Vec<Vec<f64>>) = match cfg.precision {
        Precision::F64 => {
            let (_, g) = loss_and_grads(&base, &seqs, &labels)?;
            let flat = g.tensors().iter().map(|t| t.data.to_vec()).collect();
            (base, flat)
        }
        Precision::F32 => {
            let single = base.cast::<f32>();
            let (_, g) = loss_and_grads(&single, &seqs, &labels)?;
            let flat = g
                .tensors()
                .iter()
                .map(|t| t.data.iter().map(|&v| v as f64).collect())
                .collect();
            (single.cast::<f64>(), flat)
        }
    };

    let mut groups = Vec::new();
    let kinds: Vec<(&'static str, TensorKind, usize)> = reference
        .tensors()
        .iter()
        .map(|t| (t.name, t.kind, t.data.len()))
        .collect();
    for (ti, (name, kind, len)) in kinds.into_iter().enumerate() {
        if kind != TensorKind::Trainable {
            continue;
        }
        let mut probe = reference.clone();
        let mut max_err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..len {
            let orig = probe.tensors()[ti].data[i];
            probe.tensors_mut()[ti].data[i] = orig + cfg.step;
            let plus = loss_only(&probe, &seqs, &labels)?;
            probe.tensors_mut()[ti].data[i] = orig - cfg.step;
            let minus = loss_only(&probe, &seqs, &labels)?;
            probe.tensors_mut()[ti].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let mut a = analytic[ti][i];
            if cfg.inject_fault && name == FAULT_GROUP {
                a = -a;
            }
            max_err = max_err.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let rel_error = if scale > 0.0 { max_err / scale } else { 0.0 };
        groups.push(GroupError {
            name: name.to_string(),
            len,
            rel_error,
            max_abs_error: max_err,
            passed: rel_error < cfg.tolerance,
        });
    }
    let max_rel_error = groups.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        precision: cfg.precision,
        tolerance: cfg.tolerance,
        passed: groups.iter().all(|g| g.passed),
        max_rel_error,
        groups,
    })
}
