//! Labeled I/Q data: synthetic modulators, the channel model, stratified
//! splitting and the `CSPM` binary container.

mod channel;
pub(crate) mod container;
mod dsp;
mod modulate;
mod split;
mod synth;

pub use channel::{apply_channel, ChannelConfig};
pub use container::{
    decode_container, encode_container, read_container, write_container, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use dsp::{gaussian_taps, rrc_taps};
pub use modulate::{
    modulate, modulate_with, shape_symbols, symbol_stream, Modulation, ModulatorConfig, PulseShape, SymbolStream,
};
pub use split::{split_dataset, Split, SplitIndices, SplitRatios};
pub use synth::{derive_seed, synthesize_dataset, GenerationConfig, Impairments};

use crate::error::{Error, Result};

/// Planar complex baseband record of length `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSequence {
    i: Vec<f32>,
    q: Vec<f32>,
}

impl ComplexSequence {
    pub fn new(i: Vec<f32>, q: Vec<f32>) -> Result<Self> {
        if i.len() != q.len() {
            return Err(Error::Shape(format!("I has {} samples but Q has {}", i.len(), q.len())));
        }
        if i.is_empty() {
            return Err(Error::Shape("empty I/Q sequence".into()));
        }
        if i.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("I/Q sequence contains non-finite samples".into()));
        }
        Ok(ComplexSequence { i, q })
    }

    pub(crate) fn from_f64(i: &[f64], q: &[f64]) -> Result<Self> {
        Self::new(
            i.iter().map(|&v| v as f32).collect(),
            q.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn i(&self) -> &[f32] {
        &self.i
    }

    pub fn q(&self) -> &[f32] {
        &self.q
    }

    /// Mean of `I² + Q²`, accumulated in f64.
    pub fn mean_power(&self) -> f64 {
        let sum: f64 = self
            .i
            .iter()
            .zip(&self.q)
            .map(|(&a, &b)| (a as f64).powi(2) + (b as f64).powi(2))
            .sum();
        sum / self.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub signal: ComplexSequence,
    pub label: u32,
    pub snr_db: f32,
}

/// A labeled collection of equal-length examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    class_names: Vec<String>,
    seq_len: usize,
    snr_grid: Vec<f32>,
}

impl Dataset {
    /// Builds a dataset, deriving the SNR grid as the sorted distinct SNRs
    /// present in `examples`.
    pub fn new(class_names: Vec<String>, seq_len: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        if seq_len == 0 {
            return Err(Error::Config("sequence length must be positive".into()));
        }
        let classes = class_names.len() as u32;
        let mut snr_grid = Vec::new();
        for (idx, ex) in examples.iter().enumerate() {
            if ex.signal.len() != seq_len {
                return Err(Error::Shape(format!(
                    "example {idx} has length {}, dataset length is {seq_len}",
                    ex.signal.len()
                )));
            }
            if ex.label >= classes {
                return Err(Error::Input(format!(
                    "example {idx} has label {} >= {classes} classes",
                    ex.label
                )));
            }
            if !ex.snr_db.is_finite() {
                return Err(Error::Input(format!("example {idx} has non-finite SNR")));
            }
            snr_grid.push(ex.snr_db);
        }
        snr_grid.sort_by(f32::total_cmp);
        snr_grid.dedup();
        Ok(Dataset {
            examples,
            class_names,
            seq_len,
            snr_grid,
        })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn snr_grid(&self) -> &[f32] {
        &self.snr_grid
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// New dataset holding the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let examples = indices.iter().map(|&i| self.examples[i].clone()).collect();
        Dataset::new(self.class_names.clone(), self.seq_len, examples).expect("subset of a valid dataset is valid")
    }
}
