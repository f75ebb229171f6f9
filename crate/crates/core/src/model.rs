//! The composed classifier: subband front end, phase-motion features and the
//! temporal head, with a recorded forward pass for reverse-mode gradients.
//!
//! Activations inside the head are time-major matrices whose rows are
//! `(example, time)` pairs. The head runs in fixed-size chunks of examples
//! after batch normalisation, which is the only layer that couples examples.
//! Chunk results and gradients are combined in chunk order, so the numbers
//! do not depend on how many threads run the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{complex_conv_backward, ComplexFilterBank, Parameterization, SubbandResponse, TapGrads};
use crate::nn::{
    AdditiveAttention, AttentionCache, BatchNorm, BatchNormCache, BatchStats, BiGru, Conv1d, ConvCache, GruCache, Mlp,
    MlpCache, Mode, Parameters, TensorKind, TensorView, TensorViewMut,
};
use crate::par;
use crate::phase_motion::{feature_channels, feature_map, phase_motion_backward, FeatureMap, LagSet};
use crate::scalar::Scalar;
use crate::signal::ComplexSequence;

/// Examples per head chunk.
pub const HEAD_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Free complex filters.
    Full,
    /// No filter bank: the raw input is the single subband.
    PhaseMotionOnly,
    FixedMorlet,
    LearnableMorlet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::PhaseMotionOnly,
        Variant::FixedMorlet,
        Variant::LearnableMorlet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::PhaseMotionOnly => "phase_motion_only",
            Variant::FixedMorlet => "fixed_morlet",
            Variant::LearnableMorlet => "learnable_morlet",
        }
    }

    fn parameterization(self) -> Option<Parameterization> {
        match self {
            Variant::Full => Some(Parameterization::Free),
            Variant::PhaseMotionOnly => None,
            Variant::FixedMorlet => Some(Parameterization::FixedMorlet),
            Variant::LearnableMorlet => Some(Parameterization::LearnableMorlet),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Boundary handling of the filter bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Zero,
}

/// Initialisation of free filter taps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterInit {
    /// `U[-1/√(SK), 1/√(SK)]` for real and imaginary parts.
    UniformFanIn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub seq_len: usize,
    pub num_classes: usize,
    pub num_subbands: usize,
    pub kernel_len: usize,
    pub lags: LagSet,
    pub mix_channels: usize,
    pub mix_kernel: usize,
    pub hidden: usize,
    pub attention_dim: usize,
    pub mlp_hidden: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub padding: Padding,
    pub filter_init: FilterInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            seq_len: 128,
            num_classes: 11,
            num_subbands: 8,
            kernel_len: 33,
            lags: LagSet::default(),
            mix_channels: 64,
            mix_kernel: 3,
            hidden: 128,
            attention_dim: 64,
            mlp_hidden: 128,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            padding: Padding::Zero,
            filter_init: FilterInit::UniformFanIn,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient verification.
    pub fn tiny(variant: Variant) -> Self {
        ModelConfig {
            variant,
            seq_len: 16,
            num_classes: 3,
            num_subbands: 2,
            kernel_len: 5,
            mix_channels: 4,
            hidden: 3,
            attention_dim: 4,
            mlp_hidden: 4,
            ..ModelConfig::default()
        }
    }

    /// Subbands that reach the feature stage.
    pub fn effective_subbands(&self) -> usize {
        match self.variant {
            Variant::PhaseMotionOnly => 1,
            _ => self.num_subbands,
        }
    }

    pub fn feature_channels(&self) -> usize {
        feature_channels(self.effective_subbands(), self.lags.len())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("num_classes", self.num_classes),
            ("num_subbands", self.num_subbands),
            ("mix_channels", self.mix_channels),
            ("hidden", self.hidden),
            ("attention_dim", self.attention_dim),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.kernel_len.is_multiple_of(2) || self.mix_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel lengths must be odd, got filter {} and mixing {}",
                self.kernel_len, self.mix_kernel
            )));
        }
        if self.variant != Variant::PhaseMotionOnly && self.seq_len < self.kernel_len {
            return Err(Error::Config(format!(
                "sequence length {} shorter than filter length {}",
                self.seq_len, self.kernel_len
            )));
        }
        if self.lags.lags().last().is_some_and(|&l| l >= self.seq_len) {
            return Err(Error::Config(format!(
                "largest lag must be below the sequence length {}",
                self.seq_len
            )));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("batch norm needs eps > 0 and momentum in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Planar complex batch, `B x T` per component.
#[derive(Clone, Debug, PartialEq)]
pub struct IqBatch<F> {
    pub batch: usize,
    pub len: usize,
    pub re: Vec<F>,
    pub im: Vec<F>,
}

impl<F: Scalar> IqBatch<F> {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a ComplexSequence>) -> Result<Self> {
        let (mut re, mut im) = (Vec::new(), Vec::new());
        let (mut batch, mut len) = (0, None);
        for s in seqs {
            if *len.get_or_insert(s.len()) != s.len() {
                return Err(Error::Shape("batch mixes sequence lengths".into()));
            }
            re.extend(s.i().iter().map(|&v| F::of(v as f64)));
            im.extend(s.q().iter().map(|&v| F::of(v as f64)));
            batch += 1;
        }
        let len = len.ok_or_else(|| Error::Shape("empty batch".into()))?;
        Ok(IqBatch { batch, len, re, im })
    }

    fn example(&self, b: usize) -> (&[F], &[F]) {
        let r = b * self.len..(b + 1) * self.len;
        (&self.re[r.clone()], &self.im[r])
    }
}

/// Model parameters. A zeroed instance doubles as a gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Cspmnet<F> {
    config: ModelConfig,
    pub frontend: Option<ComplexFilterBank<F>>,
    pub bn: BatchNorm<F>,
    pub mix: Conv1d<F>,
    pub gru: BiGru<F>,
    pub attention: AdditiveAttention<F>,
    pub mlp: Mlp<F>,
}

#[derive(Debug)]
struct ChunkTape<F> {
    start: usize,
    count: usize,
    conv: ConvCache<F>,
    gru: GruCache<F>,
    attention: AttentionCache<F>,
    mlp: MlpCache<F>,
}

/// Everything a forward pass records for its backward pass.
#[derive(Debug)]
pub struct Tape<F> {
    input: IqBatch<F>,
    taps: Option<(Vec<F>, Vec<F>)>,
    subbands: Vec<SubbandResponse<F>>,
    bn: BatchNormCache<F>,
    chunks: Vec<ChunkTape<F>>,
}

impl<F> Tape<F> {
    pub fn batch(&self) -> usize {
        self.input.batch
    }
}

#[derive(Debug)]
pub struct ForwardPass<F> {
    /// `B x C` scores, row-major.
    pub logits: Vec<F>,
    pub tape: Tape<F>,
    /// Batch statistics in train mode, to be folded into the running ones.
    pub stats: Option<BatchStats<F>>,
}

struct ChunkOut<F> {
    logits: Vec<F>,
    tape: ChunkTape<F>,
}

impl<F: Scalar> Cspmnet<F> {
    /// Builds a freshly initialised model; all draws come from one stream
    /// seeded by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, k) = (config.num_subbands, config.kernel_len);
        let frontend = match config.variant.parameterization() {
            None => None,
            Some(Parameterization::Free) => Some(ComplexFilterBank::random_free(s, k, &mut rng)?),
            Some(mode) => Some(ComplexFilterBank::morlet(s, k, mode)?),
        };
        let c_in = config.feature_channels();
        let bn = BatchNorm::new(c_in, config.bn_momentum, config.bn_eps);
        let mix = Conv1d::init(c_in, config.mix_channels, config.mix_kernel, &mut rng)?;
        let gru = BiGru::init(config.mix_channels, config.hidden, &mut rng);
        let attention = AdditiveAttention::init(2 * config.hidden, config.attention_dim, &mut rng)?;
        let mlp = Mlp::init(2 * config.hidden, config.mlp_hidden, config.num_classes, &mut rng);
        Ok(Cspmnet {
            config,
            frontend,
            bn,
            mix,
            gru,
            attention,
            mlp,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same shapes with every tensor, buffers included, set to zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = F::zero());
        }
        z
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|t| t.kind == TensorKind::Trainable)
            .map(|t| t.data.len())
            .sum()
    }

    /// Elementwise `self += other` over every tensor.
    pub fn add_assign(&mut self, other: &Self) {
        add_tensors(self, other);
    }

    /// Copy in another precision.
    pub fn cast<G: Scalar>(&self) -> Cspmnet<G> {
        let mut out = Cspmnet::<G>::new(self.config.clone(), 0).expect("config already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.data.iter_mut().zip(src.data) {
                *d = G::of(s.as_f64());
            }
        }
        out
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &BatchStats<F>) {
        self.bn.update_running(stats);
    }

    /// Feature maps in time-major layout, `(B·T) x C_in`.
    fn features(&self, input: &IqBatch<F>) -> Result<(Option<(Vec<F>, Vec<F>)>, Vec<SubbandResponse<F>>, Vec<F>)> {
        let taps = self.frontend.as_ref().map(|bank| bank.taps());
        let (t, c_in) = (input.len, self.config.feature_channels());
        let lags = &self.config.lags;
        let per_example: Vec<Result<(SubbandResponse<F>, Vec<F>)>> = par::map_range(input.batch, |b| {
            let (x_re, x_im) = input.example(b);
            let z = match (&self.frontend, &taps) {
                (Some(bank), Some((w_re, w_im))) => crate::frontend::complex_conv_forward(
                    x_re,
                    x_im,
                    w_re,
                    w_im,
                    bank.num_filters(),
                    bank.kernel_len(),
                )?,
                _ => SubbandResponse {
                    num_subbands: 1,
                    len: t,
                    re: x_re.to_vec(),
                    im: x_im.to_vec(),
                },
            };
            let fm = feature_map(&z, lags)?;
            let mut rows = vec![F::zero(); t * c_in];
            for c in 0..c_in {
                for (n, &v) in fm.channel(c).iter().enumerate() {
                    rows[n * c_in + c] = v;
                }
            }
            Ok((z, rows))
        });
        let mut subbands = Vec::with_capacity(input.batch);
        let mut x = Vec::with_capacity(input.batch * t * c_in);
        for r in per_example {
            let (z, rows) = r?;
            subbands.push(z);
            x.extend_from_slice(&rows);
        }
        Ok((taps, subbands, x))
    }

    fn head_forward(&self, x: &[F], start: usize, count: usize) -> Result<ChunkOut<F>> {
        let t = self.config.seq_len;
        let c_in = self.config.feature_channels();
        let rows = &x[start * t * c_in..(start + count) * t * c_in];
        let (mixed, conv) = self.mix.forward(rows, count, t)?;
        let (gru_out, gru) = self.gru.forward(&mixed, count, t)?;
        let (pooled, attention) = self.attention.forward(&gru_out, count, t)?;
        let (logits, mlp) = self.mlp.forward(&pooled, count)?;
        Ok(ChunkOut {
            logits,
            tape: ChunkTape {
                start,
                count,
                conv,
                gru,
                attention,
                mlp,
            },
        })
    }

    pub fn forward(&self, input: IqBatch<F>, mode: Mode) -> Result<ForwardPass<F>> {
        let t = self.config.seq_len;
        if input.len != t {
            return Err(Error::Shape(format!("model expects length {t}, got {}", input.len)));
        }
        if input.batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let (taps, subbands, features) = self.features(&input)?;
        let (normed, bn, stats) = self.bn.forward(&features, input.batch * t, mode)?;
        drop(features);
        let n_chunks = input.batch.div_ceil(HEAD_CHUNK);
        let outs = par::map_range(n_chunks, |c| {
            let start = c * HEAD_CHUNK;
            self.head_forward(&normed, start, HEAD_CHUNK.min(input.batch - start))
        });
        let mut logits = Vec::with_capacity(input.batch * self.config.num_classes);
        let mut chunks = Vec::with_capacity(n_chunks);
        for out in outs {
            let out = out?;
            logits.extend_from_slice(&out.logits);
            chunks.push(out.tape);
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("forward pass produced non-finite logits".into()));
        }
        Ok(ForwardPass {
            logits,
            tape: Tape {
                input,
                taps,
                subbands,
                bn,
                chunks,
            },
            stats,
        })
    }

    /// Gradients of every tensor given the cotangent of the logits.
    pub fn backward(&self, tape: &Tape<F>, dlogits: &[F]) -> Result<Cspmnet<F>> {
        let (b, t, c) = (tape.input.batch, self.config.seq_len, self.config.num_classes);
        if dlogits.len() != b * c {
            return Err(Error::Shape(format!(
                "logit cotangent has {} values, expected {b}x{c}",
                dlogits.len()
            )));
        }
        let c_in = self.config.feature_channels();
        let per_chunk = par::map_slice(&tape.chunks, |ch| {
            let mut g = self.zeros_like_head();
            let dl = &dlogits[ch.start * c..(ch.start + ch.count) * c];
            let dpooled = self.mlp.backward(&ch.mlp, dl, &mut g.mlp);
            let dh = self.attention.backward(&ch.attention, &dpooled, &mut g.attention);
            let dmixed = self.gru.backward(&ch.gru, &dh, &mut g.gru);
            let dx = self.mix.backward(&ch.conv, &dmixed, &mut g.mix);
            (g, dx)
        });
        let mut grads = self.zeros_like();
        let mut dnormed = Vec::with_capacity(b * t * c_in);
        for (g, dx) in per_chunk {
            add_tensors(&mut grads.mix, &g.mix);
            add_tensors(&mut grads.gru, &g.gru);
            add_tensors(&mut grads.attention, &g.attention);
            add_tensors(&mut grads.mlp, &g.mlp);
            dnormed.extend_from_slice(&dx);
        }
        let dfeatures = self.bn.backward(&tape.bn, &dnormed, &mut grads.bn);
        drop(dnormed);

        if let (Some(bank), Some((w_re, w_im))) = (&self.frontend, &tape.taps) {
            if bank.mode() != Parameterization::FixedMorlet {
                let lags = &self.config.lags;
                let tap_grads: Vec<Result<TapGrads<F>>> = par::map_range(b, |e| {
                    let rows = &dfeatures[e * t * c_in..(e + 1) * t * c_in];
                    let mut channel_major = vec![F::zero(); c_in * t];
                    for (n, row) in rows.chunks_exact(c_in).enumerate() {
                        for (ch, &v) in row.iter().enumerate() {
                            channel_major[ch * t + n] = v;
                        }
                    }
                    let dz = phase_motion_backward(&tape.subbands[e], lags, &channel_major)?;
                    let (x_re, x_im) = tape.input.example(e);
                    let (_, _, tg) = complex_conv_backward(x_re, x_im, w_re, w_im, bank.kernel_len(), &dz)?;
                    Ok(tg)
                });
                let mut total = TapGrads {
                    re: vec![F::zero(); w_re.len()],
                    im: vec![F::zero(); w_im.len()],
                };
                for tg in tap_grads {
                    let tg = tg?;
                    for (a, v) in total.re.iter_mut().zip(&tg.re) {
                        *a += *v;
                    }
                    for (a, v) in total.im.iter_mut().zip(&tg.im) {
                        *a += *v;
                    }
                }
                let into = grads.frontend.as_mut().expect("gradient holder mirrors the model");
                bank.accumulate_grads(&total, into);
            }
        }
        Ok(grads)
    }

    fn zeros_like_head(&self) -> HeadGrads<F> {
        HeadGrads {
            mix: self.mix.zeros_like(),
            gru: self.gru.zeros_like(),
            attention: self.attention.zeros_like(),
            mlp: self.mlp.zeros_like(),
        }
    }

    /// Feature map of one sequence, channel-major.
    pub fn feature_map(&self, seq: &ComplexSequence) -> Result<FeatureMap<F>> {
        let input = IqBatch::<F>::from_sequences([seq])?;
        let z = match &self.frontend {
            Some(bank) => bank.forward(&input.re, &input.im)?,
            None => SubbandResponse {
                num_subbands: 1,
                len: input.len,
                re: input.re,
                im: input.im,
            },
        };
        feature_map(&z, &self.config.lags)
    }

    /// Eval-mode logits for many sequences, processed `batch_size` at a time.
    pub fn logits(&self, seqs: &[&ComplexSequence], batch_size: usize) -> Result<Vec<F>> {
        let mut out = Vec::with_capacity(seqs.len() * self.config.num_classes);
        for chunk in seqs.chunks(batch_size.max(1)) {
            let input = IqBatch::from_sequences(chunk.iter().copied())?;
            out.extend(self.forward(input, Mode::Eval)?.logits);
        }
        Ok(out)
    }

    /// Eval-mode class decisions.
    pub fn predict(&self, seqs: &[&ComplexSequence], batch_size: usize) -> Result<Vec<u32>> {
        let logits = self.logits(seqs, batch_size)?;
        Ok(logits
            .chunks_exact(self.config.num_classes)
            .map(|row| argmax(row) as u32)
            .collect())
    }
}

struct HeadGrads<F> {
    mix: Conv1d<F>,
    gru: BiGru<F>,
    attention: AdditiveAttention<F>,
    mlp: Mlp<F>,
}

fn add_tensors<F: Scalar, P: Parameters<F>>(acc: &mut P, other: &P) {
    for (a, b) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        for (x, &y) in a.data.iter_mut().zip(b.data) {
            *x += y;
        }
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl<F: Scalar> Parameters<F> for Cspmnet<F> {
    fn tensors(&self) -> Vec<TensorView<'_, F>> {
        let mut v = Vec::new();
        if let Some(f) = &self.frontend {
            v.extend(f.tensors());
        }
        v.extend(self.bn.tensors());
        v.extend(self.mix.tensors());
        v.extend(self.gru.tensors());
        v.extend(self.attention.tensors());
        v.extend(self.mlp.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, F>> {
        let mut v = Vec::new();
        if let Some(f) = &mut self.frontend {
            v.extend(f.tensors_mut());
        }
        v.extend(self.bn.tensors_mut());
        v.extend(self.mix.tensors_mut());
        v.extend(self.gru.tensors_mut());
        v.extend(self.attention.tensors_mut());
        v.extend(self.mlp.tensors_mut());
        v
    }
}

/// Enforces that gradients are only requested after a recorded forward pass.
pub struct GradientSession<'m, F> {
    model: &'m Cspmnet<F>,
    tape: Option<Tape<F>>,
    stats: Option<BatchStats<F>>,
}

impl<'m, F: Scalar> GradientSession<'m, F> {
    pub fn new(model: &'m Cspmnet<F>) -> Self {
        GradientSession {
            model,
            tape: None,
            stats: None,
        }
    }

    /// Runs and records a forward pass, returning the logits.
    pub fn forward(&mut self, input: IqBatch<F>, mode: Mode) -> Result<Vec<F>> {
        let pass = self.model.forward(input, mode)?;
        self.tape = Some(pass.tape);
        self.stats = pass.stats;
        Ok(pass.logits)
    }

    /// Consumes the recorded pass.
    pub fn backward(&mut self, dlogits: &[F]) -> Result<Cspmnet<F>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        self.model.backward(&tape, dlogits)
    }

    pub fn take_stats(&mut self) -> Option<BatchStats<F>> {
        self.stats.take()
    }
}
