//! One-layer bidirectional GRU.
//!
//! Gate order inside every `3H` block is reset, update, candidate:
//!
//! ```text
//! r = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```
//!
//! The backward direction reads the sequence from the end; its outputs are
//! stored at their original time index, so output row `(b, t)` is
//! `[h_fwd(t), h_bwd(t)]`.

use rand::Rng;

use super::{uniform, view, view_mut, Parameters, TensorKind, TensorView, TensorViewMut};
use crate::error::{Error, Result};
use crate::linalg::{add_row_sums, gemm, MatMut, MatRef};
use crate::scalar::Scalar;

/// Weights of one direction: `w_input` is `in x 3H`, `w_hidden` is `H x 3H`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruDirection<F> {
    pub w_input: Vec<F>,
    pub w_hidden: Vec<F>,
    pub b_input: Vec<F>,
    pub b_hidden: Vec<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGru<F> {
    input: usize,
    hidden: usize,
    pub fwd: GruDirection<F>,
    pub bwd: GruDirection<F>,
}

// Internal buffers are time-major (row `t·B + b`) so every recurrence step
// reads and writes one contiguous block.

#[derive(Clone, Debug)]
struct DirCache<F> {
    /// `(T·B) x 3H`: r, z, n after their nonlinearities.
    gates: Vec<F>,
    /// `(T·B) x H`: `W_hn h + b_hn`.
    hidden_n: Vec<F>,
    /// `(T·B) x H`: hidden state after each step.
    states: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct GruCache<F> {
    /// `(T·B) x in`.
    x: Vec<F>,
    batch: usize,
    len: usize,
    dirs: [DirCache<F>; 2],
}

/// Time index of recurrence step `step` and of the step before it.
fn step_times(d: usize, step: usize, len: usize) -> (usize, Option<usize>) {
    if d == 0 {
        (step, step.checked_sub(1))
    } else {
        let t = len - 1 - step;
        (t, if step == 0 { None } else { Some(t + 1) })
    }
}

/// Copies rows between the `(b, t)` and `(t, b)` orderings.
fn reorder<F: Scalar>(src: &[F], batch: usize, len: usize, width: usize, to_time_major: bool) -> Vec<F> {
    let mut dst = vec![F::zero(); src.len()];
    for b in 0..batch {
        for t in 0..len {
            let (bt, tb) = ((b * len + t) * width, (t * batch + b) * width);
            let (from, to) = if to_time_major { (bt, tb) } else { (tb, bt) };
            dst[to..to + width].copy_from_slice(&src[from..from + width]);
        }
    }
    dst
}

impl<F: Scalar> GruDirection<F> {
    fn zeros(input: usize, hidden: usize) -> Self {
        GruDirection {
            w_input: vec![F::zero(); input * 3 * hidden],
            w_hidden: vec![F::zero(); hidden * 3 * hidden],
            b_input: vec![F::zero(); 3 * hidden],
            b_hidden: vec![F::zero(); 3 * hidden],
        }
    }

    fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruDirection {
            w_input: uniform(input * 3 * hidden, bound, rng),
            w_hidden: uniform(hidden * 3 * hidden, bound, rng),
            b_input: uniform(3 * hidden, bound, rng),
            b_hidden: uniform(3 * hidden, bound, rng),
        }
    }
}

impl<F: Scalar> BiGru<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiGru {
            input,
            hidden,
            fwd: GruDirection::zeros(input, hidden),
            bwd: GruDirection::zeros(input, hidden),
        }
    }

    /// `U[-1/√H, 1/√H]` for every tensor.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = GruDirection::init(input, hidden, rng);
        let bwd = GruDirection::init(input, hidden, rng);
        BiGru {
            input,
            hidden,
            fwd,
            bwd,
        }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input, self.hidden)
    }

    fn direction(&self, d: usize) -> &GruDirection<F> {
        if d == 0 {
            &self.fwd
        } else {
            &self.bwd
        }
    }

    /// `x` is `(B·T) x in` with rows `(b, t)`; returns `(B·T) x 2H`.
    pub fn forward(&self, x: &[F], batch: usize, len: usize) -> Result<(Vec<F>, GruCache<F>)> {
        let (i_dim, h) = (self.input, self.hidden);
        if x.len() != batch * len * i_dim {
            return Err(Error::Shape(format!(
                "GRU input has {} values, expected {batch}x{len}x{i_dim}",
                x.len()
            )));
        }
        if len == 0 {
            return Err(Error::Shape("GRU needs at least one time step".into()));
        }
        let rows = batch * len;
        let x_tm = reorder(x, batch, len, i_dim, true);
        let mut out = vec![F::zero(); rows * 2 * h];
        let mut dirs = Vec::with_capacity(2);
        let mut gh = vec![F::zero(); batch * 3 * h];
        for d in 0..2 {
            let p = self.direction(d);
            let mut gates = Vec::with_capacity(rows * 3 * h);
            for _ in 0..rows {
                gates.extend_from_slice(&p.b_input);
            }
            gemm(
                F::one(),
                MatRef::new(&x_tm, rows, i_dim),
                MatRef::new(&p.w_input, i_dim, 3 * h),
                F::one(),
                MatMut::new(&mut gates, rows, 3 * h),
            );
            let mut hidden_n = vec![F::zero(); rows * h];
            let mut states = vec![F::zero(); rows * h];
            for step in 0..len {
                let (t, prev) = step_times(d, step, len);
                for row in gh.chunks_exact_mut(3 * h) {
                    row.copy_from_slice(&p.b_hidden);
                }
                if let Some(pt) = prev {
                    gemm(
                        F::one(),
                        MatRef::new(&states[pt * batch * h..(pt + 1) * batch * h], batch, h),
                        MatRef::new(&p.w_hidden, h, 3 * h),
                        F::one(),
                        MatMut::new(&mut gh, batch, 3 * h),
                    );
                }
                let block = t * batch;
                hidden_n[block * h..(block + batch) * h]
                    .chunks_exact_mut(h)
                    .zip(gh.chunks_exact(3 * h))
                    .for_each(|(hn, ghb)| hn.copy_from_slice(&ghb[2 * h..]));
                let g_block = &mut gates[block * 3 * h..(block + batch) * 3 * h];
                for (g, ghb) in g_block.chunks_exact_mut(3 * h).zip(gh.chunks_exact(3 * h)) {
                    let (g_rz, g_n) = g.split_at_mut(2 * h);
                    for (a, &b) in g_rz.iter_mut().zip(&ghb[..2 * h]) {
                        *a += b;
                    }
                    F::sigmoid_in_place(g_rz);
                    for ((n, &r), &hn) in g_n.iter_mut().zip(&g_rz[..h]).zip(&ghb[2 * h..]) {
                        *n += r * hn;
                    }
                    F::tanh_in_place(g_n);
                }
                let (before, rest) = states.split_at_mut(block * h);
                let (cur, after) = rest.split_at_mut(batch * h);
                let prev_states = prev.map(|pt| {
                    if pt < t {
                        &before[pt * batch * h..(pt + 1) * batch * h]
                    } else {
                        &after[..batch * h]
                    }
                });
                for (b, (hb, g)) in cur.chunks_exact_mut(h).zip(g_block.chunks_exact(3 * h)).enumerate() {
                    let (z, n) = (&g[h..2 * h], &g[2 * h..]);
                    match prev_states {
                        Some(ps) => {
                            let hp = &ps[b * h..(b + 1) * h];
                            for j in 0..h {
                                hb[j] = n[j] + z[j] * (hp[j] - n[j]);
                            }
                        }
                        None => {
                            for j in 0..h {
                                hb[j] = n[j] - z[j] * n[j];
                            }
                        }
                    }
                }
            }
            for b in 0..batch {
                for t in 0..len {
                    let dst = (b * len + t) * 2 * h + d * h;
                    out[dst..dst + h].copy_from_slice(&states[(t * batch + b) * h..(t * batch + b + 1) * h]);
                }
            }
            dirs.push(DirCache {
                gates,
                hidden_n,
                states,
            });
        }
        let dirs: [DirCache<F>; 2] = dirs.try_into().expect("two directions");
        Ok((
            out,
            GruCache {
                x: x_tm,
                batch,
                len,
                dirs,
            },
        ))
    }

    /// Returns `dx` in the input's `(b, t)` row order and accumulates
    /// parameter gradients. `dout` is the cotangent of the `(B·T) x 2H`
    /// output.
    pub fn backward(&self, cache: &GruCache<F>, dout: &[F], grads: &mut BiGru<F>) -> Vec<F> {
        let (i_dim, h) = (self.input, self.hidden);
        let (batch, len) = (cache.batch, cache.len);
        let rows = batch * len;
        let mut dx_tm = vec![F::zero(); rows * i_dim];
        let mut d_in = vec![F::zero(); rows * 3 * h];
        let mut d_hid = vec![F::zero(); rows * 3 * h];
        let mut carry = vec![F::zero(); batch * h];
        for d in 0..2 {
            let p = self.direction(d);
            let g = if d == 0 { &mut grads.fwd } else { &mut grads.bwd };
            let DirCache {
                gates,
                hidden_n,
                states,
            } = &cache.dirs[d];
            carry.iter_mut().for_each(|v| *v = F::zero());
            for step in (0..len).rev() {
                let (t, prev) = step_times(d, step, len);
                let block = t * batch;
                for b in 0..batch {
                    let row = block + b;
                    let gt = &gates[row * 3 * h..(row + 1) * 3 * h];
                    let hn = &hidden_n[row * h..(row + 1) * h];
                    let hp = prev.map(|pt| &states[(pt * batch + b) * h..(pt * batch + b + 1) * h]);
                    let go = &dout[(b * len + t) * 2 * h + d * h..][..h];
                    let cb = &mut carry[b * h..(b + 1) * h];
                    let (di_rz, di_n) = d_in[row * 3 * h..(row + 1) * 3 * h].split_at_mut(2 * h);
                    let (dh_rz, dh_n) = d_hid[row * 3 * h..(row + 1) * 3 * h].split_at_mut(2 * h);
                    for j in 0..h {
                        let (r, z, n) = (gt[j], gt[h + j], gt[2 * h + j]);
                        let hpj = hp.map_or(F::zero(), |v| v[j]);
                        let dh = go[j] + cb[j];
                        let dn = dh * (F::one() - z);
                        let dz = dh * (hpj - n);
                        let da_n = dn * (F::one() - n * n);
                        let dr = da_n * hn[j];
                        let da_z = dz * z * (F::one() - z);
                        let da_r = dr * r * (F::one() - r);
                        di_rz[j] = da_r;
                        di_rz[h + j] = da_z;
                        di_n[j] = da_n;
                        dh_rz[j] = da_r;
                        dh_rz[h + j] = da_z;
                        dh_n[j] = da_n * r;
                        cb[j] = dh * z;
                    }
                }
                if prev.is_some() {
                    gemm(
                        F::one(),
                        MatRef::new(&d_hid[block * 3 * h..(block + batch) * 3 * h], batch, 3 * h),
                        MatRef::new(&p.w_hidden, h, 3 * h).t(),
                        F::one(),
                        MatMut::new(&mut carry, batch, h),
                    );
                }
            }
            add_row_sums(&mut g.b_input, &d_in, 3 * h);
            add_row_sums(&mut g.b_hidden, &d_hid, 3 * h);
            gemm(
                F::one(),
                MatRef::new(&cache.x, rows, i_dim).t(),
                MatRef::new(&d_in, rows, 3 * h),
                F::one(),
                MatMut::new(&mut g.w_input, i_dim, 3 * h),
            );
            // pair each step's hidden cotangent with the state it consumed
            let span = (len - 1) * batch;
            if span > 0 {
                let (states_from, dhid_from) = if d == 0 { (0, batch) } else { (batch, 0) };
                gemm(
                    F::one(),
                    MatRef::new(&states[states_from * h..(states_from + span) * h], span, h).t(),
                    MatRef::new(&d_hid[dhid_from * 3 * h..(dhid_from + span) * 3 * h], span, 3 * h),
                    F::one(),
                    MatMut::new(&mut g.w_hidden, h, 3 * h),
                );
            }
            gemm(
                F::one(),
                MatRef::new(&d_in, rows, 3 * h),
                MatRef::new(&p.w_input, i_dim, 3 * h).t(),
                F::one(),
                MatMut::new(&mut dx_tm, rows, i_dim),
            );
        }
        reorder(&dx_tm, batch, len, i_dim, false)
    }
}

impl<F: Scalar> Parameters<F> for BiGru<F> {
    fn tensors(&self) -> Vec<TensorView<'_, F>> {
        let t = TensorKind::Trainable;
        vec![
            view("gru.fwd.w_input", t, &self.fwd.w_input),
            view("gru.fwd.w_hidden", t, &self.fwd.w_hidden),
            view("gru.fwd.b_input", t, &self.fwd.b_input),
            view("gru.fwd.b_hidden", t, &self.fwd.b_hidden),
            view("gru.bwd.w_input", t, &self.bwd.w_input),
            view("gru.bwd.w_hidden", t, &self.bwd.w_hidden),
            view("gru.bwd.b_input", t, &self.bwd.b_input),
            view("gru.bwd.b_hidden", t, &self.bwd.b_hidden),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, F>> {
        let t = TensorKind::Trainable;
        vec![
            view_mut("gru.fwd.w_input", t, &mut self.fwd.w_input),
            view_mut("gru.fwd.w_hidden", t, &mut self.fwd.w_hidden),
            view_mut("gru.fwd.b_input", t, &mut self.fwd.b_input),
            view_mut("gru.fwd.b_hidden", t, &mut self.fwd.b_hidden),
            view_mut("gru.bwd.w_input", t, &mut self.bwd.w_input),
            view_mut("gru.bwd.w_hidden", t, &mut self.bwd.w_hidden),
            view_mut("gru.bwd.b_input", t, &mut self.bwd.b_input),
            view_mut("gru.bwd.b_hidden", t, &mut self.bwd.b_hidden),
        ]
    }
}
