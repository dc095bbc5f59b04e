//! Encoder, attention decoder and reconstructor as functions that append to
//! a [`Graph`].
//!
//! Everything is batched: a state is a `batch × width` tensor and ids are
//! passed one time step (one batch column) at a time.

use crate::autodiff::{Bindings, Graph, Tensor, Var};
use crate::data::{Batch, BOS, EOS};
use crate::error::{Error, Result};

use super::params::{names, EncoderDecoderParams, ReconstructorParams};

/// Graph handles of one GRU cell.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    w_in: Var,
    w_gates: Var,
    w_cand: Var,
    bias: Var,
}

impl GruVars {
    fn lookup(b: &Bindings, prefix: &str) -> Result<Self> {
        Ok(GruVars {
            w_in: b.get(&format!("{prefix}.w_in"))?,
            w_gates: b.get(&format!("{prefix}.w_gates"))?,
            w_cand: b.get(&format!("{prefix}.w_cand"))?,
            bias: b.get(&format!("{prefix}.bias"))?,
        })
    }

    /// `h' = (1 − z)·h + z·n` with update gate `z`, reset gate `r` and
    /// candidate `n = tanh(x·W_n + (r ⊙ h)·U_n + b_n)`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let hidden = g.value(h).cols();
        let xw = g.matmul(x, self.w_in)?;
        let xw = g.add(xw, self.bias)?;
        let hw = g.matmul(h, self.w_gates)?;
        let xz = g.slice_cols(xw, 0, hidden)?;
        let xr = g.slice_cols(xw, hidden, hidden)?;
        let xn = g.slice_cols(xw, 2 * hidden, hidden)?;
        let hz = g.slice_cols(hw, 0, hidden)?;
        let hr = g.slice_cols(hw, hidden, hidden)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let rh = g.mul(r, h)?;
        let hn = g.matmul(rh, self.w_cand)?;
        let n = g.add(xn, hn)?;
        let n = g.tanh(n)?;
        let delta = g.sub(n, h)?;
        let delta = g.mul(z, delta)?;
        g.add(h, delta)
    }
}

/// θ bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct ThetaVars {
    pub src_embed: Var,
    pub tgt_embed: Var,
    pub enc_fwd: GruVars,
    pub enc_bwd: GruVars,
    pub dec_init: Var,
    pub dec: GruVars,
    pub att_w: Var,
    pub att_u: Var,
    pub att_v: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl ThetaVars {
    pub fn bind(g: &mut Graph, theta: &EncoderDecoderParams) -> Result<Self> {
        Self::lookup(&theta.set().bind(g))
    }

    pub fn lookup(b: &Bindings) -> Result<Self> {
        Ok(ThetaVars {
            src_embed: b.get(names::SRC_EMBED)?,
            tgt_embed: b.get(names::TGT_EMBED)?,
            enc_fwd: GruVars::lookup(b, names::ENC_FWD)?,
            enc_bwd: GruVars::lookup(b, names::ENC_BWD)?,
            dec_init: b.get(names::DEC_INIT)?,
            dec: GruVars::lookup(b, names::DEC)?,
            att_w: b.get(names::ATT_W)?,
            att_u: b.get(names::ATT_U)?,
            att_v: b.get(names::ATT_V)?,
            out_w: b.get(names::OUT_W)?,
            out_b: b.get(names::OUT_B)?,
        })
    }
}

/// γ bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct GammaVars {
    pub rec_init: Var,
    pub rec: GruVars,
    pub inv_att_w: Var,
    pub inv_att_u: Var,
    pub inv_att_v: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl GammaVars {
    pub fn bind(g: &mut Graph, gamma: &ReconstructorParams) -> Result<Self> {
        Self::lookup(&gamma.set().bind(g))
    }

    pub fn lookup(b: &Bindings) -> Result<Self> {
        Ok(GammaVars {
            rec_init: b.get(names::REC_INIT)?,
            rec: GruVars::lookup(b, names::REC)?,
            inv_att_w: b.get(names::INV_ATT_W)?,
            inv_att_u: b.get(names::INV_ATT_U)?,
            inv_att_v: b.get(names::INV_ATT_V)?,
            out_w: b.get(names::REC_OUT_W)?,
            out_b: b.get(names::REC_OUT_B)?,
        })
    }
}

/// Encoder output: `h_t = [→h_t; ←h_t]` per source position.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    /// One `batch × 2·hidden` tensor per source position.
    pub states: Vec<Var>,
    /// Backward-direction states, `batch × hidden` each.
    pub backward: Vec<Var>,
    /// Row-major `batch × len` mask of real tokens.
    pub mask: Vec<bool>,
    pub batch: usize,
}

/// Attention memory: value vectors plus their precomputed key projections.
#[derive(Clone, Debug)]
pub struct AttentionMemory {
    values: Vec<Var>,
    keys: Vec<Var>,
    mask: Vec<bool>,
}

impl AttentionMemory {
    /// Projects each value once with `u` so every query step reuses `U·v_j`.
    pub fn new(g: &mut Graph, values: Vec<Var>, u: Var, mask: Vec<bool>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::usage("attention over an empty memory"));
        }
        let rows = g.value(values[0]).rows();
        if mask.len() != rows * values.len() {
            return Err(Error::Dimension {
                op: "attention mask",
                lhs: [rows, values.len()],
                rhs: [mask.len(), 1],
            });
        }
        for r in 0..rows {
            if !mask[r * values.len()..(r + 1) * values.len()].iter().any(|&m| m) {
                return Err(Error::usage(format!("attention row {r} is fully masked")));
            }
        }
        let keys = values
            .iter()
            .map(|&v| g.matmul(v, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(AttentionMemory { values, keys, mask })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Additive attention: `e_j = vᵀ tanh(W·query + U·value_j)`, softmax over
    /// unmasked `j`, context `Σ_j α_j value_j`. Returns `(α, context)`.
    pub fn attend(&self, g: &mut Graph, query: Var, w: Var, v: Var) -> Result<(Var, Var)> {
        let wq = g.matmul(query, w)?;
        let mut energies = Vec::with_capacity(self.keys.len());
        for &k in &self.keys {
            let pre = g.add(k, wq)?;
            let act = g.tanh(pre)?;
            energies.push(g.matmul(act, v)?);
        }
        let e = g.concat(&energies)?;
        let alpha = g.masked_softmax(e, self.mask.clone())?;
        let mut context = None;
        for (j, &value) in self.values.iter().enumerate() {
            let a_j = g.slice_cols(alpha, j, 1)?;
            let term = g.mul(value, a_j)?;
            context = Some(match context {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        Ok((alpha, context.expect("memory is non-empty")))
    }
}

fn column_mask(g: &mut Graph, mask: &[bool]) -> Var {
    g.constant(Tensor::column(
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    ))
}

/// Bidirectional GRU encoder. The backward direction holds its state through
/// padding, so real positions never see padded ids.
pub fn encode(g: &mut Graph, theta: &ThetaVars, batch: &Batch) -> Result<EncodedSource> {
    let len = batch.src_len();
    if len == 0 {
        return Err(Error::usage("cannot encode an empty source"));
    }
    let rows = batch.size();
    let hidden = g.value(theta.enc_fwd.w_cand).rows();
    let embedded = (0..len)
        .map(|t| g.embedding(theta.src_embed, &batch.src_column(t)))
        .collect::<Result<Vec<_>>>()?;

    let zero = g.constant(Tensor::zeros(rows, hidden));
    let mut forward = Vec::with_capacity(len);
    let mut h = zero;
    for &x in &embedded {
        h = theta.enc_fwd.step(g, x, h)?;
        forward.push(h);
    }

    let mut backward = vec![zero; len];
    let mut h = zero;
    for t in (0..len).rev() {
        let next = theta.enc_bwd.step(g, embedded[t], h)?;
        let m = column_mask(g, &batch.src_mask_column(t));
        let delta = g.sub(next, h)?;
        let delta = g.mul(delta, m)?;
        h = g.add(h, delta)?;
        backward[t] = h;
    }

    let states = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedSource {
        states,
        backward,
        mask: batch.src_mask().to_vec(),
        batch: rows,
    })
}

/// `s_0 = tanh(←h_1 · W_init)`.
pub fn init_decoder_state(g: &mut Graph, theta: &ThetaVars, enc: &EncodedSource) -> Result<Var> {
    let first = *enc
        .backward
        .first()
        .ok_or_else(|| Error::usage("empty encoder output"))?;
    let pre = g.matmul(first, theta.dec_init)?;
    g.tanh(pre)
}

/// Forward attention memory over the encoder states.
pub fn encoder_memory(g: &mut Graph, theta: &ThetaVars, enc: &EncodedSource) -> Result<AttentionMemory> {
    AttentionMemory::new(g, enc.states.clone(), theta.att_u, enc.mask.clone())
}

/// `(α_i, c_i)` for decoder state `s_{i−1}`.
pub fn attend(g: &mut Graph, theta: &ThetaVars, memory: &AttentionMemory, s_prev: Var) -> Result<(Var, Var)> {
    memory.attend(g, s_prev, theta.att_w, theta.att_v)
}

/// One decoder step: `s_i = GRU([E y_{i−1}; c_i], s_{i−1})` and
/// `p(·) = softmax([s_i; E y_{i−1}; c_i]·W_o + b_o)`.
pub fn decoder_step(
    g: &mut Graph,
    theta: &ThetaVars,
    s_prev: Var,
    y_prev: &[usize],
    context: Var,
) -> Result<(Var, Var)> {
    let e = g.embedding(theta.tgt_embed, y_prev)?;
    let input = g.concat(&[e, context])?;
    let s = theta.dec.step(g, input, s_prev)?;
    let readout = g.concat(&[s, e, context])?;
    let logits = g.matmul(readout, theta.out_w)?;
    let logits = g.add(logits, theta.out_b)?;
    let probs = g.softmax(logits)?;
    Ok((s, probs))
}

/// Teacher-forced decoder states and attention for one batch.
#[derive(Clone, Debug)]
pub struct DecoderTrace {
    /// `s_1..s_T`, one `batch × hidden` tensor per predicted target token.
    pub states: Vec<Var>,
    /// Row-major `batch × T` mask of real decoder steps.
    pub mask: Vec<bool>,
    /// Forward attention rows per step, `batch × src_len` each.
    pub alphas: Vec<Var>,
    /// Output distributions per step, `batch × tgt_vocab` each.
    pub probs: Vec<Var>,
    pub batch: usize,
    pub src_len: usize,
}

fn weights(mask: &[bool], scale: f64) -> Vec<f64> {
    mask.iter().map(|&m| if m { scale } else { 0.0 }).collect()
}

fn sum_all(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = *terms
        .first()
        .ok_or_else(|| Error::usage("no loss terms"))?;
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Teacher-forced decoding of the gold target. The loss is
/// `−(1/N) Σ_n Σ_i log p(y_i)` over real target tokens, `</s>` included.
pub fn forward_pass(g: &mut Graph, theta: &ThetaVars, batch: &Batch) -> Result<(Var, DecoderTrace)> {
    let enc = encode(g, theta, batch)?;
    let memory = encoder_memory(g, theta, &enc)?;
    let mut s = init_decoder_state(g, theta, &enc)?;

    let rows = batch.size();
    let steps = batch.tgt_len() - 1;
    let scale = 1.0 / rows as f64;
    let mut trace = DecoderTrace {
        states: Vec::with_capacity(steps),
        mask: vec![false; rows * steps],
        alphas: Vec::with_capacity(steps),
        probs: Vec::with_capacity(steps),
        batch: rows,
        src_len: batch.src_len(),
    };
    let mut terms = Vec::with_capacity(steps);
    for i in 1..=steps {
        let (alpha, context) = attend(g, theta, &memory, s)?;
        let (next, probs) = decoder_step(g, theta, s, &batch.tgt_column(i - 1), context)?;
        let step_mask = batch.tgt_mask_column(i);
        terms.push(g.cross_entropy(probs, &batch.tgt_column(i), &weights(&step_mask, scale))?);
        for (r, &m) in step_mask.iter().enumerate() {
            trace.mask[r * steps + i - 1] = m;
        }
        s = next;
        trace.states.push(s);
        trace.alphas.push(alpha);
        trace.probs.push(probs);
    }
    let loss = sum_all(g, &terms)?;
    Ok((loss, trace))
}

/// `(α'_i, c'_i)` over decoder states for reconstructor state `s'_{i−1}`.
pub fn inverse_attend(
    g: &mut Graph,
    gamma: &GammaVars,
    memory: &AttentionMemory,
    s_prev: Var,
) -> Result<(Var, Var)> {
    memory.attend(g, s_prev, gamma.inv_att_w, gamma.inv_att_v)
}

/// Reconstructor outputs for one batch.
#[derive(Clone, Debug)]
pub struct ReconstructionTrace {
    /// Inverse attention rows per step, `batch × T` each.
    pub alphas: Vec<Var>,
    /// Source-vocabulary distributions per step.
    pub probs: Vec<Var>,
    /// Gold ids per step (`x_1..x_|x|`, then `</s>`).
    pub targets: Vec<Vec<usize>>,
    /// Which rows are real at each step.
    pub masks: Vec<Vec<bool>>,
}

/// Back-translation of the decoder states into the gold source.
///
/// Step `i` feeds `E x_{i−1}` (with `x_0 = <s>`) and `c'_i`, and predicts
/// `x_i`; the final step predicts `</s>`. The initial state is
/// `tanh(mean_j(s_j) · W'_init)` over real decoder steps. The loss is
/// `−(1/N) Σ_n Σ_i log p(x_i)`.
pub fn reconstruct_pass(
    g: &mut Graph,
    theta: &ThetaVars,
    gamma: &GammaVars,
    trace: &DecoderTrace,
    batch: &Batch,
) -> Result<(Var, ReconstructionTrace)> {
    if trace.batch != batch.size() || trace.src_len != batch.src_len() {
        return Err(Error::usage(format!(
            "decoder trace ({}x{}) does not come from this batch ({}x{})",
            trace.batch,
            trace.src_len,
            batch.size(),
            batch.src_len()
        )));
    }
    let rows = batch.size();
    let steps = trace.states.len();
    let memory = AttentionMemory::new(g, trace.states.clone(), gamma.inv_att_u, trace.mask.clone())?;

    let mut pooled = None;
    for (j, &s_j) in trace.states.iter().enumerate() {
        let w: Vec<f64> = (0..rows)
            .map(|r| {
                let row = &trace.mask[r * steps..(r + 1) * steps];
                if row[j] {
                    1.0 / row.iter().filter(|&&m| m).count() as f64
                } else {
                    0.0
                }
            })
            .collect();
        let w = g.constant(Tensor::column(w));
        let term = g.mul(s_j, w)?;
        pooled = Some(match pooled {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let pooled = pooled.ok_or_else(|| Error::usage("empty decoder trace"))?;
    let pre = g.matmul(pooled, gamma.rec_init)?;
    let mut s = g.tanh(pre)?;

    let lengths = batch.source_lengths();
    let scale = 1.0 / rows as f64;
    let src_len = batch.src_len();
    let mut out = ReconstructionTrace {
        alphas: Vec::with_capacity(src_len + 1),
        probs: Vec::with_capacity(src_len + 1),
        targets: Vec::with_capacity(src_len + 1),
        masks: Vec::with_capacity(src_len + 1),
    };
    let mut terms = Vec::with_capacity(src_len + 1);
    let mut prev = vec![BOS; rows];
    for i in 0..=src_len {
        let target: Vec<usize> = (0..rows)
            .map(|r| match i.cmp(&lengths[r]) {
                std::cmp::Ordering::Less => batch.src_row(r)[i],
                std::cmp::Ordering::Equal => EOS,
                std::cmp::Ordering::Greater => 0,
            })
            .collect();
        let mask: Vec<bool> = lengths.iter().map(|&l| i <= l).collect();

        let (alpha, context) = inverse_attend(g, gamma, &memory, s)?;
        let e = g.embedding(theta.src_embed, &prev)?;
        let input = g.concat(&[e, context])?;
        s = gamma.rec.step(g, input, s)?;
        let readout = g.concat(&[s, e, context])?;
        let logits = g.matmul(readout, gamma.out_w)?;
        let logits = g.add(logits, gamma.out_b)?;
        let probs = g.softmax(logits)?;
        terms.push(g.cross_entropy(probs, &target, &weights(&mask, scale))?);

        prev = target.clone();
        out.alphas.push(alpha);
        out.probs.push(probs);
        out.targets.push(target);
        out.masks.push(mask);
    }
    let loss = sum_all(g, &terms)?;
    Ok((loss, out))
}
