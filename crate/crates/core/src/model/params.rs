use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const THETA_PREFIX: &str = "theta.";
pub const GAMMA_PREFIX: &str = "gamma.";

/// Parameter names. θ covers the encoder and decoder, γ the reconstructor.
pub mod names {
    pub const SRC_EMBED: &str = "theta.src_embed";
    pub const TGT_EMBED: &str = "theta.tgt_embed";
    pub const ENC_FWD: &str = "theta.enc_fwd";
    pub const ENC_BWD: &str = "theta.enc_bwd";
    pub const DEC_INIT: &str = "theta.dec_init.w";
    pub const DEC: &str = "theta.dec";
    pub const ATT_W: &str = "theta.att.w";
    pub const ATT_U: &str = "theta.att.u";
    pub const ATT_V: &str = "theta.att.v";
    pub const OUT_W: &str = "theta.out.w";
    pub const OUT_B: &str = "theta.out.b";

    pub const REC_INIT: &str = "gamma.rec_init.w";
    pub const REC: &str = "gamma.rec";
    pub const INV_ATT_W: &str = "gamma.inv_att.w";
    pub const INV_ATT_U: &str = "gamma.inv_att.u";
    pub const INV_ATT_V: &str = "gamma.inv_att.v";
    pub const REC_OUT_W: &str = "gamma.out.w";
    pub const REC_OUT_B: &str = "gamma.out.b";

    /// Suffixes of the four tensors of a GRU cell.
    pub const GRU_PARTS: [&str; 4] = ["w_in", "w_gates", "w_cand", "bias"];
}

/// Network sizes; `hidden_dim` is per encoder direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.src_vocab == 0 || self.tgt_vocab == 0 || self.embed_dim == 0 || self.hidden_dim == 0
        {
            return Err(Error::Config(format!("all model dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Width of an encoder state `[→h; ←h]`.
    pub fn encoder_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Attention hidden width, shared by both attentions.
    pub fn attention_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Recovers sizes from a θ collection. The seed is not stored and comes back as 0.
    pub fn infer(theta: &ParamSet) -> Result<Self> {
        let src = theta.require(names::SRC_EMBED)?;
        let tgt = theta.require(names::TGT_EMBED)?;
        let cand = theta.require(&format!("{}.w_cand", names::ENC_FWD))?;
        Ok(ModelConfig {
            src_vocab: src.rows(),
            tgt_vocab: tgt.rows(),
            embed_dim: src.cols(),
            hidden_dim: cand.rows(),
            seed: 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Zero,
}

fn gru_shapes(prefix: &str, input: usize, hidden: usize) -> Vec<(String, [usize; 2], Init)> {
    vec![
        (format!("{prefix}.w_in"), [input, 3 * hidden], Init::Xavier),
        (format!("{prefix}.w_gates"), [hidden, 2 * hidden], Init::Xavier),
        (format!("{prefix}.w_cand"), [hidden, hidden], Init::Xavier),
        (format!("{prefix}.bias"), [1, 3 * hidden], Init::Zero),
    ]
}

fn theta_layout(c: &ModelConfig) -> Vec<(String, [usize; 2], Init)> {
    let (e, h, enc, a) = (c.embed_dim, c.hidden_dim, c.encoder_dim(), c.attention_dim());
    let mut v = vec![
        (names::SRC_EMBED.to_string(), [c.src_vocab, e], Init::Xavier),
        (names::TGT_EMBED.to_string(), [c.tgt_vocab, e], Init::Xavier),
    ];
    v.extend(gru_shapes(names::ENC_FWD, e, h));
    v.extend(gru_shapes(names::ENC_BWD, e, h));
    v.push((names::DEC_INIT.to_string(), [h, h], Init::Xavier));
    v.extend(gru_shapes(names::DEC, e + enc, h));
    v.extend([
        (names::ATT_W.to_string(), [h, a], Init::Xavier),
        (names::ATT_U.to_string(), [enc, a], Init::Xavier),
        (names::ATT_V.to_string(), [a, 1], Init::Xavier),
        (names::OUT_W.to_string(), [h + e + enc, c.tgt_vocab], Init::Xavier),
        (names::OUT_B.to_string(), [1, c.tgt_vocab], Init::Zero),
    ]);
    v
}

fn gamma_layout(c: &ModelConfig) -> Vec<(String, [usize; 2], Init)> {
    let (e, h, a) = (c.embed_dim, c.hidden_dim, c.attention_dim());
    let mut v = vec![(names::REC_INIT.to_string(), [h, h], Init::Xavier)];
    v.extend(gru_shapes(names::REC, e + h, h));
    v.extend([
        (names::INV_ATT_W.to_string(), [h, a], Init::Xavier),
        (names::INV_ATT_U.to_string(), [h, a], Init::Xavier),
        (names::INV_ATT_V.to_string(), [a, 1], Init::Xavier),
        (names::REC_OUT_W.to_string(), [h + e + h, c.src_vocab], Init::Xavier),
        (names::REC_OUT_B.to_string(), [1, c.src_vocab], Init::Zero),
    ]);
    v
}

fn materialize(layout: Vec<(String, [usize; 2], Init)>, rng: &mut ChaCha8Rng) -> ParamSet {
    layout
        .into_iter()
        .map(|(name, [rows, cols], init)| {
            let t = match init {
                Init::Zero => Tensor::zeros(rows, cols),
                Init::Xavier => {
                    let a = (6.0 / (rows + cols) as f64).sqrt();
                    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
                    Tensor::new(rows, cols, data).expect("layout shapes are positive")
                }
            };
            (name, t)
        })
        .collect()
}

fn check_layout(set: &ParamSet, layout: Vec<(String, [usize; 2], Init)>) -> Result<()> {
    if set.len() != layout.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            layout.len(),
            set.len()
        )));
    }
    for (name, shape, _) in layout {
        let t = set
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// θ: embeddings, both encoder directions, decoder, attention and readout.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderDecoderParams(ParamSet);

/// γ: reconstructor cell, inverse attention and source readout.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructorParams(ParamSet);

impl EncoderDecoderParams {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self(materialize(theta_layout(config), &mut rng)))
    }

    /// Wraps a loaded collection after checking every name and shape.
    pub fn from_set(set: ParamSet, config: &ModelConfig) -> Result<Self> {
        check_layout(&set, theta_layout(config))?;
        Ok(Self(set))
    }

    pub fn set(&self) -> &ParamSet {
        &self.0
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.0
    }

    pub fn into_set(self) -> ParamSet {
        self.0
    }
}

impl ReconstructorParams {
    /// Draws from a stream separate from θ's, so θ is unaffected by whether
    /// γ exists.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self(materialize(gamma_layout(config), &mut rng)))
    }

    pub fn from_set(set: ParamSet, config: &ModelConfig) -> Result<Self> {
        check_layout(&set, gamma_layout(config))?;
        Ok(Self(set))
    }

    pub fn set(&self) -> &ParamSet {
        &self.0
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.0
    }

    pub fn into_set(self) -> ParamSet {
        self.0
    }
}

/// Fresh θ and γ for `config`.
pub fn init_params(config: &ModelConfig) -> Result<(EncoderDecoderParams, ReconstructorParams)> {
    Ok((
        EncoderDecoderParams::init(config)?,
        ReconstructorParams::init(config)?,
    ))
}
