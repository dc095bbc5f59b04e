//! Bidirectional encoder, attention decoder and reconstructor.

pub mod checkpoint;
mod network;
mod params;

pub use network::{
    attend, decoder_step, encode, encoder_memory, forward_pass, init_decoder_state,
    inverse_attend, reconstruct_pass, AttentionMemory, DecoderTrace, EncodedSource, GammaVars,
    GruVars, ReconstructionTrace, ThetaVars,
};
pub use params::{
    init_params, names, EncoderDecoderParams, ModelConfig, ReconstructorParams, GAMMA_PREFIX,
    THETA_PREFIX,
};
