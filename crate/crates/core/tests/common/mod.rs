#![allow(dead_code)]

use edr_nmt::autodiff::ParamSet;
use edr_nmt::data::{Batch, SentencePair, NUM_RESERVED};
use edr_nmt::model::{checkpoint, init_params, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        src_vocab: 20,
        tgt_vocab: 20,
        embed_dim: 8,
        hidden_dim: 8,
        seed,
    }
}

/// θ and γ from the training initialization.
pub fn tiny_params(seed: u64) -> ParamSet {
    let (theta, gamma) = init_params(&tiny_config(seed)).unwrap();
    checkpoint::combine(&theta, Some(&gamma))
}

pub fn random_sentence(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<usize> {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| rng.gen_range(NUM_RESERVED..vocab)).collect()
}

pub fn random_pairs(seed: u64, n: usize, vocab: usize, max_len: usize) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = random_sentence(&mut rng, vocab, max_len);
            let t = random_sentence(&mut rng, vocab, max_len);
            SentencePair::new(s, t).unwrap()
        })
        .collect()
}

pub fn random_batch(seed: u64, n: usize, vocab: usize, max_len: usize) -> Batch {
    Batch::from_pairs(&random_pairs(seed, n, vocab, max_len)).unwrap()
}

/// Copy pairs over symbols `4..vocab`.
pub fn copy_pairs(seed: u64, n: usize, vocab: usize, min_len: usize, max_len: usize) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len);
            let s: Vec<usize> = (0..len).map(|_| rng.gen_range(NUM_RESERVED..vocab)).collect();
            SentencePair::new(s.clone(), s).unwrap()
        })
        .collect()
}
