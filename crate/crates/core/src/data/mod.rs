//! Vocabularies, parallel corpora, and padded minibatches.

mod corpus;
mod synthetic;
mod vocab;

pub use corpus::{
    encode_corpus, filter_by_length, make_batches, read_lines, read_parallel, tokenize, Batch,
    RawCorpus, SentencePair,
};
pub use synthetic::{symbol, SyntheticSpec, SyntheticTask};
pub use vocab::{
    Vocabulary, BOS, BOS_TOKEN, EOS, EOS_TOKEN, NUM_RESERVED, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};
