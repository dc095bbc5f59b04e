use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// An aligned source/target pair of token ids, both unwrapped and non-empty.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl SentencePair {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::Data("sentence pair with an empty side".into()));
        }
        Ok(SentencePair { source, target })
    }
}

/// Whitespace-tokenized sentence pairs read from two aligned files.
pub type RawCorpus = Vec<(Vec<String>, Vec<String>)>;

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

pub fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(tokenize).collect())
}

pub fn read_parallel(src: &Path, tgt: &Path) -> Result<RawCorpus> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but {} has {}",
            src.display(),
            s.len(),
            tgt.display(),
            t.len()
        )));
    }
    Ok(s.into_iter().zip(t).collect())
}

/// Encodes raw pairs, dropping any pair with an empty side.
pub fn encode_corpus(raw: &RawCorpus, src: &Vocabulary, tgt: &Vocabulary) -> Vec<SentencePair> {
    raw.iter()
        .filter_map(|(s, t)| SentencePair::new(src.encode(s), tgt.encode(t)).ok())
        .collect()
}

/// Keeps pairs whose source and target both have at most `max_len` tokens.
pub fn filter_by_length(pairs: Vec<SentencePair>, max_len: usize) -> Vec<SentencePair> {
    pairs
        .into_iter()
        .filter(|p| p.source.len() <= max_len && p.target.len() <= max_len)
        .collect()
}

/// Padded id matrices for one minibatch.
///
/// Targets are stored wrapped as `<s> y </s>`. Padding positions hold id 0
/// and are false in the masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    size: usize,
    src_len: usize,
    tgt_len: usize,
    src: Vec<usize>,
    tgt: Vec<usize>,
    src_mask: Vec<bool>,
    tgt_mask: Vec<bool>,
}

impl Batch {
    pub fn from_pairs(pairs: &[SentencePair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::usage("batch needs at least one pair"));
        }
        let size = pairs.len();
        let src_len = pairs.iter().map(|p| p.source.len()).max().unwrap_or(0);
        let tgt_len = pairs.iter().map(|p| p.target.len() + 2).max().unwrap_or(0);
        if src_len == 0 {
            return Err(Error::Data("empty source sentence in batch".into()));
        }
        let mut b = Batch {
            size,
            src_len,
            tgt_len,
            src: vec![PAD; size * src_len],
            tgt: vec![PAD; size * tgt_len],
            src_mask: vec![false; size * src_len],
            tgt_mask: vec![false; size * tgt_len],
        };
        for (r, p) in pairs.iter().enumerate() {
            for (t, &id) in p.source.iter().enumerate() {
                b.src[r * src_len + t] = id;
                b.src_mask[r * src_len + t] = true;
            }
            let wrapped = std::iter::once(BOS)
                .chain(p.target.iter().copied())
                .chain(std::iter::once(EOS));
            for (t, id) in wrapped.enumerate() {
                b.tgt[r * tgt_len + t] = id;
                b.tgt_mask[r * tgt_len + t] = true;
            }
        }
        Ok(b)
    }

    /// Source-only batch for inference; every target row is just `<s> </s>`.
    pub fn from_sources(sources: &[Vec<usize>]) -> Result<Self> {
        if sources.iter().any(Vec::is_empty) {
            return Err(Error::usage("cannot batch an empty source sentence"));
        }
        let pairs: Vec<SentencePair> = sources
            .iter()
            .map(|s| SentencePair {
                source: s.clone(),
                target: Vec::new(),
            })
            .collect();
        Self::from_pairs(&pairs)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    /// Wrapped target width, including `<s>` and `</s>`.
    pub fn tgt_len(&self) -> usize {
        self.tgt_len
    }

    pub fn src_row(&self, r: usize) -> &[usize] {
        &self.src[r * self.src_len..(r + 1) * self.src_len]
    }

    pub fn tgt_row(&self, r: usize) -> &[usize] {
        &self.tgt[r * self.tgt_len..(r + 1) * self.tgt_len]
    }

    pub fn src_mask_row(&self, r: usize) -> &[bool] {
        &self.src_mask[r * self.src_len..(r + 1) * self.src_len]
    }

    pub fn tgt_mask_row(&self, r: usize) -> &[bool] {
        &self.tgt_mask[r * self.tgt_len..(r + 1) * self.tgt_len]
    }

    /// Row-major `size × src_len` source mask.
    pub fn src_mask(&self) -> &[bool] {
        &self.src_mask
    }

    pub fn src_column(&self, t: usize) -> Vec<usize> {
        (0..self.size).map(|r| self.src[r * self.src_len + t]).collect()
    }

    pub fn src_mask_column(&self, t: usize) -> Vec<bool> {
        (0..self.size).map(|r| self.src_mask[r * self.src_len + t]).collect()
    }

    pub fn tgt_column(&self, t: usize) -> Vec<usize> {
        (0..self.size).map(|r| self.tgt[r * self.tgt_len + t]).collect()
    }

    pub fn tgt_mask_column(&self, t: usize) -> Vec<bool> {
        (0..self.size).map(|r| self.tgt_mask[r * self.tgt_len + t]).collect()
    }

    pub fn source_lengths(&self) -> Vec<usize> {
        (0..self.size)
            .map(|r| self.src_mask_row(r).iter().filter(|&&m| m).count())
            .collect()
    }

    /// Number of real (non-padding) target tokens to predict, `</s>` included.
    pub fn target_tokens(&self) -> usize {
        self.tgt_mask.iter().filter(|&&m| m).count() - self.size
    }

    /// Recovers the original pair from row `r` by dropping padding and the
    /// target's `<s>`/`</s>` wrapper.
    pub fn pair(&self, r: usize) -> SentencePair {
        let source = self
            .src_row(r)
            .iter()
            .zip(self.src_mask_row(r))
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id)
            .collect();
        let wrapped: Vec<usize> = self
            .tgt_row(r)
            .iter()
            .zip(self.tgt_mask_row(r))
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id)
            .collect();
        SentencePair {
            source,
            target: wrapped[1..wrapped.len() - 1].to_vec(),
        }
    }

    pub fn pairs(&self) -> Vec<SentencePair> {
        (0..self.size).map(|r| self.pair(r)).collect()
    }

    /// Copy of this batch with source ids at padded positions replaced.
    pub fn with_source_padding(&self, id: usize) -> Batch {
        let mut b = self.clone();
        for (v, &m) in b.src.iter_mut().zip(&b.src_mask) {
            if !m {
                *v = id;
            }
        }
        b
    }

    /// Copy of this batch with target ids at padded positions replaced.
    pub fn with_target_padding(&self, id: usize) -> Batch {
        let mut b = self.clone();
        for (v, &m) in b.tgt.iter_mut().zip(&b.tgt_mask) {
            if !m {
                *v = id;
            }
        }
        b
    }
}

/// Sorting pools span this many batches.
const BUCKET_POOL: usize = 16;

/// Seeded shuffle, then length bucketing: pools of `16 · batch_size` pairs
/// are sorted by source length and cut into batches. Full batches are
/// shuffled again; a final short batch, if any, comes last.
pub fn make_batches(pairs: &[SentencePair], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    for pool in order.chunks_mut(batch_size * BUCKET_POOL) {
        pool.sort_by_key(|&i| pairs[i].source.len());
    }

    let full = pairs.len() / batch_size * batch_size;
    let mut groups: Vec<&[usize]> = order[..full].chunks(batch_size).collect();
    groups.shuffle(&mut rng);
    let mut batches = Vec::with_capacity(groups.len() + 1);
    for g in groups {
        let chunk: Vec<SentencePair> = g.iter().map(|&i| pairs[i].clone()).collect();
        batches.push(Batch::from_pairs(&chunk)?);
    }
    if full < pairs.len() {
        let chunk: Vec<SentencePair> = order[full..].iter().map(|&i| pairs[i].clone()).collect();
        batches.push(Batch::from_pairs(&chunk)?);
    }
    Ok(batches)
}
