use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::RawCorpus;
use crate::error::{Error, Result};

/// Toy translation tasks over a symbol alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Target equals source.
    Copy,
    /// Target is the source reversed.
    Reverse,
}

impl FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(SyntheticTask::Copy),
            "reverse" | "reversal" => Ok(SyntheticTask::Reverse),
            other => Err(Error::Config(format!("unknown synthetic task {other:?}"))),
        }
    }
}

impl fmt::Display for SyntheticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticTask::Copy => "copy",
            SyntheticTask::Reverse => "reverse",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            task: SyntheticTask::Copy,
            alphabet: 20,
            min_len: 3,
            max_len: 10,
        }
    }
}

pub fn symbol(i: usize) -> String {
    format!("w{i}")
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alphabet == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid synthetic task: alphabet {}, lengths {}..={}",
                self.alphabet, self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    /// `n` pairs with uniformly drawn lengths and symbols.
    pub fn generate(&self, n: usize, seed: u64) -> Result<RawCorpus> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let len = rng.gen_range(self.min_len..=self.max_len);
                let src: Vec<String> = (0..len)
                    .map(|_| symbol(rng.gen_range(0..self.alphabet)))
                    .collect();
                let tgt = match self.task {
                    SyntheticTask::Copy => src.clone(),
                    SyntheticTask::Reverse => src.iter().rev().cloned().collect(),
                };
                (src, tgt)
            })
            .collect())
    }
}
