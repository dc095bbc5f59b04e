//! Corpus BLEU, paired bootstrap resampling, and over/under-translation
//! counters.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
pub const DEFAULT_SAMPLES: usize = 1000;

/// Sufficient statistics for corpus BLEU; sums over sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl NgramStats {
    /// Clipped n-gram matches of one hypothesis against one reference.
    pub fn sentence<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let mut s = NgramStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[T], u64> = HashMap::new();
            if reference.len() >= n {
                for g in reference.windows(n) {
                    *ref_counts.entry(g).or_default() += 1;
                }
            }
            let mut hyp_counts: HashMap<&[T], u64> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            s.totals[n - 1] = (hyp.len() + 1 - n) as u64;
            s.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, other: &NgramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self) -> BleuScore {
        let mut precisions = [0.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            if self.totals[n] > 0 {
                precisions[n] = self.matches[n] as f64 / self.totals[n] as f64;
            }
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let brevity_penalty = if c == 0.0 {
            if r == 0.0 {
                1.0
            } else {
                0.0
            }
        } else if c <= r {
            (1.0 - r / c).exp()
        } else {
            1.0
        };
        let bleu = if precisions.iter().all(|&p| p > 0.0) {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            brevity_penalty * log_mean.exp()
        } else {
            0.0
        };
        BleuScore {
            bleu,
            precisions,
            brevity_penalty,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuScore {
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
}

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::usage(format!(
            "{a} hypotheses but {b} references"
        )));
    }
    Ok(())
}

/// Unsmoothed corpus-level BLEU-4 against a single reference per sentence.
pub fn bleu_corpus<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<BleuScore> {
    check_aligned(hypotheses.len(), references.len())?;
    let mut total = NgramStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&NgramStats::sentence(h, r));
    }
    Ok(total.score())
}

/// Word-occurrence counters for over- and under-translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WordStats {
    /// (i) hypothesis occurrences beyond the reference count, over words the
    /// reference contains.
    pub excess: u64,
    /// (ii) occurrences of words absent from the reference that the
    /// hypothesis uses more than once.
    pub repeated_absent: u64,
    /// (iii) unknown-word tokens in the hypothesis.
    pub unknown: u64,
}

impl WordStats {
    pub fn sentence<T: Eq + Hash>(hyp: &[T], reference: &[T], unk: &T) -> Self {
        fn count<'a, T: Eq + Hash>(s: &'a [T], unk: &T) -> HashMap<&'a T, u64> {
            let mut m = HashMap::new();
            for w in s.iter().filter(|w| *w != unk) {
                *m.entry(w).or_default() += 1;
            }
            m
        }
        let (ch, cr) = (count(hyp, unk), count(reference, unk));
        let mut out = WordStats {
            unknown: hyp.iter().filter(|w| *w == unk).count() as u64,
            ..Default::default()
        };
        for (w, &h) in &ch {
            match cr.get(w) {
                Some(&r) => out.excess += h.saturating_sub(r),
                None if h > 1 => out.repeated_absent += h,
                None => {}
            }
        }
        out
    }

    pub fn add(&mut self, other: &WordStats) {
        self.excess += other.excess;
        self.repeated_absent += other.repeated_absent;
        self.unknown += other.unknown;
    }
}

/// Corpus counters: sums of the per-sentence counters.
pub fn word_stats<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>], unk: &T) -> Result<WordStats> {
    check_aligned(hypotheses.len(), references.len())?;
    let mut total = WordStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&WordStats::sentence(h, r, unk));
    }
    Ok(total)
}

/// Paired bootstrap resampling: the fraction of `samples` resampled corpora
/// on which system B scores at least as well as system A. Small values
/// support "A is better than B". Resample `k` draws from its own RNG
/// stream, so iterations are independent of evaluation order.
pub fn bootstrap_significance<T: Eq + Hash>(
    hyp_a: &[Vec<T>],
    hyp_b: &[Vec<T>],
    references: &[Vec<T>],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_aligned(hyp_a.len(), references.len())?;
    check_aligned(hyp_b.len(), references.len())?;
    if samples == 0 {
        return Err(Error::usage("bootstrap needs at least one sample"));
    }
    if references.is_empty() {
        return Err(Error::usage("bootstrap over an empty corpus"));
    }
    let stats = |hyps: &[Vec<T>]| -> Vec<NgramStats> {
        hyps.iter()
            .zip(references)
            .map(|(h, r)| NgramStats::sentence(h, r))
            .collect()
    };
    let (sa, sb) = (stats(hyp_a), stats(hyp_b));
    let n = references.len();
    let mut b_wins = 0usize;
    for k in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let (mut ta, mut tb) = (NgramStats::default(), NgramStats::default());
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            ta.add(&sa[i]);
            tb.add(&sb[i]);
        }
        if tb.score().bleu >= ta.score().bleu {
            b_wins += 1;
        }
    }
    Ok(b_wins as f64 / samples as f64)
}

/// One system's scores, optionally with a p-value against a comparison system.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub bleu: BleuScore,
    pub counts: WordStats,
    pub p_value: Option<f64>,
}

impl EvalReport {
    pub fn compute<T: Eq + Hash>(
        name: impl Into<String>,
        hypotheses: &[Vec<T>],
        references: &[Vec<T>],
        unk: &T,
    ) -> Result<Self> {
        Ok(EvalReport {
            name: name.into(),
            bleu: bleu_corpus(hypotheses, references)?,
            counts: word_stats(hypotheses, references, unk)?,
            p_value: None,
        })
    }
}

pub const REPORT_HEADER: &str = "model\tBLEU\tp_value\t(i)\t(ii)\t(iii)";

/// TSV block with one row per system; a missing p-value is `-`.
pub fn report_tsv(rows: &[EvalReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let p = r.p_value.map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{}\t{}\t{}\t{}",
            r.name, r.bleu.bleu, p, r.counts.excess, r.counts.repeated_absent, r.counts.unknown
        );
    }
    s
}
