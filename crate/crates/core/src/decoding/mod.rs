//! Greedy inference and attention-matrix export.

use std::fmt::Write as _;

use crate::autodiff::Graph;
use crate::data::{Batch, EOS};
use crate::error::{Error, Result};
use crate::model::{attend, decoder_step, encode, encoder_memory, init_decoder_state, EncoderDecoderParams, ThetaVars};

pub const DEFAULT_LEN_FACTOR: usize = 2;

/// Sentences decoded together in one graph.
const DECODE_CHUNK: usize = 64;

/// Greedy output for one source sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    /// Emitted ids, without `<s>`/`</s>`.
    pub tokens: Vec<usize>,
    /// One attention row over the source per emitted token.
    pub attention: Vec<Vec<f64>>,
    /// Log-probability of each emitted token.
    pub log_probs: Vec<f64>,
}

/// Maximum number of emitted tokens for a source of `src_len` tokens.
pub fn output_cap(src_len: usize, factor: usize) -> usize {
    factor * src_len + 5
}

/// Lowest id among the maxima.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn greedy_decode(theta: &EncoderDecoderParams, source: &[usize], factor: usize) -> Result<Translation> {
    let mut out = greedy_decode_batch(theta, &[source.to_vec()], factor)?;
    Ok(out.pop().expect("one translation per source"))
}

/// Greedy decoding from `s_0` and `<s>`: each step emits the argmax of the
/// output distribution. A row ends when the argmax is `</s>` (or one of the
/// other non-emittable ids `<pad>`, `<s>`), or after
/// `factor · |x| + 5` tokens.
pub fn greedy_decode_batch(
    theta: &EncoderDecoderParams,
    sources: &[Vec<usize>],
    factor: usize,
) -> Result<Vec<Translation>> {
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(DECODE_CHUNK) {
        out.extend(decode_chunk(theta, chunk, factor)?);
    }
    Ok(out)
}

fn decode_chunk(theta: &EncoderDecoderParams, sources: &[Vec<usize>], factor: usize) -> Result<Vec<Translation>> {
    let batch = Batch::from_sources(sources)?;
    let mut g = Graph::new();
    let vars = ThetaVars::bind(&mut g, theta)?;
    let enc = encode(&mut g, &vars, &batch)?;
    let memory = encoder_memory(&mut g, &vars, &enc)?;
    let mut s = init_decoder_state(&mut g, &vars, &enc)?;

    let caps: Vec<usize> = sources.iter().map(|x| output_cap(x.len(), factor)).collect();
    let longest = caps.iter().copied().max().unwrap_or(0);
    let mut done = vec![false; sources.len()];
    let mut out: Vec<Translation> = sources
        .iter()
        .map(|_| Translation {
            tokens: Vec::new(),
            attention: Vec::new(),
            log_probs: Vec::new(),
        })
        .collect();
    let mut prev = vec![crate::data::BOS; sources.len()];

    for _ in 0..longest {
        if done.iter().all(|&d| d) {
            break;
        }
        let (alpha, context) = attend(&mut g, &vars, &memory, s)?;
        let (next, probs) = decoder_step(&mut g, &vars, s, &prev, context)?;
        s = next;
        for r in 0..sources.len() {
            let dist = g.value(probs).row(r);
            let best = argmax(dist);
            prev[r] = best;
            if done[r] {
                continue;
            }
            if best <= EOS {
                done[r] = true;
                continue;
            }
            let t = &mut out[r];
            t.tokens.push(best);
            t.log_probs.push(dist[best].ln());
            t.attention
                .push(g.value(alpha).row(r)[..sources[r].len()].to_vec());
            if t.tokens.len() >= caps[r] {
                done[r] = true;
            }
        }
    }
    Ok(out)
}

/// TSV heatmap: the header row holds the source tokens after an empty
/// corner cell, each following row an output token and its weights with six
/// decimals.
pub fn export_attention<S: AsRef<str>, T: AsRef<str>>(
    translation: &Translation,
    source: &[S],
    output: &[T],
) -> Result<String> {
    let rows = &translation.attention;
    if output.len() != rows.len() || rows.iter().any(|r| r.len() != source.len()) {
        return Err(Error::Dimension {
            op: "export_attention",
            lhs: [rows.len(), rows.first().map_or(0, Vec::len)],
            rhs: [output.len(), source.len()],
        });
    }
    let mut s = String::new();
    for tok in source {
        s.push('\t');
        s.push_str(tok.as_ref());
    }
    s.push('\n');
    for (tok, row) in output.iter().zip(rows) {
        s.push_str(tok.as_ref());
        for w in row {
            let _ = write!(s, "\t{w:.6}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// A parsed attention dump.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub source: Vec<String>,
    pub output: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

pub fn parse_attention(text: &str) -> Result<AttentionDump> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty attention dump".into()))?;
    let source: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut output = Vec::new();
    let mut weights = Vec::new();
    for line in lines {
        let mut cells = line.split('\t');
        output.push(cells.next().unwrap_or_default().to_string());
        let row = cells
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad attention weight {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != source.len() {
            return Err(Error::Data("ragged attention dump".into()));
        }
        weights.push(row);
    }
    Ok(AttentionDump {
        source,
        output,
        weights,
    })
}
