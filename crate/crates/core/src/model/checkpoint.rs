//! Binary checkpoint format.
//!
//! ```text
//! "EDRNMT01"
//! u32 entry count
//! per entry: u32 name length, UTF-8 name, u32 rank, rank × u64 extents
//! per entry, in the same order: row-major f64 payload
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

use super::params::{
    EncoderDecoderParams, ModelConfig, ReconstructorParams, GAMMA_PREFIX, THETA_PREFIX,
};

pub const MAGIC: &[u8; 8] = b"EDRNMT01";

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        for extent in t.shape() {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an EDRNMT01 checkpoint".into()));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n as usize),
            [m, n] => (*m as usize, *n as usize),
            _ => {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has unsupported rank {rank}"
                )))
            }
        };
        manifest.push((name, rows, cols));
    }
    let mut set = ParamSet::new();
    for (name, rows, cols) in manifest {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(rows, cols, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if set.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        set.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }
    Ok(set)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// θ and, when present, γ from one checkpoint collection.
pub fn split(
    set: ParamSet,
) -> Result<(ModelConfig, EncoderDecoderParams, Option<ReconstructorParams>)> {
    let mut theta = ParamSet::new();
    let mut gamma = ParamSet::new();
    for (name, t) in set.iter() {
        if name.starts_with(THETA_PREFIX) {
            theta.insert(name.clone(), t.clone());
        } else if name.starts_with(GAMMA_PREFIX) {
            gamma.insert(name.clone(), t.clone());
        } else {
            return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
        }
    }
    let config = ModelConfig::infer(&theta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let theta = EncoderDecoderParams::from_set(theta, &config)?;
    let gamma = if gamma.is_empty() {
        None
    } else {
        Some(ReconstructorParams::from_set(gamma, &config)?)
    };
    Ok((config, theta, gamma))
}

/// Merged θ (and γ) collection ready for [`save`].
pub fn combine(theta: &EncoderDecoderParams, gamma: Option<&ReconstructorParams>) -> ParamSet {
    let mut set = theta.set().clone();
    if let Some(g) = gamma {
        set.extend(g.set().clone());
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use proptest::prelude::*;

    fn config() -> ModelConfig {
        ModelConfig {
            src_vocab: 11,
            tgt_vocab: 13,
            embed_dim: 3,
            hidden_dim: 4,
            seed: 5,
        }
    }

    #[test]
    fn layout_starts_with_magic_and_manifest() {
        let mut set = ParamSet::new();
        set.insert("a", Tensor::new(1, 2, vec![1.5, -2.0]).unwrap());
        let bytes = encode(&set);
        assert_eq!(&bytes[..8], b"EDRNMT01");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..17], b"a");
        assert_eq!(&bytes[17..21], &2u32.to_le_bytes());
        assert_eq!(&bytes[21..29], &1u64.to_le_bytes());
        assert_eq!(&bytes[29..37], &2u64.to_le_bytes());
        assert_eq!(&bytes[37..45], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 53);
    }

    #[test]
    fn split_recovers_theta_and_gamma() {
        let (theta, gamma) = init_params(&config()).unwrap();
        let bytes = encode(&combine(&theta, Some(&gamma)));
        let (cfg, t, g) = split(decode(&bytes).unwrap()).unwrap();
        assert_eq!(cfg.hidden_dim, 4);
        assert_eq!(t, theta);
        assert_eq!(g.unwrap(), gamma);

        let (_, t, g) = split(decode(&encode(theta.set())).unwrap()).unwrap();
        assert_eq!(t, theta);
        assert!(g.is_none());
    }

    #[test]
    fn rejects_corrupt_input() {
        let (theta, _) = init_params(&config()).unwrap();
        let bytes = encode(theta.set());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut set = ParamSet::new();
            let n = values.len();
            set.insert("theta.x", Tensor::new(1, n, values).unwrap());
            set.insert("gamma.y", Tensor::new(n, 1, vec![0.25; n]).unwrap());
            let back = decode(&encode(&set)).unwrap();
            for ((na, ta), (nb, tb)) in set.iter().zip(back.iter()) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                for (a, b) in ta.data().iter().zip(tb.data()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
