use std::fmt::Write as _;
use std::path::Path;

use crate::data::SentencePair;
use crate::decoding::{greedy_decode_batch, DEFAULT_LEN_FACTOR};
use crate::error::{Error, Result};
use crate::evaluation::{bleu_corpus, bootstrap_significance};
use crate::model::{EncoderDecoderParams, ModelConfig};

use super::{regime_dir, train_baseline, train_finetune, train_joint, Regime, TrainData, TrainedModel, TrainingConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeRow {
    pub regime: Regime,
    pub bleu: f64,
    /// Against the baseline: the fraction of bootstrap samples on which the
    /// baseline scores at least as well. Absent for the baseline row.
    pub p_value: Option<f64>,
    pub hours: f64,
}

#[derive(Clone, Debug)]
pub struct RegimeReport {
    pub rows: Vec<RegimeRow>,
    pub models: Vec<TrainedModel>,
}

pub const REGIME_HEADER: &str = "model\tBLEU\tp_value\thours";

impl RegimeReport {
    /// Header plus one row per regime. With `hours` off the output depends
    /// only on the data, configuration and seed.
    pub fn to_tsv(&self, hours: bool) -> String {
        let mut s = String::new();
        if hours {
            s.push_str(REGIME_HEADER);
        } else {
            s.push_str("model\tBLEU\tp_value");
        }
        s.push('\n');
        for r in &self.rows {
            let p = r.p_value.map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
            let _ = write!(s, "{}\t{:.6}\t{}", r.regime, r.bleu, p);
            if hours {
                let _ = write!(s, "\t{:.4}", r.hours);
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn decode_tokens(theta: &EncoderDecoderParams, pairs: &[SentencePair]) -> Result<Vec<Vec<usize>>> {
    let sources: Vec<Vec<usize>> = pairs.iter().map(|p| p.source.clone()).collect();
    Ok(greedy_decode_batch(theta, &sources, DEFAULT_LEN_FACTOR)?
        .into_iter()
        .map(|t| t.tokens)
        .collect())
}

/// Trains the baseline, fine-tunes from its selected θ, trains the joint
/// model from scratch, then scores all three on `eval`.
pub fn compare_regimes(
    model: ModelConfig,
    data: &TrainData,
    eval: &[SentencePair],
    cfg: &TrainingConfig,
    out_root: Option<&Path>,
    samples: usize,
) -> Result<RegimeReport> {
    if eval.is_empty() {
        return Err(Error::usage("evaluation set is empty"));
    }
    let dir = |r| out_root.map(|root| regime_dir(root, r));

    let baseline = train_baseline(
        model,
        data,
        &TrainingConfig { regime: Regime::Baseline, ..cfg.clone() },
        dir(Regime::Baseline).as_deref(),
    )?;
    let finetune = train_finetune(
        baseline.theta.clone(),
        model,
        data,
        &TrainingConfig { regime: Regime::Finetune, ..cfg.clone() },
        dir(Regime::Finetune).as_deref(),
    )?;
    let joint = train_joint(
        model,
        data,
        &TrainingConfig { regime: Regime::Joint, ..cfg.clone() },
        dir(Regime::Joint).as_deref(),
    )?;

    let refs: Vec<Vec<usize>> = eval.iter().map(|p| p.target.clone()).collect();
    let base_hyps = decode_tokens(&baseline.theta, eval)?;
    let mut rows = vec![RegimeRow {
        regime: Regime::Baseline,
        bleu: bleu_corpus(&base_hyps, &refs)?.bleu,
        p_value: None,
        hours: baseline.log.total_seconds() / 3600.0,
    }];
    for (regime, m) in [(Regime::Finetune, &finetune), (Regime::Joint, &joint)] {
        let hyps = decode_tokens(&m.theta, eval)?;
        rows.push(RegimeRow {
            regime,
            bleu: bleu_corpus(&hyps, &refs)?.bleu,
            p_value: Some(bootstrap_significance(&hyps, &base_hyps, &refs, samples, cfg.seed)?),
            hours: m.log.total_seconds() / 3600.0,
        });
    }
    let report = RegimeReport {
        rows,
        models: vec![baseline, finetune, joint],
    };
    if let Some(root) = out_root {
        let path = root.join("regimes.tsv");
        std::fs::write(&path, report.to_tsv(true)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
