//! Objectives, Adagrad, and the baseline / finetune / joint training regimes.

mod adagrad;
mod log;
mod objective;
mod regimes;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::autodiff::ParamSet;
use crate::data::{make_batches, Batch, SentencePair};
use crate::decoding::greedy_decode_batch;
use crate::error::{Error, Result};
use crate::evaluation::bleu_corpus;
use crate::model::{checkpoint, EncoderDecoderParams, ModelConfig, ReconstructorParams};

pub use adagrad::{adagrad_step, OptimizerState, ADAGRAD_EPS};
pub use log::{EpochRecord, TrainingLog};
pub use objective::{
    batch_gradients, batch_loss, corpus_loss, gradcheck_fixture, loss_joint, objective_gradcheck, token_accuracy, BatchLoss, Objective,
    ObjectiveGraph, TokenAccuracy,
};
pub use regimes::{compare_regimes, RegimeReport, RegimeRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// θ alone on the translation likelihood.
    Baseline,
    /// Pretrained θ plus fresh γ on the joint likelihood.
    Finetune,
    /// θ and γ together from scratch on the joint likelihood.
    Joint,
    /// All three of the above, followed by a comparison report.
    All,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Regime::Baseline),
            "finetune" => Ok(Regime::Finetune),
            "joint" => Ok(Regime::Joint),
            "all" => Ok(Regime::All),
            other => Err(Error::Config(format!(
                "unknown regime {other:?} (expected baseline, finetune, joint or all)"
            ))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Baseline => "baseline",
            Regime::Finetune => "finetune",
            Regime::Joint => "joint",
            Regime::All => "all",
        })
    }
}

/// Model-selection criterion on the dev set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Loss,
    Bleu,
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(Selection::Loss),
            "bleu" => Ok(Selection::Bleu),
            other => Err(Error::Config(format!("unknown selection {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub regime: Regime,
    pub seed: u64,
    pub max_len: usize,
    /// Stop after this many epochs without dev improvement; 0 disables.
    pub patience: usize,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f64>,
    pub selection: Selection,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 1.0,
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 64,
            regime: Regime::Baseline,
            seed: 0,
            max_len: 40,
            patience: 3,
            clip_norm: None,
            selection: Selection::Loss,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::Config("batch_size and max_len must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(epoch as u64)
    }
}

/// Encoded, length-filtered training and dev pairs.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
}

/// Result of one training run: the selected parameters and the log.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub theta: EncoderDecoderParams,
    pub gamma: Option<ReconstructorParams>,
    pub log: TrainingLog,
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn params(&self) -> ParamSet {
        checkpoint::combine(&self.theta, self.gamma.as_ref())
    }
}

/// Dev-set score where larger is better.
fn dev_score(
    params: &ParamSet,
    dev: &[Batch],
    dev_pairs: &[SentencePair],
    objective: Objective,
    cfg: &TrainingConfig,
    model: &ModelConfig,
) -> Result<(f64, f64)> {
    match cfg.selection {
        Selection::Loss => {
            let l = corpus_loss(params, dev, objective)?.total;
            Ok((-l, l))
        }
        Selection::Bleu => {
            let theta = split_theta(params, model)?;
            let sources: Vec<Vec<usize>> = dev_pairs.iter().map(|p| p.source.clone()).collect();
            let hyps = greedy_decode_batch(&theta, &sources, 2)?;
            let hyp_tokens: Vec<Vec<usize>> = hyps.into_iter().map(|t| t.tokens).collect();
            let refs: Vec<Vec<usize>> = dev_pairs.iter().map(|p| p.target.clone()).collect();
            let bleu = bleu_corpus(&hyp_tokens, &refs)?.bleu;
            Ok((bleu, bleu))
        }
    }
}

fn split_theta(params: &ParamSet, model: &ModelConfig) -> Result<EncoderDecoderParams> {
    let theta: ParamSet = params
        .iter()
        .filter(|(n, _)| n.starts_with(crate::model::THETA_PREFIX))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    EncoderDecoderParams::from_set(theta, model)
}

fn split_gamma(params: &ParamSet, model: &ModelConfig) -> Result<Option<ReconstructorParams>> {
    let gamma: ParamSet = params
        .iter()
        .filter(|(n, _)| n.starts_with(crate::model::GAMMA_PREFIX))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    if gamma.is_empty() {
        Ok(None)
    } else {
        ReconstructorParams::from_set(gamma, model).map(Some)
    }
}

/// Shared epoch loop. `params` holds θ, plus γ when the objective is joint.
fn run(
    model: ModelConfig,
    mut params: ParamSet,
    objective: Objective,
    data: &TrainData,
    cfg: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::usage("training corpus is empty after filtering"));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let dev_batches = if data.dev.is_empty() {
        Vec::new()
    } else {
        make_batches(&data.dev, cfg.batch_size, cfg.seed)?
    };
    let mut state = OptimizerState::new(&params);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches = make_batches(&data.train, cfg.batch_size, cfg.epoch_seed(epoch))?;
        let (mut fwd, mut bwd, mut seen) = (0.0, 0.0, 0usize);
        for batch in &batches {
            let (loss, mut grads) = batch_gradients(&params, batch, objective)?;
            if let Some(c) = cfg.clip_norm {
                grads.clip_global_norm(c);
            }
            adagrad_step(&mut params, &grads, &mut state, cfg.learning_rate)?;
            fwd += loss.forward * batch.size() as f64;
            bwd += loss.backward.unwrap_or(0.0) * batch.size() as f64;
            seen += batch.size();
        }

        // without a dev set, the training loss drives selection
        let (score, metric) = if dev_batches.is_empty() {
            let l = fwd / seen as f64;
            (-l, l)
        } else {
            dev_score(&params, &dev_batches, &data.dev, objective, cfg, &model)?
        };
        let checkpoint_path = match out_dir {
            Some(dir) => {
                let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
                checkpoint::save(&path, &params)?;
                Some(path)
            }
            None => None,
        };
        log.push(EpochRecord {
            epoch,
            forward_loss: fwd / seen as f64,
            backward_loss: matches!(objective, Objective::Joint { .. })
                .then_some(bwd / seen as f64),
            dev_metric: metric,
            seconds: started.elapsed().as_secs_f64(),
            checkpoint: checkpoint_path.clone(),
        });
        if let Some(dir) = out_dir {
            log.save(&dir.join("train_log.tsv"))?;
        }

        let improved = best.as_ref().map_or(true, |(s, _, _)| score > *s);
        if improved {
            if let Some(dir) = out_dir {
                checkpoint::save(&dir.join("best.ckpt"), &params)?;
            }
            best = Some((score, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params),
    };
    Ok(TrainedModel {
        config: model,
        theta: split_theta(&best_params, &model)?,
        gamma: split_gamma(&best_params, &model)?,
        log,
        best_epoch,
    })
}

/// Translation likelihood only, from freshly initialized θ.
pub fn train_baseline(
    model: ModelConfig,
    data: &TrainData,
    cfg: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainedModel> {
    let theta = EncoderDecoderParams::init(&model)?;
    run(model, theta.into_set(), Objective::Forward, data, cfg, out_dir)
}

/// Loads pretrained θ, adds fresh γ, and minimizes the joint objective with
/// fresh optimizer accumulators.
pub fn train_finetune(
    theta: EncoderDecoderParams,
    model: ModelConfig,
    data: &TrainData,
    cfg: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainedModel> {
    let theta = EncoderDecoderParams::from_set(theta.into_set(), &model)?;
    let gamma = ReconstructorParams::init(&model)?;
    let params = checkpoint::combine(&theta, Some(&gamma));
    run(
        model,
        params,
        Objective::Joint { lambda: cfg.lambda },
        data,
        cfg,
        out_dir,
    )
}

/// θ and γ initialized together and trained jointly from scratch.
pub fn train_joint(
    model: ModelConfig,
    data: &TrainData,
    cfg: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainedModel> {
    let theta = EncoderDecoderParams::init(&model)?;
    let gamma = ReconstructorParams::init(&model)?;
    let params = checkpoint::combine(&theta, Some(&gamma));
    run(
        model,
        params,
        Objective::Joint { lambda: cfg.lambda },
        data,
        cfg,
        out_dir,
    )
}

/// Where a regime writes its artifacts under `root`.
pub fn regime_dir(root: &Path, regime: Regime) -> PathBuf {
    root.join(regime.to_string())
}
