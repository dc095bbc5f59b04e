use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, GradCheckReport, GradientMap, Graph, ParamSet, Var};
use crate::data::{Batch, SentencePair, NUM_RESERVED};
use crate::error::Result;
use crate::model::checkpoint::combine;
use crate::model::{forward_pass, init_params, reconstruct_pass, GammaVars, ModelConfig, ThetaVars};

/// `loss_forward + λ · loss_backward`, the negated joint log-likelihood.
pub fn loss_joint(loss_forward: f64, loss_backward: f64, lambda: f64) -> f64 {
    loss_forward + lambda * loss_backward
}

/// Which likelihood terms a training step minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Translation likelihood only.
    Forward,
    /// Translation plus `λ ·` reconstruction likelihood.
    Joint { lambda: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub forward: f64,
    pub backward: Option<f64>,
    pub total: f64,
}

/// A recorded forward computation of the objective on one batch.
pub struct ObjectiveGraph {
    pub graph: Graph,
    pub loss: Var,
    pub forward: Var,
    pub backward: Option<Var>,
}

impl ObjectiveGraph {
    pub fn build(params: &ParamSet, batch: &Batch, objective: Objective) -> Result<Self> {
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph);
        let theta = ThetaVars::lookup(&bound)?;
        let (forward, trace) = forward_pass(&mut graph, &theta, batch)?;
        let (loss, backward) = match objective {
            Objective::Forward => (forward, None),
            Objective::Joint { lambda } => {
                let gamma = GammaVars::lookup(&bound)?;
                let (rec, _) = reconstruct_pass(&mut graph, &theta, &gamma, &trace, batch)?;
                let weighted = graph.scale(rec, lambda)?;
                (graph.add(forward, weighted)?, Some(rec))
            }
        };
        Ok(ObjectiveGraph {
            graph,
            loss,
            forward,
            backward,
        })
    }

    pub fn losses(&self) -> BatchLoss {
        BatchLoss {
            forward: self.graph.value(self.forward).item(),
            backward: self.backward.map(|b| self.graph.value(b).item()),
            total: self.graph.value(self.loss).item(),
        }
    }

    pub fn gradients(&self) -> Result<GradientMap> {
        self.graph.backward(self.loss)
    }
}

/// Loss and gradient with respect to every tensor in `params`.
pub fn batch_gradients(
    params: &ParamSet,
    batch: &Batch,
    objective: Objective,
) -> Result<(BatchLoss, GradientMap)> {
    let g = ObjectiveGraph::build(params, batch, objective)?;
    Ok((g.losses(), g.gradients()?))
}

pub fn batch_loss(params: &ParamSet, batch: &Batch, objective: Objective) -> Result<BatchLoss> {
    Ok(ObjectiveGraph::build(params, batch, objective)?.losses())
}

/// Per-sentence mean losses over a set of batches.
pub fn corpus_loss(params: &ParamSet, batches: &[Batch], objective: Objective) -> Result<BatchLoss> {
    let mut forward = 0.0;
    let mut backward = 0.0;
    let mut total = 0.0;
    let mut n = 0usize;
    for b in batches {
        let l = batch_loss(params, b, objective)?;
        let w = b.size() as f64;
        forward += l.forward * w;
        backward += l.backward.unwrap_or(0.0) * w;
        total += l.total * w;
        n += b.size();
    }
    let n = n.max(1) as f64;
    Ok(BatchLoss {
        forward: forward / n,
        backward: matches!(objective, Objective::Joint { .. }).then_some(backward / n),
        total: total / n,
    })
}

/// A seeded tiny model (hidden 8, embed 8, vocabularies of 20) with θ and γ,
/// and a batch of four pairs whose sides have 1 to 6 tokens.
///
/// Every parameter is drawn uniformly from [-1, 1] rather than taken from
/// the training initialization. At initialization the attention query
/// weights get gradients near 1e-8, below what central differences at
/// ε = 1e-5 resolve on a loss of this size.
pub fn gradcheck_fixture(seed: u64) -> Result<(ParamSet, Batch)> {
    let model = ModelConfig {
        src_vocab: 20,
        tgt_vocab: 20,
        embed_dim: 8,
        hidden_dim: 8,
        seed,
    };
    let (theta, gamma) = init_params(&model)?;
    let mut params = combine(&theta, Some(&gamma));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in params.iter_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-1.0..=1.0);
        }
    }
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.gen_range(1..=6);
        (0..len).map(|_| rng.gen_range(NUM_RESERVED..20)).collect()
    };
    let pairs = (0..4)
        .map(|_| {
            let s = sentence(&mut rng);
            SentencePair::new(s, sentence(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((params, Batch::from_pairs(&pairs)?))
}

/// Central-difference check of the objective's gradient on one batch.
pub fn objective_gradcheck(
    params: &ParamSet,
    batch: &Batch,
    objective: Objective,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    finite_diff_check(params, eps, max_coords, seed, |p| {
        let g = ObjectiveGraph::build(p, batch, objective)?;
        Ok((g.losses().total, g.gradients()?))
    })
}

/// Teacher-forced per-token accuracy of the argmax predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenAccuracy {
    pub forward: f64,
    /// Present when `params` holds γ.
    pub reconstruction: Option<f64>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn token_accuracy(params: &ParamSet, batches: &[Batch]) -> Result<TokenAccuracy> {
    let has_gamma = params.names().any(|n| n.starts_with(crate::model::GAMMA_PREFIX));
    let (mut fwd, mut fwd_n, mut rec, mut rec_n) = (0usize, 0usize, 0usize, 0usize);
    for batch in batches {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let theta = ThetaVars::lookup(&bound)?;
        let (_, trace) = forward_pass(&mut g, &theta, batch)?;
        for (i, &probs) in trace.probs.iter().enumerate() {
            let gold = batch.tgt_column(i + 1);
            for (r, m) in batch.tgt_mask_column(i + 1).into_iter().enumerate() {
                if m {
                    fwd_n += 1;
                    fwd += usize::from(argmax(g.value(probs).row(r)) == gold[r]);
                }
            }
        }
        if has_gamma {
            let gamma = GammaVars::lookup(&bound)?;
            let (_, rt) = reconstruct_pass(&mut g, &theta, &gamma, &trace, batch)?;
            for ((&probs, gold), mask) in rt.probs.iter().zip(&rt.targets).zip(&rt.masks) {
                for (r, &m) in mask.iter().enumerate() {
                    if m {
                        rec_n += 1;
                        rec += usize::from(argmax(g.value(probs).row(r)) == gold[r]);
                    }
                }
            }
        }
    }
    let ratio = |a: usize, n: usize| if n == 0 { 0.0 } else { a as f64 / n as f64 };
    Ok(TokenAccuracy {
        forward: ratio(fwd, fwd_n),
        reconstruction: has_gamma.then(|| ratio(rec, rec_n)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_loss_examples() {
        assert_eq!(loss_joint(2.0, 3.0, 1.0), 5.0);
        assert_eq!(loss_joint(2.5, 3.0, 0.0), 2.5);
        assert_eq!(loss_joint(1.75, 0.0, 4.0), 1.75);
    }

    #[test]
    fn joint_loss_is_linear_in_backward_term() {
        for lambda in [0.0, 0.1, 0.5, 1.0, 2.0, 7.25] {
            let base = loss_joint(1.3, 0.0, lambda);
            for b in [0.5, 1.0, 4.0] {
                let slope = (loss_joint(1.3, b, lambda) - base) / b;
                assert!((slope - lambda).abs() < 1e-12);
            }
        }
    }
}
