mod common;

use common::{random_batch, random_pairs, tiny_config, tiny_params};
use edr_nmt::autodiff::{Graph, ParamSet, Tensor};
use edr_nmt::data::{Batch, SentencePair, BOS};
use edr_nmt::model::{
    attend, decoder_step, encode, encoder_memory, forward_pass, init_decoder_state,
    reconstruct_pass, AttentionMemory, EncoderDecoderParams, GammaVars, ModelConfig, ThetaVars,
    GAMMA_PREFIX, THETA_PREFIX,
};
use edr_nmt::training::{Objective, ObjectiveGraph};
use edr_nmt::Error;

fn theta_of(params: &ParamSet, config: &ModelConfig) -> EncoderDecoderParams {
    let set: ParamSet = params
        .iter()
        .filter(|(n, _)| n.starts_with(THETA_PREFIX))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    EncoderDecoderParams::from_set(set, config).unwrap()
}

fn single(source: Vec<usize>, target: Vec<usize>) -> Batch {
    Batch::from_pairs(&[SentencePair::new(source, target).unwrap()]).unwrap()
}

#[test]
fn encoder_states_concatenate_both_directions() {
    let config = tiny_config(0);
    let theta = theta_of(&tiny_params(0), &config);
    let mut g = Graph::new();
    let vars = ThetaVars::bind(&mut g, &theta).unwrap();
    let enc = encode(&mut g, &vars, &single(vec![4, 5, 6, 7, 8], vec![4])).unwrap();
    assert_eq!(enc.states.len(), 5);
    for &h in &enc.states {
        assert_eq!(g.value(h).shape(), [1, 16]);
    }
    let s0 = init_decoder_state(&mut g, &vars, &enc).unwrap();
    assert_eq!(g.value(s0).shape(), [1, 8]);
}

#[test]
fn wide_encoder_state_dimension() {
    let config = ModelConfig {
        src_vocab: 6,
        tgt_vocab: 6,
        embed_dim: 4,
        hidden_dim: 512,
        seed: 1,
    };
    let theta = EncoderDecoderParams::init(&config).unwrap();
    let mut g = Graph::new();
    let vars = ThetaVars::bind(&mut g, &theta).unwrap();
    let enc = encode(&mut g, &vars, &single(vec![4, 5], vec![4])).unwrap();
    assert_eq!(g.value(enc.states[0]).shape(), [1, 1024]);
}

#[test]
fn zero_weights_give_zero_states() {
    let config = tiny_config(0);
    let mut theta = theta_of(&tiny_params(0), &config);
    for (_, t) in theta.set_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let mut g = Graph::new();
    let vars = ThetaVars::bind(&mut g, &theta).unwrap();
    let enc = encode(&mut g, &vars, &single(vec![4, 9, 13], vec![4])).unwrap();
    for &h in &enc.states {
        assert!(g.value(h).data().iter().all(|&x| x == 0.0));
    }
    let s0 = init_decoder_state(&mut g, &vars, &enc).unwrap();
    assert!(g.value(s0).data().iter().all(|&x| x == 0.0));
}

/// Memory over hand-set states with attention width 1: `U` projects each
/// state to a scalar and `v` scales the tanh.
fn hand_memory(g: &mut Graph, states: &[&[f64]], u: &[f64], mask: Vec<bool>) -> AttentionMemory {
    let values = states
        .iter()
        .map(|s| g.constant(Tensor::vector(s.to_vec())))
        .collect();
    let u = g.constant(Tensor::column(u.to_vec()));
    AttentionMemory::new(g, values, u, mask).unwrap()
}

#[test]
fn attention_hand_example() {
    let mut g = Graph::new();
    // v · tanh(U h_1) = ln 3 and v · tanh(U h_2) = 0
    let v_scale = 2.0;
    let a = (3f64.ln() / v_scale).atanh();
    let memory = hand_memory(&mut g, &[&[1.0, 0.0], &[0.0, 1.0]], &[a, 0.0], vec![true, true]);
    let query = g.constant(Tensor::vector(vec![0.3, -0.2]));
    let w = g.constant(Tensor::zeros(2, 1));
    let v = g.constant(Tensor::scalar(v_scale));
    let (alpha, ctx) = memory.attend(&mut g, query, w, v).unwrap();
    let alpha = g.value(alpha).data().to_vec();
    assert!((alpha[0] - 0.75).abs() < 1e-12 && (alpha[1] - 0.25).abs() < 1e-12);
    let ctx = g.value(ctx).data();
    assert!((ctx[0] - 0.75).abs() < 1e-12 && (ctx[1] - 0.25).abs() < 1e-12);
}

#[test]
fn equal_energies_give_uniform_attention() {
    let mut g = Graph::new();
    let memory = hand_memory(
        &mut g,
        &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]],
        &[0.0, 0.0],
        vec![true; 3],
    );
    let query = g.constant(Tensor::vector(vec![1.0, 1.0]));
    let w = g.constant(Tensor::column(vec![0.5, 0.5]));
    let v = g.constant(Tensor::scalar(1.0));
    let (alpha, _) = memory.attend(&mut g, query, w, v).unwrap();
    for &a in g.value(alpha).data() {
        assert!((a - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn single_state_attention_is_exact() {
    let mut g = Graph::new();
    let h = [0.123, -4.5];
    let memory = hand_memory(&mut g, &[&h], &[0.7, 0.1], vec![true]);
    let query = g.constant(Tensor::vector(vec![0.2, 0.9]));
    let w = g.constant(Tensor::column(vec![1.0, -1.0]));
    let v = g.constant(Tensor::scalar(3.0));
    let (alpha, ctx) = memory.attend(&mut g, query, w, v).unwrap();
    assert_eq!(g.value(alpha).data(), &[1.0]);
    assert_eq!(g.value(ctx).data(), &h);
}

#[test]
fn fully_masked_attention_is_rejected() {
    let mut g = Graph::new();
    let values = vec![g.constant(Tensor::vector(vec![1.0]))];
    let u = g.constant(Tensor::scalar(1.0));
    assert!(matches!(
        AttentionMemory::new(&mut g, values, u, vec![false]),
        Err(Error::Usage(_))
    ));
}

#[test]
fn decoder_distribution_is_normalized_and_positive() {
    let config = tiny_config(3);
    let theta = theta_of(&tiny_params(3), &config);
    let batch = random_batch(3, 5, 20, 6);
    let mut g = Graph::new();
    let vars = ThetaVars::bind(&mut g, &theta).unwrap();
    let enc = encode(&mut g, &vars, &batch).unwrap();
    let memory = encoder_memory(&mut g, &vars, &enc).unwrap();
    let s0 = init_decoder_state(&mut g, &vars, &enc).unwrap();
    let (_, ctx) = attend(&mut g, &vars, &memory, s0).unwrap();
    let prev = vec![BOS; 5];
    let (s1, probs) = decoder_step(&mut g, &vars, s0, &prev, ctx).unwrap();
    let (s1b, probs_b) = decoder_step(&mut g, &vars, s0, &prev, ctx).unwrap();
    assert_eq!(g.value(s1), g.value(s1b));
    assert_eq!(g.value(probs), g.value(probs_b));
    for r in 0..5 {
        let row = g.value(probs).row(r);
        assert_eq!(row.len(), 20);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&p| p > 0.0));
    }
    assert!(matches!(
        decoder_step(&mut g, &vars, s0, &[BOS, BOS, BOS, BOS, 20], ctx),
        Err(Error::Index { .. })
    ));
}

#[test]
fn untrained_loss_is_near_uniform() {
    let params = tiny_params(0);
    let batch = random_batch(0, 16, 20, 6);
    let g = ObjectiveGraph::build(&params, &batch, Objective::Forward).unwrap();
    let per_token = g.losses().forward * batch.size() as f64 / batch.target_tokens() as f64;
    assert!((per_token - 20f64.ln()).abs() < 0.5, "{per_token}");
}

#[test]
fn forward_pass_equals_composed_steps() {
    let config = tiny_config(5);
    let theta = theta_of(&tiny_params(5), &config);
    let pair = SentencePair::new(vec![4, 7, 11, 4], vec![9, 5, 17]).unwrap();
    let batch = Batch::from_pairs(&[pair.clone()]).unwrap();

    let mut g = Graph::new();
    let vars = ThetaVars::bind(&mut g, &theta).unwrap();
    let (loss, _) = forward_pass(&mut g, &vars, &batch).unwrap();
    let loss = g.value(loss).item();

    let mut h = Graph::new();
    let vars = ThetaVars::bind(&mut h, &theta).unwrap();
    let enc = encode(&mut h, &vars, &batch).unwrap();
    let memory = encoder_memory(&mut h, &vars, &enc).unwrap();
    let mut s = init_decoder_state(&mut h, &vars, &enc).unwrap();
    let mut prev = BOS;
    let mut total = 0.0;
    for &y in pair.target.iter().chain([edr_nmt::data::EOS].iter()) {
        let (_, ctx) = attend(&mut h, &vars, &memory, s).unwrap();
        let (next, probs) = decoder_step(&mut h, &vars, s, &[prev], ctx).unwrap();
        total -= h.value(probs).row(0)[y].ln();
        s = next;
        prev = y;
    }
    assert!((loss - total).abs() < 1e-12, "{loss} vs {total}");
}

#[test]
fn padding_content_never_changes_the_loss() {
    let params = tiny_params(2);
    for seed in 0..10 {
        let batch = random_batch(seed, 6, 20, 6);
        for objective in [Objective::Forward, Objective::Joint { lambda: 1.0 }] {
            let base = ObjectiveGraph::build(&params, &batch, objective).unwrap().losses();
            for id in [5, 13, 19] {
                let doctored = batch.with_source_padding(id).with_target_padding(id);
                let l = ObjectiveGraph::build(&params, &doctored, objective).unwrap().losses();
                assert_eq!(base.total.to_bits(), l.total.to_bits());
            }
        }
    }
}

#[test]
fn forward_loss_ignores_gamma_while_backward_loss_reaches_theta() {
    let params = tiny_params(4);
    let batch = random_batch(4, 4, 20, 6);
    let grads = ObjectiveGraph::build(&params, &batch, Objective::Forward)
        .unwrap()
        .gradients()
        .unwrap();
    for (name, t) in grads.iter() {
        if name.starts_with(GAMMA_PREFIX) {
            assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
        }
    }

    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let theta = ThetaVars::lookup(&bound).unwrap();
    let gamma = GammaVars::lookup(&bound).unwrap();
    let (_, trace) = forward_pass(&mut g, &theta, &batch).unwrap();
    let (rec, _) = reconstruct_pass(&mut g, &theta, &gamma, &trace, &batch).unwrap();
    let grads = g.backward(rec).unwrap();
    for name in ["theta.dec.w_cand", "theta.att.u", "theta.enc_fwd.w_in", "theta.src_embed"] {
        assert!(grads.get(name).unwrap().data().iter().any(|&x| x != 0.0), "{name}");
    }
    // the readout of the forward decoder is not on the reconstruction path
    assert!(grads.get("theta.out.w").unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn unused_source_embeddings_get_zero_gradient() {
    let params = tiny_params(6);
    let batch = random_batch(6, 4, 12, 6);
    let used: Vec<usize> = (0..batch.size())
        .flat_map(|r| batch.pair(r).source)
        .collect();
    let grads = ObjectiveGraph::build(&params, &batch, Objective::Joint { lambda: 1.0 })
        .unwrap()
        .gradients()
        .unwrap();
    let emb = grads.get("theta.src_embed").unwrap();
    for id in 0..20 {
        let zero = emb.row(id).iter().all(|&x| x == 0.0);
        // `<s>` feeds the reconstructor's first step
        if used.contains(&id) || id == BOS {
            assert!(!zero, "row {id}");
        } else {
            assert!(zero, "row {id}");
        }
    }
}

#[test]
fn reconstruction_distributions_are_normalized() {
    let params = tiny_params(7);
    let batch = random_batch(7, 5, 20, 6);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let theta = ThetaVars::lookup(&bound).unwrap();
    let gamma = GammaVars::lookup(&bound).unwrap();
    let (_, trace) = forward_pass(&mut g, &theta, &batch).unwrap();
    let (_, rt) = reconstruct_pass(&mut g, &theta, &gamma, &trace, &batch).unwrap();
    assert_eq!(rt.probs.len(), batch.src_len() + 1);
    for &p in &rt.probs {
        for r in 0..batch.size() {
            assert!((g.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn reconstruction_rejects_a_foreign_trace() {
    let params = tiny_params(8);
    let a = random_batch(8, 3, 20, 6);
    let b = Batch::from_pairs(&random_pairs(9, 5, 20, 6)).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let theta = ThetaVars::lookup(&bound).unwrap();
    let gamma = GammaVars::lookup(&bound).unwrap();
    let (_, trace) = forward_pass(&mut g, &theta, &a).unwrap();
    assert!(matches!(
        reconstruct_pass(&mut g, &theta, &gamma, &trace, &b),
        Err(Error::Usage(_))
    ));
}
