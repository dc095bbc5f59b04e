mod common;

use common::tiny_config;
use edr_nmt::data::{EOS, NUM_RESERVED, UNK};
use edr_nmt::decoding::{
    export_attention, greedy_decode, greedy_decode_batch, output_cap, parse_attention,
};
use edr_nmt::model::{names, EncoderDecoderParams};
use proptest::prelude::*;

fn theta(seed: u64) -> EncoderDecoderParams {
    EncoderDecoderParams::init(&tiny_config(seed)).unwrap()
}

#[test]
fn readout_peaking_at_eos_yields_empty_translation() {
    let mut t = theta(0);
    t.set_mut().get_mut(names::OUT_B).unwrap().data_mut()[EOS] = 1e3;
    let out = greedy_decode(&t, &[4, 5, 6, 7, 8], 2).unwrap();
    assert!(out.tokens.is_empty());
    assert!(out.attention.is_empty());
}

#[test]
fn output_is_capped() {
    let mut t = theta(0);
    t.set_mut().get_mut(names::OUT_B).unwrap().data_mut()[9] = 1e3;
    let out = greedy_decode(&t, &[4, 5, 6, 7, 8], 2).unwrap();
    assert_eq!(out.tokens, vec![9; output_cap(5, 2)]);
    assert_eq!(out.tokens.len(), 15);
}

#[test]
fn attention_dump_matches_translation() {
    let t = theta(1);
    let out = greedy_decode(&t, &[4, 9, 11], 2).unwrap();
    let src = ["a", "b", "c"];
    let tgt: Vec<String> = out.tokens.iter().map(|i| format!("t{i}")).collect();
    let dump = parse_attention(&export_attention(&out, &src, &tgt).unwrap()).unwrap();
    assert_eq!(dump.output, tgt);
    assert_eq!(dump.weights.len(), out.tokens.len());
}

fn sources() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(NUM_RESERVED..20usize, 1..8), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn emitted_tokens_and_attention_are_well_formed(seed in 0u64..4, srcs in sources()) {
        let t = theta(seed);
        for (x, out) in srcs.iter().zip(greedy_decode_batch(&t, &srcs, 2).unwrap()) {
            prop_assert!(out.tokens.len() <= output_cap(x.len(), 2));
            prop_assert!(out.tokens.iter().all(|&id| id == UNK || (NUM_RESERVED..20).contains(&id)));
            prop_assert_eq!(out.attention.len(), out.tokens.len());
            prop_assert_eq!(out.log_probs.len(), out.tokens.len());
            for row in &out.attention {
                prop_assert_eq!(row.len(), x.len());
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&a| a >= 0.0));
            }
            // the emitted token is the step maximum, so it has at least 1/V mass
            prop_assert!(out.log_probs.iter().all(|&lp| lp <= 0.0 && lp >= -(20f64.ln()) - 1e-12));
        }
    }

    #[test]
    fn batched_decoding_equals_one_at_a_time(seed in 0u64..4, srcs in sources()) {
        let t = theta(seed);
        let together = greedy_decode_batch(&t, &srcs, 2).unwrap();
        for (x, out) in srcs.iter().zip(&together) {
            let alone = greedy_decode(&t, x, 2).unwrap();
            prop_assert_eq!(&alone, out);
        }
        prop_assert_eq!(greedy_decode_batch(&t, &srcs, 2).unwrap(), together);
    }
}
