//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr (unbuffered, so it shows even when output is captured).

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use edr_nmt::data::{encode_corpus, make_batches, SentencePair, SyntheticSpec, Vocabulary};
use edr_nmt::decoding::{greedy_decode_batch, DEFAULT_LEN_FACTOR};
use edr_nmt::evaluation::{bleu_corpus, bootstrap_significance, report_tsv, word_stats, EvalReport, WordStats};
use edr_nmt::model::{checkpoint, forward_pass, reconstruct_pass, GammaVars, ModelConfig, ThetaVars};
use edr_nmt::autodiff::Graph;
use edr_nmt::training::{
    batch_loss, compare_regimes, gradcheck_fixture, objective_gradcheck, token_accuracy,
    train_baseline, train_finetune, Objective, RegimeReport, TrainData, TrainingConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {n} {name}: {verdict} ({detail})");
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn bleu_of(theta: &edr_nmt::model::EncoderDecoderParams, pairs: &[SentencePair]) -> f64 {
    let sources: Vec<Vec<usize>> = pairs.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<Vec<usize>> = pairs.iter().map(|p| p.target.clone()).collect();
    let hyps: Vec<Vec<usize>> = greedy_decode_batch(theta, &sources, DEFAULT_LEN_FACTOR)
        .unwrap()
        .into_iter()
        .map(|t| t.tokens)
        .collect();
    bleu_corpus(&hyps, &refs).unwrap().bleu
}

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let (params, batch) = gradcheck_fixture(0).unwrap();
    let longest = (0..batch.size())
        .map(|r| {
            let p = batch.pair(r);
            p.source.len().max(p.target.len())
        })
        .max()
        .unwrap();
    let mut worst: f64 = 0.0;
    let mut coords = usize::MAX;
    let mut spans_all = true;
    for objective in [Objective::Forward, Objective::Joint { lambda: 1.0 }] {
        let r = objective_gradcheck(&params, &batch, objective, 1e-5, 400, 0).unwrap();
        worst = worst.max(r.max_rel_error);
        coords = coords.min(r.coords_checked);
        spans_all &= r.tensors_checked == params.len();
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && coords >= 200 && spans_all && longest <= 6 && secs < 120.0;
    report(
        1,
        "gradient fidelity",
        pass,
        &format!(
            "max rel error {worst:.2e} over {coords} coords in all {} tensors, {secs:.1}s",
            params.len()
        ),
    );
}

#[test]
fn criterion_2_attention_invariants() {
    let mut worst_sum: f64 = 0.0;
    let mut negative = 0usize;
    let mut leaked = 0usize;
    let mut rows = 0usize;
    for k in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let params = common::tiny_params(k % 7);
        let n = rng.gen_range(1..=8);
        let batch = common::random_batch(k, n, 20, 9);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let theta = ThetaVars::lookup(&bound).unwrap();
        let gamma = GammaVars::lookup(&bound).unwrap();
        let (_, trace) = forward_pass(&mut g, &theta, &batch).unwrap();
        let (_, rt) = reconstruct_pass(&mut g, &theta, &gamma, &trace, &batch).unwrap();

        let steps = trace.states.len();
        let mut check = |values: &[f64], mask: &[bool]| {
            rows += 1;
            worst_sum = worst_sum.max((values.iter().sum::<f64>() - 1.0).abs());
            negative += values.iter().filter(|&&a| a < 0.0).count();
            leaked += values.iter().zip(mask).filter(|(&a, &m)| !m && a != 0.0).count();
        };
        for &alpha in &trace.alphas {
            for r in 0..batch.size() {
                check(g.value(alpha).row(r), batch.src_mask_row(r));
            }
        }
        for &alpha in &rt.alphas {
            for r in 0..batch.size() {
                check(g.value(alpha).row(r), &trace.mask[r * steps..(r + 1) * steps]);
            }
        }
    }
    let pass = worst_sum <= 1e-9 && negative == 0 && leaked == 0;
    report(
        2,
        "attention invariants",
        pass,
        &format!("{rows} rows, max |sum-1| {worst_sum:.1e}, {negative} negative, {leaked} nonzero masked"),
    );
}

/// The toy copy task trained once under all three regimes.
struct ToyRun {
    dev: Vec<SentencePair>,
    report: RegimeReport,
}

fn toy_config() -> TrainingConfig {
    TrainingConfig {
        learning_rate: 0.01,
        batch_size: 64,
        epochs: 30,
        lambda: 1.0,
        seed: 0,
        ..TrainingConfig::default()
    }
}

fn toy_corpus(train_n: usize, dev_n: usize, test_n: usize) -> (Vocabulary, TrainData, Vec<SentencePair>) {
    let spec = SyntheticSpec::default();
    let train = spec.generate(train_n, 0).unwrap();
    let dev = spec.generate(dev_n, 1).unwrap();
    let test = spec.generate(test_n, 2).unwrap();
    let sources: Vec<Vec<String>> = train.iter().map(|p| p.0.clone()).collect();
    let vocab = Vocabulary::build(&sources, 1000).unwrap();
    let data = TrainData {
        train: encode_corpus(&train, &vocab, &vocab),
        dev: encode_corpus(&dev, &vocab, &vocab),
    };
    let test = encode_corpus(&test, &vocab, &vocab);
    (vocab, data, test)
}

fn toy_model(vocab: &Vocabulary, dim: usize) -> ModelConfig {
    ModelConfig {
        src_vocab: vocab.len(),
        tgt_vocab: vocab.len(),
        embed_dim: dim,
        hidden_dim: dim,
        seed: 0,
    }
}

fn toy_run() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let (vocab, data, test) = toy_corpus(5000, 500, 500);
        let report = compare_regimes(toy_model(&vocab, 64), &data, &test, &toy_config(), None, 1000).unwrap();
        ToyRun {
            dev: data.dev,
            report,
        }
    })
}

#[test]
fn criterion_3_toy_convergence() {
    let run = toy_run();
    let baseline = &run.report.models[0];
    let started = Instant::now();
    let bleu = bleu_of(&baseline.theta, &run.dev);
    let minutes = (baseline.log.total_seconds() + started.elapsed().as_secs_f64()) / 60.0;
    let epochs = baseline.log.records.len();
    let pass = bleu >= 0.90 && epochs <= 30 && minutes < 30.0;
    report(
        3,
        "toy convergence",
        pass,
        &format!(
            "dev BLEU {bleu:.4} at best epoch {} of {epochs}, {minutes:.1} min",
            baseline.best_epoch
        ),
    );
}

#[test]
fn criterion_4_reconstruction_learning() {
    let run = toy_run();
    let (baseline, finetuned) = (&run.report.models[0], &run.report.models[1]);
    let batches = make_batches(&run.dev, 64, 0).unwrap();
    let acc = token_accuracy(&finetuned.params(), &batches).unwrap();
    let rec = acc.reconstruction.unwrap();
    let base_bleu = bleu_of(&baseline.theta, &run.dev);
    let tuned_bleu = bleu_of(&finetuned.theta, &run.dev);
    let pass = rec >= 0.8 && tuned_bleu >= base_bleu - 0.02;
    report(
        4,
        "reconstruction learning",
        pass,
        &format!(
            "reconstruction accuracy {rec:.4}, dev BLEU baseline {base_bleu:.4} finetuned {tuned_bleu:.4}"
        ),
    );
}

#[test]
fn criterion_5_regime_report() {
    let run = toy_run();
    let full = run.report.to_tsv(true);
    let shaped = full.lines().next() == Some("model\tBLEU\tp_value\thours")
        && run.report.rows.len() == 3
        && run.report.rows[1..].iter().all(|r| r.p_value.is_some())
        && run.report.rows.iter().all(|r| r.hours > 0.0);

    // determinism on a reduced copy of the same pipeline
    let (vocab, data, test) = toy_corpus(400, 50, 50);
    let cfg = TrainingConfig {
        epochs: 3,
        ..toy_config()
    };
    let again = || compare_regimes(toy_model(&vocab, 16), &data, &test, &cfg, None, 200).unwrap();
    let (a, b) = (again(), again());
    let same_models = a
        .models
        .iter()
        .zip(&b.models)
        .all(|(x, y)| checkpoint::encode(&x.params()) == checkpoint::encode(&y.params()));
    let deterministic = a.to_tsv(false) == b.to_tsv(false) && same_models;

    let mut err = std::io::stderr();
    for line in full.lines() {
        let _ = writeln!(err, "    {line}");
    }
    let joint = &run.report.rows[2];
    report(
        5,
        "regime comparison report",
        shaped && deterministic,
        &format!(
            "joint regime BLEU {:.4} vs baseline {:.4}, recorded not asserted; rerun identical: {deterministic}",
            joint.bleu, run.report.rows[0].bleu
        ),
    );
}

fn words(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.gen_range(0..10);
    (0..n)
        .map(|_| match rng.gen_range(0..8) {
            0 => "<unk>".to_string(),
            k => format!("w{k}"),
        })
        .collect()
}

fn brute_force(hyp: &[String], reference: &[String]) -> WordStats {
    let count = |s: &[String], w: &String| s.iter().filter(|x| *x == w).count() as u64;
    let mut out = WordStats::default();
    let mut done: Vec<&String> = Vec::new();
    for w in hyp {
        if w == "<unk>" {
            out.unknown += 1;
            continue;
        }
        if done.contains(&w) {
            continue;
        }
        done.push(w);
        let (h, r) = (count(hyp, w), count(reference, w));
        if r > 0 {
            out.excess += h.saturating_sub(r);
        } else if h > 1 {
            out.repeated_absent += h;
        }
    }
    out
}

#[test]
fn criterion_6_metric_oracles() {
    let tok = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
    let bleu = bleu_corpus(&[tok("a b c d e")], &[tok("a b c d f")]).unwrap().bleu;
    let bleu_ok = (bleu - 0.2f64.powf(0.25)).abs() < 1e-6 && (bleu - 0.6687).abs() < 1e-4;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (h, r) = (words(&mut rng), words(&mut rng));
        let got = word_stats(&[h.clone()], &[r.clone()], &"<unk>".to_string()).unwrap();
        if got != brute_force(&h, &r) {
            mismatches += 1;
        }
    }

    let refs: Vec<Vec<String>> = (0..50).map(|_| {
        let mut w = words(&mut rng);
        w.extend(tok("p q r s"));
        w
    }).collect();
    let garbage: Vec<Vec<String>> = refs.iter().map(|r| vec!["zz".to_string(); r.len()]).collect();
    let p_same = bootstrap_significance(&refs, &refs, &refs, 1000, 3).unwrap();
    let p_garbage = bootstrap_significance(&refs, &garbage, &refs, 1000, 3).unwrap();
    let render = || {
        let mut a = EvalReport::compute("ref", &refs, &refs, &"<unk>".to_string()).unwrap();
        a.p_value = Some(bootstrap_significance(&refs, &garbage, &refs, 1000, 3).unwrap());
        let b = EvalReport::compute("garbage", &garbage, &refs, &"<unk>".to_string()).unwrap();
        report_tsv(&[a, b])
    };
    let byte_same = render().into_bytes() == render().into_bytes();

    let pass = bleu_ok && mismatches == 0 && p_same == 1.0 && p_garbage == 0.0 && byte_same;
    report(
        6,
        "metric oracles",
        pass,
        &format!(
            "BLEU {bleu:.6}, word_stats mismatches {mismatches}/1000, p identical {p_same}, p garbage {p_garbage}, byte-identical {byte_same}"
        ),
    );
}

const BIN: &str = env!("CARGO_BIN_EXE_edr-nmt");

const SMALL_CONFIG: &str = "\
synthetic = copy
alphabet = 8
min_len = 2
max_sent_len = 5
train_size = 300
dev_size = 40
test_size = 40
train_src = data/train.src
train_tgt = data/train.tgt
dev_src = data/dev.src
dev_tgt = data/dev.tgt
test_src = data/test.src
test_tgt = data/test.tgt
src_vocab = data/vocab.src
tgt_vocab = data/vocab.tgt
out_dir = model
pretrained = model/baseline/best.ckpt
embed_dim = 16
hidden_dim = 16
learning_rate = 0.05
batch_size = 32
epochs = 3
seed = 5
";

fn cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(BIN).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Runs every `train` regime plus `translate` in a fresh directory.
fn cli_artifacts() -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.conf"), SMALL_CONFIG).unwrap();
    for regime in ["finetune", "joint"] {
        fs::write(d.join(format!("{regime}.conf")), format!("{SMALL_CONFIG}regime = {regime}\n")).unwrap();
    }
    cli(d, &["make-data", "--config", "run.conf"]);
    cli(d, &["train", "--config", "run.conf"]);
    cli(d, &["train", "--config", "finetune.conf"]);
    cli(d, &["train", "--config", "joint.conf"]);
    let mut out = vec![(
        "translate".to_string(),
        cli(d, &["translate", "--config", "finetune.conf"]),
    )];
    for regime in ["baseline", "finetune", "joint"] {
        let sub = d.join("model").join(regime);
        let mut names: Vec<String> = fs::read_dir(&sub)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".ckpt"))
            .collect();
        names.sort();
        for n in names {
            out.push((format!("{regime}/{n}"), fs::read(sub.join(&n)).unwrap()));
        }
    }
    out
}

#[test]
fn criterion_7_determinism() {
    let (a, b) = (cli_artifacts(), cli_artifacts());
    let names_match = a.iter().map(|x| &x.0).eq(b.iter().map(|x| &x.0));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = names_match && differing.is_empty() && a.len() > 4;
    report(
        7,
        "determinism",
        pass,
        &format!("{} artifacts compared across two runs, differing: {differing:?}", a.len()),
    );
}

#[test]
fn criterion_8_checkpoint_round_trip() {
    let (vocab, data, _) = toy_corpus(300, 40, 0);
    let model = toy_model(&vocab, 16);
    let cfg = TrainingConfig {
        epochs: 2,
        learning_rate: 0.05,
        ..toy_config()
    };
    let baseline = train_baseline(model, &data, &cfg, None).unwrap();
    let batches = make_batches(&data.dev, 16, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.ckpt");
    checkpoint::save(&path, &baseline.params()).unwrap();
    let (found, theta, gamma) = checkpoint::split(checkpoint::load(&path).unwrap()).unwrap();
    let shapes_ok = found == ModelConfig { seed: 0, ..model } && gamma.is_none();

    let mut round_trip = true;
    let mut finetune_start = true;
    let start = train_finetune(theta.clone(), model, &data, &TrainingConfig { epochs: 0, ..cfg.clone() }, None).unwrap();
    let joint_path = dir.path().join("joint.ckpt");
    checkpoint::save(&joint_path, &start.params()).unwrap();
    let joint_loaded = checkpoint::load(&joint_path).unwrap();
    for batch in &batches {
        let before = batch_loss(baseline.theta.set(), batch, Objective::Forward).unwrap();
        let after = batch_loss(theta.set(), batch, Objective::Forward).unwrap();
        round_trip &= before.forward.to_bits() == after.forward.to_bits();
        let j0 = batch_loss(&start.params(), batch, Objective::Joint { lambda: 1.0 }).unwrap();
        let j1 = batch_loss(&joint_loaded, batch, Objective::Joint { lambda: 1.0 }).unwrap();
        round_trip &= j0.total.to_bits() == j1.total.to_bits();
        finetune_start &= j0.forward.to_bits() == before.forward.to_bits();
    }
    report(
        8,
        "checkpoint round trip",
        shapes_ok && round_trip && finetune_start,
        &format!(
            "{} batches bit-exact after reload: {round_trip}, finetune start reproduces baseline loss: {finetune_start}",
            batches.len()
        ),
    );
}
