//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::data::{
    encode_corpus, filter_by_length, read_lines, read_parallel, RawCorpus, SentencePair,
    Vocabulary, UNK_TOKEN,
};
use crate::decoding::{export_attention, greedy_decode_batch, Translation};
use crate::error::{Error, Result};
use crate::evaluation::{bootstrap_significance, report_tsv, EvalReport, DEFAULT_SAMPLES};
use crate::model::{checkpoint, EncoderDecoderParams, ModelConfig};
use crate::training::{
    compare_regimes, gradcheck_fixture, objective_gradcheck, regime_dir, train_baseline,
    train_finetune, train_joint, Objective, Regime, TrainData, TrainedModel,
};

/// Tolerance the `gradcheck` command enforces.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "edr-nmt", version, about = "Encoder-decoder-reconstructor NMT")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic corpora (if configured) and build vocabularies.
    MakeData(MakeDataArgs),
    /// Train the regime named in the config.
    Train(TrainArgs),
    /// Greedy-translate a source file.
    Translate(TranslateArgs),
    /// Write one attention TSV per source sentence.
    DumpAttention(TranslateArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients of a seeded tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pretrained θ for finetuning.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to `<out_dir>/<regime>/best.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to the config's `test_src`.
    #[arg(long)]
    pub src: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Comparison system for the bootstrap test.
    #[arg(long = "hyp-b")]
    pub hyp_b: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampled coordinates per objective.
    #[arg(long, default_value_t = 400)]
    pub coords: usize,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Dimension { .. } | Error::Index { .. } | Error::Determinism { .. } => 1,
        Error::Config(_) => 2,
        Error::Checkpoint(_) => 3,
        Error::Data(_) | Error::Io { .. } => 4,
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// exit status. Output goes to `out`, diagnostics to stderr.
pub fn run<I, S>(argv: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("edr-nmt: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<()> {
    match command {
        Command::MakeData(a) => make_data(a, out),
        Command::Train(a) => train(a, out),
        Command::Translate(a) => translate(a, out, false),
        Command::DumpAttention(a) => translate(a, out, true),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<Config> {
    let mut c = Config::load(path)?;
    if let Some(s) = seed {
        c.training.seed = s;
    }
    Ok(c)
}

fn corpus_text(side: impl Iterator<Item = Vec<String>>) -> String {
    let mut s = String::new();
    for tokens in side {
        s.push_str(&tokens.join(" "));
        s.push('\n');
    }
    s
}

/// Seed for the `k`-th generated split.
fn split_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn make_data(a: MakeDataArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let c = load_config(&a.config, a.seed)?;
    let train_src = c.require(&c.train_src, "train_src")?;
    let train_tgt = c.require(&c.train_tgt, "train_tgt")?;
    let src_vocab = c.require(&c.src_vocab, "src_vocab")?;
    let tgt_vocab = c.require(&c.tgt_vocab, "tgt_vocab")?;

    let train: RawCorpus = match &c.synthetic {
        Some(spec) => {
            let splits = [
                (Some(train_src), Some(train_tgt), c.train_size),
                (c.dev_src.as_deref(), c.dev_tgt.as_deref(), c.dev_size),
                (c.test_src.as_deref(), c.test_tgt.as_deref(), c.test_size),
            ];
            let mut train = None;
            for (k, (src, tgt, n)) in splits.into_iter().enumerate() {
                let (Some(src), Some(tgt)) = (src, tgt) else {
                    continue;
                };
                let corpus = spec.generate(n, split_seed(c.training.seed, k as u64))?;
                write_file(src, &corpus_text(corpus.iter().map(|p| p.0.clone())))?;
                write_file(tgt, &corpus_text(corpus.iter().map(|p| p.1.clone())))?;
                emit(out, &format!("wrote {} pairs to {}\n", corpus.len(), src.display()))?;
                if k == 0 {
                    train = Some(corpus);
                }
            }
            train.expect("train split is always written")
        }
        None => read_parallel(train_src, train_tgt)?,
    };

    let sv = Vocabulary::build(&train.iter().map(|p| p.0.clone()).collect::<Vec<_>>(), c.vocab_size)?;
    let tv = Vocabulary::build(&train.iter().map(|p| p.1.clone()).collect::<Vec<_>>(), c.vocab_size)?;
    sv.save(src_vocab)?;
    tv.save(tgt_vocab)?;
    emit(
        out,
        &format!("vocabularies: {} source, {} target\n", sv.len(), tv.len()),
    )
}

fn vocabularies(c: &Config) -> Result<(Vocabulary, Vocabulary)> {
    Ok((
        Vocabulary::load(c.require(&c.src_vocab, "src_vocab")?)?,
        Vocabulary::load(c.require(&c.tgt_vocab, "tgt_vocab")?)?,
    ))
}

fn load_pairs(
    src: Option<&Path>,
    tgt: Option<&Path>,
    sv: &Vocabulary,
    tv: &Vocabulary,
    max_len: usize,
) -> Result<Vec<SentencePair>> {
    match (src, tgt) {
        (Some(s), Some(t)) => Ok(filter_by_length(
            encode_corpus(&read_parallel(s, t)?, sv, tv),
            max_len,
        )),
        (None, None) => Ok(Vec::new()),
        _ => Err(Error::Config("a source file needs a matching target file".into())),
    }
}

fn summary(regime: Regime, m: &TrainedModel) -> String {
    let last = m.log.records.last();
    format!(
        "{regime}: {} epochs, best epoch {}, final forward loss {:.6}\n",
        m.log.records.len(),
        m.best_epoch,
        last.map_or(f64::NAN, |r| r.forward_loss)
    )
}

fn train(a: TrainArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let c = load_config(&a.config, a.seed)?;
    let root = match a.out.as_deref() {
        Some(p) => p.to_path_buf(),
        None => c.require(&c.out_dir, "out_dir")?.to_path_buf(),
    };
    let regime = c.training.regime;
    let pretrained = a.checkpoint.as_deref().or(c.pretrained.as_deref());
    if regime == Regime::Finetune && pretrained.is_none() {
        return Err(Error::Config(
            "finetune needs a pretrained checkpoint (--checkpoint or `pretrained`)".into(),
        ));
    }
    let (sv, tv) = vocabularies(&c)?;
    let max_len = c.training.max_len;
    let data = TrainData {
        train: load_pairs(
            Some(c.require(&c.train_src, "train_src")?),
            Some(c.require(&c.train_tgt, "train_tgt")?),
            &sv,
            &tv,
            max_len,
        )?,
        dev: load_pairs(c.dev_src.as_deref(), c.dev_tgt.as_deref(), &sv, &tv, max_len)?,
    };
    let model = ModelConfig {
        src_vocab: sv.len(),
        tgt_vocab: tv.len(),
        embed_dim: c.embed_dim,
        hidden_dim: c.hidden_dim,
        seed: c.training.seed,
    };
    let dir = regime_dir(&root, regime);

    match regime {
        Regime::Baseline => {
            let m = train_baseline(model, &data, &c.training, Some(&dir))?;
            emit(out, &summary(regime, &m))
        }
        Regime::Joint => {
            let m = train_joint(model, &data, &c.training, Some(&dir))?;
            emit(out, &summary(regime, &m))
        }
        Regime::Finetune => {
            let path = pretrained.expect("checked above");
            let (found, theta, _) = checkpoint::split(checkpoint::load(path)?)?;
            if (ModelConfig { seed: model.seed, ..found }) != model {
                return Err(Error::Checkpoint(format!(
                    "{} has shapes {found:?}, config expects {model:?}",
                    path.display()
                )));
            }
            let m = train_finetune(theta, model, &data, &c.training, Some(&dir))?;
            emit(out, &summary(regime, &m))
        }
        Regime::All => {
            let eval = load_pairs(c.test_src.as_deref(), c.test_tgt.as_deref(), &sv, &tv, usize::MAX)?;
            let eval = if eval.is_empty() { data.dev.clone() } else { eval };
            let report = compare_regimes(model, &data, &eval, &c.training, Some(&root), c.samples)?;
            emit(out, &report.to_tsv(true))
        }
    }
}

fn load_theta(c: &Config, explicit: Option<&Path>) -> Result<EncoderDecoderParams> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let regime = match c.training.regime {
                Regime::All => Regime::Finetune,
                r => r,
            };
            regime_dir(c.require(&c.out_dir, "out_dir")?, regime).join("best.ckpt")
        }
    };
    let (_, theta, _) = checkpoint::split(checkpoint::load(&path)?)?;
    Ok(theta)
}

/// Decodes every non-empty line; empty lines yield empty translations.
fn decode_lines(
    theta: &EncoderDecoderParams,
    lines: &[Vec<String>],
    sv: &Vocabulary,
    factor: usize,
) -> Result<Vec<Translation>> {
    let sources: Vec<Vec<usize>> = lines
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| sv.encode(l))
        .collect();
    let mut decoded = greedy_decode_batch(theta, &sources, factor)?.into_iter();
    Ok(lines
        .iter()
        .map(|l| {
            if l.is_empty() {
                Translation {
                    tokens: Vec::new(),
                    attention: Vec::new(),
                    log_probs: Vec::new(),
                }
            } else {
                decoded.next().expect("one translation per non-empty line")
            }
        })
        .collect())
}

fn translate(a: TranslateArgs, out: &mut dyn std::io::Write, attention: bool) -> Result<()> {
    let c = Config::load(&a.config)?;
    let dump_dir = if attention {
        Some(
            a.out
                .as_deref()
                .ok_or_else(|| Error::usage("dump-attention needs --out DIR"))?,
        )
    } else {
        None
    };
    let src = match a.src.as_deref() {
        Some(p) => p,
        None => c.require(&c.test_src, "test_src")?,
    };
    let (sv, tv) = vocabularies(&c)?;
    let theta = load_theta(&c, a.checkpoint.as_deref())?;
    let model = ModelConfig::infer(theta.set())?;
    if model.src_vocab != sv.len() || model.tgt_vocab != tv.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint vocabularies {}/{} do not match {}/{}",
            model.src_vocab,
            model.tgt_vocab,
            sv.len(),
            tv.len()
        )));
    }
    let lines = read_lines(src)?;
    let translations = decode_lines(&theta, &lines, &sv, c.len_factor)?;

    if let Some(dir) = dump_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (n, (line, t)) in lines.iter().zip(&translations).enumerate() {
            let tsv = export_attention(t, line, &tv.decode(&t.tokens))?;
            write_file(&dir.join(format!("{}.tsv", n + 1)), &tsv)?;
        }
        return emit(out, &format!("wrote {} attention dumps to {}\n", lines.len(), dir.display()));
    }

    let text = corpus_text(translations.iter().map(|t| tv.decode(&t.tokens)));
    match a.out.as_deref() {
        Some(dir) => write_file(&dir.join("translations.txt"), &text),
        None => emit(out, &text),
    }
}

fn system_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn evaluate(a: EvaluateArgs, out: &mut dyn std::io::Write) -> Result<()> {
    if a.samples == 0 {
        return Err(Error::usage("--samples must be >= 1"));
    }
    let refs = read_lines(&a.reference)?;
    let hyp = read_lines(&a.hyp)?;
    let unk = UNK_TOKEN.to_string();
    let check = |h: &[Vec<String>], p: &Path| {
        if h.len() != refs.len() {
            return Err(Error::Data(format!(
                "{} has {} lines but {} has {}",
                p.display(),
                h.len(),
                a.reference.display(),
                refs.len()
            )));
        }
        Ok(())
    };
    check(&hyp, &a.hyp)?;
    let mut rows = vec![EvalReport::compute(system_name(&a.hyp), &hyp, &refs, &unk)?];
    if let Some(path_b) = &a.hyp_b {
        let hyp_b = read_lines(path_b)?;
        check(&hyp_b, path_b)?;
        rows[0].p_value = Some(bootstrap_significance(&hyp, &hyp_b, &refs, a.samples, a.seed)?);
        rows.push(EvalReport::compute(system_name(path_b), &hyp_b, &refs, &unk)?);
    }
    let tsv = report_tsv(&rows);
    if let Some(dir) = &a.out {
        write_file(&dir.join("eval.tsv"), &tsv)?;
    }
    emit(out, &tsv)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let (params, batch) = gradcheck_fixture(a.seed)?;
    let mut worst: f64 = 0.0;
    for (name, objective) in [
        ("forward", Objective::Forward),
        ("joint", Objective::Joint { lambda: 1.0 }),
    ] {
        let r = objective_gradcheck(&params, &batch, objective, 1e-5, a.coords, a.seed)?;
        emit(
            out,
            &format!(
                "{name}\tmax_rel_error={:.3e}\tcoords={}\ttensors={}\n",
                r.max_rel_error, r.coords_checked, r.tensors_checked
            ),
        )?;
        worst = worst.max(r.max_rel_error);
    }
    if worst >= GRADCHECK_TOLERANCE {
        return Err(Error::usage(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}
