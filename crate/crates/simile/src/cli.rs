//! Command-line front end: one subcommand per pipeline stage.

use std::fs;
use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use simile_core::corpus::{
    build_vocab, downsample, extract_all, generate_synthetic, split, CorpusRecord, CorpusStats, PatternLexicon,
};
use simile_core::locate_gen::{train, SimileSample, TrainReport};
use simile_core::metrics::{evaluate, perplexity, RunOutput};
use simile_core::nn::LocateGen;
use simile_core::retrieval::{
    bm25_retrieve, cbow_rerank, index_similes, match_rerank, match_rerank_train, train_cbow, EmbeddingTable,
    InvertedIndex,
};
use simile_core::vocab::Vocabulary;
use simile_core::{Precision, Real};

use crate::checkpoint::{self, AnyModel};
use crate::config::RunConfig;
use crate::engine::{decoding_for, Engine};
use crate::io;
use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "simile", version, about = "Locate an insertion point in text and generate a simile for it")]
pub struct Cli {
    /// Seed for every random choice (sampling, initialisation, shuffling).
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// TOML run configuration with [model], [train], [cbow] and [matcher] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Floating-point precision for training; overrides the config file.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract (context, position, simile) records from raw text.
    Extract(ExtractArgs),
    /// Generate the synthetic marker/keyword corpus.
    Synth(SynthArgs),
    /// Build a character vocabulary from record files.
    Vocab(VocabArgs),
    /// Train the locate-and-generate model.
    Train(TrainArgs),
    /// Score system outputs against gold records.
    Eval(EvalArgs),
    /// Retrieval baselines: BM25 with optional reranking.
    Retrieve(RetrieveArgs),
    /// Polish one text with a trained checkpoint.
    Polish(PolishArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Write train/dev/test.jsonl of these sizes into the output directory.
    #[arg(long, value_delimiter = ',', value_name = "TRAIN,DEV,TEST")]
    pub split: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// JSON Lines of {id, text}, or a directory of .txt files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Pattern lexicon JSON; the built-in Chinese lexicon otherwise.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Keep every occurrence of frequent similes.
    #[arg(long)]
    pub no_downsample: bool,
    /// Write corpus statistics as JSON.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Vocabulary JSON; built from the training records otherwise.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub output: PathBuf,
    /// Loss curve CSV path.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Overrides the configured step budget.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides the configured masked-token pretraining steps.
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    /// Ablation: drop the insertion bias from the decoder.
    #[arg(long)]
    pub no_insertion_bias: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold records.
    #[arg(long)]
    pub test: PathBuf,
    /// System outputs as JSON Lines of {position, simile}; produced with the
    /// checkpoint when absent.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Model for generation and perplexity.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    /// Embedding table text file for EA/GM/VE.
    #[arg(long, conflicts_with = "cbow_corpus")]
    pub embeddings: Option<PathBuf>,
    /// Train a CBOW table on these records for EA/GM/VE instead.
    #[arg(long)]
    pub cbow_corpus: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the generated outputs as JSON Lines.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rerank {
    None,
    Cbow,
    Match,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Training records to index.
    #[arg(long, required_unless_present = "index")]
    pub train: Option<PathBuf>,
    /// Load a saved index instead of building one.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub save_index: Option<PathBuf>,
    /// Records whose contexts are queried.
    #[arg(long)]
    pub test: PathBuf,
    /// Positions from a locate-and-generate checkpoint.
    #[arg(long, group = "positions_from")]
    pub checkpoint: Option<PathBuf>,
    /// Positions from a predictions file of {position, simile}.
    #[arg(long, group = "positions_from")]
    pub positions: Option<PathBuf>,
    /// Use the gold positions of the test records.
    #[arg(long, group = "positions_from")]
    pub gold_positions: bool,
    #[arg(long, value_enum, default_value = "none")]
    pub rerank: Rerank,
    #[arg(long, default_value_t = 100)]
    pub topk: usize,
    /// Embedding table for CBOW reranking; trained on --train otherwise.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Trained matcher checkpoint; trained on --train otherwise.
    #[arg(long)]
    pub matcher: Option<PathBuf>,
    #[arg(long)]
    pub save_matcher: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PolishArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Force the insertion point (semi-automatic mode).
    #[arg(long)]
    pub position: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    /// Print the full result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SIMILE_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "SIMILE_BIND", default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, env = "SIMILE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    /// Request cap in characters; defaults to the model limit.
    #[arg(long)]
    pub max_request_chars: Option<usize>,
    /// Directory served for non-API paths.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

fn write_split(records: &[CorpusRecord], output: &Path, sizes: &Option<Vec<usize>>, seed: u64) -> anyhow::Result<String> {
    match sizes.as_deref() {
        None => {
            io::write_jsonl(output, records)?;
            Ok(format!("{} records -> {}", records.len(), output.display()))
        }
        Some(&[a, b, c]) => {
            let s = split(records, (a, b, c), seed)?;
            fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
            for (name, part) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
                io::write_jsonl(&output.join(format!("{name}.jsonl")), part)?;
            }
            Ok(format!("{a}/{b}/{c} records -> {}", output.display()))
        }
        Some(_) => bail!("--split takes three sizes"),
    }
}

fn samples_that_fit(
    records: &[CorpusRecord],
    vocab: &Vocabulary,
    config: &simile_core::nn::ModelConfig,
) -> anyhow::Result<(Vec<SimileSample>, usize)> {
    let mut out = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in records {
        let s = r.to_sample(vocab)?;
        if s.fits(config).is_ok() {
            out.push(s);
        } else {
            dropped += 1;
        }
    }
    Ok((out, dropped))
}

fn run_train<T: Real>(
    cli: &Cli,
    args: &TrainArgs,
    rc: &RunConfig,
    vocab: &Vocabulary,
    out: &mut dyn Write,
) -> anyhow::Result<TrainReport> {
    let mut model_cfg = rc.model.resolve(vocab.len())?;
    model_cfg.precision = T::PRECISION;
    if args.no_insertion_bias {
        model_cfg.use_insertion_bias = false;
    }
    let mut tc = rc.train.clone();
    if let Some(s) = args.steps {
        tc.max_steps = s;
    }
    if let Some(s) = args.pretrain_steps {
        tc.pretrain_steps = s;
    }
    let (tr, d1) = samples_that_fit(&io::read_jsonl(&args.train)?, vocab, &model_cfg)?;
    let (dv, d2) = samples_that_fit(&io::read_jsonl(&args.dev)?, vocab, &model_cfg)?;
    if d1 + d2 > 0 {
        writeln!(out, "skipped {} train and {} dev records longer than the model limits", d1, d2)?;
    }
    let mut model = LocateGen::<T>::new(model_cfg, cli.seed)?;
    let report = train(&mut model, &tr, &dv, &tc, cli.seed, |r| {
        tracing::info!(
            step = r.step,
            total = r.total,
            positioning = r.positioning,
            generation = r.generation,
            dev_total = r.dev_total,
            "eval"
        );
    })?;
    checkpoint::save_model(&args.output, &model, vocab)?;
    Ok(report)
}

fn load_embeddings(path: Option<&Path>, corpus: Option<&Path>, rc: &RunConfig, seed: u64) -> anyhow::Result<Option<EmbeddingTable>> {
    if let Some(p) = path {
        return Ok(Some(io::read_embeddings(p)?));
    }
    if let Some(p) = corpus {
        let records: Vec<CorpusRecord> = io::read_jsonl(p)?;
        let texts = records.iter().flat_map(|r| [r.context.as_str(), r.simile.as_str()]);
        return Ok(Some(train_cbow(texts, &rc.cbow, seed)?));
    }
    Ok(None)
}

fn model_perplexity(model: &AnyModel, vocab: &Vocabulary, golds: &[CorpusRecord]) -> anyhow::Result<f64> {
    let (samples, _) = samples_that_fit(golds, vocab, model.config())?;
    if samples.len() != golds.len() {
        bail!("{} test records exceed the model limits", golds.len() - samples.len());
    }
    Ok(match model {
        AnyModel::F32(m) => perplexity(m, &samples)?,
        AnyModel::F64(m) => perplexity(m, &samples)?,
    })
}

fn run_eval(cli: &Cli, args: &EvalArgs, rc: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let golds: Vec<CorpusRecord> = io::read_jsonl(&args.test)?;
    let engine = match &args.checkpoint {
        Some(p) => Some(Engine::new(checkpoint::load_model(p)?)?),
        None => None,
    };
    let outputs: Vec<RunOutput> = match (&args.predictions, &engine) {
        (Some(p), _) => io::read_jsonl(p)?,
        (None, Some(e)) => {
            let decoding = decoding_for(args.beam)?;
            golds
                .iter()
                .map(|g| {
                    let r = e.polish(&g.context, None, decoding)?;
                    Ok(RunOutput {
                        position: r.position,
                        simile: r.simile,
                    })
                })
                .collect::<anyhow::Result<_>>()?
        }
        (None, None) => bail!("eval needs --predictions or --checkpoint"),
    };
    if let Some(p) = &args.outputs {
        io::write_jsonl(p, &outputs)?;
    }
    let ppl = match &engine {
        Some(e) => Some(model_perplexity(e.model(), e.vocab(), &golds)?),
        None => None,
    };
    let table = load_embeddings(args.embeddings.as_deref(), args.cbow_corpus.as_deref(), rc, cli.seed)?;
    let report = evaluate(&outputs, &golds, ppl, table.as_ref())?;
    writeln!(out, "{report}")?;
    if let Some(p) = &args.report {
        io::write_json(p, &report)?;
    }
    Ok(())
}

fn run_retrieve(cli: &Cli, args: &RetrieveArgs, rc: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let train_records: Option<Vec<CorpusRecord>> = args.train.as_deref().map(io::read_jsonl).transpose()?;
    let index: InvertedIndex = match (&args.index, &train_records) {
        (Some(p), _) => checkpoint::load_index(p)?,
        (None, Some(r)) => index_similes(r)?,
        (None, None) => bail!("retrieve needs --train or --index"),
    };
    if let Some(p) = &args.save_index {
        checkpoint::save_index(p, &index)?;
    }
    let tests: Vec<CorpusRecord> = io::read_jsonl(&args.test)?;
    let positions: Vec<usize> = if let Some(p) = &args.checkpoint {
        let engine = Engine::new(checkpoint::load_model(p)?)?;
        tests
            .iter()
            .map(|t| Ok(simile_core::nn::select_insertion(&engine.locate(&t.context)?)))
            .collect::<anyhow::Result<_>>()?
    } else if let Some(p) = &args.positions {
        let preds: Vec<RunOutput> = io::read_jsonl(p)?;
        if preds.len() != tests.len() {
            bail!("{} positions for {} test records", preds.len(), tests.len());
        }
        preds.into_iter().map(|o| o.position).collect()
    } else if args.gold_positions {
        tests.iter().map(|t| t.position).collect()
    } else {
        bail!("retrieve needs one of --checkpoint, --positions or --gold-positions");
    };
    let need_train = || {
        train_records
            .as_deref()
            .ok_or_else(|| anyhow!("reranking without a saved table or matcher needs --train"))
    };
    let table = match args.rerank {
        Rerank::Cbow => match &args.embeddings {
            Some(p) => Some(io::read_embeddings(p)?),
            None => {
                let r = need_train()?;
                Some(train_cbow(r.iter().flat_map(|r| [r.context.as_str(), r.simile.as_str()]), &rc.cbow, cli.seed)?)
            }
        },
        _ => None,
    };
    let matcher = match args.rerank {
        Rerank::Match => Some(match &args.matcher {
            Some(p) => checkpoint::load_matcher(p)?,
            None => {
                let r = need_train()?;
                let vocab = build_vocab(r)?;
                let mut cfg = rc.model.resolve(vocab.len())?;
                cfg.precision = Precision::F32;
                let m = match_rerank_train(r, &vocab, cfg, &rc.matcher, cli.seed)?;
                if let Some(p) = &args.save_matcher {
                    checkpoint::save_matcher(p, &m, &vocab)?;
                }
                (m, vocab)
            }
        }),
        _ => None,
    };
    let mut outputs = Vec::with_capacity(tests.len());
    for (t, &pos) in tests.iter().zip(&positions) {
        let hits = bm25_retrieve(&index, &t.context, pos, args.topk)?;
        let candidates: Vec<String> = hits.into_iter().map(|h| h.simile).collect();
        let simile = if candidates.is_empty() {
            String::new()
        } else {
            match (&table, &matcher) {
                (Some(tab), _) => cbow_rerank(&candidates, &t.context, tab)
                    .map(|r| r[0].simile.clone())
                    .unwrap_or_else(|_| candidates[0].clone()),
                (_, Some((m, v))) => match_rerank(&candidates, &t.context, m, v)?[0].simile.clone(),
                _ => candidates[0].clone(),
            }
        };
        outputs.push(RunOutput { position: pos, simile });
    }
    io::write_jsonl(&args.output, &outputs)?;
    writeln!(out, "{} outputs -> {}", outputs.len(), args.output.display())?;
    Ok(())
}

fn run_polish(args: &PolishArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let engine = Engine::new(checkpoint::load_model(&args.checkpoint)?)?;
    let r = engine.polish(&args.text, args.position, decoding_for(args.beam)?)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&r)?)?;
    } else {
        writeln!(out, "position: {}", r.position)?;
        writeln!(out, "simile: {}", r.simile)?;
        writeln!(out, "polished: {}", r.polished_text)?;
    }
    Ok(())
}

/// Runs one parsed command, writing human-readable results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let rc = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Extract(a) => {
            let docs = io::read_documents(&a.input)?;
            let lex = match &a.lexicon {
                Some(p) => io::read_lexicon(p)?,
                None => PatternLexicon::default(),
            };
            let mut records = extract_all(&docs, &lex);
            if !a.no_downsample {
                records = downsample(&records, cli.seed);
            }
            let stats = CorpusStats::compute(&records);
            if let Some(p) = &a.stats {
                io::write_json(p, &stats)?;
            }
            writeln!(out, "{} documents, {}", docs.len(), write_split(&records, &a.output, &a.split.split, cli.seed)?)?;
            writeln!(out, "{}", serde_json::to_string(&stats)?)?;
        }
        Command::Synth(a) => {
            let records = generate_synthetic(a.count, cli.seed);
            writeln!(out, "{}", write_split(&records, &a.output, &a.split.split, cli.seed)?)?;
        }
        Command::Vocab(a) => {
            let mut records: Vec<CorpusRecord> = Vec::new();
            for p in &a.input {
                records.extend(io::read_jsonl::<CorpusRecord>(p)?);
            }
            let vocab = build_vocab(&records)?;
            io::write_vocab(&a.output, &vocab)?;
            writeln!(out, "{} tokens -> {}", vocab.len(), a.output.display())?;
        }
        Command::Train(a) => {
            let vocab = match &a.vocab {
                Some(p) => io::read_vocab(p)?,
                None => build_vocab(&io::read_jsonl::<CorpusRecord>(&a.train)?)?,
            };
            let precision = match cli.precision {
                Some(PrecisionArg::F32) => Precision::F32,
                Some(PrecisionArg::F64) => Precision::F64,
                None => rc.model.precision.unwrap_or(Precision::F32),
            };
            let report = match precision {
                Precision::F32 => run_train::<f32>(&cli, a, &rc, &vocab, out)?,
                Precision::F64 => run_train::<f64>(&cli, a, &rc, &vocab, out)?,
            };
            if let Some(p) = &a.curve {
                io::write_loss_curve(p, &report.curve)?;
            }
            writeln!(
                out,
                "{} steps, best dev loss {:.4} at step {}{} -> {}",
                report.steps,
                report.best_dev_total,
                report.best_step,
                if report.stopped_early { " (early stop)" } else { "" },
                a.output.display()
            )?;
        }
        Command::Eval(a) => run_eval(&cli, a, &rc, out)?,
        Command::Retrieve(a) => run_retrieve(&cli, a, &rc, out)?,
        Command::Polish(a) => run_polish(a, out)?,
        Command::Serve(a) => {
            let config = ServiceConfig {
                checkpoint: a.checkpoint.clone(),
                bind: a.bind,
                port: a.port,
                beam_size: a.beam,
                max_request_chars: a.max_request_chars,
                static_dir: a.static_dir.clone(),
            };
            tokio::runtime::Runtime::new()?.block_on(service::serve(config, service::shutdown_signal()))?;
        }
    }
    Ok(())
}
