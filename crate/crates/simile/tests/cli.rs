use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use simile::checkpoint::{load_model, AnyModel};
use simile::cli::{run, Cli};
use simile::io::{read_jsonl, read_loss_curve, read_vocab};
use simile_core::corpus::CorpusRecord;
use simile_core::locate_gen::{Decoding, PolishResult, Polisher};
use simile_core::metrics::{MetricsReport, RunOutput};

const SMALL: &str = r#"
[model]
hidden_size = 16
encoder_layers = 1
decoder_layers = 1
attention_heads = 2
ffn_size = 32

[train]
batch_size = 8
eval_every = 4
patience = 50
"#;

fn sim(args: &[&str]) -> anyhow::Result<String> {
    let cli = Cli::try_parse_from(std::iter::once("simile").chain(args.iter().copied()))?;
    let mut out = Vec::new();
    run(cli, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Work {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("small.toml"), SMALL).unwrap();
        sim(&["synth", "--count", "120", "--output", p(&root.join("data")), "--split", "80,20,20"]).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn train(&self, output: &str, steps: &str) -> String {
        sim(&[
            "--config",
            p(&self.path("small.toml")),
            "train",
            "--train",
            p(&self.path("data/train.jsonl")),
            "--dev",
            p(&self.path("data/dev.jsonl")),
            "--output",
            p(&self.path(output)),
            "--curve",
            p(&self.path(&format!("{output}.csv"))),
            "--steps",
            steps,
        ])
        .unwrap()
    }
}

#[test]
fn synth_split_and_vocab() {
    let w = Work::new();
    for (name, n) in [("train", 80), ("dev", 20), ("test", 20)] {
        let recs: Vec<CorpusRecord> = read_jsonl(&w.path(&format!("data/{name}.jsonl"))).unwrap();
        assert_eq!(recs.len(), n);
    }
    let msg = sim(&[
        "vocab",
        "--input",
        p(&w.path("data/train.jsonl")),
        p(&w.path("data/dev.jsonl")),
        "--output",
        p(&w.path("vocab.json")),
    ])
    .unwrap();
    let vocab = read_vocab(&w.path("vocab.json")).unwrap();
    assert!(msg.starts_with(&format!("{} tokens", vocab.len())));
    assert!(sim(&["synth", "--count", "10", "--output", p(&w.path("x")), "--split", "5,5"]).is_err());
    assert!(sim(&["synth", "--count", "10", "--output", p(&w.path("x")), "--split", "5,5,5"]).is_err());
}

#[test]
fn training_is_reproducible_and_polish_matches_the_library() {
    let w = Work::new();
    let msg = w.train("a.bin", "8");
    assert!(msg.contains("8 steps"), "{msg}");
    w.train("b.bin", "8");
    assert_eq!(fs::read(w.path("a.bin")).unwrap(), fs::read(w.path("b.bin")).unwrap());
    let curve = read_loss_curve(&w.path("a.bin.csv")).unwrap();
    assert_eq!(curve.iter().map(|r| r.step).collect::<Vec<_>>(), [4, 8]);

    let loaded = load_model(&w.path("a.bin")).unwrap();
    let AnyModel::F32(model) = &loaded.model else {
        panic!("trained at f32");
    };
    assert_eq!(model.config().hidden_size, 16);
    let polisher = Polisher::new(model, &loaded.vocab).unwrap();
    let text = "abc#Edefgh";
    let auto = polisher.polish_automatic(text, Decoding::Beam(3)).unwrap();
    let out = sim(&["polish", "--checkpoint", p(&w.path("a.bin")), "--text", text, "--beam", "3"]).unwrap();
    assert_eq!(
        out,
        format!("position: {}\nsimile: {}\npolished: {}\n", auto.position, auto.simile, auto.polished_text)
    );
    let json = sim(&["polish", "--checkpoint", p(&w.path("a.bin")), "--text", text, "--position", "2", "--json"]).unwrap();
    let mut semi: PolishResult = serde_json::from_str(&json).unwrap();
    let lib = polisher.polish_semi_automatic(text, 2, Decoding::Greedy).unwrap();
    assert!(semi.pointer_probs.iter().zip(&lib.pointer_probs).all(|(a, b)| (a - b).abs() < 1e-15));
    semi.pointer_probs.clone_from(&lib.pointer_probs);
    assert_eq!(semi, lib);

    assert!(sim(&["polish", "--checkpoint", p(&w.path("a.bin")), "--text", text, "--position", "99"]).is_err());
    assert!(sim(&["polish", "--checkpoint", p(&w.path("a.bin")), "--text", text, "--beam", "0"]).is_err());
    assert!(sim(&["polish", "--checkpoint", p(&w.path("missing.bin")), "--text", text]).is_err());
}

#[test]
fn precision_flag_controls_the_checkpoint() {
    let w = Work::new();
    sim(&[
        "--config",
        p(&w.path("small.toml")),
        "--precision",
        "f64",
        "train",
        "--train",
        p(&w.path("data/train.jsonl")),
        "--dev",
        p(&w.path("data/dev.jsonl")),
        "--output",
        p(&w.path("wide.bin")),
        "--steps",
        "2",
        "--no-insertion-bias",
    ])
    .unwrap();
    let loaded = load_model(&w.path("wide.bin")).unwrap();
    assert!(matches!(loaded.model, AnyModel::F64(_)));
    assert!(!loaded.model.config().use_insertion_bias);
}

#[test]
fn eval_of_gold_predictions_is_perfect() {
    let w = Work::new();
    let test = w.path("data/test.jsonl");
    let golds: Vec<CorpusRecord> = read_jsonl(&test).unwrap();
    let preds: Vec<RunOutput> = golds
        .iter()
        .map(|g| RunOutput {
            position: g.position,
            simile: g.simile.clone(),
        })
        .collect();
    simile::io::write_jsonl(&w.path("gold.jsonl"), &preds).unwrap();
    let table = sim(&[
        "eval",
        "--test",
        p(&test),
        "--predictions",
        p(&w.path("gold.jsonl")),
        "--cbow-corpus",
        p(&w.path("data/train.jsonl")),
        "--report",
        p(&w.path("report.json")),
    ])
    .unwrap();
    assert!(table.contains("Generated") && table.contains("G.T."));
    let report: MetricsReport = simile::io::read_json(&w.path("report.json")).unwrap();
    assert_eq!(report.positioning_accuracy, 1.0);
    assert_eq!((report.bleu1, report.bleu2, report.bleu3), (100.0, 100.0, 100.0));
    assert_eq!(report.generated, report.ground_truth);
    assert!(report.generated.ea.is_some());

    w.train("m.bin", "2");
    sim(&[
        "eval",
        "--test",
        p(&test),
        "--checkpoint",
        p(&w.path("m.bin")),
        "--report",
        p(&w.path("model.json")),
        "--outputs",
        p(&w.path("outputs.jsonl")),
    ])
    .unwrap();
    let report: MetricsReport = simile::io::read_json(&w.path("model.json")).unwrap();
    assert!(report.ppl.is_some_and(|v| v.is_finite() && v >= 1.0));
    assert_eq!(read_jsonl::<RunOutput>(&w.path("outputs.jsonl")).unwrap().len(), 20);
    assert!(sim(&["eval", "--test", p(&test)]).is_err());
}

#[test]
fn retrieval_baselines_run_and_reuse_saved_artifacts() {
    let w = Work::new();
    let retrieve = |extra: &[&str], output: &str| {
        let mut args = vec!["retrieve", "--test"];
        let test = w.path("data/test.jsonl");
        let out = w.path(output);
        args.push(p(&test));
        args.extend_from_slice(extra);
        args.extend(["--output", p(&out)]);
        sim(&args).map(|_| read_jsonl::<RunOutput>(&out).unwrap())
    };
    let train = w.path("data/train.jsonl");
    let index = w.path("index.bin");
    let plain = retrieve(
        &["--train", p(&train), "--gold-positions", "--save-index", p(&index)],
        "plain.jsonl",
    )
    .unwrap();
    assert_eq!(plain.len(), 20);
    let again = retrieve(&["--index", p(&index), "--gold-positions"], "again.jsonl").unwrap();
    assert_eq!(plain, again);

    let cbow = retrieve(&["--train", p(&train), "--gold-positions", "--rerank", "cbow"], "cbow.jsonl").unwrap();
    assert_eq!(cbow.len(), 20);

    let cfg = w.path("small.toml");
    let matcher = w.path("matcher.bin");
    let mut toml = fs::read_to_string(&cfg).unwrap();
    toml.push_str("\n[matcher]\nsteps = 2\n");
    fs::write(&cfg, toml).unwrap();
    let trained = retrieve(
        &[
            "--config",
            p(&cfg),
            "--train",
            p(&train),
            "--gold-positions",
            "--rerank",
            "match",
            "--save-matcher",
            p(&matcher),
        ],
        "match.jsonl",
    )
    .unwrap();
    let reused = retrieve(
        &["--index", p(&index), "--gold-positions", "--rerank", "match", "--matcher", p(&matcher)],
        "match2.jsonl",
    )
    .unwrap();
    assert_eq!(trained, reused);

    assert!(retrieve(&["--index", p(&index), "--gold-positions", "--rerank", "cbow"], "x.jsonl").is_err());
    assert!(retrieve(&["--train", p(&train)], "x.jsonl").is_err());
}
