use simile_core::corpus::{build_vocab, generate_synthetic, CorpusRecord};
use simile_core::nn::ModelConfig;
use simile_core::retrieval::{
    bm25_retrieve, context_window, index_similes, match_rerank, match_rerank_train, sample_negatives, MatchTrainConfig,
};
use simile_core::Precision;

fn rec(context: &str, position: usize, simile: &str) -> CorpusRecord {
    CorpusRecord {
        context: context.into(),
        position,
        simile: simile.into(),
    }
}

#[test]
fn one_window_per_record() {
    let records = [rec("abcdefghijklmnopqrstuvwxyz", 13, "s1"), rec("xyz", 1, "s2"), rec("hello", 5, "s3")];
    let idx = index_similes(&records).unwrap();
    assert_eq!(idx.len(), 3);
    assert_eq!(idx.window(0), "fghijklmnopqrstu");
    assert_eq!(idx.window(1), "xyz");
    assert_eq!(idx.simile(2), "s3");
    assert!(index_similes(&[]).is_err());
}

#[test]
fn retrieval_finds_the_own_window_first() {
    let records = generate_synthetic(80, 4);
    let idx = index_similes(&records).unwrap();
    for (i, r) in records.iter().enumerate().take(20) {
        let hits = bm25_retrieve(&idx, &r.context, r.position, 5).unwrap();
        assert!(hits.len() <= 5);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        let top = hits[0].score;
        let own = hits.iter().find(|h| idx.window(h.record) == context_window(&r.context, r.position));
        assert!(own.is_some_and(|h| h.score == top), "record {i}");
    }
}

fn matcher_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        hidden_size: 32,
        embed_size: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        attention_heads: 2,
        ffn_size: 64,
        max_context_len: 32,
        dropout_rate: 0.0,
        precision: Precision::F32,
        ..ModelConfig::toy(vocab)
    }
}

#[test]
fn matcher_learns_the_synthetic_pairing() {
    let records = generate_synthetic(64, 5);
    let vocab = build_vocab(&records).unwrap();
    let tc = MatchTrainConfig {
        steps: 400,
        ..MatchTrainConfig::default()
    };
    let m = match_rerank_train(&records, &vocab, matcher_config(vocab.len()), &tc, 5).unwrap();
    let negatives = sample_negatives(&records, 5, 99).unwrap();
    let mut wins = 0;
    let mut total = 0;
    for (r, negs) in records.iter().zip(&negatives) {
        let gold = m.score(&vocab, &r.context, &r.simile).unwrap();
        assert!(gold > 0.0 && gold < 1.0);
        for &j in negs {
            total += 1;
            if gold > m.score(&vocab, &r.context, &records[j].simile).unwrap() {
                wins += 1;
            }
        }
    }
    let rate = wins as f64 / total as f64;
    assert!(rate >= 0.95, "gold above negative in {rate:.3} of pairs");

    let cands: Vec<String> = ["like ice", "as a fox", "like moss"].map(String::from).to_vec();
    let a = match_rerank(&cands, &records[0].context, &m, &vocab).unwrap();
    assert_eq!(a, match_rerank(&cands, &records[0].context, &m, &vocab).unwrap());
    assert!(a.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(match_rerank(&[], &records[0].context, &m, &vocab).is_err());
}

#[test]
fn matcher_training_is_seeded() {
    let records = generate_synthetic(24, 6);
    let vocab = build_vocab(&records).unwrap();
    let tc = MatchTrainConfig {
        steps: 3,
        ..MatchTrainConfig::default()
    };
    let run = |seed| {
        match_rerank_train(&records, &vocab, matcher_config(vocab.len()), &tc, seed)
            .unwrap()
            .into_params()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn negatives_need_enough_distinct_similes() {
    let records = [rec("a", 0, "x"), rec("b", 0, "x"), rec("c", 0, "y")];
    assert!(sample_negatives(&records, 1, 0).is_ok());
    assert!(sample_negatives(&records, 2, 0).is_err());
    let negs = sample_negatives(&records, 1, 0).unwrap();
    for (r, n) in records.iter().zip(&negs) {
        assert_ne!(records[n[0]].simile, r.simile);
    }
}
