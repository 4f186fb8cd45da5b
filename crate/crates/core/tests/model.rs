use simile_core::locate_gen::{joint_loss, SimileSample};
use simile_core::nn::{select_insertion, LocateGen, ModelConfig, Side};
use simile_core::vocab::SPECIALS;
use simile_core::Precision;

fn small(vocab: usize) -> ModelConfig {
    ModelConfig {
        hidden_size: 16,
        embed_size: 16,
        encoder_layers: 2,
        decoder_layers: 2,
        attention_heads: 2,
        ffn_size: 32,
        max_context_len: 16,
        max_simile_len: 8,
        precision: Precision::F64,
        ..ModelConfig::toy(vocab)
    }
}

fn model(seed: u64) -> LocateGen<f64> {
    LocateGen::new(small(24), seed).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn shapes_and_normalisation() {
    let m = model(1);
    let ctx = [SPECIALS.cls, 7, 8, 9, 10];
    let enc = m.encode(&ctx).unwrap();
    assert_eq!(enc.hidden.shape(), &[5, 16]);
    let p = m.pointer_distribution(&enc).unwrap();
    assert_eq!(p.len(), 5);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let bias = m.insertion_bias(&enc, 2).unwrap();
    assert_eq!(bias.numel(), 16);
    let logits = m.decoder_logits(&enc, &[SPECIALS.bos, 7, 8], &bias).unwrap();
    assert_eq!(logits.shape(), &[3, 24]);
    assert_eq!(m.embed(&[7, 8], 0, Side::Decoder).unwrap().shape(), &[2, 16]);
}

#[test]
fn input_contracts() {
    let m = model(1);
    assert!(m.encode(&[7, 8]).is_err());
    assert!(m.encode(&[SPECIALS.cls, 99]).is_err());
    assert!(m.encode(&[SPECIALS.cls; 17]).is_err());
    let enc = m.encode(&[SPECIALS.cls, 7]).unwrap();
    assert!(m.insertion_bias(&enc, 2).is_err());
    let bias = m.insertion_bias(&enc, 1).unwrap();
    assert!(m.decoder_logits(&enc, &[7], &bias).is_err());
    assert!(m.decoder_logits(&enc, &[SPECIALS.bos; 9], &bias).is_err());
}

#[test]
fn padding_is_invisible() {
    let m = model(2);
    let ctx = [SPECIALS.cls, 7, 8, 9];
    let padded = [SPECIALS.cls, 7, 8, 9, SPECIALS.pad, SPECIALS.pad];
    let a = m.encode(&ctx).unwrap();
    let b = m.encode(&padded).unwrap();
    assert!(close(a.hidden.data(), &b.hidden.data()[..4 * 16], 1e-12));
    let pa = m.pointer_distribution(&a).unwrap();
    let pb = m.pointer_distribution(&b).unwrap();
    assert!(close(&pa, &pb[..4], 1e-12));
    assert_eq!(&pb[4..], &[0.0, 0.0]);
    assert!(m.insertion_bias(&b, 4).is_err());
    let la = m.decoder_logits(&a, &[SPECIALS.bos, 9], &m.insertion_bias(&a, 1).unwrap()).unwrap();
    let lb = m.decoder_logits(&b, &[SPECIALS.bos, 9], &m.insertion_bias(&b, 1).unwrap()).unwrap();
    assert!(close(la.data(), lb.data(), 1e-12));
}

#[test]
fn zero_pointer_weights_give_uniform_slots() {
    let mut m = model(3);
    let w = m.pointer_weight();
    m.params_mut().get_mut(w).data_mut().fill(0.0);
    let enc = m.encode(&[SPECIALS.cls, 7, 8, 9]).unwrap();
    let p = m.pointer_distribution(&enc).unwrap();
    assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-12));
    assert_eq!(select_insertion(&p), 0);
}

#[test]
fn decoder_is_causal() {
    let m = model(4);
    let enc = m.encode(&[SPECIALS.cls, 7, 8, 9]).unwrap();
    let bias = m.insertion_bias(&enc, 3).unwrap();
    let long = m.decoder_logits(&enc, &[SPECIALS.bos, 10, 11, 12], &bias).unwrap();
    let other = m.decoder_logits(&enc, &[SPECIALS.bos, 10, 20, 21], &bias).unwrap();
    let short = m.decoder_logits(&enc, &[SPECIALS.bos, 10], &bias).unwrap();
    assert!(close(&long.data()[..2 * 24], short.data(), 1e-12));
    assert!(close(&long.data()[..2 * 24], &other.data()[..2 * 24], 1e-12));
    assert!(!close(&long.data()[2 * 24..], &other.data()[2 * 24..], 1e-9));
    let step = m.decode_step(&enc, &[SPECIALS.bos, 10], &bias).unwrap();
    assert!(close(&step, short.row(1), 0.0));
}

#[test]
fn insertion_bias_conditions_every_step() {
    let m = model(5);
    let enc = m.encode(&[SPECIALS.cls, 7, 8, 9, 10]).unwrap();
    let prev = [SPECIALS.bos, 11, 12];
    let a = m.decoder_logits(&enc, &prev, &m.insertion_bias(&enc, 1).unwrap()).unwrap();
    let b = m.decoder_logits(&enc, &prev, &m.insertion_bias(&enc, 4).unwrap()).unwrap();
    for t in 0..3 {
        assert!(!close(a.row(t), b.row(t), 1e-9), "row {t}");
    }

    let mut cfg = small(24);
    cfg.use_insertion_bias = false;
    let ablated = LocateGen::<f64>::new(cfg, 5).unwrap();
    let enc = ablated.encode(&[SPECIALS.cls, 7, 8, 9, 10]).unwrap();
    let base = ablated.decoder_logits(&enc, &prev, &ablated.insertion_bias(&enc, 0).unwrap()).unwrap();
    for p in 1..=4 {
        let bias = ablated.insertion_bias(&enc, p).unwrap();
        assert!(bias.data().iter().all(|&x| x == 0.0));
        assert_eq!(ablated.decoder_logits(&enc, &prev, &bias).unwrap(), base);
    }
}

#[test]
fn output_projection_is_the_word_table() {
    let mut m = model(6);
    let enc = m.encode(&[SPECIALS.cls, 7, 8]).unwrap();
    let bias = m.insertion_bias(&enc, 1).unwrap();
    let before = m.decoder_logits(&enc, &[SPECIALS.bos], &bias).unwrap();
    let w = m.word_embedding();
    let row: Vec<f64> = m.params().get(w).row(23).to_vec();
    m.params_mut().get_mut(w).data_mut()[23 * 16..24 * 16]
        .iter_mut()
        .zip(&row)
        .for_each(|(x, r)| *x = 2.0 * r);
    let after = m.decoder_logits(&enc, &[SPECIALS.bos], &bias).unwrap();
    // token 23 appears nowhere in the inputs, so only its own logit moves, and it doubles
    for v in 0..24 {
        if v == 23 {
            assert!((after.data()[v] - 2.0 * before.data()[v]).abs() < 1e-12);
        } else {
            assert_eq!(after.data()[v], before.data()[v]);
        }
    }
    assert!(!m.params().iter().any(|(_, n, _)| n.contains("output")));
}

#[test]
fn loss_anchors() {
    let mut m = model(7);
    let ptr = m.pointer_weight();
    m.params_mut().get_mut(ptr).data_mut().fill(0.0);
    let word = m.word_embedding();
    m.params_mut().get_mut(word).data_mut().fill(0.0);
    let mut cfg = m.config().clone();
    cfg.label_smoothing = 0.0;
    let m = LocateGen::from_params(cfg, m.into_params()).unwrap();
    let sample = SimileSample::new(vec![SPECIALS.cls, 7, 8, 9], 2, vec![SPECIALS.bos, 10, SPECIALS.eos]).unwrap();
    let l = joint_loss(&m, std::slice::from_ref(&sample)).unwrap();
    assert!((l.positioning - 4f64.ln()).abs() < 1e-12);
    assert!((l.generation - 24f64.ln()).abs() < 1e-12);
    assert_eq!(l.total, l.positioning + l.generation);
    assert!(joint_loss(&m, &[]).is_err());
}

#[test]
fn same_seed_same_weights() {
    assert_eq!(model(9).params(), model(9).params());
    assert_ne!(model(9).params(), model(10).params());
}
