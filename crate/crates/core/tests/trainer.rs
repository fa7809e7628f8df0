mod common;

use std::collections::BTreeSet;

use crisis_hmc::encoder::{EncoderConfig, EncoderParams};
use crisis_hmc::heads::{HeadConfig, HeadKind, HeadParams};
use crisis_hmc::masking::standard_mlm_config;
use crisis_hmc::model::{ClsExample, Model};
use crisis_hmc::ontology::LabelOntology;
use crisis_hmc::tokenizer::{train_vocab, TokenSequence, Vocab};
use crisis_hmc::trainer::{cls_examples, finetune, lower_macro_f1, pretrain, Checkpoint, TrainConfig};
use crisis_hmc::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Keyword corpus: each of `k` lower labels has its own cue word, plus noise.
fn keyword_corpus(k: usize, n: usize) -> (Vocab, Vec<TokenSequence>, Vec<ClsExample>) {
    let o = LabelOntology::trecis();
    let labs = o.lower_labels();
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        texts.push(format!("some filler cue{} text here noise{}", i % k, (i / k) % 7));
        labels.push(BTreeSet::from([labs[i % k].clone()]));
    }
    let vocab = train_vocab(&texts, 200, true).unwrap();
    let seqs: Vec<TokenSequence> = texts.iter().map(|t| vocab.encode(t, &[], 16)).collect();
    let ex = cls_examples(&seqs, &labels, &o).unwrap();
    (vocab, seqs, ex)
}

fn small_config(vocab: &Vocab) -> EncoderConfig {
    EncoderConfig { max_len: 16, dropout: 0.0, ..EncoderConfig::desk(vocab.len()) }
}

fn start(cfg: &EncoderConfig, head: Option<HeadKind>) -> Checkpoint {
    let enc = EncoderParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(7));
    let head = head.map(|k| HeadParams::init(HeadConfig::new(k), cfg.d_model, &LabelOntology::trecis(), &mut ChaCha8Rng::seed_from_u64(8)));
    Checkpoint::new(Model::new(cfg.clone(), enc, head), 0, None)
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (vocab, seqs, ex) = keyword_corpus(4, 64);
    let cfg = small_config(&vocab);
    let init = start(&cfg, None);
    let tc = TrainConfig { lr: 0.0, epochs: 2, eval_interval: 2, ..TrainConfig::pretrain_default() };
    let out = pretrain(&seqs, &seqs[..8], &standard_mlm_config(), &cfg, &tc, Some(init.model.encoder.clone())).unwrap();
    assert_eq!(out.last.model.encoder, init.model.encoder);
    let ft = finetune(&start(&cfg, Some(HeadKind::Lcl)), &HeadConfig::new(HeadKind::Lcl), &LabelOntology::trecis(), &ex, &ex[..8], &tc, 0.5).unwrap();
    assert_eq!(ft.last.model, start(&cfg, Some(HeadKind::Lcl)).model);
}

#[test]
fn pretraining_is_byte_reproducible() {
    let (vocab, seqs, _) = keyword_corpus(4, 64);
    let cfg = EncoderConfig { dropout: 0.1, ..small_config(&vocab) };
    let tc = TrainConfig { lr: 1e-3, epochs: 3, eval_interval: 2, ..TrainConfig::pretrain_default() };
    let run = || pretrain(&seqs, &seqs[..8], &standard_mlm_config(), &cfg, &tc, None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    assert_eq!(a.last.to_bytes().unwrap(), b.last.to_bytes().unwrap());
    assert_eq!(a.trace, b.trace);
}

#[test]
fn pretraining_selects_lowest_dev_loss() {
    let (vocab, seqs, _) = keyword_corpus(4, 64);
    let cfg = small_config(&vocab);
    let tc = TrainConfig { lr: 1e-3, epochs: 4, eval_interval: 1, ..TrainConfig::pretrain_default() };
    let out = pretrain(&seqs, &seqs[..8], &standard_mlm_config(), &cfg, &tc, None).unwrap();
    let best = out.trace.rows.iter().min_by(|a, b| a.metric.total_cmp(&b.metric)).unwrap();
    let first_best = out.trace.rows.iter().find(|r| r.metric == best.metric).unwrap();
    assert_eq!(out.trace.selected_step, first_best.step);
    assert_eq!(out.best.step, first_best.step as u64);
    assert_eq!(out.best.metric.as_ref().unwrap().value, first_best.metric);
}

#[test]
fn lambda_zero_leaves_lcl_upper_layer_alone() {
    let (vocab, _, ex) = keyword_corpus(4, 64);
    let cfg = small_config(&vocab);
    let s = start(&cfg, Some(HeadKind::Lcl));
    let tc = TrainConfig { lr: 1e-3, lambda: 0.0, weight_decay: 0.0, epochs: 2, eval_interval: 2, ..Default::default() };
    let out = finetune(&s, &HeadConfig::new(HeadKind::Lcl), &LabelOntology::trecis(), &ex, &ex[..8], &tc, 0.5).unwrap();
    let (before, after) = (s.model.head.as_ref().unwrap(), out.last.model.head.as_ref().unwrap());
    assert_eq!(before.upper, after.upper);
    assert_ne!(before.lower, after.lower);
}

#[test]
fn frozen_encoder_is_bit_identical() {
    let (vocab, _, ex) = keyword_corpus(4, 64);
    let cfg = EncoderConfig { dropout: 0.1, ..small_config(&vocab) };
    let s = start(&cfg, None);
    let tc = TrainConfig { lr: 1e-3, freeze_encoder: true, epochs: 2, eval_interval: 2, ..Default::default() };
    let out = finetune(&s, &HeadConfig::new(HeadKind::HmcnLocal), &LabelOntology::trecis(), &ex, &ex[..8], &tc, 0.5).unwrap();
    assert_eq!(out.last.model.encoder, s.model.encoder);
    assert_ne!(out.last.model.head, None);
}

#[test]
fn separable_corpus_is_learned() {
    let (vocab, _, ex) = keyword_corpus(6, 360);
    let cfg = small_config(&vocab);
    let o = LabelOntology::trecis();
    let tc = TrainConfig { lr: 1e-3, epochs: 20, eval_interval: 25, ..Default::default() };
    let out = finetune(&start(&cfg, None), &HeadConfig::new(HeadKind::SingleTask), &o, &ex[..300], &ex[300..], &tc, 0.5).unwrap();
    // Labels never present score F1 = 0 in the macro, so measure over the six in use.
    let f1 = lower_macro_f1(&out.best.model, &ex[300..], &o, 0.5).unwrap() * 25.0 / 6.0;
    assert!(f1 >= 0.95, "dev lower macro-F1 over used labels {f1}; trace {:?}", out.trace.rows);
}

#[test]
fn divergence_returns_last_good_checkpoint() {
    let (vocab, seqs, _) = keyword_corpus(4, 64);
    let cfg = small_config(&vocab);
    let tc = TrainConfig { lr: 1e30, epochs: 3, eval_interval: 1, ..TrainConfig::pretrain_default() };
    match pretrain(&seqs, &seqs[..8], &standard_mlm_config(), &cfg, &tc, None) {
        Err(Error::Diverged { step, last_good }) => {
            assert!(step >= 1);
            assert!(last_good.step < step as u64);
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.trace)),
    }
}
