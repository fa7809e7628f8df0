#![allow(dead_code)]

use crisis_hmc::encoder::{EncoderConfig, EncoderParams};
use crisis_hmc::heads::{HeadConfig, HeadKind, HeadParams};
use crisis_hmc::masking::{MaskedExample, IGNORE};
use crisis_hmc::model::{ClsExample, Model};
use crisis_hmc::nn::ParamSet;
use crisis_hmc::ontology::LabelOntology;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Entries with both gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-4;

pub fn toy_config() -> EncoderConfig {
    EncoderConfig { n_layers: 1, n_heads: 2, d_model: 16, d_ff: 32, max_len: 10, vocab_size: 30, dropout: 0.0 }
}

pub fn toy_model(kind: Option<HeadKind>, seed: u64) -> Model<f64> {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = EncoderParams::<f64>::init(&cfg, &mut rng);
    // Larger weights than the 0.02 init so every path carries a visible gradient.
    for (_, t) in enc.tensors_mut() {
        for x in t.data.iter_mut() {
            *x *= 10.0;
        }
    }
    for l in &mut enc.layers {
        for (g, b) in l.ln1_gain.data.iter_mut().zip(l.ln1_bias.data.iter_mut()) {
            *g = 1.0 + *g * 0.05;
            *b *= 0.5;
        }
    }
    let head = kind.map(|k| {
        let mut h = HeadParams::<f64>::init(HeadConfig::new(k), cfg.d_model, &LabelOntology::trecis(), &mut rng);
        for (_, t) in h.tensors_mut() {
            for x in t.data.iter_mut() {
                *x *= 20.0;
            }
        }
        h
    });
    Model::new(cfg, enc, head)
}

pub fn toy_mlm_batch() -> Vec<MaskedExample> {
    let a = vec![2, 4, 17, 8, 20, 3, 0, 0];
    let b = vec![2, 16, 25, 4, 4, 11, 29, 3];
    let ta = vec![IGNORE, 18, IGNORE, 8, IGNORE, IGNORE, IGNORE, IGNORE];
    let tb = vec![IGNORE, 16, IGNORE, 21, 22, IGNORE, IGNORE, IGNORE];
    [(a, ta), (b, tb)]
        .into_iter()
        .map(|(input_ids, target_ids)| MaskedExample {
            selected: target_ids.iter().map(|&t| t != IGNORE).collect(),
            replacement: vec![None; input_ids.len()],
            input_ids,
            target_ids,
        })
        .collect()
}

pub fn toy_cls_batch() -> Vec<ClsExample> {
    let o = LabelOntology::trecis();
    let (u1, l1) = o.indicators(["GoodsServices", "News"]).unwrap();
    let (u2, l2) = o.indicators(["MovePeople"]).unwrap();
    vec![
        ClsExample { ids: vec![2, 17, 8, 20, 3, 0, 0], upper: u1, lower: l1 },
        ClsExample { ids: vec![2, 16, 25, 11, 29, 21, 3], upper: u2, lower: l2 },
    ]
}

/// Largest relative discrepancy between `analytic` and central differences of
/// `loss` over every parameter entry of `model`.
pub fn max_rel_error(model: &Model<f64>, analytic: &Model<f64>, loss: impl Fn(&Model<f64>) -> f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let names: Vec<(String, usize)> = model.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let grads = analytic.tensors();
    let mut probe = model.clone();
    for (k, (name, len)) in names.iter().enumerate() {
        for i in 0..*len {
            let orig = probe.tensors()[k].1.data[i];
            let mut central = |h: f64| {
                probe.tensors_mut()[k].1.data[i] = orig + h;
                let up = loss(&probe);
                probe.tensors_mut()[k].1.data[i] = orig - h;
                let down = loss(&probe);
                probe.tensors_mut()[k].1.data[i] = orig;
                (up - down) / (2.0 * h)
            };
            // Richardson extrapolation of two central differences.
            let (d1, d2) = (central(FD_STEP), central(FD_STEP / 2.0));
            let numeric = (4.0 * d2 - d1) / 3.0;
            let a = grads[k].1.data[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}] analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}

pub fn mlm_grad_error(seed: u64) -> (f64, String) {
    let model = toy_model(None, seed);
    let batch = toy_mlm_batch();
    let g = model.mlm_batch(&batch, None).unwrap();
    let analytic = Model::new(model.config.clone(), g.grads, None);
    max_rel_error(&model, &analytic, |m| m.mlm_eval(&batch).unwrap())
}

pub fn cls_grad_error(kind: HeadKind, lambda: f64, seed: u64) -> (f64, String) {
    cls_grad_error_with(kind, false, lambda, seed)
}

pub fn cls_grad_error_with(kind: HeadKind, gating: bool, lambda: f64, seed: u64) -> (f64, String) {
    let mut model = toy_model(Some(kind), seed);
    model.head.as_mut().unwrap().config.lcpn_gating = gating;
    let batch = toy_cls_batch();
    let g = model.cls_batch(&batch, lambda, None, true).unwrap();
    max_rel_error(&model, &g.grads, |m| m.cls_loss(&batch, lambda).unwrap())
}

/// 64 sentences of 8 to 12 pseudo-words drawn from a small lexicon.
pub fn memorization_corpus() -> Vec<String> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let syllables = ["ka", "lo", "mi", "ru", "te", "sa", "no", "vi", "pe", "du", "ra", "zo"];
    let lexicon: Vec<String> = (0..120)
        .map(|_| (0..rng.random_range(2..4)).map(|_| syllables[rng.random_range(0..syllables.len())]).collect())
        .collect();
    (0..64)
        .map(|_| {
            let n = rng.random_range(8..13);
            (0..n).map(|_| lexicon[rng.random_range(0..lexicon.len())].as_str()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Top-1 recovery rate of masked positions over `draws` fresh maskings per sequence.
pub fn masked_recovery(
    model: &Model<f32>,
    seqs: &[crisis_hmc::tokenizer::TokenSequence],
    masking: &crisis_hmc::masking::MaskingConfig,
    seed: u64,
    draws: u64,
) -> f64 {
    use crisis_hmc::encoder::trimmed_len;
    let (mut hit, mut total) = (0usize, 0usize);
    for (k, s) in seqs.iter().enumerate() {
        for d in 0..draws {
            let ex = crisis_hmc::masking::mask_sequence(s, masking, model.config.vocab_size, seed, k as u64 * draws + d);
            let len = trimmed_len(&ex.input_ids);
            let out = model.encoder.forward(&model.config, &ex.input_ids[..len], &vec![true; len]).unwrap();
            let dm = model.config.d_model;
            for p in 0..len {
                if ex.target_ids[p] == IGNORE {
                    continue;
                }
                let logits = model.encoder.mlm_logits(&out.hidden[p * dm..(p + 1) * dm]);
                let arg = (0..logits.len()).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
                hit += (arg as i64 == ex.target_ids[p]) as usize;
                total += 1;
            }
        }
    }
    hit as f64 / total.max(1) as f64
}

/// TF-IDF features and per-label indicators of the default synthetic corpus
/// (spurious correlation 0.9).
pub fn synthetic_baseline_data(ngram_max: usize) -> (Vec<crisis_hmc::baseline::SparseDoc>, usize, Vec<Vec<bool>>, Vec<String>) {
    use crisis_hmc::baseline::{FeatureSpace, TfidfConfig};
    let o = LabelOntology::trecis();
    let spec = crisis_hmc::config::PipelineConfig::default().synthetic_spec();
    let corpus = crisis_hmc::synth::generate_synthetic(&spec, &o).unwrap();
    let texts: Vec<&str> = corpus.tweets.iter().map(|t| t.text.as_str()).collect();
    let space = FeatureSpace::fit(&texts, &TfidfConfig { ngram_max, ..Default::default() }).unwrap();
    let docs = space.transform_all(&texts);
    let labels = o.lower_labels().to_vec();
    let ind = corpus.tweets.iter().map(|t| labels.iter().map(|l| t.lower_labels().contains(l)).collect()).collect();
    (docs, space.len(), ind, labels)
}
