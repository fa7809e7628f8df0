//! Sequential vs rayon execution of the data-parallel hot paths.
//! On a single core the two should be close; the gap shows pool overhead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crisis_hmc::baseline::{train_ovr_logreg, FeatureSpace, LogRegConfig, TfidfConfig};
use crisis_hmc::config::PipelineConfig;
use crisis_hmc::encoder::{EncoderConfig, EncoderParams};
use crisis_hmc::masking::{mask_batch, monte_carlo_stats, MaskingConfig};
use crisis_hmc::model::Model;
use crisis_hmc::ner::annotate_all;
use crisis_hmc::ontology::LabelOntology;
use crisis_hmc::parallel::set_sequential;
use crisis_hmc::synth::{generate_synthetic, SyntheticCorpus};
use crisis_hmc::tokenizer::train_vocab;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, bool); 2] = [("sequential", true), ("parallel", false)];

fn corpus() -> SyntheticCorpus {
    let spec = PipelineConfig::default().synthetic_spec();
    generate_synthetic(&spec, &LabelOntology::trecis()).unwrap()
}

fn benches(c: &mut Criterion) {
    let synth = corpus();
    let texts: Vec<&str> = synth.tweets.iter().map(|t| t.text.as_str()).collect();
    let gazetteer = synth.gazetteer();
    let vocab = train_vocab(&texts, 2000, true).unwrap();
    let seqs: Vec<_> = synth.tweets.iter().map(|t| vocab.encode(&t.text, &t.entities, 64)).collect();
    let masking = MaskingConfig::default();
    let cfg = EncoderConfig::desk(vocab.len());
    let model: Model<f32> = Model::new(cfg.clone(), EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)), None);
    let batch = mask_batch(&seqs[..32], &masking, vocab.len(), 1, 0);

    let space = FeatureSpace::fit(&texts, &TfidfConfig::default()).unwrap();
    let docs = space.transform_all(&texts);
    let labels: Vec<String> = LabelOntology::trecis().lower_labels()[..6].to_vec();
    let ind: Vec<Vec<bool>> = synth.tweets.iter().map(|t| labels.iter().map(|l| t.lower_labels().contains(l)).collect()).collect();

    let mut g = c.benchmark_group("parallel");
    g.sample_size(10);
    for (mode, seq) in MODES {
        set_sequential(seq);
        g.bench_function(BenchmarkId::new("mlm_batch_grad", mode), |b| b.iter(|| model.mlm_batch(&batch, Some((1, 0))).unwrap()));
        g.bench_function(BenchmarkId::new("annotate", mode), |b| b.iter(|| annotate_all(&texts, &gazetteer)));
        g.bench_function(BenchmarkId::new("masking_monte_carlo", mode), |b| {
            b.iter(|| monte_carlo_stats(&seqs[0], &masking, vocab.len(), 3, 10_000))
        });
        g.bench_function(BenchmarkId::new("ovr_logreg", mode), |b| {
            b.iter(|| train_ovr_logreg(&docs, space.len(), &ind, &labels, &LogRegConfig::default()).unwrap())
        });
    }
    set_sequential(false);
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
