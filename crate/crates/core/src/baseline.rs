//! TF-IDF features with one-vs-rest L2-regularized logistic regression.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::ontology::LabelOntology;
use crate::tokenizer::pre_tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub max_features: usize,
    pub lowercase: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self { ngram_min: 1, ngram_max: 2, max_features: 20_000, lowercase: true }
    }
}

impl TfidfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::Config(format!("invalid n-gram range ({}, {})", self.ngram_min, self.ngram_max)));
        }
        if self.max_features == 0 {
            return Err(Error::Config("max_features must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse, L2-normalized document vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseDoc {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseDoc {
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| w[i as usize] * v).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub config: TfidfConfig,
    pub n_docs: usize,
    /// Terms in index order (lexicographic).
    pub terms: Vec<String>,
    pub idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

/// Word n-grams of `text` (punctuation dropped), joined with single spaces.
pub fn ngrams(text: &str, cfg: &TfidfConfig) -> Vec<String> {
    let words: Vec<String> = pre_tokenize(text)
        .into_iter()
        .map(|(_, _, w)| if cfg.lowercase { w.to_lowercase() } else { w })
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .collect();
    let mut out = Vec::new();
    for n in cfg.ngram_min..=cfg.ngram_max {
        if n > words.len() {
            break;
        }
        for win in words.windows(n) {
            out.push(win.join(" "));
        }
    }
    out
}

/// Smoothed inverse document frequency.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

impl FeatureSpace {
    fn build_index(&mut self) {
        self.index = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| i as usize)
    }

    /// Keeps the `max_features` terms of highest document frequency (ties to
    /// the lexicographically smaller term).
    pub fn fit<S: AsRef<str>>(texts: &[S], cfg: &TfidfConfig) -> Result<Self> {
        cfg.validate()?;
        if texts.is_empty() {
            return Err(Error::Validation("cannot fit TF-IDF on an empty corpus".into()));
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        for t in texts {
            let uniq: BTreeSet<String> = ngrams(t.as_ref(), cfg).into_iter().collect();
            for g in uniq {
                *df.entry(g).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cfg.max_features);
        ranked.sort_by(|a, b| a.0.cmp(&b.0));
        let n = texts.len();
        let mut space = Self {
            config: cfg.clone(),
            n_docs: n,
            idf: ranked.iter().map(|(_, d)| idf(n, *d)).collect(),
            terms: ranked.into_iter().map(|(t, _)| t).collect(),
            index: HashMap::new(),
        };
        space.build_index();
        Ok(space)
    }

    /// Raw counts times idf, L2-normalized; unseen terms are dropped.
    pub fn transform(&self, text: &str) -> SparseDoc {
        let mut counts: HashMap<u32, f64> = HashMap::new();
        for g in ngrams(text, &self.config) {
            if let Some(&i) = self.index.get(&g) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut pairs: Vec<(u32, f64)> = counts.into_iter().map(|(i, c)| (i, c * self.idf[i as usize])).collect();
        pairs.sort_by_key(|p| p.0);
        let norm = pairs.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
        SparseDoc {
            indices: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| if norm > 0.0 { p.1 / norm } else { 0.0 }).collect(),
        }
    }

    pub fn transform_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<SparseDoc> {
        crate::parallel::map(texts, |_, t| self.transform(t.as_ref()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Seeds the random starting point; the optimum does not depend on it.
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { l2: 1e-3, tol: 1e-6, max_iter: 20_000, seed: 13 }
    }
}

/// Per-label fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub trained: bool,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

/// `(1/N) Σ log(1 + exp(-s_i z_i)) + (l2/2) |θ|²` for `θ = (w, b)`, with
/// `z_i = w·x_i + b` and `s_i = ±1`. The bias is regularized as well, which
/// keeps the problem strongly convex even on separable data.
pub fn objective_and_grad(docs: &[SparseDoc], y: &[bool], theta: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let dim = theta.len() - 1;
    let n = docs.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for (d, &yi) in docs.iter().zip(y) {
        let z = d.dot(&theta[..dim]) + theta[dim];
        let s = if yi { 1.0 } else { -1.0 };
        let m = s * z;
        // log(1 + exp(-m)), stable
        loss += if m > 0.0 { (-m).exp().ln_1p() } else { -m + m.exp().ln_1p() };
        let coef = -s * sigmoid(-m) / n;
        for (&i, &v) in d.indices.iter().zip(&d.values) {
            grad[i as usize] += coef * v;
        }
        grad[dim] += coef;
    }
    let reg: f64 = theta.iter().map(|t| t * t).sum();
    for (g, t) in grad.iter_mut().zip(theta) {
        *g += l2 * t;
    }
    (loss / n + 0.5 * l2 * reg, grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Accelerated gradient descent with backtracking and gradient-based restart.
fn minimize(docs: &[SparseDoc], y: &[bool], theta0: Vec<f64>, cfg: &LogRegConfig) -> (Vec<f64>, FitInfo) {
    let mut x = theta0;
    let (mut fx, mut gx) = objective_and_grad(docs, y, &x, cfg.l2);
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut step = 1.0;
    let mut it = 0;
    while it < cfg.max_iter && norm(&gx) >= cfg.tol {
        it += 1;
        let (fy, gy) = objective_and_grad(docs, y, &yk, cfg.l2);
        let gy2: f64 = gy.iter().map(|g| g * g).sum();
        // Backtracking on the sufficient-decrease condition at yk.
        let (xn, fxn, gxn) = loop {
            let cand: Vec<f64> = yk.iter().zip(&gy).map(|(a, g)| a - step * g).collect();
            let (fc, gc) = objective_and_grad(docs, y, &cand, cfg.l2);
            if fc <= fy - 0.5 * step * gy2 || step < 1e-12 {
                break (cand, fc, gc);
            }
            step *= 0.5;
        };
        let restart = fxn > fx;
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if restart {
            // Drop momentum and take a plain step from x.
            t = 1.0;
            yk = x.clone();
            continue;
        }
        yk = xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
        t = tn;
        x = xn;
        fx = fxn;
        gx = gxn;
        step *= 1.5;
    }
    let info = FitInfo { trained: true, iterations: it, objective: fx, grad_norm: norm(&gx) };
    (x, info)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvrModel {
    pub labels: Vec<String>,
    pub dim: usize,
    /// Per label `dim` weights followed by the bias.
    pub weights: Vec<Vec<f64>>,
    pub fits: Vec<FitInfo>,
    pub config: LogRegConfig,
}

/// One binary problem per label. Labels without both positive and negative
/// examples are skipped and always score 0.
pub fn train_ovr_logreg(
    docs: &[SparseDoc],
    dim: usize,
    indicators: &[Vec<bool>],
    labels: &[String],
    cfg: &LogRegConfig,
) -> Result<OvrModel> {
    if cfg.l2 <= 0.0 || cfg.tol <= 0.0 {
        return Err(Error::Config("l2 and tol must be positive".into()));
    }
    if indicators.len() != docs.len() {
        return Err(Error::Validation("one indicator row per document is required".into()));
    }
    for d in docs {
        if d.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { layer: 0, what: "non-finite feature value".into() });
        }
        if d.indices.iter().any(|&i| i as usize >= dim) {
            return Err(Error::Dimension("feature index beyond dimension".into()));
        }
    }
    let results = crate::parallel::map_range(labels.len(), |l| {
        let y: Vec<bool> = indicators.iter().map(|row| row[l]).collect();
        let pos = y.iter().filter(|&&b| b).count();
        if pos == 0 || pos == y.len() {
            log::warn!("label `{}` has {} positives out of {}; skipped", labels[l], pos, y.len());
            let info = FitInfo { trained: false, iterations: 0, objective: f64::NAN, grad_norm: 0.0 };
            return (vec![0.0; dim + 1], info);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(l as u64);
        let dist = Normal::new(0.0, 0.1).unwrap();
        let theta0 = (0..=dim).map(|_| dist.sample(&mut rng)).collect();
        minimize(docs, &y, theta0, cfg)
    });
    let (weights, fits) = results.into_iter().unzip();
    Ok(OvrModel { labels: labels.to_vec(), dim, weights, fits, config: *cfg })
}

impl OvrModel {
    pub fn scores(&self, doc: &SparseDoc) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.fits)
            .map(|(w, f)| if f.trained { sigmoid(doc.dot(&w[..self.dim]) + w[self.dim]) } else { 0.0 })
            .collect()
    }

    /// Lower labels at or above the threshold; upper labels by max over children.
    pub fn predict(&self, doc: &SparseDoc, threshold: f64, ontology: &LabelOntology) -> (BTreeSet<String>, BTreeSet<String>) {
        let s = self.scores(doc);
        let mut lower = BTreeSet::new();
        let mut upper = BTreeSet::new();
        for (l, name) in self.labels.iter().enumerate() {
            if s[l] >= threshold {
                lower.insert(name.clone());
                if let Ok(p) = ontology.parent_name(name) {
                    upper.insert(p.to_string());
                }
            }
        }
        (upper, lower)
    }
}

#[derive(Serialize, Deserialize)]
struct BaselineHeader {
    format: String,
    features: FeatureSpace,
    labels: Vec<String>,
    logreg: LogRegConfig,
    fits: Vec<FitInfo>,
    weights_file: String,
    weights_sha256: String,
}

/// Writes `<stem>.json` (feature space, fit summary) and `<stem>.bin`
/// (little-endian `f64` weights, label-major).
pub fn save_baseline(dir: &Path, stem: &str, space: &FeatureSpace, model: &OvrModel) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let bin: Vec<u8> = model.weights.iter().flatten().flat_map(|w| w.to_le_bytes()).collect();
    let bin_path = dir.join(format!("{stem}.bin"));
    std::fs::write(&bin_path, &bin)?;
    let header = BaselineHeader {
        format: "tfidf-ovr-v1".into(),
        features: space.clone(),
        labels: model.labels.clone(),
        logreg: model.config,
        fits: model.fits.clone(),
        weights_file: format!("{stem}.bin"),
        weights_sha256: hex(&Sha256::digest(&bin)),
    };
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, serde_json::to_string(&header)? + "\n")?;
    Ok((json_path, bin_path))
}

pub fn load_baseline(json_path: &Path) -> Result<(FeatureSpace, OvrModel)> {
    let header: BaselineHeader = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let bin = std::fs::read(dir.join(&header.weights_file))?;
    if hex(&Sha256::digest(&bin)) != header.weights_sha256 {
        return Err(Error::Checkpoint("baseline weights do not match their digest".into()));
    }
    let mut space = header.features;
    space.build_index();
    let dim = space.len();
    if bin.len() != 8 * header.labels.len() * (dim + 1) {
        return Err(Error::Checkpoint("baseline weight file has the wrong size".into()));
    }
    let flat: Vec<f64> = bin.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let model = OvrModel {
        weights: flat.chunks(dim + 1).map(<[f64]>::to_vec).collect(),
        labels: header.labels,
        dim,
        fits: header.fits,
        config: header.logreg,
    };
    Ok((space, model))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idf_values() {
        assert_eq!(idf(5, 5), 1.0);
        assert!((idf(2, 1) - 1.4055).abs() < 1e-4);
    }

    #[test]
    fn cap_ties_go_lexicographic() {
        let cfg = TfidfConfig { ngram_min: 1, ngram_max: 1, max_features: 1, lowercase: true };
        let s = FeatureSpace::fit(&["beta alpha"], &cfg).unwrap();
        assert_eq!(s.terms, ["alpha"]);
    }

    #[test]
    fn transform_cases() {
        let cfg = TfidfConfig { ngram_min: 1, ngram_max: 1, max_features: 10, lowercase: true };
        let s = FeatureSpace::fit(&["fire water", "fire water"], &cfg).unwrap();
        let d = s.transform("fire");
        assert_eq!(d.values, vec![1.0]);
        assert!(s.transform("").is_empty());
        let d = s.transform("fire fire water");
        let r = 5f64.sqrt();
        assert!((d.values[0] - 2.0 / r).abs() < 1e-12 && (d.values[1] - 1.0 / r).abs() < 1e-12);
    }

    #[test]
    fn separable_one_dimensional() {
        let docs: Vec<SparseDoc> = [1.0, 0.8, -0.7, -1.0]
            .iter()
            .map(|&v| SparseDoc { indices: vec![0], values: vec![v] })
            .collect();
        let y = vec![vec![true], vec![true], vec![false], vec![false]];
        let m = train_ovr_logreg(&docs, 1, &y, &["A".into()], &LogRegConfig { l2: 1e-4, ..Default::default() }).unwrap();
        assert!(m.fits[0].grad_norm < 1e-6);
        for (d, yi) in docs.iter().zip(&y) {
            assert_eq!(m.scores(d)[0] >= 0.5, yi[0]);
        }
    }

    #[test]
    fn single_class_label_skipped() {
        let docs = vec![SparseDoc { indices: vec![0], values: vec![1.0] }];
        let m = train_ovr_logreg(&docs, 1, &[vec![true]], &["A".into()], &LogRegConfig::default()).unwrap();
        assert!(!m.fits[0].trained);
        assert_eq!(m.scores(&docs[0]), vec![0.0]);
    }

    #[test]
    fn zero_weights_predict_everything() {
        let o = LabelOntology::trecis();
        let labels = o.lower_labels().to_vec();
        let m = OvrModel {
            dim: 1,
            weights: vec![vec![0.0, 0.0]; labels.len()],
            fits: vec![FitInfo { trained: true, iterations: 0, objective: 0.0, grad_norm: 0.0 }; labels.len()],
            labels,
            config: LogRegConfig::default(),
        };
        let (u, l) = m.predict(&SparseDoc::default(), 0.5, &o);
        assert_eq!((u.len(), l.len()), (4, 25));
    }
}
