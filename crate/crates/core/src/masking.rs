//! Entity-aware corruption for masked language modelling.
//!
//! Entity placeholders are selected with probability `alpha`, ordinary
//! subword positions with probability `beta`. Selected positions become
//! `[MASK]`, a random non-reserved token, or stay unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenSequence, MASK_ID, N_SPECIAL};

/// Target value for positions that carry no reconstruction loss.
pub const IGNORE: i64 = -100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub replace_mask_p: f64,
    pub replace_random_p: f64,
    pub keep_p: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self::emlm(0.5, 0.1)
    }
}

impl MaskingConfig {
    pub fn emlm(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, replace_mask_p: 0.8, replace_random_p: 0.1, keep_p: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("replace_mask_p", self.replace_mask_p),
            ("replace_random_p", self.replace_random_p),
            ("keep_p", self.keep_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let total = self.replace_mask_p + self.replace_random_p + self.keep_p;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("replacement probabilities sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Standard MLM: the same 15% rate for entity and ordinary positions.
pub fn standard_mlm_config() -> MaskingConfig {
    MaskingConfig::emlm(0.15, 0.15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Replacement {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub input_ids: Vec<usize>,
    /// Original id at selected positions, [`IGNORE`] elsewhere.
    pub target_ids: Vec<i64>,
    pub selected: Vec<bool>,
    pub replacement: Vec<Option<Replacement>>,
}

impl MaskedExample {
    pub fn n_targets(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Per-example RNG: one ChaCha stream per `(seed, index)`.
pub fn example_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn mask_sequence(seq: &TokenSequence, cfg: &MaskingConfig, vocab_size: usize, seed: u64, index: u64) -> MaskedExample {
    let mut rng = example_rng(seed, index);
    let n = seq.len();
    let mut input_ids = seq.ids.clone();
    let mut target_ids = vec![IGNORE; n];
    let mut selected = vec![false; n];
    let mut replacement = vec![None; n];
    let can_draw_random = vocab_size > N_SPECIAL;
    for i in 0..n {
        let p = if seq.is_entity[i] {
            cfg.alpha
        } else if seq.is_special[i] {
            continue;
        } else {
            cfg.beta
        };
        if rng.random::<f64>() >= p {
            continue;
        }
        selected[i] = true;
        target_ids[i] = seq.ids[i] as i64;
        let u = rng.random::<f64>();
        let r = if u < cfg.replace_mask_p {
            Replacement::Mask
        } else if u < cfg.replace_mask_p + cfg.replace_random_p {
            Replacement::Random
        } else {
            Replacement::Keep
        };
        match r {
            Replacement::Mask => input_ids[i] = MASK_ID,
            Replacement::Random if can_draw_random => input_ids[i] = rng.random_range(N_SPECIAL..vocab_size),
            _ => {}
        }
        replacement[i] = Some(r);
    }
    MaskedExample { input_ids, target_ids, selected, replacement }
}

/// Masks a batch; example `k` uses stream `first_index + k`.
pub fn mask_batch(seqs: &[TokenSequence], cfg: &MaskingConfig, vocab_size: usize, seed: u64, first_index: u64) -> Vec<MaskedExample> {
    crate::parallel::map(seqs, |k, s| mask_sequence(s, cfg, vocab_size, seed, first_index + k as u64))
}

/// Selection and replacement counts, for auditing a masking run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MaskingStats {
    pub entity_positions: u64,
    pub entity_selected: u64,
    pub subword_positions: u64,
    pub subword_selected: u64,
    pub special_selected: u64,
    pub n_mask: u64,
    pub n_random: u64,
    pub n_keep: u64,
}

impl MaskingStats {
    pub fn add(&mut self, seq: &TokenSequence, ex: &MaskedExample) {
        for i in 0..seq.len() {
            let sel = ex.selected[i] as u64;
            if seq.is_entity[i] {
                self.entity_positions += 1;
                self.entity_selected += sel;
            } else if seq.is_special[i] {
                self.special_selected += sel;
            } else {
                self.subword_positions += 1;
                self.subword_selected += sel;
            }
            match ex.replacement[i] {
                Some(Replacement::Mask) => self.n_mask += 1,
                Some(Replacement::Random) => self.n_random += 1,
                Some(Replacement::Keep) => self.n_keep += 1,
                None => {}
            }
        }
    }

    pub fn merge(&mut self, o: &MaskingStats) {
        self.entity_positions += o.entity_positions;
        self.entity_selected += o.entity_selected;
        self.subword_positions += o.subword_positions;
        self.subword_selected += o.subword_selected;
        self.special_selected += o.special_selected;
        self.n_mask += o.n_mask;
        self.n_random += o.n_random;
        self.n_keep += o.n_keep;
    }

    pub fn entity_rate(&self) -> f64 {
        self.entity_selected as f64 / self.entity_positions.max(1) as f64
    }

    pub fn subword_rate(&self) -> f64 {
        self.subword_selected as f64 / self.subword_positions.max(1) as f64
    }

    /// Fractions of selections replaced by `[MASK]`, random tokens, or kept.
    pub fn replacement_split(&self) -> (f64, f64, f64) {
        let total = (self.n_mask + self.n_random + self.n_keep).max(1) as f64;
        (self.n_mask as f64 / total, self.n_random as f64 / total, self.n_keep as f64 / total)
    }

    pub fn to_csv(&self) -> String {
        let (m, r, k) = self.replacement_split();
        format!(
            "metric,value\nentity_positions,{}\nentity_selected,{}\nentity_rate,{}\nsubword_positions,{}\nsubword_selected,{}\nsubword_rate,{}\nspecial_selected,{}\nmask_share,{m}\nrandom_share,{r}\nkeep_share,{k}\n",
            self.entity_positions,
            self.entity_selected,
            self.entity_rate(),
            self.subword_positions,
            self.subword_selected,
            self.subword_rate(),
            self.special_selected,
        )
    }
}

/// Masks `draws` copies of `seq` under streams `0..draws` and tallies the result.
pub fn monte_carlo_stats(seq: &TokenSequence, cfg: &MaskingConfig, vocab_size: usize, seed: u64, draws: u64) -> MaskingStats {
    const CHUNK: u64 = 1000;
    let chunks = draws.div_ceil(CHUNK) as usize;
    let partial = crate::parallel::map_range(chunks, |c| {
        let mut s = MaskingStats::default();
        let from = c as u64 * CHUNK;
        for idx in from..(from + CHUNK).min(draws) {
            s.add(seq, &mask_sequence(seq, cfg, vocab_size, seed, idx));
        }
        s
    });
    let mut total = MaskingStats::default();
    for p in &partial {
        total.merge(p);
    }
    total
}
