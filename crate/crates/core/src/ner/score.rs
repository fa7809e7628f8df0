use std::collections::HashMap;

use serde::Serialize;

use super::{EntitySpan, EntityType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NerScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub n_pred: usize,
    pub n_gold: usize,
}

/// Micro-averaged precision/recall/F1 under exact (start, end, type) matching.
pub fn strict_ner_f1(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<NerScore> {
    if gold.len() != pred.len() {
        return Err(Error::Validation(format!(
            "{} gold documents but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let mut unmatched: HashMap<(usize, usize, EntityType), usize> = HashMap::new();
        for s in g {
            *unmatched.entry((s.start, s.end, s.entity_type)).or_default() += 1;
        }
        for s in p {
            if let Some(c) = unmatched.get_mut(&(s.start, s.end, s.entity_type)) {
                if *c > 0 {
                    *c -= 1;
                    tp += 1;
                }
            }
        }
        n_pred += p.len();
        n_gold += g.len();
    }
    let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(NerScore { precision, recall, f1, true_positives: tp, n_pred, n_gold })
}
