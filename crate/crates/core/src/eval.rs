//! Per-label and macro-averaged F1, per-event-type breakdowns, and report
//! files (JSON, CSV, SVG).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedTweet;
use crate::error::{Error, Result};
use crate::ontology::LabelOntology;

pub const SCHEMA: &str = "eval-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroF1 {
    pub per_label: Vec<LabelMetrics>,
    /// Labels entering the mean (all of them unless zero-support labels are skipped).
    pub n_averaged: usize,
    pub macro_f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Unweighted mean of per-label F1 over `labels`. Labels without gold support
/// count as F1 = 0 unless `skip_zero_support` drops them from the mean.
pub fn macro_f1<S: AsRef<str> + Sync>(
    pred: &[BTreeSet<String>],
    gold: &[BTreeSet<String>],
    labels: &[S],
    skip_zero_support: bool,
) -> Result<MacroF1> {
    if pred.len() != gold.len() {
        return Err(Error::Validation(format!("{} predictions for {} gold label sets", pred.len(), gold.len())));
    }
    let per_label: Vec<LabelMetrics> = crate::parallel::map(labels, |_, label| {
        let label = label.as_ref();
        let (mut tp, mut np, mut ng) = (0, 0, 0);
        for (p, g) in pred.iter().zip(gold) {
            let (ip, ig) = (p.contains(label), g.contains(label));
            np += ip as usize;
            ng += ig as usize;
            tp += (ip && ig) as usize;
        }
        let precision = ratio(tp, np);
        let recall = ratio(tp, ng);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        LabelMetrics { label: label.to_string(), support: ng, predicted: np, true_positives: tp, precision, recall, f1 }
    });
    let used: Vec<f64> = per_label.iter().filter(|m| !skip_zero_support || m.support > 0).map(|m| m.f1).collect();
    let macro_f1 = if used.is_empty() { 0.0 } else { used.iter().sum::<f64>() / used.len() as f64 };
    Ok(MacroF1 { n_averaged: used.len(), per_label, macro_f1 })
}

/// Macro F1 over a subset of an already computed per-label table.
pub fn restricted_macro<S: AsRef<str>>(table: &MacroF1, labels: &[S], skip_zero_support: bool) -> f64 {
    let f: Vec<f64> = labels
        .iter()
        .filter_map(|l| table.per_label.iter().find(|m| m.label == l.as_ref()))
        .filter(|m| !skip_zero_support || m.support > 0)
        .map(|m| m.f1)
        .collect();
    if f.is_empty() {
        0.0
    } else {
        f.iter().sum::<f64>() / f.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub event_id: String,
    pub n_tweets: usize,
    pub macro_f1_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTypeStat {
    pub event_type: String,
    pub n_events: usize,
    pub mean: f64,
    /// Population standard deviation across events.
    pub stddev: f64,
    pub events: Vec<EventScore>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventTypeReport {
    pub types: Vec<EventTypeStat>,
    pub notices: Vec<String>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Lower-level macro F1 per event, aggregated per event type. Types listed in
/// `expected_types` but absent from the documents are reported as notices.
#[allow(clippy::too_many_arguments)]
pub fn per_event_type_report<S: AsRef<str> + Sync>(
    pred: &[BTreeSet<String>],
    gold: &[BTreeSet<String>],
    event_ids: &[String],
    event_types: &[String],
    labels: &[S],
    skip_zero_support: bool,
    expected_types: &[String],
) -> Result<EventTypeReport> {
    if pred.len() != gold.len() || pred.len() != event_ids.len() || pred.len() != event_types.len() {
        return Err(Error::Validation("per-event inputs differ in length".into()));
    }
    let mut by_event: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for i in 0..pred.len() {
        by_event.entry((&event_types[i], &event_ids[i])).or_default().push(i);
    }
    let mut by_type: BTreeMap<String, Vec<EventScore>> = BTreeMap::new();
    for ((ty, ev), idx) in &by_event {
        let p: Vec<_> = idx.iter().map(|&i| pred[i].clone()).collect();
        let g: Vec<_> = idx.iter().map(|&i| gold[i].clone()).collect();
        let m = macro_f1(&p, &g, labels, skip_zero_support)?;
        by_type.entry(ty.to_string()).or_default().push(EventScore {
            event_id: ev.to_string(),
            n_tweets: idx.len(),
            macro_f1_lower: m.macro_f1,
        });
    }
    let mut report = EventTypeReport::default();
    for ty in expected_types {
        if !by_type.contains_key(ty) {
            let msg = format!("event type `{ty}` has no documents; omitted");
            log::info!("{msg}");
            report.notices.push(msg);
        }
    }
    for (ty, events) in by_type {
        let scores: Vec<f64> = events.iter().map(|e| e.macro_f1_lower).collect();
        let (mean, stddev) = mean_std(&scores);
        report.types.push(EventTypeStat { event_type: ty, n_events: events.len(), mean, stddev, events });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub name: String,
    pub n_documents: usize,
    pub threshold: f64,
    pub skip_zero_support: bool,
    pub macro_f1_upper: f64,
    pub macro_f1_lower: f64,
    pub macro_f1_ait: f64,
    pub per_label_upper: Vec<LabelMetrics>,
    pub per_label_lower: Vec<LabelMetrics>,
    pub per_event_type: EventTypeReport,
    pub config: serde_json::Value,
}

/// Full report for predicted label names against a labelled corpus.
pub fn evaluate(
    name: &str,
    pred_upper: &[BTreeSet<String>],
    pred_lower: &[BTreeSet<String>],
    tweets: &[AnnotatedTweet],
    ontology: &LabelOntology,
    threshold: f64,
    skip_zero_support: bool,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let gold_upper: Vec<_> = tweets.iter().map(|t| t.upper_labels().clone()).collect();
    let gold_lower: Vec<_> = tweets.iter().map(|t| t.lower_labels().clone()).collect();
    let upper = macro_f1(pred_upper, &gold_upper, ontology.upper_labels(), skip_zero_support)?;
    let lower = macro_f1(pred_lower, &gold_lower, ontology.lower_labels(), skip_zero_support)?;
    let ait = ontology.ait_labels();
    let macro_f1_ait = restricted_macro(&lower, &ait, skip_zero_support);
    let event_ids: Vec<String> = tweets.iter().map(|t| t.event_id.clone()).collect();
    let event_types: Vec<String> = tweets.iter().map(|t| t.event_type.clone()).collect();
    let per_event_type = per_event_type_report(
        pred_lower,
        &gold_lower,
        &event_ids,
        &event_types,
        ontology.lower_labels(),
        skip_zero_support,
        &[],
    )?;
    Ok(EvalReport {
        schema: SCHEMA.to_string(),
        name: name.to_string(),
        n_documents: tweets.len(),
        threshold,
        skip_zero_support,
        macro_f1_upper: upper.macro_f1,
        macro_f1_lower: lower.macro_f1,
        macro_f1_ait,
        per_label_upper: upper.per_label,
        per_label_lower: lower.per_label,
        per_event_type,
        config,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,support,precision,recall,f1\n");
        for m in self.per_label_upper.iter().chain(&self.per_label_lower) {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", m.label, m.support, m.precision, m.recall, m.f1);
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let mut groups: Vec<BarGroup> = self
            .per_event_type
            .types
            .iter()
            .map(|t| BarGroup {
                label: t.event_type.clone(),
                bars: vec![Bar { series: "lower macro-F1".into(), value: t.mean, err: Some(t.stddev) }],
            })
            .collect();
        let left = bar_chart_svg(&format!("{}: lower macro-F1 by event type", self.name), &groups, 420);
        groups = self
            .per_label_lower
            .iter()
            .map(|m| BarGroup { label: m.label.clone(), bars: vec![Bar { series: "F1".into(), value: m.f1, err: None }] })
            .collect();
        let right = bar_chart_svg(&format!("{}: per-label F1 (lower level)", self.name), &groups, 900);
        stack_svgs(&[left, right])
    }
}

/// Writes `<stem>.json`, `<stem>.csv` and `<stem>.svg` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (dir.join(format!("{stem}.json")), serde_json::to_string_pretty(report)? + "\n"),
        (dir.join(format!("{stem}.csv")), report.to_csv()),
        (dir.join(format!("{stem}.svg")), report.to_svg()),
    ];
    for (path, body) in &files {
        std::fs::write(path, body)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub series: String,
    pub value: f64,
    pub err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Bar>,
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped vertical bars on a [0, 1] axis with optional error bars.
pub fn bar_chart_svg(title: &str, groups: &[BarGroup], width: usize) -> String {
    let height = 300.0;
    let (left, right, top, bottom) = (50.0, 20.0, 40.0, 110.0);
    let plot_w = width as f64 - left - right;
    let plot_h = height - top - bottom;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let mut series: Vec<String> = Vec::new();
    for b in groups.iter().flat_map(|g| &g.bars) {
        if !series.contains(&b.series) {
            series.push(b.series.clone());
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{}</text>"#, width / 2, esc(title));
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{v:.1}</text>"##,
            y(v),
            left + plot_w,
            left - 4.0,
            y(v) + 3.0
        );
    }
    let gw = plot_w / groups.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        let x0 = left + gi as f64 * gw;
        let bw = gw * 0.8 / g.bars.len().max(1) as f64;
        for (bi, b) in g.bars.iter().enumerate() {
            let color = PALETTE[series.iter().position(|x| *x == b.series).unwrap_or(0) % PALETTE.len()];
            let bx = x0 + gw * 0.1 + bi as f64 * bw;
            let _ = writeln!(
                s,
                r#"<rect x="{bx:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"><title>{} {}: {:.3}</title></rect>"#,
                y(b.value),
                bw,
                y(0.0) - y(b.value),
                esc(&g.label),
                esc(&b.series),
                b.value
            );
            if let Some(e) = b.err {
                let cx = bx + bw / 2.0;
                let _ = writeln!(
                    s,
                    r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                    y(b.value - e),
                    y(b.value + e)
                );
            }
        }
        let lx = x0 + gw / 2.0;
        let ly = y(0.0) + 8.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.1}" y="{ly:.1}" transform="rotate(45 {lx:.1} {ly:.1})">{}</text>"#,
            esc(&g.label)
        );
    }
    let _ = writeln!(s, r#"<line x1="{left}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="black"/>"#, y(0.0), left + plot_w);
    if series.len() > 1 {
        for (i, name) in series.iter().enumerate() {
            let lx = left + 10.0 + i as f64 * 110.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="28" width="8" height="8" fill="{}"/><text x="{:.1}" y="36">{}</text>"#,
                PALETTE[i % PALETTE.len()],
                lx + 11.0,
                esc(name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Places complete SVG documents side by side in one document.
pub fn stack_svgs(parts: &[String]) -> String {
    let dims: Vec<(f64, f64)> = parts
        .iter()
        .map(|p| {
            let attr = |k: &str| -> f64 {
                let pat = format!("{k}=\"");
                p.find(&pat)
                    .and_then(|i| p[i + pat.len()..].split('"').next())
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0.0)
            };
            (attr("width"), attr("height"))
        })
        .collect();
    let total_w: f64 = dims.iter().map(|d| d.0).sum();
    let max_h = dims.iter().map(|d| d.1).fold(0.0, f64::max);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{max_h}\">\n"
    );
    let mut x = 0.0;
    for (p, (w, _)) in parts.iter().zip(&dims) {
        let inner = p.replacen("<svg ", &format!("<svg x=\"{x}\" "), 1);
        s.push_str(&inner);
        x += w;
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_count_example() {
        let gold = vec![set(&["A"]), set(&["A"]), set(&["B"])];
        let pred = vec![set(&["A"]), set(&["B"]), set(&["B"])];
        let m = macro_f1(&pred, &gold, &["A", "B"], false).unwrap();
        assert!((m.per_label[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_label[1].precision - 0.5).abs() < 1e-12);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn zero_support_convention() {
        let gold = vec![set(&["A"])];
        let pred = vec![set(&["A"])];
        assert_eq!(macro_f1(&pred, &gold, &["A", "B"], false).unwrap().macro_f1, 0.5);
        assert_eq!(macro_f1(&pred, &gold, &["A", "B"], true).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(macro_f1(&[set(&[])], &[], &["A"], false).is_err());
    }

    #[test]
    fn event_type_stats() {
        let (m, s) = mean_std(&[0.2, 0.4]);
        assert!((m - 0.3).abs() < 1e-12 && (s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.7]).1, 0.0);
        let gold = vec![set(&["A"]), set(&["A"])];
        let pred = vec![set(&["A"]), set(&[])];
        let ev = vec!["e1".to_string(), "e2".to_string()];
        let ty = vec!["flood".to_string(), "flood".to_string()];
        let r = per_event_type_report(&pred, &gold, &ev, &ty, &["A"], false, &["flood".into(), "covid".into()]).unwrap();
        assert_eq!(r.types.len(), 1);
        assert_eq!((r.types[0].mean, r.types[0].stddev), (0.5, 0.5));
        assert_eq!(r.notices.len(), 1);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let g = vec![BarGroup { label: "a<b".into(), bars: vec![Bar { series: "x".into(), value: 0.4, err: Some(0.1) }] }];
        let svg = bar_chart_svg("t", &g, 300);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
    }
}
