//! The six-row component ablation: five cumulative removals from the full
//! model plus a plain-text adaptive MLM row.

use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::eval::{bar_chart_svg, Bar, BarGroup};
use crate::heads::HeadKind;
use crate::masking::standard_mlm_config;
use crate::pipeline::{execute_cached, Command, CommandArgs, Manifest, PretrainCache, Session};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub head: HeadKind,
    pub entity_tokens: bool,
    pub pretrain: bool,
    /// Standard MLM masking in place of the entity-aware rates.
    pub standard_masking: bool,
}

pub const ROWS: [AblationRow; 6] = [
    AblationRow { name: "HMCN_local (full)", head: HeadKind::HmcnLocal, entity_tokens: true, pretrain: true, standard_masking: false },
    AblationRow { name: "-Hierarchy (LCL)", head: HeadKind::Lcl, entity_tokens: true, pretrain: true, standard_masking: false },
    AblationRow { name: "-Multi-Task (E-MLM single-task)", head: HeadKind::SingleTask, entity_tokens: true, pretrain: true, standard_masking: false },
    AblationRow { name: "-MLM (entity tokens, no pre-training)", head: HeadKind::SingleTask, entity_tokens: true, pretrain: false, standard_masking: false },
    AblationRow { name: "-Entities (plain text, no pre-training)", head: HeadKind::SingleTask, entity_tokens: false, pretrain: false, standard_masking: false },
    AblationRow { name: "BERT_MLM (plain-text MLM)", head: HeadKind::SingleTask, entity_tokens: false, pretrain: true, standard_masking: true },
];

impl AblationRow {
    pub fn config(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut c = base.clone();
        c.finetune.head = self.head;
        c.tokenizer.entity_tokens = self.entity_tokens;
        c.pretrain.enabled = self.pretrain;
        if self.standard_masking {
            c.pretrain.masking = standard_mlm_config();
        }
        c
    }
}

/// Plain text, no pre-training, single-task head: the neural baseline that
/// row 5 coincides with.
pub fn plain_single_task(base: &PipelineConfig) -> PipelineConfig {
    ROWS[4].config(base)
}

fn metric(m: &Manifest, key: &str) -> f64 {
    m.summary.get("report_test").and_then(|r| r.get(key)).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

pub(crate) fn run_ablation(s: &mut Session) -> Result<()> {
    let mut cache = PretrainCache::default();
    let mut csv = String::from("row,name,head,entity_tokens,pretrain,config_hash,macro_f1_upper,macro_f1_lower,macro_f1_ait,dev_macro_f1_lower\n");
    let mut groups = Vec::new();
    let mut rows = Vec::new();
    let args = CommandArgs::default();
    for (i, row) in ROWS.iter().enumerate() {
        let cfg = row.config(s.cfg);
        let dir = format!("row{}", i + 1);
        let stage = format!("ablation row {}", i + 1);
        let m = execute_cached(Command::Run, &cfg, &args, &s.out.join(&dir), Some(&mut cache))
            .map_err(|e| crate::Error::Stage { stage, source: Box::new(e) })?;
        for (name, digest) in &m.outputs {
            s.outputs.insert(format!("{dir}/{name}"), digest.clone());
        }
        s.outputs.insert(
            format!("{dir}/manifest.json"),
            crate::config::sha256_hex(&std::fs::read(s.out.join(&dir).join(crate::pipeline::MANIFEST_FILE))?),
        );
        let (lt, lb, ait) = (metric(&m, "macro_f1_upper"), metric(&m, "macro_f1_lower"), metric(&m, "macro_f1_ait"));
        let dev = m.summary.get("report_dev").and_then(|r| r.get("macro_f1_lower")).and_then(Value::as_f64).unwrap_or(f64::NAN);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{lt:.6},{lb:.6},{ait:.6},{dev:.6}\n",
            i + 1,
            row.name,
            row.head.name(),
            row.entity_tokens,
            row.pretrain,
            m.config_hash
        ));
        groups.push(BarGroup {
            label: format!("({}) {}", i + 1, row.name),
            bars: [("L_T", lt), ("L_B", lb), ("AIT", ait)]
                .into_iter()
                .map(|(k, v)| Bar { series: k.into(), value: v, err: None })
                .collect(),
        });
        rows.push(json!({"row": i + 1, "name": row.name, "config_hash": m.config_hash, "L_T": lt, "L_B": lb, "AIT": ait}));
    }
    s.write("ablation.csv", csv)?;
    s.write("ablation.svg", bar_chart_svg("Ablation: test macro-F1", &groups, 900))?;
    s.summary.insert("rows".into(), Value::Array(rows));
    Ok(())
}
