use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{macro_f1, F1Summary};
use crate::corpus::TaskKind;
use crate::error::Result;
use crate::folds::{Mode, Seen, SeenTag};

/// Provenance attached to every emitted report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub config: serde_json::Value,
    pub plan_hash: String,
    /// Input path -> SHA-256 of its bytes.
    pub input_hashes: BTreeMap<String, String>,
}

/// Test-split evaluation of one (task, mode, fold, seed) probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub task: TaskKind,
    pub mode: Mode,
    pub fold: usize,
    pub seed: u64,
    pub n: usize,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class_f1: BTreeMap<String, Option<f64>>,
    pub seen_f1: Option<f64>,
    pub unseen_f1: Option<f64>,
    pub seen_ratio: f64,
    pub confusion: Vec<Vec<u64>>,
    pub label_map: Vec<String>,
    pub best_epoch: usize,
    /// Lexical keying used for seen/unseen.
    pub seen_keying: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ReportContext>,
}

pub struct EvalInput<'a> {
    pub model: &'a str,
    pub task: TaskKind,
    pub mode: Mode,
    pub fold: usize,
    pub seed: u64,
    pub labels: &'a [String],
    pub best_epoch: usize,
}

impl EvalReport {
    /// Scores `pred` against `gold`; `tags[i]` is the seen tag of instance `i`.
    pub fn build(meta: EvalInput<'_>, pred: &[usize], gold: &[usize], tags: &[Seen]) -> Result<Self> {
        let k = meta.labels.len();
        let F1Summary {
            macro_f1: overall,
            accuracy,
            per_class_f1,
            confusion,
        } = macro_f1(pred, gold, k)?;
        let subset = |want: Seen| -> Result<Option<f64>> {
            let (p, g): (Vec<usize>, Vec<usize>) = pred
                .iter()
                .zip(gold)
                .zip(tags)
                .filter(|(_, &t)| t == want)
                .map(|((&p, &g), _)| (p, g))
                .unzip();
            if g.is_empty() {
                Ok(None)
            } else {
                Ok(Some(macro_f1(&p, &g, k)?.macro_f1))
            }
        };
        let seen = tags.iter().filter(|&&t| t == Seen::Seen).count();
        Ok(EvalReport {
            model: meta.model.to_string(),
            task: meta.task,
            mode: meta.mode,
            fold: meta.fold,
            seed: meta.seed,
            n: gold.len(),
            macro_f1: overall,
            accuracy,
            per_class_f1: meta.labels.iter().cloned().zip(per_class_f1).collect(),
            seen_f1: subset(Seen::Seen)?,
            unseen_f1: subset(Seen::Unseen)?,
            seen_ratio: if tags.is_empty() { 0.0 } else { seen as f64 / tags.len() as f64 },
            confusion,
            label_map: meta.labels.to_vec(),
            best_epoch: meta.best_epoch,
            seen_keying: "lowercased surface form".into(),
            context: None,
        })
    }

    /// `(metric, value)` pairs for the flat CSV export.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("macro_f1".to_string(), self.macro_f1),
            ("accuracy".to_string(), self.accuracy),
            ("seen_ratio".to_string(), self.seen_ratio),
        ];
        if let Some(v) = self.seen_f1 {
            out.push(("seen_f1".into(), v));
        }
        if let Some(v) = self.unseen_f1 {
            out.push(("unseen_f1".into(), v));
        }
        for (label, f1) in &self.per_class_f1 {
            if let Some(v) = f1 {
                out.push((format!("f1[{label}]"), *v));
            }
        }
        out
    }
}

/// Per-instance tags in `ids` order, defaulting to unseen.
pub fn tags_for(ids: &[String], tags: &[SeenTag]) -> Vec<Seen> {
    let map: std::collections::HashMap<&str, Seen> =
        tags.iter().map(|t| (t.instance_id.as_str(), t.tag)).collect();
    ids.iter()
        .map(|id| map.get(id.as_str()).copied().unwrap_or(Seen::Unseen))
        .collect()
}
