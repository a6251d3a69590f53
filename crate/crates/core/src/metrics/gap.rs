use serde::{Deserialize, Serialize};

use super::mean;
use crate::error::{Error, Result};

/// One scored run (a fold/seed of a model on a task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub model: String,
    pub task: String,
    pub macro_f1: f64,
    #[serde(default)]
    pub compression: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCell {
    pub model: String,
    pub task: String,
    pub in_f1: f64,
    pub cross_f1: f64,
    pub delta: f64,
    pub in_compression: Option<f64>,
    pub cross_compression: Option<f64>,
    pub delta_compression: Option<f64>,
}

/// Per-model average over its tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGap {
    pub model: String,
    pub in_f1: f64,
    pub cross_f1: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub cells: Vec<GapCell>,
    pub models: Vec<ModelGap>,
}

fn grouped(records: &[ScoreRecord]) -> Vec<((String, String), Vec<&ScoreRecord>)> {
    let mut out: Vec<((String, String), Vec<&ScoreRecord>)> = Vec::new();
    for r in records {
        let key = (r.model.clone(), r.task.clone());
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => out.push((key, vec![r])),
        }
    }
    out
}

fn mean_compression(rs: &[&ScoreRecord]) -> Option<f64> {
    let v: Option<Vec<f64>> = rs.iter().map(|r| r.compression).collect();
    v.map(|v| mean(&v))
}

/// Cross minus In per (model, task) cell and per model.
pub fn gap(in_records: &[ScoreRecord], cross_records: &[ScoreRecord]) -> Result<GapReport> {
    let ins = grouped(in_records);
    let crosses = grouped(cross_records);
    if ins.len() != crosses.len() {
        return Err(Error::KeyMismatch(format!(
            "{} in-topic cells vs {} cross-topic cells",
            ins.len(),
            crosses.len()
        )));
    }
    let mut cells = Vec::with_capacity(ins.len());
    for ((model, task), in_runs) in &ins {
        let cross_runs = crosses
            .iter()
            .find(|(k, _)| k.0 == *model && k.1 == *task)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::KeyMismatch(format!("no cross-topic runs for {model}/{task}")))?;
        let in_f1 = mean(&in_runs.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
        let cross_f1 = mean(&cross_runs.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
        let in_c = mean_compression(in_runs);
        let cross_c = mean_compression(cross_runs);
        cells.push(GapCell {
            model: model.clone(),
            task: task.clone(),
            in_f1,
            cross_f1,
            delta: cross_f1 - in_f1,
            in_compression: in_c,
            cross_compression: cross_c,
            delta_compression: in_c.zip(cross_c).map(|(i, c)| c - i),
        });
    }
    let mut models: Vec<ModelGap> = Vec::new();
    for cell in &cells {
        if models.iter().any(|m| m.model == cell.model) {
            continue;
        }
        let mine: Vec<&GapCell> = cells.iter().filter(|c| c.model == cell.model).collect();
        let in_f1 = mean(&mine.iter().map(|c| c.in_f1).collect::<Vec<_>>());
        let cross_f1 = mean(&mine.iter().map(|c| c.cross_f1).collect::<Vec<_>>());
        models.push(ModelGap {
            model: cell.model.clone(),
            in_f1,
            cross_f1,
            delta: cross_f1 - in_f1,
        });
    }
    Ok(GapReport { cells, models })
}
