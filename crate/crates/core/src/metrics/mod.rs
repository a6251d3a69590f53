//! Classification metrics, rank correlation, generalization gaps and
//! MDL compression.

mod gap;
mod mdl;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gap::{gap, GapCell, GapReport, ModelGap, ScoreRecord};
pub use mdl::{mdl_online, uniform_bits, MdlOptions, MdlReport, MdlScheme, StepLoss, FRACTIONS, MIN_INSTANCES};
pub use report::{tags_for, EvalInput, EvalReport, ReportContext};

/// Confusion matrix (`gold x pred`) with per-class and macro F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `None` for classes absent from both gold and predictions.
    pub per_class_f1: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

/// Macro-F1 over the classes that occur in gold or predictions.
///
/// A class that is predicted but never gold (or the reverse) scores 0;
/// a class absent from both is excluded from the mean.
pub fn macro_f1(pred: &[usize], gold: &[usize], k: usize) -> Result<F1Summary> {
    if pred.len() != gold.len() {
        return Err(Error::Dimension {
            expected: gold.len(),
            got: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::Insufficient("macro-F1 of zero instances".into()));
    }
    let mut confusion = vec![vec![0u64; k]; k];
    for (&p, &g) in pred.iter().zip(gold) {
        if p >= k || g >= k {
            return Err(Error::Format(format!("class id {} >= K={k}", p.max(g))));
        }
        confusion[g][p] += 1;
    }
    let mut per_class_f1 = Vec::with_capacity(k);
    let mut correct = 0u64;
    for c in 0..k {
        let tp = confusion[c][c];
        correct += tp;
        let gold_c: u64 = confusion[c].iter().sum();
        let pred_c: u64 = confusion.iter().map(|row| row[c]).sum();
        per_class_f1.push(if gold_c + pred_c == 0 {
            None
        } else {
            Some(2.0 * tp as f64 / (gold_c + pred_c) as f64)
        });
    }
    let included: Vec<f64> = per_class_f1.iter().flatten().copied().collect();
    Ok(F1Summary {
        macro_f1: included.iter().sum::<f64>() / included.len() as f64,
        accuracy: correct as f64 / gold.len() as f64,
        per_class_f1,
        confusion,
    })
}

/// Ranks starting at 1, ties receive the average of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn rank_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::Insufficient("rank correlation needs at least 3 points".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("zero rank variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
