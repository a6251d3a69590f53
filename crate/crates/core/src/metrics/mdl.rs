//! Online minimum-description-length codelength and compression.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, Stream};
use crate::corpus::TaskDataset;
use crate::embedstore::FeatureTable;
use crate::error::{Error, Result};
use crate::folds::Mode;
use crate::linprobe::{self, Init, LabeledSet, TrainConfig};
use crate::scalar::Scalar;

/// Training fractions `1/1024, 1/512, ..., 1/2`.
pub const FRACTIONS: [f64; 10] = [
    1.0 / 1024.0,
    1.0 / 512.0,
    1.0 / 256.0,
    1.0 / 128.0,
    1.0 / 64.0,
    1.0 / 32.0,
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 4.0,
    1.0 / 2.0,
];

pub const MIN_INSTANCES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdlScheme {
    /// Step `j` trains on the first `t_j n` instances and is scored on the
    /// next `t_j n`; ten steps.
    Paired,
    /// Contiguous blocks: the first `n/1024` instances are sent with the
    /// uniform code, then step `j` trains on `[0, t_j n)` and is scored on
    /// `[t_j n, t_{j+1} n)` with `t_11 = 1`; eleven timestamps.
    Blocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdlOptions {
    pub scheme: MdlScheme,
    /// Seed of the fixed instance order (and the cross-topic grouping).
    pub order_seed: u64,
    /// Upper bound on epochs per step probe.
    pub max_epochs: usize,
}

impl Default for MdlOptions {
    fn default() -> Self {
        MdlOptions {
            scheme: MdlScheme::Paired,
            order_seed: 0,
            max_epochs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub fraction: f64,
    pub train_size: usize,
    pub eval_size: usize,
    pub bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlReport {
    pub mode: Mode,
    pub scheme: MdlScheme,
    pub n: usize,
    pub k: usize,
    /// Uniform codelength `n log2 K`, bits.
    pub u: f64,
    pub step_losses: Vec<StepLoss>,
    /// Bits spent on the first block with the uniform code (blocks scheme only).
    pub uniform_prefix_bits: f64,
    pub mdl: f64,
    pub compression: f64,
    pub fraction_count: usize,
}

/// Instance order(s) for the online code: one shuffled sequence for In,
/// two topic-disjoint sequences (train side, eval side) for Cross, plus
/// the usable length of each sequence.
fn orders(dataset: &TaskDataset, rows: &[usize], mode: Mode, seed: u64) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let mut rng = seeded(seed, Stream::MdlOrder);
    match mode {
        Mode::In => {
            let mut order = rows.to_vec();
            order.shuffle(&mut rng);
            let n = order.len();
            Ok((order.clone(), order, n))
        }
        Mode::Cross => {
            let topics: BTreeSet<usize> = rows.iter().map(|&r| dataset.topic_id(r)).collect();
            if topics.len() < 2 {
                return Err(Error::Insufficient("cross-topic MDL needs at least 2 topics".into()));
            }
            let mut topics: Vec<usize> = topics.into_iter().collect();
            topics.shuffle(&mut rng);
            let first: BTreeSet<usize> = topics[..topics.len().div_ceil(2)].iter().copied().collect();
            let (mut a, mut b): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| first.contains(&dataset.topic_id(r)));
            a.shuffle(&mut rng);
            b.shuffle(&mut rng);
            let len = a.len().min(b.len());
            Ok((a, b, len))
        }
    }
}

/// Online codelength of `rows` of `dataset` under probes trained with `cfg`.
///
/// Step probes always train for a fixed number of epochs without dev
/// selection: a block's own labels must not influence its code.
pub fn mdl_online<F: Scalar>(
    dataset: &TaskDataset,
    table: &FeatureTable,
    rows: &[usize],
    cfg: &TrainConfig,
    mode: Mode,
    opts: &MdlOptions,
) -> Result<MdlReport> {
    let (train_order, eval_order, len) = orders(dataset, rows, mode, opts.order_seed)?;
    // Paired cross-topic steps draw train and eval halves from separate
    // sequences, so both together cover twice the sequence length.
    let n = match (opts.scheme, mode) {
        (MdlScheme::Paired, Mode::Cross) => 2 * len,
        _ => len,
    };
    if n < MIN_INSTANCES {
        return Err(Error::Insufficient(format!(
            "online MDL needs at least {MIN_INSTANCES} usable instances, found {n}"
        )));
    }
    let k = dataset.num_labels();
    let labels = dataset.label_ids();
    // Zero init keeps the code independent of how classes are named and
    // starts every step from the uniform code.
    let step_cfg = TrainConfig {
        epochs: cfg.epochs.min(opts.max_epochs),
        select_on_dev: false,
        init: Init::Zero,
        ..cfg.clone()
    };
    let subset = |order: &[usize], lo: usize, hi: usize| {
        LabeledSet::<F>::from_table(dataset.task, &dataset.label_set, table, labels, &order[lo..hi])
    };
    let empty = LabeledSet::<F>::new(dataset.task, dataset.label_set.clone(), table.dim);
    let size = |t: f64| (t * n as f64).floor() as usize;

    let mut steps = Vec::new();
    let mut prefix_bits = 0.0;
    match opts.scheme {
        MdlScheme::Paired => {
            for &t in &FRACTIONS {
                let s = size(t);
                let eval_lo = if mode == Mode::In { s } else { 0 };
                let tr = subset(&train_order, 0, s);
                let ev = subset(&eval_order, eval_lo, eval_lo + s);
                let model = linprobe::train(&tr, &empty, &step_cfg)?.model;
                steps.push(StepLoss {
                    fraction: t,
                    train_size: s,
                    eval_size: s,
                    bits: model.codelength_bits(&ev)?,
                });
            }
        }
        MdlScheme::Blocks => {
            let first = size(FRACTIONS[0]);
            prefix_bits = first as f64 * (k as f64).log2();
            let mut bounds: Vec<f64> = FRACTIONS.to_vec();
            bounds.push(1.0);
            for w in bounds.windows(2) {
                let (lo, hi) = (size(w[0]), size(w[1]));
                let tr = subset(&train_order, 0, lo);
                let ev = subset(&eval_order, lo, hi);
                let model = linprobe::train(&tr, &empty, &step_cfg)?.model;
                steps.push(StepLoss {
                    fraction: w[0],
                    train_size: lo,
                    eval_size: hi - lo,
                    bits: model.codelength_bits(&ev)?,
                });
            }
        }
    }
    let mdl = prefix_bits + steps.iter().map(|s| s.bits).sum::<f64>();
    if !(mdl.is_finite() && mdl > 0.0) {
        return Err(Error::Numeric(format!("invalid description length {mdl}")));
    }
    let u = uniform_bits(n, k);
    Ok(MdlReport {
        mode,
        scheme: opts.scheme,
        n,
        k,
        u,
        fraction_count: steps.len(),
        step_losses: steps,
        uniform_prefix_bits: prefix_bits,
        mdl,
        compression: u / mdl,
    })
}

/// Bits needed to send `n` labels from `k` classes with the uniform code.
pub fn uniform_bits(n: usize, k: usize) -> f64 {
    n as f64 * (k as f64).log2()
}
