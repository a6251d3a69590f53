//! Linear probes over frozen instance vectors.
//!
//! A probe is a single affine layer `scores = W v + b` trained with softmax
//! cross-entropy, AdamW, linear warmup and input-feature dropout. The
//! returned checkpoint is the epoch with the best dev macro-F1.

mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::AdamW;

use crate::rng::{seeded, Stream};
use crate::corpus::TaskKind;
use crate::embedstore::FeatureTable;
use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Weights uniform in `(-1/sqrt(D), 1/sqrt(D))`, zero bias.
    Uniform,
    /// All parameters zero; the learned weights then contain only signal.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub init: Init,
    /// Keep the epoch with the best dev macro-F1 (otherwise the last epoch).
    pub select_on_dev: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 5e-4,
            weight_decay: 0.01,
            dropout: 0.2,
            warmup_fraction: 0.1,
            seed: 0,
            init: Init::Uniform,
            select_on_dev: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) || self.weight_decay < 0.0 {
            return Err(Error::Config("warmup_fraction must be in [0, 1], weight_decay >= 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }
}

/// Labelled instance vectors, row-major.
#[derive(Debug, Clone)]
pub struct LabeledSet<F> {
    pub task: TaskKind,
    pub label_names: Vec<String>,
    pub dim: usize,
    pub features: Vec<F>,
    pub labels: Vec<usize>,
}

impl<F: Scalar> LabeledSet<F> {
    pub fn new(task: TaskKind, label_names: Vec<String>, dim: usize) -> Self {
        LabeledSet {
            task,
            label_names,
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Rows `rows` of `table` with the matching entries of `labels`.
    pub fn from_table(
        task: TaskKind,
        label_names: &[String],
        table: &FeatureTable,
        labels: &[usize],
        rows: &[usize],
    ) -> Self {
        let mut set = LabeledSet::new(task, label_names.to_vec(), table.dim);
        set.features.reserve(rows.len() * table.dim);
        for &r in rows {
            set.push(table.row(r), labels[r]);
        }
        set
    }

    pub fn push(&mut self, row: &[f32], label: usize) {
        debug_assert_eq!(row.len(), self.dim);
        self.features.extend(row.iter().map(|&v| F::from_f32_lossless(v)));
        self.labels.push(label);
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Affine classifier `scores = W v + b` over `dim`-wide inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel<F> {
    pub task: TaskKind,
    pub label_names: Vec<String>,
    pub dim: usize,
    /// Row-major `K x dim`.
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct Trained<F> {
    pub model: ProbeModel<F>,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub dev_f1: Vec<f64>,
}

impl<F: Scalar> ProbeModel<F> {
    pub fn zeros(task: TaskKind, label_names: Vec<String>, dim: usize) -> Self {
        let k = label_names.len();
        ProbeModel {
            task,
            label_names,
            dim,
            weights: vec![F::zero(); k * dim],
            bias: vec![F::zero(); k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn row(&self, class: usize) -> &[F] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    fn scores_into(&self, v: &[F], out: &mut [F]) {
        for (c, s) in out.iter_mut().enumerate() {
            *s = self.bias[c] + dot(self.row(c), v);
        }
    }

    /// Class scores and argmax (lowest class id wins ties).
    pub fn predict(&self, v: &[F]) -> Result<(usize, Vec<F>)> {
        if v.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut scores = vec![F::zero(); self.num_classes()];
        self.scores_into(v, &mut scores);
        Ok((argmax(&scores), scores))
    }

    pub fn predict_all(&self, set: &LabeledSet<F>) -> Result<Vec<usize>> {
        (0..set.len()).map(|i| self.predict(set.row(i)).map(|p| p.0)).collect()
    }

    /// Total cross-entropy of `set` in bits.
    pub fn codelength_bits(&self, set: &LabeledSet<F>) -> Result<f64> {
        if set.dim != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: set.dim,
            });
        }
        let mut scores = vec![F::zero(); self.num_classes()];
        let mut nats = 0f64;
        for i in 0..set.len() {
            self.scores_into(set.row(i), &mut scores);
            nats += (log_sum_exp(&scores) - scores[set.labels[i]]).f64();
        }
        if !nats.is_finite() {
            return Err(Error::Numeric("non-finite evaluation loss".into()));
        }
        Ok(nats / std::f64::consts::LN_2)
    }

    /// Writes the PRBM binary form.
    ///
    /// `"PRBM" | u32 version=1 | u32 K | u32 D | u32 scalar bytes |
    /// row-major W | b | u32 trailer length | JSON {task, labels}`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"PRBM");
        for v in [1u32, self.num_classes() as u32, self.dim as u32, F::BYTES] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &w in self.weights.iter().chain(&self.bias) {
            w.write_le(&mut out);
        }
        let trailer = serde_json::json!({ "task": self.task, "labels": self.label_names }).to_string();
        out.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
        out.extend_from_slice(trailer.as_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Format(format!("PRBM: {m}"));
        if b.len() < 20 || &b[..4] != b"PRBM" {
            return Err(fail("bad magic"));
        }
        let u = |at: usize| -> Result<u32> {
            b.get(at..at + 4)
                .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
                .ok_or_else(|| fail("truncated"))
        };
        if u(4)? != 1 {
            return Err(fail("unsupported version"));
        }
        let (k, d, width) = (u(8)? as usize, u(12)? as usize, u(16)? as usize);
        let read = |at: usize| -> F {
            match width {
                4 => F::of(f32::read_le(&b[at..]) as f64),
                _ => F::of(f64::read_le(&b[at..])),
            }
        };
        if width != 4 && width != 8 {
            return Err(fail("unsupported scalar width"));
        }
        let n = k * d + k;
        let body = 20 + n * width;
        if b.len() < body + 4 {
            return Err(fail("truncated"));
        }
        let values: Vec<F> = (0..n).map(|i| read(20 + i * width)).collect();
        let tlen = u(body)? as usize;
        let trailer = b.get(body + 4..body + 4 + tlen).ok_or_else(|| fail("truncated trailer"))?;
        let meta: serde_json::Value = serde_json::from_slice(trailer)?;
        let task: TaskKind = serde_json::from_value(meta["task"].clone())?;
        let label_names: Vec<String> = serde_json::from_value(meta["labels"].clone())?;
        if label_names.len() != k {
            return Err(fail("label map size differs from K"));
        }
        Ok(ProbeModel {
            task,
            label_names,
            dim: d,
            weights: values[..k * d].to_vec(),
            bias: values[k * d..].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp<F: Scalar>(v: &[F]) -> F {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    max + v.iter().map(|&s| (s - max).exp()).sum::<F>().ln()
}

/// Mean softmax cross-entropy (nats) of a batch and its gradient with
/// respect to the row-major weights and the bias.
pub fn softmax_xent<F: Scalar>(
    model: &ProbeModel<F>,
    features: &[F],
    labels: &[usize],
) -> (F, Vec<F>, Vec<F>) {
    let k = model.num_classes();
    let d = model.dim;
    let mut gw = vec![F::zero(); k * d];
    let mut gb = vec![F::zero(); k];
    let mut loss = F::zero();
    let mut scores = vec![F::zero(); k];
    for (x, &y) in features.chunks_exact(d).zip(labels) {
        accumulate(model, x, y, &mut scores, &mut gw, &mut gb, &mut loss);
    }
    let n = F::of(labels.len().max(1) as f64);
    gw.iter_mut().chain(gb.iter_mut()).for_each(|g| *g /= n);
    (loss / n, gw, gb)
}

#[inline]
fn accumulate<F: Scalar>(
    model: &ProbeModel<F>,
    x: &[F],
    y: usize,
    scores: &mut [F],
    gw: &mut [F],
    gb: &mut [F],
    loss: &mut F,
) {
    let d = model.dim;
    model.scores_into(x, scores);
    let lse = log_sum_exp(scores);
    *loss += lse - scores[y];
    for c in 0..scores.len() {
        let mut g = (scores[c] - lse).exp();
        if c == y {
            g -= F::one();
        }
        gb[c] += g;
        for (w, &xi) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
            *w += g * xi;
        }
    }
}

fn init_model<F: Scalar>(set: &LabeledSet<F>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> ProbeModel<F> {
    let mut model = ProbeModel::zeros(set.task, set.label_names.clone(), set.dim);
    if cfg.init == Init::Uniform {
        // Draw rows in class-name order so the initialisation does not
        // depend on which integer id a class happens to carry.
        let mut order: Vec<usize> = (0..set.num_classes()).collect();
        order.sort_by(|&a, &b| set.label_names[a].cmp(&set.label_names[b]));
        let bound = 1.0 / (set.dim as f64).sqrt();
        for c in order {
            for w in &mut model.weights[c * set.dim..(c + 1) * set.dim] {
                *w = F::of(rng.gen_range(-bound..bound));
            }
        }
    }
    model
}

fn dev_macro_f1<F: Scalar>(model: &ProbeModel<F>, dev: &LabeledSet<F>) -> Result<f64> {
    let pred = model.predict_all(dev)?;
    Ok(macro_f1(&pred, &dev.labels, model.num_classes())?.macro_f1)
}

/// Trains a probe on `train`, selecting the epoch by macro-F1 on `dev`.
///
/// Deterministic for a fixed `cfg.seed`: shuffling, dropout masks and
/// initialisation each draw from their own seeded stream.
pub fn train<F: Scalar>(train: &LabeledSet<F>, dev: &LabeledSet<F>, cfg: &TrainConfig) -> Result<Trained<F>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Insufficient("empty training set".into()));
    }
    if !dev.is_empty() && dev.dim != train.dim {
        return Err(Error::Dimension {
            expected: train.dim,
            got: dev.dim,
        });
    }
    let k = train.num_classes();
    if let Some(&bad) = train.labels.iter().chain(&dev.labels).find(|&&y| y >= k) {
        return Err(Error::Format(format!("label id {bad} >= K={k}")));
    }
    let d = train.dim;
    let n = train.len();

    let mut shuffle_rng = seeded(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = seeded(cfg.seed, Stream::Dropout);
    let mut init_rng = seeded(cfg.seed, Stream::Init);

    let mut model = init_model(train, cfg, &mut init_rng);
    let mut opt_w = AdamW::new(k * d, F::of(cfg.weight_decay));
    let mut opt_b = AdamW::new(k, F::of(cfg.weight_decay));

    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let warmup_steps = (cfg.warmup_fraction * total_steps as f64).ceil() as usize;
    let keep = 1.0 - cfg.dropout;
    let scale = F::of(1.0 / keep);

    let mut order: Vec<usize> = (0..n).collect();
    let mut xbuf = vec![F::zero(); d];
    let mut scores = vec![F::zero(); k];
    let mut gw = vec![F::zero(); k * d];
    let mut gb = vec![F::zero(); k];
    let mut step = 0usize;

    let mut best: Option<(f64, usize, ProbeModel<F>)> = None;
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut dev_f1 = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = F::zero();
        for batch in order.chunks(cfg.batch_size) {
            gw.iter_mut().chain(gb.iter_mut()).for_each(|g| *g = F::zero());
            let mut loss = F::zero();
            for &i in batch {
                let x = train.row(i);
                if cfg.dropout > 0.0 {
                    for (dst, &src) in xbuf.iter_mut().zip(x) {
                        *dst = if dropout_rng.gen::<f64>() < keep { src * scale } else { F::zero() };
                    }
                } else {
                    xbuf.copy_from_slice(x);
                }
                accumulate(&model, &xbuf, train.labels[i], &mut scores, &mut gw, &mut gb, &mut loss);
            }
            let m = F::of(batch.len() as f64);
            gw.iter_mut().chain(gb.iter_mut()).for_each(|g| *g /= m);
            epoch_loss += loss;

            step += 1;
            let warm = if warmup_steps == 0 { 1.0 } else { (step as f64 / warmup_steps as f64).min(1.0) };
            let lr = F::of(cfg.learning_rate * warm);
            opt_w.step(&mut model.weights, &gw, lr);
            opt_b.step(&mut model.bias, &gb, lr);
        }
        let mean_loss = epoch_loss.f64() / n as f64;
        if !mean_loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite training loss at epoch {epoch} (n={n}, dim={d}, lr={})",
                cfg.learning_rate
            )));
        }
        train_loss.push(mean_loss);

        if cfg.select_on_dev && !dev.is_empty() {
            let f1 = dev_macro_f1(&model, dev)?;
            dev_f1.push(f1);
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, model.clone()));
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, cfg.epochs),
    };
    Ok(Trained {
        model,
        best_epoch,
        train_loss,
        dev_f1,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (k, d) = (3, 5);
        let mut model = ProbeModel::<f64>::zeros(TaskKind::Pos, names(k), d);
        model.weights.iter_mut().chain(model.bias.iter_mut()).for_each(|w| *w = normal.sample(&mut rng));
        let x: Vec<f64> = (0..7 * d).map(|_| normal.sample(&mut rng)).collect();
        let y = [0, 1, 2, 2, 1, 0, 1];
        let (_, gw, gb) = softmax_xent(&model, &x, &y);
        let h = 1e-6;
        let analytic = gw.iter().chain(&gb).copied().collect::<Vec<_>>();
        for (i, &g) in analytic.iter().enumerate() {
            let bump = |delta: f64| {
                let mut m = model.clone();
                if i < k * d {
                    m.weights[i] += delta;
                } else {
                    m.bias[i - k * d] += delta;
                }
                softmax_xent(&m, &x, &y).0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            assert!((g - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "param {i}: {g} vs {fd}");
        }
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("c{c}")).collect()
    }

    fn blobs(n: usize, d: usize, sep: f64, seed: u64) -> LabeledSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut set = LabeledSet::new(TaskKind::Pos, names(2), d);
        for i in 0..n {
            let y = i % 2;
            let sign = if y == 0 { -1.0 } else { 1.0 };
            let row: Vec<f32> = (0..d)
                .map(|j| (normal.sample(&mut rng) + if j == 0 { sign * sep } else { 0.0 }) as f32)
                .collect();
            set.push(&row, y);
        }
        set
    }

    fn split(set: &LabeledSet<f64>, at: usize) -> (LabeledSet<f64>, LabeledSet<f64>) {
        let mut a = LabeledSet::new(set.task, set.label_names.clone(), set.dim);
        let mut b = a.clone();
        for i in 0..set.len() {
            let row: Vec<f32> = set.row(i).iter().map(|&v| v as f32).collect();
            if i < at {
                a.push(&row, set.labels[i]);
            } else {
                b.push(&row, set.labels[i]);
            }
        }
        (a, b)
    }

    fn small_data_cfg() -> TrainConfig {
        // 200 points give only ~60 optimizer steps; raise the step size.
        TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_blobs() {
        let data = blobs(200, 8, 6.0, 1);
        // Margin oracle: coordinate 0 alone separates the classes.
        let max_neg = (0..200).filter(|&i| data.labels[i] == 0).map(|i| data.row(i)[0]).fold(f64::MIN, f64::max);
        let min_pos = (0..200).filter(|&i| data.labels[i] == 1).map(|i| data.row(i)[0]).fold(f64::MAX, f64::min);
        assert!(max_neg < min_pos, "generator must be separable");
        let (tr, dv) = split(&data, 150);
        let out = train(&tr, &dv, &small_data_cfg()).unwrap();
        let pred = out.model.predict_all(&dv).unwrap();
        assert!(macro_f1(&pred, &dv.labels, 2).unwrap().macro_f1 >= 0.99);
    }

    #[test]
    fn xor_stays_near_chance() {
        // Continuous XOR on the square: the distribution is symmetric under
        // x -> -x with labels fixed, so the convex loss is minimised by the
        // zero model and no line does much better than chance.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut set = LabeledSet::<f64>::new(TaskKind::Pos, names(2), 2);
        for _ in 0..5000 {
            let (a, b): (f32, f32) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            set.push(&[a, b], (a * b > 0.0) as usize);
        }
        let (tr, rest) = split(&set, 3000);
        let (dv, te) = split(&rest, 1000);
        let out = train(&tr, &dv, &TrainConfig::default()).unwrap();
        let pred = out.model.predict_all(&te).unwrap();
        let acc = pred.iter().zip(&te.labels).filter(|(p, g)| p == g).count() as f64 / te.len() as f64;
        assert!((acc - 0.5).abs() <= 0.05, "acc {acc}");
    }

    #[test]
    fn bitwise_deterministic() {
        let data = blobs(120, 5, 1.0, 2);
        let (tr, dv) = split(&data, 90);
        let a = train(&tr, &dv, &TrainConfig::default()).unwrap();
        let b = train(&tr, &dv, &TrainConfig::default()).unwrap();
        assert_eq!(a.model, b.model);
        let c = train(&tr, &dv, &TrainConfig::default().with_seed(1)).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn best_checkpoint_not_worse_than_first_epoch() {
        let data = blobs(300, 6, 0.8, 9);
        let (tr, dv) = split(&data, 200);
        let out = train(&tr, &dv, &TrainConfig::default()).unwrap();
        assert!(out.train_loss.iter().all(|l| l.is_finite()));
        let chosen = out.dev_f1[out.best_epoch - 1];
        assert!(chosen >= out.dev_f1[0]);
        assert_eq!(chosen, out.dev_f1.iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn predict_examples() {
        let mut m = ProbeModel::<f64>::zeros(TaskKind::Pos, names(2), 3);
        m.bias = vec![1.0, 0.0];
        assert_eq!(m.predict(&[5.0, -2.0, 9.0]).unwrap().0, 0);
        let mut m = ProbeModel::<f64>::zeros(TaskKind::Pos, names(2), 2);
        m.weights = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(m.predict(&[0.0, 3.0]).unwrap().0, 1);
        assert!(m.predict(&[1.0]).is_err());
        // Tie goes to the smallest id.
        assert_eq!(m.predict(&[2.0, 2.0]).unwrap().0, 0);
    }

    #[test]
    fn predict_matches_bruteforce_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, d) = (4, 6);
        let mut m = ProbeModel::<f64>::zeros(TaskKind::Ner, names(k), d);
        m.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        m.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        for _ in 0..50 {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut best = (f64::MIN, 0);
            for c in 0..k {
                let mut s = m.bias[c];
                for j in 0..d {
                    s += m.weights[c * d + j] * v[j];
                }
                if s > best.0 {
                    best = (s, c);
                }
            }
            assert_eq!(m.predict(&v).unwrap().0, best.1);
        }
    }

    #[test]
    fn empty_train_rejected() {
        let set = LabeledSet::<f64>::new(TaskKind::Pos, names(2), 3);
        assert!(matches!(train(&set, &set, &TrainConfig::default()), Err(Error::Insufficient(_))));
        let bad = TrainConfig {
            dropout: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn prbm_roundtrip() {
        let mut m = ProbeModel::<f32>::zeros(TaskKind::Dep, names(3), 4);
        m.weights.iter_mut().enumerate().for_each(|(i, w)| *w = i as f32 * 0.25 - 1.0);
        m.bias = vec![0.5, -0.5, 2.0];
        let back = ProbeModel::<f32>::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let wide = ProbeModel::<f64>::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(wide.bias, vec![0.5, -0.5, 2.0]);
        assert!(ProbeModel::<f32>::from_bytes(b"NOPE0000000000000000").is_err());
    }
}
