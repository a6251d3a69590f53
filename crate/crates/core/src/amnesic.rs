//! Removal of a linearly encoded property by iterated nullspace projection.
//!
//! A probe for the property (here: token topic-specificity bins) is
//! trained, the embeddings are projected onto the nullspace of every probe
//! weight row found so far, and the procedure repeats until a freshly
//! trained probe is no better than the majority class.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, Stream};
use crate::corpus::TaskDataset;
use crate::embedstore::{EmbeddingStore, FeatureTable};
use crate::error::{Error, Result};
use crate::folds::Mode;
use crate::linalg::{matmul, max_abs, row_space_basis};
use crate::linprobe::{self, Init, LabeledSet, TrainConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Topic,
    Random,
}

/// Orthogonal projection `P = I - B B^T` onto the complement of a subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix<F> {
    pub dim: usize,
    /// Row-major `dim x dim`.
    pub p: Vec<F>,
    pub removed_rank: usize,
    pub iterations: usize,
    pub source: Source,
}

/// Relative singular-value cutoff for the removed subspace.
pub const RANK_TOL: f64 = 1e-8;

impl<F: Scalar> ProjectionMatrix<F> {
    pub fn identity(dim: usize, source: Source) -> Self {
        let mut p = vec![F::zero(); dim * dim];
        for i in 0..dim {
            p[i * dim + i] = F::one();
        }
        ProjectionMatrix {
            dim,
            p,
            removed_rank: 0,
            iterations: 0,
            source,
        }
    }

    pub fn apply(&self, v: &[F]) -> Vec<F> {
        (0..self.dim)
            .map(|i| {
                let row = &self.p[i * self.dim..(i + 1) * self.dim];
                row.iter().zip(v).fold(F::zero(), |a, (&x, &y)| a + x * y)
            })
            .collect()
    }

    pub fn apply_f32(&self, v: &[f32]) -> Vec<f32> {
        let x: Vec<F> = v.iter().map(|&a| F::from_f32_lossless(a)).collect();
        self.apply(&x).into_iter().map(|a| a.f64() as f32).collect()
    }

    /// `max |P P - P|`.
    pub fn idempotence_error(&self) -> F {
        let pp = matmul(&self.p, &self.p, self.dim, self.dim, self.dim);
        pp.iter().zip(&self.p).fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// `max |P - P^T|`.
    pub fn symmetry_error(&self) -> F {
        let d = self.dim;
        let mut m = F::zero();
        for i in 0..d {
            for j in 0..i {
                m = m.max((self.p[i * d + j] - self.p[j * d + i]).abs());
            }
        }
        m
    }

    /// `max |W P|` for a row-major `k x dim` matrix `w`.
    pub fn residual(&self, w: &[F]) -> F {
        let k = w.len() / self.dim;
        max_abs(&matmul(w, &self.p, k, self.dim, self.dim))
    }

    /// Projects every token vector of `store` (DEP halves are projected
    /// separately because aggregation happens afterwards).
    pub fn project_store(&self, store: &EmbeddingStore) -> Result<EmbeddingStore> {
        if store.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: store.dim(),
            });
        }
        store.map_tokens(|row| self.apply_f32(row))
    }

    /// `"PRJM" | u32 version=1 | u32 dim | u32 removed_rank | u32 iterations |
    /// u8 source (0 topic, 1 random) | u32 scalar bytes | P row-major | u32 CRC32`,
    /// the checksum covering every byte after the magic.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25 + self.p.len() * F::BYTES as usize + 4);
        out.extend_from_slice(b"PRJM");
        for v in [1u32, self.dim as u32, self.removed_rank as u32, self.iterations as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(match self.source {
            Source::Topic => 0,
            Source::Random => 1,
        });
        out.extend_from_slice(&F::BYTES.to_le_bytes());
        for &v in &self.p {
            v.write_le(&mut out);
        }
        let crc = crc32fast::hash(&out[4..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Format(format!("PRJM: {m}"));
        if b.len() < 29 || &b[..4] != b"PRJM" {
            return Err(fail("bad magic"));
        }
        let u = |at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap());
        if u(4) != 1 {
            return Err(fail("unsupported version"));
        }
        let (dim, removed_rank, iterations) = (u(8) as usize, u(12) as usize, u(16) as usize);
        let source = match b[20] {
            0 => Source::Topic,
            1 => Source::Random,
            _ => return Err(fail("unknown source")),
        };
        let width = u(21) as usize;
        if width != 4 && width != 8 {
            return Err(fail("unsupported scalar width"));
        }
        let end = 25 + dim * dim * width;
        if b.len() != end + 4 {
            return Err(fail("truncated payload"));
        }
        if crc32fast::hash(&b[4..end]) != u(end) {
            return Err(fail("checksum mismatch"));
        }
        let p = (0..dim * dim)
            .map(|i| {
                let at = 25 + i * width;
                if width == 4 {
                    F::of(f32::read_le(&b[at..]) as f64)
                } else {
                    F::of(f64::read_le(&b[at..]))
                }
            })
            .collect();
        Ok(ProjectionMatrix {
            dim,
            p,
            removed_rank,
            iterations,
            source,
        })
    }
}

/// Projection onto the nullspace of the row space of `w` (`k x dim`).
pub fn nullspace_projection<F: Scalar>(w: &[F], dim: usize) -> Result<ProjectionMatrix<F>> {
    if dim == 0 || !w.len().is_multiple_of(dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: w.len(),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite weights".into()));
    }
    let rows: Vec<Vec<F>> = w.chunks_exact(dim).map(|r| r.to_vec()).collect();
    let basis = row_space_basis(&rows, dim, F::of(RANK_TOL));
    let mut proj = ProjectionMatrix::identity(dim, Source::Topic);
    for b in &basis {
        for i in 0..dim {
            for j in 0..dim {
                proj.p[i * dim + j] -= b[i] * b[j];
            }
        }
    }
    proj.removed_rank = basis.len();
    Ok(proj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmnesicConfig {
    pub train: TrainConfig,
    pub max_iterations: usize,
    /// Stop once dev accuracy is within this margin of the majority rate.
    pub tolerance: f64,
    pub dev_fraction: f64,
    pub split_seed: u64,
}

impl Default for AmnesicConfig {
    fn default() -> Self {
        AmnesicConfig {
            // Zero init: the weight rows then only carry learned directions,
            // which is what the projection must remove. Keeping the last
            // epoch lets an uninformed probe settle on the majority class
            // instead of the spread-out guesses macro-F1 selection favours.
            train: TrainConfig {
                init: Init::Zero,
                select_on_dev: false,
                ..TrainConfig::default()
            },
            max_iterations: 20,
            tolerance: 0.02,
            dev_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub dev_accuracy: f64,
    pub removed_rank: usize,
}

#[derive(Debug, Clone)]
pub struct Removal<F> {
    pub projection: ProjectionMatrix<F>,
    /// Every probe weight row used, row-major `rows x dim`, expressed in
    /// the original embedding space.
    pub used_weights: Vec<F>,
    pub majority: f64,
    pub final_accuracy: f64,
    pub history: Vec<IterationLog>,
}

fn projected_set<F: Scalar>(base: &LabeledSet<F>, proj: Option<&ProjectionMatrix<F>>) -> LabeledSet<F> {
    match proj {
        None => base.clone(),
        Some(p) => {
            let mut out = base.clone();
            for (dst, src) in out.features.chunks_exact_mut(base.dim).zip(base.features.chunks_exact(base.dim)) {
                dst.copy_from_slice(&p.apply(src));
            }
            out
        }
    }
}

fn accuracy<F: Scalar>(model: &linprobe::ProbeModel<F>, set: &LabeledSet<F>) -> Result<f64> {
    let pred = model.predict_all(set)?;
    Ok(pred.iter().zip(&set.labels).filter(|(p, g)| p == g).count() as f64 / set.len() as f64)
}

/// Majority-class rate of `labels`.
pub fn majority_rate(labels: &[usize], k: usize) -> f64 {
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&y| counts[y] += 1);
    *counts.iter().max().unwrap_or(&0) as f64 / labels.len().max(1) as f64
}

/// Iteratively removes the property labelled by `property` from `store`.
pub fn amnesic_remove<F: Scalar>(
    store: &EmbeddingStore,
    property: &TaskDataset,
    cfg: &AmnesicConfig,
) -> Result<Removal<F>> {
    if crate::embedstore::instance_dim(property.task, store.dim()) != store.dim() {
        return Err(Error::Config(format!(
            "property task {} must use single-token vectors",
            property.task
        )));
    }
    let table = FeatureTable::build(store, property)?;
    let dim = table.dim;
    let n = property.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(cfg.split_seed, Stream::AmnesicSplit));
    let n_dev = ((cfg.dev_fraction * n as f64).ceil() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::Insufficient("property dataset needs at least 2 instances".into()));
    }
    let (dev_rows, train_rows) = order.split_at(n_dev);
    let labels = property.label_ids();
    let base_train = LabeledSet::<F>::from_table(property.task, &property.label_set, &table, labels, train_rows);
    let base_dev = LabeledSet::<F>::from_table(property.task, &property.label_set, &table, labels, dev_rows);
    let majority = majority_rate(&base_dev.labels, property.num_labels());

    let mut used: Vec<F> = Vec::new();
    let mut proj: Option<ProjectionMatrix<F>> = None;
    let mut history = Vec::new();
    let mut final_accuracy = 1.0;
    for iteration in 0..=cfg.max_iterations {
        let tr = projected_set(&base_train, proj.as_ref());
        let dv = projected_set(&base_dev, proj.as_ref());
        let probe = linprobe::train(&tr, &dv, &cfg.train.with_seed(cfg.train.seed + iteration as u64))?.model;
        final_accuracy = accuracy(&probe, &dv)?;
        history.push(IterationLog {
            iteration,
            dev_accuracy: final_accuracy,
            removed_rank: proj.as_ref().map_or(0, |p| p.removed_rank),
        });
        log::debug!("amnesic iteration {iteration}: dev accuracy {final_accuracy:.4} (majority {majority:.4})");
        if final_accuracy <= majority + cfg.tolerance || iteration == cfg.max_iterations {
            break;
        }
        // The probe saw projected inputs, so its rows act as W P on raw ones.
        let rows = match &proj {
            Some(p) => matmul(&probe.weights, &p.p, probe.num_classes(), dim, dim),
            None => probe.weights.clone(),
        };
        used.extend(rows);
        let mut next = nullspace_projection(&used, dim)?;
        if next.removed_rank >= dim {
            return Err(Error::Numeric(format!(
                "removal would eliminate all {dim} dimensions at iteration {}",
                iteration + 1
            )));
        }
        next.iterations = iteration + 1;
        proj = Some(next);
    }
    let mut projection = proj.unwrap_or_else(|| ProjectionMatrix::identity(dim, Source::Topic));
    projection.source = Source::Topic;
    Ok(Removal {
        projection,
        used_weights: used,
        majority,
        final_accuracy,
        history,
    })
}

/// Projection removing `rank` random Gaussian directions.
pub fn random_remove<F: Scalar>(dim: usize, rank: usize, seed: u64) -> Result<ProjectionMatrix<F>> {
    if rank >= dim {
        return Err(Error::Config(format!("cannot remove rank {rank} from dimension {dim}")));
    }
    let mut rng = seeded(seed, Stream::RandomRemoval);
    let w: Vec<F> = (0..rank * dim)
        .map(|_| F::of(StandardNormal.sample(&mut rng)))
        .collect();
    let mut p = if rank == 0 {
        ProjectionMatrix::identity(dim, Source::Random)
    } else {
        nullspace_projection(&w, dim)?
    };
    p.source = Source::Random;
    Ok(p)
}

/// Downstream effect of removing a property, with the random control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmnesicReport {
    pub model: String,
    pub task: String,
    pub mode: Mode,
    pub f1_with: f64,
    pub f1_without: f64,
    pub delta: f64,
    pub f1_random: f64,
    pub control_delta: f64,
    pub property_accuracy: f64,
    pub majority_baseline: f64,
    pub removed_rank: usize,
    pub iterations: usize,
}

impl AmnesicReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &str,
        task: &str,
        mode: Mode,
        f1_with: f64,
        f1_without: f64,
        f1_random: f64,
        removal: (f64, f64, usize, usize),
    ) -> Self {
        let (property_accuracy, majority_baseline, removed_rank, iterations) = removal;
        AmnesicReport {
            model: model.to_string(),
            task: task.to_string(),
            mode,
            f1_with,
            f1_without,
            delta: f1_without - f1_with,
            f1_random,
            control_delta: f1_random - f1_with,
            property_accuracy,
            majority_baseline,
            removed_rank,
            iterations,
        }
    }
}
