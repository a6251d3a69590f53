//! Synthetic corpora with planted topic and label directions.
//!
//! Every sentence belongs to one topic and mixes three kinds of token
//! types: shared ones used by all topics, semi-shared ones tied to two
//! topics, and topic-exclusive ones. A token occurrence embeds as
//!
//! `label_signal * L[y(w)] + topic_signal * spec(w) * T[topic]
//!  + content_signal * (1 + specific_content * spec(w)) * [y(w) != 0] * C
//!  + stance_signal * S[s] + noise`
//!
//! where `spec` is 1 for exclusive, 0.5 for semi-shared and 0 for shared
//! types. Label 0 plays the part of function words and is only carried by
//! shared types; the other labels are content labels and share the
//! direction `C`, which grows with topic specificity, so removing
//! specificity also costs the label probe. Exclusive types take their
//! topic's preferred content label with probability `confound`, so topic
//! information doubles as a label cue that only transfers to topics seen
//! in training. Shared slots are re-weighted per topic so every topic has
//! the same expected label marginal.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, Stream};
use crate::corpus::{Corpus, Instance, Sentence, TaskDataset, TaskKind};
use crate::embedstore::{EmbeddingStore, StoreWriter};
use crate::error::{Error, Result};
use crate::topicspec::{self, Binning};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub topics: usize,
    pub shared_vocab: usize,
    pub semi_vocab: usize,
    pub exclusive_per_topic: usize,
    pub sentences_per_topic: usize,
    pub sentence_len: usize,
    pub dim: usize,
    pub num_labels: usize,
    pub topic_signal: f64,
    /// Strength of the direction shared by all content-labelled tokens.
    pub content_signal: f64,
    /// Extra content strength per unit of specificity, so the content
    /// direction also encodes how topic-specific a token is.
    pub specific_content: f64,
    pub label_signal: f64,
    pub stance_signal: f64,
    pub noise: f64,
    /// Probability that an exclusive type (or a sentence's stance) takes
    /// its topic's preferred label.
    pub confound: f64,
    /// Share of token slots filled from the topic's exclusive pool.
    pub exclusive_rate: f64,
    /// Share of token slots filled from the semi-shared pool.
    pub semi_rate: f64,
    /// Probability that an exclusive slot borrows another topic's pool.
    pub leakage: f64,
    /// Share of shared types carrying the function label 0.
    pub function_share: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 9,
            shared_vocab: 90,
            semi_vocab: 90,
            exclusive_per_topic: 10,
            sentences_per_topic: 60,
            sentence_len: 10,
            dim: 32,
            num_labels: 3,
            topic_signal: 6.0,
            content_signal: 2.0,
            specific_content: 1.0,
            label_signal: 0.3,
            stance_signal: 1.0,
            noise: 1.0,
            confound: 0.95,
            exclusive_rate: 0.3,
            semi_rate: 0.05,
            leakage: 0.0,
            function_share: 0.5,
            seed: 0,
        }
    }
}

pub const STANCES: [&str; 3] = ["AGAINST", "FAVOR", "NONE"];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.topics < 2 {
            return bad("need at least 2 topics");
        }
        if self.num_labels < 3 {
            return bad("need a function label and at least 2 content labels");
        }
        if self.sentence_len < 2 || self.sentences_per_topic == 0 {
            return bad("sentences need at least 2 tokens");
        }
        if self.exclusive_per_topic == 0 {
            return bad("exclusive pools must be non-empty");
        }
        let function_types = (self.function_share * self.shared_vocab as f64).round() as usize;
        if function_types == 0 || self.shared_vocab - function_types < self.num_labels - 1 {
            return bad("shared vocabulary needs a type per label");
        }
        if self.semi_vocab == 0 && self.semi_rate > 0.0 {
            return bad("semi_rate > 0 needs semi_vocab > 0");
        }
        for (name, v) in [
            ("topic_signal", self.topic_signal),
            ("content_signal", self.content_signal),
            ("specific_content", self.specific_content),
            ("label_signal", self.label_signal),
            ("stance_signal", self.stance_signal),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("confound", self.confound),
            ("exclusive_rate", self.exclusive_rate),
            ("semi_rate", self.semi_rate),
            ("leakage", self.leakage),
            ("function_share", self.function_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.exclusive_rate + self.semi_rate > 1.0 {
            return bad("exclusive_rate + semi_rate exceeds 1");
        }
        let needed = self.topics + self.num_labels + STANCES.len() + 1;
        if self.dim < needed {
            return Err(Error::Config(format!(
                "synth: dim {} too small for {needed} orthogonal directions",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Planted orthonormal directions.
#[derive(Debug, Clone)]
pub struct Directions {
    pub topic: Vec<Vec<f64>>,
    pub label: Vec<Vec<f64>>,
    pub stance: Vec<Vec<f64>>,
    pub content: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Arc<Corpus>,
    pub datasets: BTreeMap<TaskKind, TaskDataset>,
    pub store: EmbeddingStore,
    pub directions: Directions,
    /// Planted specificity per token type (0, 0.5 or 1).
    pub spec: BTreeMap<String, f64>,
}

impl SynthData {
    pub fn dataset(&self, task: TaskKind) -> &TaskDataset {
        &self.datasets[&task]
    }

    /// Writes `corpus.jsonl`, `<task>.jsonl` per task and `embeddings.tprb`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.save(&dir.join("corpus.jsonl"))?;
        for (task, ds) in &self.datasets {
            ds.save(&dir.join(format!("{}.jsonl", task.as_str().to_lowercase())))?;
        }
        self.store.write(&dir.join("embeddings.tprb"))
    }
}

/// `count` seeded orthonormal vectors in `dim` dimensions (Gram-Schmidt).
pub fn orthonormal(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for u in &out {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    out
}

struct TokenType {
    name: String,
    label: usize,
    spec: f64,
}

pub fn label_name(y: usize) -> String {
    format!("L{y}")
}

pub fn topic_name(t: usize) -> String {
    format!("topic{t:02}")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed, Stream::Synth);
    let k = cfg.num_labels;
    let mut dirs = orthonormal(cfg.topics + k + STANCES.len() + 1, cfg.dim, &mut rng);
    let content_dir = dirs.pop().expect("content direction");
    let stance_dirs = dirs.split_off(cfg.topics + k);
    let label_dirs = dirs.split_off(cfg.topics);
    let directions = Directions {
        topic: dirs,
        label: label_dirs,
        stance: stance_dirs,
        content: content_dir,
    };
    let content = k - 1;
    let preferred = |t: usize| 1 + t % content;

    // The first types carry the function label; the rest cycle through the
    // content labels so every label has shared types to draw from.
    let function_types = (cfg.function_share * cfg.shared_vocab as f64).round() as usize;
    let shared: Vec<TokenType> = (0..cfg.shared_vocab)
        .map(|i| TokenType {
            name: format!("s{i}"),
            label: if i < function_types { 0 } else { 1 + (i - function_types) % content },
            spec: 0.0,
        })
        .collect();
    let shared_by_label: Vec<Vec<usize>> = (0..k).map(|y| (0..shared.len()).filter(|&i| shared[i].label == y).collect()).collect();
    // Each semi-shared type lives in two topics; content labels cycle.
    let semi: Vec<(TokenType, [usize; 2])> = (0..cfg.semi_vocab)
        .map(|i| {
            let a = i % cfg.topics;
            let b = (a + 1 + rng.gen_range(0..cfg.topics - 1)) % cfg.topics;
            (
                TokenType {
                    name: format!("h{i}"),
                    label: 1 + i % content,
                    spec: 0.5,
                },
                [a, b],
            )
        })
        .collect();
    let exclusive: Vec<Vec<TokenType>> = (0..cfg.topics)
        .map(|t| {
            (0..cfg.exclusive_per_topic)
                .map(|i| TokenType {
                    name: format!("x{t}_{i}"),
                    label: if rng.gen_bool(cfg.confound) {
                        preferred(t)
                    } else {
                        1 + rng.gen_range(0..content)
                    },
                    spec: 1.0,
                })
                .collect()
        })
        .collect();
    let semi_by_topic: Vec<Vec<usize>> = (0..cfg.topics)
        .map(|t| (0..semi.len()).filter(|&i| semi[i].1.contains(&t)).collect())
        .collect();

    // Label mass each topic receives from its exclusive and semi-shared
    // slots, and the share of slots left for shared types.
    let fixed: Vec<(Vec<f64>, f64)> = (0..cfg.topics)
        .map(|t| {
            let mut mass = vec![0.0; k];
            let leak = cfg.leakage;
            for (u, pool) in exclusive.iter().enumerate() {
                let w = if u == t { 1.0 - leak + leak / cfg.topics as f64 } else { leak / cfg.topics as f64 };
                for ty in pool {
                    mass[ty.label] += cfg.exclusive_rate * w / pool.len() as f64;
                }
            }
            let semi_rate = if semi_by_topic[t].is_empty() { 0.0 } else { cfg.semi_rate };
            for &i in &semi_by_topic[t] {
                mass[semi[i].0.label] += semi_rate / semi_by_topic[t].len() as f64;
            }
            (mass, 1.0 - cfg.exclusive_rate - semi_rate)
        })
        .collect();
    // Shared slots are drawn label-first with per-topic weights pulling
    // every topic towards the average marginal; otherwise unseen topics
    // would shift the label prior even without any topic signal.
    let natural: Vec<f64> = (0..k).map(|y| shared_by_label[y].len() as f64 / shared.len() as f64).collect();
    let target: Vec<f64> = (0..k)
        .map(|y| fixed.iter().map(|(m, rest)| m[y] + rest * natural[y]).sum::<f64>() / cfg.topics as f64)
        .collect();
    let shared_weights: Vec<WeightedIndex<f64>> = fixed
        .iter()
        .map(|(mass, rest)| {
            let q: Vec<f64> = if *rest > 0.0 {
                (0..k).map(|y| ((target[y] - mass[y]) / rest).max(0.0)).collect()
            } else {
                natural.clone()
            };
            let q = if q.iter().sum::<f64>() > 0.0 { q } else { natural.clone() };
            WeightedIndex::new(q).expect("non-negative weights")
        })
        .collect();

    let normal = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut sentences = Vec::new();
    let mut writer = StoreWriter::new(cfg.dim);
    let mut pos = Vec::new();
    let mut dep = Vec::new();
    let mut ner = Vec::new();
    let mut stance = Vec::new();
    for t in 0..cfg.topics {
        for j in 0..cfg.sentences_per_topic {
            let sid = format!("syn{t:02}_{j:04}");
            let topic = topic_name(t);
            let s = if rng.gen_bool(cfg.confound) {
                t % STANCES.len()
            } else {
                rng.gen_range(0..STANCES.len())
            };
            let mut types: Vec<&TokenType> = Vec::with_capacity(cfg.sentence_len);
            for _ in 0..cfg.sentence_len {
                let u: f64 = rng.gen();
                let ty = if u < cfg.exclusive_rate {
                    let home = if cfg.leakage > 0.0 && rng.gen_bool(cfg.leakage) {
                        rng.gen_range(0..cfg.topics)
                    } else {
                        t
                    };
                    exclusive[home].choose(&mut rng).unwrap()
                } else if u < cfg.exclusive_rate + cfg.semi_rate && !semi_by_topic[t].is_empty() {
                    &semi[*semi_by_topic[t].choose(&mut rng).unwrap()].0
                } else {
                    let y = shared_weights[t].sample(&mut rng);
                    &shared[*shared_by_label[y].choose(&mut rng).unwrap()]
                };
                types.push(ty);
            }
            let mut matrix = Vec::with_capacity(cfg.sentence_len * cfg.dim);
            for ty in &types {
                for d in 0..cfg.dim {
                    let v = cfg.label_signal * directions.label[ty.label][d]
                        + cfg.topic_signal * ty.spec * directions.topic[t][d]
                        + if ty.label != 0 {
                            cfg.content_signal * (1.0 + cfg.specific_content * ty.spec) * directions.content[d]
                        } else {
                            0.0
                        }
                        + cfg.stance_signal * directions.stance[s][d]
                        + if cfg.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    matrix.push(v as f32);
                }
            }
            writer.push(&sid, &matrix)?;

            let inst = |id: String, task: TaskKind, positions: Vec<Vec<usize>>, label: String| Instance {
                instance_id: id,
                task,
                sentence_id: sid.clone(),
                positions,
                label,
                topic: topic.clone(),
            };
            for (p, ty) in types.iter().enumerate() {
                pos.push(inst(format!("{sid}#p{p}"), TaskKind::Pos, vec![vec![p]], label_name(ty.label)));
            }
            for p in (0..cfg.sentence_len - 1).step_by(2) {
                // Head first; the relation carries the head's label.
                dep.push(inst(
                    format!("{sid}#d{p}"),
                    TaskKind::Dep,
                    vec![vec![p], vec![p + 1]],
                    format!("R{}", types[p].label),
                ));
                ner.push(inst(
                    format!("{sid}#n{p}"),
                    TaskKind::Ner,
                    vec![vec![p, p + 1]],
                    format!("E{}", types[p].label),
                ));
            }
            stance.push(inst(
                format!("{sid}#s"),
                TaskKind::Stance,
                vec![(0..cfg.sentence_len).collect()],
                STANCES[s].to_string(),
            ));
            sentences.push(Sentence {
                sentence_id: sid,
                topic,
                tokens: types.iter().map(|ty| ty.name.clone()).collect(),
            });
        }
    }
    let corpus = Arc::new(Corpus::new(sentences)?);
    let store = EmbeddingStore::from_bytes(writer.finish())?;
    let mut datasets = BTreeMap::new();
    for (task, instances) in [
        (TaskKind::Pos, pos),
        (TaskKind::Dep, dep),
        (TaskKind::Ner, ner),
        (TaskKind::Stance, stance),
    ] {
        datasets.insert(task, TaskDataset::new(task, instances, corpus.clone())?);
    }
    let table = topicspec::build_counts(&corpus, topicspec::DEFAULT_ALPHA)?;
    let binned = topicspec::bin_tokens(&topicspec::score_all(&table), Binning::EqualFrequency);
    datasets.insert(TaskKind::Topicspec, topicspec::topicspec_dataset(corpus.clone(), &binned.bins)?);

    let spec = shared
        .iter()
        .chain(semi.iter().map(|(ty, _)| ty))
        .chain(exclusive.iter().flatten())
        .map(|ty| (ty.name.clone(), ty.spec))
        .collect();
    Ok(SynthData {
        corpus,
        datasets,
        store,
        directions,
        spec,
    })
}

/// A POS-style task over pure-noise token vectors with uniformly random
/// labels `L0..L{k-1}`; one single-token sentence per instance, topics
/// assigned round-robin.
pub fn noise_task(n: usize, dim: usize, k: usize, topics: usize, seed: u64) -> Result<(TaskDataset, EmbeddingStore)> {
    if k < 2 || topics == 0 || dim == 0 {
        return Err(Error::Config("noise task needs k >= 2, topics >= 1 and dim >= 1".into()));
    }
    let mut rng = seeded(seed, Stream::Synth);
    let mut writer = StoreWriter::new(dim);
    let mut sentences = Vec::with_capacity(n);
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let sid = format!("noise{i:06}");
        let topic = format!("topic{:02}", i % topics);
        let row: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).map(|v: f64| v as f32).collect();
        writer.push(&sid, &row)?;
        instances.push(Instance {
            instance_id: format!("{sid}#p0"),
            task: TaskKind::Pos,
            sentence_id: sid.clone(),
            positions: vec![vec![0]],
            label: label_name(rng.gen_range(0..k)),
            topic: topic.clone(),
        });
        sentences.push(Sentence {
            sentence_id: sid,
            topic,
            tokens: vec![format!("w{}", i % 50)],
        });
    }
    let corpus = Arc::new(Corpus::new(sentences)?);
    let store = EmbeddingStore::from_bytes(writer.finish())?;
    Ok((TaskDataset::new(TaskKind::Pos, instances, corpus)?, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            topics: 4,
            sentences_per_topic: 6,
            sentence_len: 5,
            dim: 12,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_store() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.store.as_bytes(), b.store.as_bytes());
        let c = generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.store.as_bytes(), c.store.as_bytes());
    }

    #[test]
    fn shapes_and_tasks() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.corpus.len(), 24);
        assert_eq!(d.corpus.topics().len(), 4);
        assert_eq!(d.dataset(TaskKind::Pos).len(), 24 * 5);
        assert_eq!(d.dataset(TaskKind::Dep).len(), 24 * 2);
        assert_eq!(d.dataset(TaskKind::Stance).len(), 24);
        assert_eq!(d.dataset(TaskKind::Topicspec).len(), 24 * 5);
        d.store.check_corpus(&d.corpus).unwrap();
    }

    #[test]
    fn directions_orthonormal() {
        let d = generate(&small()).unwrap();
        let all: Vec<&Vec<f64>> = d
            .directions
            .topic
            .iter()
            .chain(&d.directions.label)
            .chain(&d.directions.stance)
            .chain(std::iter::once(&d.directions.content))
            .collect();
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_embedding_is_planted_sum() {
        let cfg = SynthConfig {
            noise: 0.0,
            ..small()
        };
        let d = generate(&cfg).unwrap();
        let s = &d.corpus.sentences()[0];
        let tok = d.store.token(&s.sentence_id, 0).unwrap();
        let pos = d.dataset(TaskKind::Pos);
        let y: usize = pos.instances[0].label[1..].parse().unwrap();
        let st = STANCES.iter().position(|x| *x == d.dataset(TaskKind::Stance).instances[0].label).unwrap();
        let spec = d.spec[&s.tokens[0]];
        for (i, &v) in tok.iter().enumerate() {
            let want = cfg.label_signal * d.directions.label[y][i]
                + cfg.topic_signal * spec * d.directions.topic[0][i]
                + if y != 0 { cfg.content_signal * (1.0 + cfg.specific_content * spec) * d.directions.content[i] } else { 0.0 }
                + cfg.stance_signal * d.directions.stance[st][i];
            assert!((v as f64 - want).abs() < 1e-5);
        }
    }

    #[test]
    fn dim_too_small_rejected() {
        let err = generate(&SynthConfig {
            dim: 8,
            ..small()
        })
        .unwrap_err();
        assert!(err.to_string().contains("too small"));
    }

    #[test]
    fn exclusive_tokens_stay_in_topic_without_leakage() {
        let d = generate(&small()).unwrap();
        for s in d.corpus.sentences() {
            let t: usize = s.topic["topic".len()..].parse().unwrap();
            for tok in s.tokens.iter().filter(|w| w.starts_with('x')) {
                assert!(tok.starts_with(&format!("x{t}_")));
            }
        }
    }

    #[test]
    fn write_roundtrip() {
        let d = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let corpus = Arc::new(Corpus::load(&dir.path().join("corpus.jsonl")).unwrap());
        let pos = crate::corpus::load_dataset(&dir.path().join("pos.jsonl"), corpus, TaskKind::Pos).unwrap();
        assert_eq!(pos.instances, d.dataset(TaskKind::Pos).instances);
        let store = EmbeddingStore::open(&dir.path().join("embeddings.tprb")).unwrap();
        assert_eq!(store.as_bytes(), d.store.as_bytes());
    }

    #[test]
    fn probe_weights_live_in_planted_subspace() {
        use crate::embedstore::FeatureTable;
        use crate::linprobe::{train, Init, LabeledSet, TrainConfig};
        let d = generate(&SynthConfig {
            noise: 0.05,
            dim: 48,
            ..SynthConfig::default()
        })
        .unwrap();
        let ds = d.dataset(TaskKind::Pos);
        let table = FeatureTable::build(&d.store, ds).unwrap();
        let rows: Vec<usize> = (0..ds.len()).collect();
        let set = LabeledSet::<f64>::from_table(ds.task, &ds.label_set, &table, ds.label_ids(), &rows);
        let empty = LabeledSet::<f64>::new(ds.task, ds.label_set.clone(), table.dim);
        let cfg = TrainConfig {
            init: Init::Zero,
            select_on_dev: false,
            ..TrainConfig::default()
        };
        let model = train(&set, &empty, &cfg).unwrap().model;
        let dirs = &d.directions;
        let planted: Vec<&Vec<f64>> = dirs
            .topic
            .iter()
            .chain(&dirs.label)
            .chain(&dirs.stance)
            .chain(std::iter::once(&dirs.content))
            .collect();
        for c in 0..model.num_classes() {
            let w = model.row(c);
            let total: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let inside: f64 = planted
                .iter()
                .map(|u| u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(inside > 0.9 * total, "class {c}: {inside} of {total}");
        }
    }
}
