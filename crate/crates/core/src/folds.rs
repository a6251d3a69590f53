//! Three-fold In-Topic and Cross-Topic evaluation plans.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{seeded, Stream};
use crate::corpus::{vocabulary, TaskDataset};
use crate::error::{Error, Result};

pub const FOLDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "IN_TOPIC")]
    In,
    #[serde(rename = "CROSS_TOPIC")]
    Cross,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::In => "in",
            Mode::Cross => "cross",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "in" | "in_topic" | "in-topic" => Ok(Mode::In),
            "cross" | "cross_topic" | "cross-topic" => Ok(Mode::Cross),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Dataset row indices of one split.
    pub fn indices(&self, dataset: &TaskDataset, split: Split) -> Result<Vec<usize>> {
        self.ids(split).iter().map(|id| dataset.require(id)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub mode: Mode,
    pub seed: u64,
    pub folds: Vec<Fold>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub topic_assignment: Option<Vec<BTreeMap<String, Split>>>,
}

impl FoldPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Checks the structural invariants of the plan against `dataset`.
    pub fn validate(&self, dataset: &TaskDataset) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.folds.len() != FOLDS {
            return bad(format!("expected {FOLDS} folds, got {}", self.folds.len()));
        }
        let mut tested: HashSet<&str> = HashSet::new();
        for (k, fold) in self.folds.iter().enumerate() {
            let mut seen: HashSet<&str> = HashSet::new();
            for id in fold.train.iter().chain(&fold.dev).chain(&fold.test) {
                dataset.require(id)?;
                if !seen.insert(id) {
                    return bad(format!("fold {k}: instance {id} in two splits"));
                }
            }
            if seen.len() != dataset.len() {
                return bad(format!("fold {k} does not cover every instance"));
            }
            for id in &fold.test {
                if !tested.insert(id) {
                    return bad(format!("instance {id} tested in two folds"));
                }
            }
            if self.mode == Mode::Cross {
                let topics = |ids: &[String]| -> BTreeSet<String> {
                    ids.iter()
                        .map(|id| dataset.instances[dataset.require(id).unwrap()].topic.clone())
                        .collect()
                };
                let (tr, dv, te) = (topics(&fold.train), topics(&fold.dev), topics(&fold.test));
                if !tr.is_disjoint(&dv) || !tr.is_disjoint(&te) || !dv.is_disjoint(&te) {
                    return bad(format!("fold {k}: splits share a topic"));
                }
            }
        }
        if tested.len() != dataset.len() {
            return bad("test splits do not cover every instance".into());
        }
        if self.mode == Mode::Cross {
            let assignment = self
                .topic_assignment
                .as_ref()
                .ok_or_else(|| Error::Format("cross plan without topic assignment".into()))?;
            for topic in &dataset.topic_set {
                let n = assignment
                    .iter()
                    .filter(|a| a.get(topic) == Some(&Split::Test))
                    .count();
                if n != 1 {
                    return bad(format!("topic {topic} tested {n} times"));
                }
            }
        }
        Ok(())
    }
}

fn ids_where(dataset: &TaskDataset, mut keep: impl FnMut(usize) -> bool) -> Vec<String> {
    (0..dataset.len())
        .filter(|&i| keep(i))
        .map(|i| dataset.instances[i].instance_id.clone())
        .collect()
}

/// Topic-disjoint three-fold plan.
///
/// Topics are shuffled and dealt round-robin into three test groups, so
/// each topic is tested exactly once. For every fold one of the remaining
/// topics (chosen at random) becomes the dev topic and the rest train.
pub fn plan_cross(dataset: &TaskDataset, seed: u64) -> Result<FoldPlan> {
    let m = dataset.topic_set.len();
    if m < FOLDS {
        return Err(Error::Insufficient(format!(
            "cross-topic folds need at least {FOLDS} topics, found {m}"
        )));
    }
    let mut rng = seeded(seed, Stream::CrossPlan);
    let mut topics: Vec<usize> = (0..m).collect();
    topics.shuffle(&mut rng);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); FOLDS];
    for (i, &t) in topics.iter().enumerate() {
        groups[i % FOLDS].push(t);
    }

    let mut folds = Vec::with_capacity(FOLDS);
    let mut assignment = Vec::with_capacity(FOLDS);
    for group in &groups {
        let mut rest: Vec<usize> = topics.iter().copied().filter(|t| !group.contains(t)).collect();
        rest.shuffle(&mut rng);
        let mut split_of = vec![Split::Train; m];
        for &t in group {
            split_of[t] = Split::Test;
        }
        split_of[rest[0]] = Split::Dev;
        let fold = Fold {
            train: ids_where(dataset, |i| split_of[dataset.topic_id(i)] == Split::Train),
            dev: ids_where(dataset, |i| split_of[dataset.topic_id(i)] == Split::Dev),
            test: ids_where(dataset, |i| split_of[dataset.topic_id(i)] == Split::Test),
        };
        folds.push(fold);
        assignment.push(
            dataset
                .topic_set
                .iter()
                .enumerate()
                .map(|(t, name)| (name.clone(), split_of[t]))
                .collect(),
        );
    }
    Ok(FoldPlan {
        mode: Mode::Cross,
        seed,
        folds,
        topic_assignment: Some(assignment),
    })
}

/// Instance-level three-fold plan whose split sizes mirror `cross`.
pub fn plan_in(dataset: &TaskDataset, cross: &FoldPlan, seed: u64) -> Result<FoldPlan> {
    if cross.mode != Mode::Cross || cross.folds.len() != FOLDS {
        return Err(Error::Config("plan_in needs a three-fold cross plan".into()));
    }
    let n = dataset.len();
    let test_total: usize = cross.folds.iter().map(|f| f.test.len()).sum();
    assert_eq!(test_total, n, "cross plan test splits must partition the dataset");

    // Offset the stream so In and Cross plans with equal seeds are independent.
    let mut rng = seeded(seed, Stream::InPlan);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut test_of = vec![usize::MAX; n];
    let mut start = 0;
    for (k, fold) in cross.folds.iter().enumerate() {
        for &i in &order[start..start + fold.test.len()] {
            test_of[i] = k;
        }
        start += fold.test.len();
    }

    let mut folds = Vec::with_capacity(FOLDS);
    for (k, cf) in cross.folds.iter().enumerate() {
        let mut rest: Vec<usize> = (0..n).filter(|&i| test_of[i] != k).collect();
        rest.shuffle(&mut rng);
        assert_eq!(rest.len(), cf.train.len() + cf.dev.len());
        let mut split_of = vec![Split::Test; n];
        for (j, &i) in rest.iter().enumerate() {
            split_of[i] = if j < cf.dev.len() { Split::Dev } else { Split::Train };
        }
        folds.push(Fold {
            train: ids_where(dataset, |i| split_of[i] == Split::Train),
            dev: ids_where(dataset, |i| split_of[i] == Split::Dev),
            test: ids_where(dataset, |i| split_of[i] == Split::Test),
        });
    }
    Ok(FoldPlan {
        mode: Mode::In,
        seed,
        folds,
        topic_assignment: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Seen {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeenTag {
    pub instance_id: String,
    pub split: Split,
    pub tag: Seen,
}

/// Tags DEV and TEST instances by whether their lexical key occurs in TRAIN.
pub fn tag_seen(dataset: &TaskDataset, fold: &Fold) -> Result<Vec<SeenTag>> {
    let mut train_keys = HashSet::new();
    for id in &fold.train {
        train_keys.insert(dataset.lexical_key(dataset.require(id)?));
    }
    let mut tags = Vec::with_capacity(fold.dev.len() + fold.test.len());
    for split in [Split::Dev, Split::Test] {
        for id in fold.ids(split) {
            let key = dataset.lexical_key(dataset.require(id)?);
            let tag = if train_keys.contains(&key) { Seen::Seen } else { Seen::Unseen };
            tags.push(SeenTag {
                instance_id: id.clone(),
                split,
                tag,
            });
        }
    }
    Ok(tags)
}

/// Share of SEEN tags among `split` instances.
pub fn seen_ratio(tags: &[SeenTag], split: Split) -> f64 {
    let (seen, total) = tags
        .iter()
        .filter(|t| t.split == split)
        .fold((0usize, 0usize), |(s, n), t| (s + (t.tag == Seen::Seen) as usize, n + 1));
    if total == 0 {
        0.0
    } else {
        seen as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabShift {
    /// Train vocabulary minus test vocabulary.
    pub shift: BTreeSet<String>,
    /// Test vocabulary minus train vocabulary.
    pub reverse: BTreeSet<String>,
}

impl VocabShift {
    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }
}

pub fn vocab_shift(dataset: &TaskDataset, fold: &Fold) -> Result<VocabShift> {
    let train = vocabulary(dataset, fold.train.iter().map(String::as_str))?;
    let test = vocabulary(dataset, fold.test.iter().map(String::as_str))?;
    Ok(VocabShift {
        shift: train.difference(&test).cloned().collect(),
        reverse: test.difference(&train).cloned().collect(),
    })
}

/// Instance id -> fold index of its TEST split.
pub fn test_fold_of(plan: &FoldPlan) -> HashMap<&str, usize> {
    plan.folds
        .iter()
        .enumerate()
        .flat_map(|(k, f)| f.test.iter().map(move |id| (id.as_str(), k)))
        .collect()
}
