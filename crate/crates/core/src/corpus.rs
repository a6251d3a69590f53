//! Topic-annotated sentences and token-labelled probing instances.
//!
//! Two line-delimited JSON files describe a dataset: a sentence file
//! (`sentence_id, topic, tokens`) and an instance file
//! (`id, task, sentence_id, positions, label, topic`). Labels and topics
//! are opaque strings mapped to dense ids in first-occurrence order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskKind {
    Dep,
    Pos,
    Ner,
    Stance,
    Topicspec,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Dep,
        TaskKind::Pos,
        TaskKind::Ner,
        TaskKind::Stance,
        TaskKind::Topicspec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Dep => "DEP",
            TaskKind::Pos => "POS",
            TaskKind::Ner => "NER",
            TaskKind::Stance => "STANCE",
            TaskKind::Topicspec => "TOPICSPEC",
        }
    }

    /// Number of slots an instance of this task carries.
    pub fn slot_count(self) -> usize {
        match self {
            TaskKind::Dep => 2,
            _ => 1,
        }
    }

    /// Checks slot arity against a sentence of `token_count` tokens.
    pub fn check_positions(self, positions: &[Vec<usize>], token_count: usize) -> Result<(), String> {
        if positions.len() != self.slot_count() {
            return Err(format!(
                "{} expects {} slot(s), found {}",
                self.as_str(),
                self.slot_count(),
                positions.len()
            ));
        }
        for slot in positions {
            if let Some(&bad) = slot.iter().find(|&&i| i >= token_count) {
                return Err(format!(
                    "position {bad} out of range for sentence of {token_count} tokens"
                ));
            }
        }
        match self {
            TaskKind::Dep | TaskKind::Pos | TaskKind::Topicspec => {
                if positions.iter().any(|s| s.len() != 1) {
                    return Err(format!(
                        "{} slots must reference exactly one token",
                        self.as_str()
                    ));
                }
            }
            TaskKind::Ner => {
                let slot = &positions[0];
                if slot.is_empty() {
                    return Err("NER span is empty".into());
                }
                let mut sorted = slot.clone();
                sorted.sort_unstable();
                if sorted.windows(2).any(|w| w[1] != w[0] + 1) {
                    return Err("NER span is not contiguous".into());
                }
            }
            TaskKind::Stance => {
                let mut sorted = positions[0].clone();
                sorted.sort_unstable();
                if sorted != (0..token_count).collect::<Vec<_>>() {
                    return Err("STANCE slot must span every token of the sentence".into());
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sentence_id: String,
    pub topic: String,
    pub tokens: Vec<String>,
}

/// All sentences of a dataset, indexed by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    index: HashMap<String, usize>,
    topics: Vec<String>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Result<Self> {
        let mut index = HashMap::with_capacity(sentences.len());
        let mut topics: Vec<String> = Vec::new();
        for (i, s) in sentences.iter().enumerate() {
            if s.tokens.is_empty() {
                return Err(Error::Format(format!("sentence {} has no tokens", s.sentence_id)));
            }
            if index.insert(s.sentence_id.clone(), i).is_some() {
                return Err(Error::Duplicate(s.sentence_id.clone()));
            }
            if !topics.contains(&s.topic) {
                topics.push(s.topic.clone());
            }
        }
        Ok(Corpus {
            sentences,
            index,
            topics,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sentences = read_jsonl::<Sentence>(path)?;
        Corpus::new(sentences)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.sentences)
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    /// Topics in first-occurrence order.
    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn get(&self, sentence_id: &str) -> Option<&Sentence> {
        self.index.get(sentence_id).map(|&i| &self.sentences[i])
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub task: TaskKind,
    pub sentence_id: String,
    pub positions: Vec<Vec<usize>>,
    pub label: String,
    pub topic: String,
}

/// Validated instances of one probing task over a shared corpus.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub task: TaskKind,
    pub instances: Vec<Instance>,
    pub label_set: Vec<String>,
    pub topic_set: Vec<String>,
    label_ids: Vec<usize>,
    topic_ids: Vec<usize>,
    index: HashMap<String, usize>,
    corpus: Arc<Corpus>,
}

impl TaskDataset {
    /// Validates `instances` against `corpus` and assigns dense label/topic ids.
    pub fn new(task: TaskKind, instances: Vec<Instance>, corpus: Arc<Corpus>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Insufficient(format!("{task} dataset has no instances")));
        }
        let mut label_set: Vec<String> = Vec::new();
        let mut topic_set: Vec<String> = Vec::new();
        let mut label_ids = Vec::with_capacity(instances.len());
        let mut topic_ids = Vec::with_capacity(instances.len());
        let mut index = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            let invalid = |msg: String| Error::InvalidInstance {
                id: inst.instance_id.clone(),
                msg,
            };
            if inst.task != task {
                return Err(invalid(format!("task {} in a {task} dataset", inst.task)));
            }
            let sentence = corpus.get(&inst.sentence_id).ok_or_else(|| Error::Unknown {
                kind: "sentence",
                id: inst.sentence_id.clone(),
            })?;
            if sentence.topic != inst.topic {
                return Err(invalid(format!(
                    "topic `{}` differs from sentence topic `{}`",
                    inst.topic, sentence.topic
                )));
            }
            task.check_positions(&inst.positions, sentence.tokens.len())
                .map_err(invalid)?;
            if index.insert(inst.instance_id.clone(), i).is_some() {
                return Err(Error::Duplicate(inst.instance_id.clone()));
            }
            label_ids.push(intern(&mut label_set, &inst.label));
            topic_ids.push(intern(&mut topic_set, &inst.topic));
        }
        if label_set.len() < 2 {
            return Err(Error::Insufficient(format!(
                "{task} dataset needs at least 2 labels, found {}",
                label_set.len()
            )));
        }
        Ok(TaskDataset {
            task,
            instances,
            label_set,
            topic_set,
            label_ids,
            topic_ids,
            index,
            corpus,
        })
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn label_id(&self, idx: usize) -> usize {
        self.label_ids[idx]
    }

    pub fn label_ids(&self) -> &[usize] {
        &self.label_ids
    }

    pub fn topic_id(&self, idx: usize) -> usize {
        self.topic_ids[idx]
    }

    pub fn position(&self, instance_id: &str) -> Option<usize> {
        self.index.get(instance_id).copied()
    }

    pub fn require(&self, instance_id: &str) -> Result<usize> {
        self.position(instance_id).ok_or_else(|| Error::Unknown {
            kind: "instance",
            id: instance_id.to_string(),
        })
    }

    pub fn sentence_of(&self, idx: usize) -> &Sentence {
        self.corpus
            .get(&self.instances[idx].sentence_id)
            .expect("validated at construction")
    }

    /// Lowercased surface forms at the relevant positions, all slots flattened.
    pub fn relevant_tokens(&self, idx: usize) -> impl Iterator<Item = String> + '_ {
        let sentence = self.sentence_of(idx);
        self.instances[idx]
            .positions
            .iter()
            .flatten()
            .map(move |&p| sentence.tokens[p].to_lowercase())
    }

    /// Key used for seen/unseen matching.
    ///
    /// DEP: ordered pair of lowercased surfaces; NER and STANCE: the
    /// space-joined lowercased span in sentence order; otherwise the
    /// lowercased token.
    pub fn lexical_key(&self, idx: usize) -> String {
        let sentence = self.sentence_of(idx);
        let inst = &self.instances[idx];
        let lower = |p: usize| sentence.tokens[p].to_lowercase();
        match inst.task {
            TaskKind::Dep => format!("{}\u{2192}{}", lower(inst.positions[0][0]), lower(inst.positions[1][0])),
            TaskKind::Ner | TaskKind::Stance => {
                let mut span = inst.positions[0].clone();
                span.sort_unstable();
                span.into_iter().map(lower).collect::<Vec<_>>().join(" ")
            }
            TaskKind::Pos | TaskKind::Topicspec => lower(inst.positions[0][0]),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.instances)
    }
}

fn intern(set: &mut Vec<String>, value: &str) -> usize {
    match set.iter().position(|s| s == value) {
        Some(i) => i,
        None => {
            set.push(value.to_string());
            set.len() - 1
        }
    }
}

/// Loads and validates an instance file for `task`.
pub fn load_dataset(path: &Path, corpus: Arc<Corpus>, task: TaskKind) -> Result<TaskDataset> {
    let instances = read_jsonl::<Instance>(path)?;
    TaskDataset::new(task, instances, corpus)
}

/// Relevant-token vocabulary of a set of instances.
pub fn vocabulary<'a, I>(dataset: &TaskDataset, split: I) -> Result<BTreeSet<String>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut vocab = BTreeSet::new();
    for id in split {
        let idx = dataset.require(id)?;
        vocab.extend(dataset.relevant_tokens(idx));
    }
    Ok(vocab)
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
