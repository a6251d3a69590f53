//! Token topic-specificity by maximum log-odds ratio, and tercile bins.
//!
//! For token `w` and topic `t` the smoothed odds are
//! `o(w, t) = (n(w, t) + a) / (n(!w, t) + a)`; the complement odds
//! `o(w, !t)` pool every other topic. The specificity is
//! `r(w) = max_t ln(o(w, t) / o(w, !t))`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Instance, TaskDataset, TaskKind};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TopicOddsTable {
    /// Sorted lowercased token types.
    pub tokens: Vec<String>,
    /// Sorted topic names.
    pub topics: Vec<String>,
    /// `counts[token][topic]`.
    pub counts: Vec<Vec<u64>>,
    pub totals: Vec<u64>,
    pub alpha: f64,
    index: BTreeMap<String, usize>,
}

impl TopicOddsTable {
    pub fn from_counts(tokens: Vec<String>, topics: Vec<String>, counts: Vec<Vec<u64>>, alpha: f64) -> Result<Self> {
        if topics.len() < 2 {
            return Err(Error::Insufficient("topic specificity needs at least 2 topics".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::Config("smoothing alpha must be > 0".into()));
        }
        if counts.len() != tokens.len() || counts.iter().any(|row| row.len() != topics.len()) {
            return Err(Error::Format("count table shape mismatch".into()));
        }
        let mut totals = vec![0u64; topics.len()];
        for row in &counts {
            for (t, &c) in row.iter().enumerate() {
                totals[t] += c;
            }
        }
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Ok(TopicOddsTable {
            tokens,
            topics,
            counts,
            totals,
            alpha,
            index,
        })
    }

    pub fn count(&self, token: &str, topic: &str) -> u64 {
        match (self.index.get(token), self.topics.iter().position(|t| t == topic)) {
            (Some(&w), Some(t)) => self.counts[w][t],
            _ => 0,
        }
    }
}

/// Occurrence counts of every lowercased token per topic.
pub fn build_counts(corpus: &Corpus, alpha: f64) -> Result<TopicOddsTable> {
    let topics: Vec<String> = corpus.topics().iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if corpus.is_empty() || topics.len() < 2 {
        return Err(Error::Insufficient(
            "topic specificity needs a non-empty corpus with at least 2 topics".into(),
        ));
    }
    let mut per_token: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for s in corpus.sentences() {
        let t = topics.binary_search(&s.topic).expect("topic listed");
        for tok in &s.tokens {
            per_token.entry(tok.to_lowercase()).or_insert_with(|| vec![0; topics.len()])[t] += 1;
        }
    }
    let (tokens, counts) = per_token.into_iter().unzip();
    TopicOddsTable::from_counts(tokens, topics, counts, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityScore {
    pub token: String,
    pub r: f64,
    pub argmax_topic: String,
}

pub fn specificity(table: &TopicOddsTable, token: &str) -> Result<SpecificityScore> {
    let &w = table.index.get(token).ok_or_else(|| Error::Unknown {
        kind: "token",
        id: token.to_string(),
    })?;
    let a = table.alpha;
    let row = &table.counts[w];
    let all_w: u64 = row.iter().sum();
    let all: u64 = table.totals.iter().sum();
    let mut best = (f64::NEG_INFINITY, 0);
    for t in 0..table.topics.len() {
        let in_w = row[t] as f64;
        let in_rest = (table.totals[t] - row[t]) as f64;
        let out_w = (all_w - row[t]) as f64;
        let out_rest = (all - table.totals[t]) as f64 - out_w;
        let odds = (in_w + a) / (in_rest + a);
        let odds_out = (out_w + a) / (out_rest + a);
        let r = (odds / odds_out).ln();
        if r > best.0 {
            best = (r, t);
        }
    }
    Ok(SpecificityScore {
        token: token.to_string(),
        r: best.0,
        argmax_topic: table.topics[best.1].clone(),
    })
}

/// Scores of every token type in table order.
pub fn score_all(table: &TopicOddsTable) -> Vec<SpecificityScore> {
    table
        .tokens
        .iter()
        .map(|t| specificity(table, t).expect("token from table"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bin {
    Low,
    Medium,
    High,
}

impl Bin {
    pub fn as_str(self) -> &'static str {
        match self {
            Bin::Low => "low",
            Bin::Medium => "medium",
            Bin::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    EqualFrequency,
    EqualWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityBin {
    pub token: String,
    pub bin: Bin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    pub bins: Vec<SpecificityBin>,
    /// Fewer than three distinct scores: everything was put in MEDIUM.
    pub degenerate: bool,
}

/// Splits token types into low/medium/high terciles of `r`.
///
/// Equal-frequency bins rank types by `(r, token)`; equal-width bins cut
/// the score range in three.
pub fn bin_tokens(scores: &[SpecificityScore], binning: Binning) -> Binned {
    let distinct: BTreeSet<u64> = scores.iter().map(|s| s.r.to_bits()).collect();
    if scores.len() < 3 || distinct.len() < 3 {
        log::warn!(
            "{} scored tokens with {} distinct scores; binning everything as medium",
            scores.len(),
            distinct.len()
        );
        return Binned {
            bins: scores
                .iter()
                .map(|s| SpecificityBin {
                    token: s.token.clone(),
                    bin: Bin::Medium,
                })
                .collect(),
            degenerate: true,
        };
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .r
            .total_cmp(&scores[b].r)
            .then_with(|| scores[a].token.cmp(&scores[b].token))
    });
    let n = scores.len();
    let mut bin_of = vec![Bin::Medium; n];
    match binning {
        Binning::EqualFrequency => {
            for (rank, &i) in order.iter().enumerate() {
                bin_of[i] = match 3 * rank / n {
                    0 => Bin::Low,
                    1 => Bin::Medium,
                    _ => Bin::High,
                };
            }
        }
        Binning::EqualWidth => {
            let lo = scores[order[0]].r;
            let hi = scores[order[n - 1]].r;
            let width = (hi - lo) / 3.0;
            for i in 0..n {
                let r = scores[i].r;
                bin_of[i] = if r < lo + width {
                    Bin::Low
                } else if r < lo + 2.0 * width {
                    Bin::Medium
                } else {
                    Bin::High
                };
            }
        }
    }
    Binned {
        bins: scores
            .iter()
            .zip(bin_of)
            .map(|(s, bin)| SpecificityBin {
                token: s.token.clone(),
                bin,
            })
            .collect(),
        degenerate: false,
    }
}

/// One TOPICSPEC instance per token occurrence, labelled with its type's bin.
pub fn topicspec_dataset(corpus: Arc<Corpus>, bins: &[SpecificityBin]) -> Result<TaskDataset> {
    let lookup: BTreeMap<&str, Bin> = bins.iter().map(|b| (b.token.as_str(), b.bin)).collect();
    let mut instances = Vec::new();
    for s in corpus.sentences() {
        for (p, tok) in s.tokens.iter().enumerate() {
            let lower = tok.to_lowercase();
            let bin = lookup.get(lower.as_str()).ok_or_else(|| Error::Unknown {
                kind: "token",
                id: lower.clone(),
            })?;
            instances.push(Instance {
                instance_id: format!("{}#{p}", s.sentence_id),
                task: TaskKind::Topicspec,
                sentence_id: s.sentence_id.clone(),
                positions: vec![vec![p]],
                label: bin.as_str().to_string(),
                topic: s.topic.clone(),
            });
        }
    }
    TaskDataset::new(TaskKind::Topicspec, instances, corpus)
}

/// `token,r,argmax_topic,bin` CSV export.
pub fn write_scores_csv(path: &Path, scores: &[SpecificityScore], bins: &[SpecificityBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["token", "r", "argmax_topic", "bin"])?;
    for (s, b) in scores.iter().zip(bins) {
        debug_assert_eq!(s.token, b.token);
        w.write_record([s.token.as_str(), &format!("{}", s.r), &s.argmax_topic, b.bin.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(rows: &[(&str, &[&str])]) -> Corpus {
        Corpus::new(
            rows.iter()
                .enumerate()
                .map(|(i, (topic, toks))| Sentence {
                    sentence_id: format!("s{i}"),
                    topic: topic.to_string(),
                    tokens: toks.iter().map(|t| t.to_string()).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn manual_counts() {
        let c = corpus(&[("A", &["gun", "Gun", "law"]), ("B", &["law", "ban"])]);
        let t = build_counts(&c, 1.0).unwrap();
        assert_eq!(t.count("gun", "A"), 2);
        assert_eq!(t.count("gun", "B"), 0);
        assert_eq!(t.count("law", "A"), 1);
        assert_eq!(t.count("law", "B"), 1);
        assert_eq!(t.totals, vec![3, 2]);
        assert!(build_counts(&corpus(&[("A", &["x"])]), 1.0).is_err());
    }

    #[test]
    fn order_invariant_counts() {
        let rows: Vec<(&str, &[&str])> = vec![
            ("A", &["a", "b"]),
            ("B", &["b", "c"]),
            ("C", &["c", "a", "a"]),
            ("A", &["d"]),
        ];
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let a = build_counts(&corpus(&rows), 1.0).unwrap();
        let b = build_counts(&corpus(&shuffled), 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_topic_column_kept() {
        let t = TopicOddsTable::from_counts(
            vec!["x".into(), "y".into()],
            vec!["A".into(), "B".into(), "C".into()],
            vec![vec![3, 0, 0], vec![1, 2, 0]],
            1.0,
        )
        .unwrap();
        assert_eq!(t.totals, vec![4, 2, 0]);
        assert!(score_all(&t).iter().all(|s| s.r.is_finite()));
    }

    #[test]
    fn hand_arithmetic_ln3() {
        let c = corpus(&[("A", &["x", "y"]), ("B", &["y", "z"])]);
        let t = build_counts(&c, 1.0).unwrap();
        let s = specificity(&t, "x").unwrap();
        assert!((s.r - 3f64.ln()).abs() < 1e-12);
        assert_eq!(s.argmax_topic, "A");
        assert!(specificity(&t, "nope").is_err());
    }

    #[test]
    fn uniform_token_scores_zero() {
        let c = corpus(&[("A", &["the", "a", "b"]), ("B", &["the", "c", "d"])]);
        let t = build_counts(&c, 1.0).unwrap();
        assert!(specificity(&t, "the").unwrap().r.abs() < 1e-12);
        // Three equal topics: zero in the alpha -> 0 limit.
        let t = TopicOddsTable::from_counts(
            vec!["u".into(), "v".into()],
            vec!["A".into(), "B".into(), "C".into()],
            vec![vec![5, 5, 5], vec![7, 7, 7]],
            1e-12,
        )
        .unwrap();
        assert!(specificity(&t, "u").unwrap().r.abs() < 1e-9);
    }

    #[test]
    fn doubling_counts_small_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let counts: Vec<Vec<u64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(1..50)).collect()).collect();
        let doubled: Vec<Vec<u64>> = counts.iter().map(|r| r.iter().map(|c| 2 * c).collect()).collect();
        let tokens: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let topics: Vec<String> = (0..4).map(|i| format!("T{i}")).collect();
        let a = TopicOddsTable::from_counts(tokens.clone(), topics.clone(), counts.clone(), 1e-9).unwrap();
        let b = TopicOddsTable::from_counts(tokens.clone(), topics.clone(), doubled, 1e-9).unwrap();
        for tok in &tokens {
            let ra = specificity(&a, tok).unwrap().r;
            let rb = specificity(&b, tok).unwrap().r;
            assert!((ra - rb).abs() < 1e-6);
            // Brute force from the unsmoothed definition.
            let w = tokens.iter().position(|t| t == tok).unwrap();
            let tot: Vec<f64> = (0..4).map(|t| counts.iter().map(|r| r[t]).sum::<u64>() as f64).collect();
            let brute = (0..4)
                .map(|t| {
                    let nw = counts[w][t] as f64;
                    let o = nw / (tot[t] - nw);
                    let nw_out: f64 = (0..4).filter(|&s| s != t).map(|s| counts[w][s] as f64).sum();
                    let tot_out: f64 = (0..4).filter(|&s| s != t).map(|s| tot[s]).sum();
                    (o / (nw_out / (tot_out - nw_out))).ln()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((ra - brute).abs() < 1e-6);
        }
    }

    fn fake_scores(rs: &[f64]) -> Vec<SpecificityScore> {
        rs.iter()
            .enumerate()
            .map(|(i, &r)| SpecificityScore {
                token: format!("tok{i:04}"),
                r,
                argmax_topic: "A".into(),
            })
            .collect()
    }

    #[test]
    fn three_scores_three_bins() {
        let b = bin_tokens(&fake_scores(&[2.0, 1.0, 3.0]), Binning::EqualFrequency);
        assert!(!b.degenerate);
        assert_eq!(b.bins.iter().map(|b| b.bin).collect::<Vec<_>>(), vec![Bin::Medium, Bin::Low, Bin::High]);
    }

    #[test]
    fn three_hundred_scores_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rs: Vec<f64> = (0..300).map(|_| rng.gen::<f64>()).collect();
        let b = bin_tokens(&fake_scores(&rs), Binning::EqualFrequency);
        for bin in [Bin::Low, Bin::Medium, Bin::High] {
            assert_eq!(b.bins.iter().filter(|x| x.bin == bin).count(), 100);
        }
        let w = bin_tokens(&fake_scores(&[0.0, 0.1, 0.2, 5.0, 10.0]), Binning::EqualWidth);
        let got: Vec<Bin> = w.bins.iter().map(|b| b.bin).collect();
        assert_eq!(got, vec![Bin::Low, Bin::Low, Bin::Low, Bin::Medium, Bin::High]);
    }

    #[test]
    fn degenerate_scores_all_medium() {
        let b = bin_tokens(&fake_scores(&[1.0, 1.0, 2.0, 2.0]), Binning::EqualFrequency);
        assert!(b.degenerate);
        assert!(b.bins.iter().all(|x| x.bin == Bin::Medium));
    }

    #[test]
    fn dataset_labels_every_occurrence() {
        let c = Arc::new(corpus(&[("A", &["x", "y", "x"]), ("B", &["y", "z"])]));
        let t = build_counts(&c, 1.0).unwrap();
        let scores = score_all(&t);
        let bins = bin_tokens(&scores, Binning::EqualFrequency);
        let ds = topicspec_dataset(c, &bins.bins).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.task, TaskKind::Topicspec);
        let dir = tempfile::tempdir().unwrap();
        write_scores_csv(&dir.path().join("s.csv"), &scores, &bins.bins).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert!(text.starts_with("token,r,argmax_topic,bin\n"));
    }
}
