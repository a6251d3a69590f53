use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use topicprobe::amnesic::nullspace_projection;
use topicprobe::corpus::vocabulary;
use topicprobe::embedstore::instance_vector;
use topicprobe::folds::{plan_cross, plan_in};
use topicprobe::linprobe::ProbeModel;
use topicprobe::metrics::macro_f1;
use topicprobe::topicspec::{specificity, TopicOddsTable};
use topicprobe::*;

/// Sentences of 1..6 tokens drawn from a small vocabulary, one POS
/// instance per token.
fn pos_dataset(sentences: &[(usize, Vec<u8>)]) -> TaskDataset {
    let mut sents = Vec::new();
    let mut insts = Vec::new();
    for (i, (topic, toks)) in sentences.iter().enumerate() {
        let sid = format!("s{i}");
        let topic = format!("t{topic}");
        for (p, t) in toks.iter().enumerate() {
            insts.push(Instance {
                instance_id: format!("{sid}#{p}"),
                task: TaskKind::Pos,
                sentence_id: sid.clone(),
                positions: vec![vec![p]],
                label: format!("L{}", t % 3),
                topic: topic.clone(),
            });
        }
        sents.push(Sentence {
            sentence_id: sid,
            topic,
            tokens: toks.iter().map(|t| format!("W{t}")).collect(),
        });
    }
    TaskDataset::new(TaskKind::Pos, insts, Arc::new(Corpus::new(sents).unwrap())).unwrap()
}

fn sentences(max_topic: usize) -> impl Strategy<Value = Vec<(usize, Vec<u8>)>> {
    prop::collection::vec((0..max_topic, prop::collection::vec(0u8..12, 1..6)), 4..30)
        .prop_filter("needs two labels", |s| {
            s.iter().flat_map(|(_, t)| t.iter().map(|x| x % 3)).collect::<BTreeSet<_>>().len() >= 2
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vocabulary_of_union_is_union(s in sentences(4), cut in 0usize..100) {
        let ds = pos_dataset(&s);
        let ids: Vec<&str> = ds.instances.iter().map(|i| i.instance_id.as_str()).collect();
        let at = cut % (ids.len() + 1);
        let (a, b) = ids.split_at(at);
        let whole = vocabulary(&ds, ids.iter().copied()).unwrap();
        let mut parts = vocabulary(&ds, a.iter().copied()).unwrap();
        parts.extend(vocabulary(&ds, b.iter().copied()).unwrap());
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn span_mean_ignores_position_order(
        rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 3), 2..7),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = rows.len();
        let mut w = StoreWriter::new(3);
        w.push("s0", &rows.concat()).unwrap();
        let store = EmbeddingStore::from_bytes(w.finish()).unwrap();
        let corpus = Arc::new(Corpus::new(vec![Sentence {
            sentence_id: "s0".into(),
            topic: "t".into(),
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
        }]).unwrap());
        let mut shuffled: Vec<usize> = (0..n).collect();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let inst = |id: &str, pos: Vec<usize>, label: &str| Instance {
            instance_id: id.into(),
            task: TaskKind::Ner,
            sentence_id: "s0".into(),
            positions: vec![pos],
            label: label.into(),
            topic: "t".into(),
        };
        let ds = TaskDataset::new(
            TaskKind::Ner,
            vec![inst("a", (0..n).collect(), "X"), inst("b", shuffled, "Y")],
            corpus,
        ).unwrap();
        let a = instance_vector(&store, &ds, 0).unwrap().values;
        let b = instance_vector(&store, &ds, 1).unwrap().values;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn prediction_ignores_shared_bias_shift(
        w in prop::collection::vec(-3.0f64..3.0, 12),
        b in prop::collection::vec(-3.0f64..3.0, 3),
        x in prop::collection::vec(-3.0f64..3.0, 4),
        shift in -50.0f64..50.0,
    ) {
        let names = vec!["a".to_string(), "b".into(), "c".into()];
        let mut m = ProbeModel::<f64>::zeros(TaskKind::Pos, names, 4);
        m.weights = w;
        m.bias = b;
        let (before, _) = m.predict(&x).unwrap();
        m.bias.iter_mut().for_each(|v| *v += shift);
        let (after, scores) = m.predict(&x).unwrap();
        // Ties can flip under rounding; skip near-ties.
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(before, after);
    }

    #[test]
    fn specificity_ignores_topic_order(
        counts in prop::collection::vec(prop::collection::vec(0u64..40, 4), 1..8),
        rot in 1usize..4,
    ) {
        let tokens: Vec<String> = (0..counts.len()).map(|i| format!("w{i}")).collect();
        let topics: Vec<String> = (0..4).map(|t| format!("t{t}")).collect();
        let table = TopicOddsTable::from_counts(tokens.clone(), topics.clone(), counts.clone(), 1.0).unwrap();
        let mut rtopics = topics.clone();
        rtopics.rotate_left(rot);
        let rcounts: Vec<Vec<u64>> = counts.iter().map(|r| { let mut r = r.clone(); r.rotate_left(rot); r }).collect();
        let rotated = TopicOddsTable::from_counts(tokens.clone(), rtopics, rcounts, 1.0).unwrap();
        for t in &tokens {
            let a = specificity(&table, t).unwrap();
            let b = specificity(&rotated, t).unwrap();
            prop_assert!((a.r - b.r).abs() < 1e-12);
        }
    }

    #[test]
    fn store_bytes_roundtrip(
        sents in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 1..20), 1..6),
        dim in 1usize..5,
    ) {
        let mut w = StoreWriter::new(dim);
        let mats: Vec<Vec<f32>> = sents.iter().map(|s| {
            let tokens = s.len().div_ceil(dim);
            (0..tokens * dim).map(|i| s.get(i).copied().unwrap_or(0.5)).collect()
        }).collect();
        for (i, m) in mats.iter().enumerate() {
            w.push(&format!("s{i}"), m).unwrap();
        }
        let bytes = w.finish();
        let store = EmbeddingStore::from_bytes(bytes.clone()).unwrap();
        prop_assert_eq!(store.dim(), dim);
        for (i, m) in mats.iter().enumerate() {
            prop_assert_eq!(&store.matrix(&format!("s{i}")).unwrap(), m);
        }
        prop_assert_eq!(store.as_bytes(), &bytes[..]);
    }

    #[test]
    fn projection_is_idempotent_symmetric_and_annihilates(
        k in 1usize..5,
        dim in 2usize..12,
        vals in prop::collection::vec(-5.0f64..5.0, 60),
    ) {
        let w: Vec<f64> = vals.iter().cycle().take(k * dim).copied().collect();
        let p = nullspace_projection(&w, dim).unwrap();
        prop_assert!(p.idempotence_error() < 1e-10);
        prop_assert!(p.symmetry_error() < 1e-10);
        let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        prop_assert!(p.residual(&w) <= 1e-8 * scale);
        prop_assert!(p.removed_rank <= k.min(dim));
    }

    #[test]
    fn macro_f1_invariant_under_relabeling(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
    ) {
        let perm = [2usize, 0, 3, 1];
        let (pred, gold): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let a = macro_f1(&pred, &gold, 4).unwrap();
        let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let gg: Vec<usize> = gold.iter().map(|&c| perm[c]).collect();
        let b = macro_f1(&pp, &gg, 4).unwrap();
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
    }

    #[test]
    fn fold_plans_hold_invariants(s in sentences(7), seed in any::<u64>()) {
        let ds = pos_dataset(&s);
        prop_assume!(ds.topic_set.len() >= 3);
        let cross = plan_cross(&ds, seed).unwrap();
        cross.validate(&ds).unwrap();
        let inp = plan_in(&ds, &cross, seed).unwrap();
        inp.validate(&ds).unwrap();
        for (c, i) in cross.folds.iter().zip(&inp.folds) {
            let (a, b) = (c.sizes(), i.sizes());
            prop_assert!(a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1 && a.2.abs_diff(b.2) <= 1);
        }
    }
}
