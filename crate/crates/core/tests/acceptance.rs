//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs as a plain binary so the lines always print.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicprobe::amnesic::{nullspace_projection, AmnesicConfig};
use topicprobe::experiments::{amnesic_experiment, mean_f1, probe_task};
use topicprobe::folds::{plan_cross, plan_in, Split, FOLDS};
use topicprobe::linprobe::{softmax_xent, ProbeModel};
use topicprobe::metrics::{macro_f1, mdl_online, rank_corr, MdlOptions};
use topicprobe::synth::{generate, noise_task, SynthConfig};
use topicprobe::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let took = t.elapsed();
    let in_time = budget.is_none_or(|b| took <= b);
    let pass = o.pass && in_time;
    let limit = budget.map_or(String::new(), |b| format!(" (limit {:.0?})", b));
    println!(
        "{} {name}: {} [{:.2?}{limit}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took
    );
    pass
}

fn nullspace() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_res, mut worst_idem, mut worst_sym) = (0.0f64, 0.0f64, 0.0f64);
    let mut ok = true;
    for _ in 0..100 {
        let dim = rng.gen_range(2..=64usize);
        let k = rng.gen_range(1..=dim.min(12));
        let w64: Vec<f64> = (0..k * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w32: Vec<f32> = w64.iter().map(|&v| v as f32).collect();
        let scale = w64.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let p64 = nullspace_projection(&w64, dim).unwrap();
        let p32 = nullspace_projection(&w32, dim).unwrap();
        for (res, idem, sym) in [
            (p64.residual(&w64), p64.idempotence_error(), p64.symmetry_error()),
            (p32.residual(&w32) as f64, p32.idempotence_error() as f64, p32.symmetry_error() as f64),
        ] {
            let r = res / scale;
            ok &= r < 1e-5 && idem < 1e-4 && sym < 1e-4;
            worst_res = worst_res.max(r);
            worst_idem = worst_idem.max(idem);
            worst_sym = worst_sym.max(sym);
        }
    }
    Outcome {
        pass: ok,
        detail: format!(
            "100 random (k, D), f32 and f64; max |WP|/|W| {worst_res:.1e}, idempotence {worst_idem:.1e}, symmetry {worst_sym:.1e}"
        ),
    }
}

fn amnesic_efficacy() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..5 {
        let d = generate(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let acfg = AmnesicConfig {
            split_seed: seed,
            ..AmnesicConfig::default()
        };
        let run = amnesic_experiment::<f64>(
            "synthetic",
            &d.store,
            d.dataset(TaskKind::Topicspec),
            &[d.dataset(TaskKind::Pos)],
            &[Mode::In, Mode::Cross],
            &[0],
            &TrainConfig::default(),
            &acfg,
            seed,
        )
        .unwrap();
        let gap_to_majority = (run.removal.final_accuracy - run.removal.majority).abs();
        ok &= gap_to_majority <= 0.02;
        let margins: Vec<f64> = run.reports.iter().map(|r| r.delta.abs() - r.control_delta.abs()).collect();
        ok &= margins.iter().all(|&m| m >= 0.05);
        lines.push(format!(
            "seed {seed}: acc {:.3} vs majority {:.3}, rank {}, |dA|-|dR| in/cross {:+.3}/{:+.3}",
            run.removal.final_accuracy, run.removal.majority, run.removal.projection.removed_rank, margins[0], margins[1]
        ));
    }
    Outcome {
        pass: ok,
        detail: format!("POS probe, 5 seeds; {}", lines.join("; ")),
    }
}

fn mdl_sanity() -> Outcome {
    let mut ok = true;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut u_exact = true;
    let mut worst_relabel = 0.0f64;
    for seed in 0..5 {
        let (ds, store) = noise_task(2048, 8, 3, 6, seed).unwrap();
        let table = FeatureTable::build(&store, &ds).unwrap();
        let rows: Vec<usize> = (0..ds.len()).collect();
        let renamed = TaskDataset::new(
            ds.task,
            ds.instances
                .iter()
                .map(|i| Instance {
                    label: format!("R{}", (i.label[1..].parse::<usize>().unwrap() + 1) % 3),
                    ..i.clone()
                })
                .collect(),
            ds.corpus().clone(),
        )
        .unwrap();
        for mode in [Mode::In, Mode::Cross] {
            let opts = MdlOptions::default();
            let r = mdl_online::<f64>(&ds, &table, &rows, &TrainConfig::default(), mode, &opts).unwrap();
            let q = mdl_online::<f64>(&renamed, &table, &rows, &TrainConfig::default(), mode, &opts).unwrap();
            ok &= (0.95..=1.05).contains(&r.compression);
            lo = lo.min(r.compression);
            hi = hi.max(r.compression);
            u_exact &= r.u == r.n as f64 * 3f64.log2();
            worst_relabel = worst_relabel.max((r.compression - q.compression).abs());
        }
    }
    u_exact &= topicprobe::metrics::uniform_bits(1024, 2) == 1024.0;
    ok &= u_exact && worst_relabel <= 1e-9;
    Outcome {
        pass: ok,
        detail: format!(
            "noise I in [{lo:.4}, {hi:.4}] over 5 seeds x 2 modes; u exact: {u_exact}; max relabel |dI| {worst_relabel:.1e}"
        ),
    }
}

fn topic_dataset(m: usize, rng: &mut ChaCha8Rng) -> TaskDataset {
    let (mut sents, mut insts) = (Vec::new(), Vec::new());
    for t in 0..m {
        for j in 0..rng.gen_range(2..8) {
            let sid = format!("t{t}s{j}");
            let len = rng.gen_range(1..5);
            for p in 0..len {
                insts.push(Instance {
                    instance_id: format!("{sid}#{p}"),
                    task: TaskKind::Pos,
                    sentence_id: sid.clone(),
                    positions: vec![vec![p]],
                    label: format!("L{}", rng.gen_range(0..3)),
                    topic: format!("topic{t}"),
                });
            }
            sents.push(Sentence {
                sentence_id: sid,
                topic: format!("topic{t}"),
                tokens: (0..len).map(|p| format!("w{p}")).collect(),
            });
        }
    }
    // Guarantee two labels.
    insts[0].label = "L0".into();
    insts[1].label = "L1".into();
    TaskDataset::new(TaskKind::Pos, insts, Arc::new(Corpus::new(sents).unwrap())).unwrap()
}

fn fold_constraints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut bad = Vec::new();
    let mut plans = 0;
    for m in 3..=12 {
        for seed in 0..50u64 {
            let ds = topic_dataset(m, &mut rng);
            let topic = |id: &String| ds.instances[ds.position(id).unwrap()].topic.clone();
            let cross = plan_cross(&ds, seed).unwrap();
            let inn = plan_in(&ds, &cross, seed).unwrap();
            plans += 1;
            let mut tested: Vec<String> = Vec::new();
            for f in &cross.folds {
                let sets: Vec<BTreeSet<String>> = [Split::Train, Split::Dev, Split::Test]
                    .iter()
                    .map(|&s| f.ids(s).iter().map(topic).collect())
                    .collect();
                if !sets[0].is_disjoint(&sets[1]) || !sets[0].is_disjoint(&sets[2]) || !sets[1].is_disjoint(&sets[2]) {
                    bad.push(format!("m={m} seed={seed}: topic shared between splits"));
                }
                tested.extend(sets[2].iter().cloned());
            }
            let distinct: HashSet<&String> = tested.iter().collect();
            if tested.len() != m || distinct.len() != m {
                bad.push(format!("m={m} seed={seed}: {} TEST slots for {} topics", tested.len(), m));
            }
            for (c, i) in cross.folds.iter().zip(&inn.folds) {
                let (a, b) = (c.sizes(), i.sizes());
                if a.0.abs_diff(b.0) > 1 || a.1.abs_diff(b.1) > 1 || a.2.abs_diff(b.2) > 1 {
                    bad.push(format!("m={m} seed={seed}: In sizes {b:?} vs Cross {a:?}"));
                }
            }
            if cross.folds.len() != FOLDS || inn.folds.len() != FOLDS {
                bad.push(format!("m={m} seed={seed}: wrong fold count"));
            }
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{plans} plan pairs for m in 3..=12 x 50 seeds")
        } else {
            format!("{} violations, first: {}", bad.len(), bad[0])
        },
    }
}

fn brute_macro_f1(pred: &[usize], gold: &[usize], k: usize) -> (f64, Vec<Vec<u64>>) {
    let mut confusion = vec![vec![0u64; k]; k];
    for g in 0..k {
        for p in 0..k {
            confusion[g][p] = pred.iter().zip(gold).filter(|&(&a, &b)| a == p && b == g).count() as u64;
        }
    }
    let mut f1s = Vec::new();
    for c in 0..k {
        let tp = pred.iter().zip(gold).filter(|&(&a, &b)| a == c && b == c).count() as f64;
        let fp = pred.iter().zip(gold).filter(|&(&a, &b)| a == c && b != c).count() as f64;
        let fnn = pred.iter().zip(gold).filter(|&(&a, &b)| a != c && b == c).count() as f64;
        if tp + fp + fnn == 0.0 {
            continue;
        }
        f1s.push(if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) });
    }
    (f1s.iter().sum::<f64>() / f1s.len() as f64, confusion)
}

fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64], i: usize| {
        let less = v.iter().filter(|&&a| a < v[i]).count() as f64;
        let equal = v.iter().filter(|&&a| a == v[i]).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let rx: Vec<f64> = (0..x.len()).map(|i| rank(x, i)).collect();
    let ry: Vec<f64> = (0..y.len()).map(|i| rank(y, i)).collect();
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut f1_diff, mut rho_diff) = (0.0f64, 0.0f64);
    let mut confusion_ok = true;
    for _ in 0..500 {
        let n = rng.gen_range(1..=100);
        let k = rng.gen_range(2..=6);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = gold
            .iter()
            .map(|&g| if rng.gen_bool(0.6) { g } else { rng.gen_range(0..k) })
            .collect();
        let s = macro_f1(&pred, &gold, k).unwrap();
        let (f1, conf) = brute_macro_f1(&pred, &gold, k);
        f1_diff = f1_diff.max((s.macro_f1 - f1).abs());
        confusion_ok &= s.confusion == conf;
        if n >= 3 {
            // Small integer grids force ties.
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(0..6) as f64).collect();
            if let Ok(r) = rank_corr(&x, &y) {
                rho_diff = rho_diff.max((r - brute_spearman(&x, &y)).abs());
            }
        }
    }
    // Softmax gradient against central differences, K=3, D=5.
    let mut model = ProbeModel::<f64>::zeros(TaskKind::Pos, vec!["a".into(), "b".into(), "c".into()], 5);
    model.weights.iter_mut().chain(model.bias.iter_mut()).for_each(|w| *w = rng.gen_range(-1.0..1.0));
    let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let y: Vec<usize> = (0..8).map(|_| rng.gen_range(0..3)).collect();
    let (_, gw, gb) = softmax_xent(&model, &x, &y);
    let mut grad_rel = 0.0f64;
    for (i, g) in gw.iter().chain(&gb).enumerate() {
        let bumped = |h: f64| {
            let mut m = model.clone();
            if i < 15 {
                m.weights[i] += h;
            } else {
                m.bias[i - 15] += h;
            }
            softmax_xent(&m, &x, &y).0
        };
        let fd = (bumped(1e-6) - bumped(-1e-6)) / 2e-6;
        grad_rel = grad_rel.max((g - fd).abs() / fd.abs().max(1e-3));
    }
    let pass = f1_diff <= 1e-12 && rho_diff <= 1e-12 && confusion_ok && grad_rel <= 1e-4;
    Outcome {
        pass,
        detail: format!(
            "500 cases of <=100 instances; confusion identical: {confusion_ok}; max |dF1| {f1_diff:.1e}; max |drho| {rho_diff:.1e}; gradient rel err {grad_rel:.1e}"
        ),
    }
}

fn synthetic_gap() -> Outcome {
    let gap = |topic_signal: f64| {
        let (mut inn, mut cross) = (Vec::new(), Vec::new());
        for seed in 0..5 {
            let d = generate(&SynthConfig {
                seed,
                topic_signal,
                ..SynthConfig::default()
            })
            .unwrap();
            let r = probe_task::<f32>("synthetic", d.dataset(TaskKind::Pos), &d.store, &[Mode::In, Mode::Cross], &[0], &TrainConfig::default(), seed).unwrap();
            inn.push(mean_f1(&r, Mode::In));
            cross.push(mean_f1(&r, Mode::Cross));
        }
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (m(&inn), m(&cross))
    };
    let ts = SynthConfig::default().topic_signal;
    let (i1, c1) = gap(ts);
    let (i0, c0) = gap(0.0);
    let pass = i1 - c1 >= 0.10 && (c0 - i0).abs() < 0.03;
    Outcome {
        pass,
        detail: format!(
            "POS over 5 seeds: topic_signal={ts}: In {:.1} Cross {:.1} gap {:+.1}pp; topic_signal=0: In {:.1} Cross {:.1} gap {:+.1}pp",
            100.0 * i1,
            100.0 * c1,
            100.0 * (c1 - i1),
            100.0 * i0,
            100.0 * c0,
            100.0 * (c0 - i0)
        ),
    }
}

fn main() {
    // Under `cargo test -- --list` and similar, print nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let results = [
        check("nullspace correctness", Some(Duration::from_secs(10)), nullspace),
        check("amnesic efficacy (synthetic)", Some(Duration::from_secs(120)), amnesic_efficacy),
        check("MDL sanity", Some(Duration::from_secs(300)), mdl_sanity),
        check("fold constraints", Some(Duration::from_secs(30)), fold_constraints),
        check("probe oracle equivalence", None, oracles),
        check("synthetic gap reproduction", None, synthetic_gap),
    ];
    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
