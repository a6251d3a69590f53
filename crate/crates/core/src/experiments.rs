//! Experiment drivers shared by the command-line front end and the tests:
//! fold-wise probing, online codelength, property removal and re-probing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amnesic::{self, AmnesicConfig, AmnesicReport, ProjectionMatrix, Removal};
use crate::corpus::{TaskDataset, TaskKind};
use crate::embedstore::{EmbeddingStore, FeatureTable};
use crate::error::{Error, Result};
use crate::folds::{self, FoldPlan, Mode, Split};
use crate::linprobe::{self, LabeledSet, ProbeModel, TrainConfig};
use crate::metrics::{self, gap, EvalInput, EvalReport, GapReport, MdlOptions, MdlReport, ReportContext, ScoreRecord};
use crate::scalar::Scalar;
use crate::synth::SynthConfig;
use crate::topicspec::Binning;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicspecConfig {
    pub alpha: f64,
    pub binning: Binning,
}

impl Default for TopicspecConfig {
    fn default() -> Self {
        TopicspecConfig {
            alpha: crate::topicspec::DEFAULT_ALPHA,
            binning: Binning::EqualFrequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Name of the encoder whose embeddings are probed.
    pub model: String,
    pub corpus: Option<PathBuf>,
    /// Lower-case task name -> instance JSONL.
    pub datasets: BTreeMap<String, PathBuf>,
    pub store: Option<PathBuf>,
    pub finetuned_store: Option<PathBuf>,
    pub tasks: Vec<TaskKind>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub plan_seed: u64,
    pub train: TrainConfig,
    pub mdl: MdlOptions,
    pub amnesic: AmnesicConfig,
    pub topicspec: TopicspecConfig,
    pub synth: SynthConfig,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "model".into(),
            corpus: None,
            datasets: BTreeMap::new(),
            store: None,
            finetuned_store: None,
            tasks: vec![TaskKind::Dep, TaskKind::Pos, TaskKind::Ner, TaskKind::Stance],
            modes: vec![Mode::In, Mode::Cross],
            seeds: vec![0, 1, 2],
            plan_seed: 0,
            train: TrainConfig::default(),
            mdl: MdlOptions::default(),
            amnesic: AmnesicConfig::default(),
            topicspec: TopicspecConfig::default(),
            synth: SynthConfig::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    /// Loads a JSON config (or the defaults) and applies `key=value`
    /// overrides; dotted keys address nested fields and values parse as
    /// JSON when possible, else as strings.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(ExperimentConfig::default())?,
        };
        for o in overrides {
            set_path(&mut value, o)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.modes.is_empty() || self.tasks.is_empty() {
            return Err(Error::Config("task and mode lists must be non-empty".into()));
        }
        self.train.validate()
    }

    pub fn dataset_path(&self, task: TaskKind) -> Result<&Path> {
        self.datasets
            .get(&task.as_str().to_lowercase())
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("no dataset path configured for {task}")))
    }
}

fn set_path(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

/// Cross plan and its size-matched In plan.
pub fn plan_pair(dataset: &TaskDataset, seed: u64) -> Result<(FoldPlan, FoldPlan)> {
    let cross = folds::plan_cross(dataset, seed)?;
    let inn = folds::plan_in(dataset, &cross, seed)?;
    Ok((cross, inn))
}

pub fn plan_for(plans: &(FoldPlan, FoldPlan), mode: Mode) -> &FoldPlan {
    match mode {
        Mode::Cross => &plans.0,
        Mode::In => &plans.1,
    }
}

fn subset<F: Scalar>(ds: &TaskDataset, table: &FeatureTable, rows: &[usize]) -> LabeledSet<F> {
    LabeledSet::from_table(ds.task, &ds.label_set, table, ds.label_ids(), rows)
}

/// Trains on a fold's TRAIN split (DEV for checkpoint choice) and scores TEST.
#[allow(clippy::too_many_arguments)]
pub fn probe_fold<F: Scalar>(
    model: &str,
    ds: &TaskDataset,
    table: &FeatureTable,
    plan: &FoldPlan,
    fold: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<(EvalReport, ProbeModel<F>)> {
    let f = &plan.folds[fold];
    let (tr, dv, te) = (
        f.indices(ds, Split::Train)?,
        f.indices(ds, Split::Dev)?,
        f.indices(ds, Split::Test)?,
    );
    let train = subset::<F>(ds, table, &tr);
    let dev = subset::<F>(ds, table, &dv);
    let test = subset::<F>(ds, table, &te);
    let out = linprobe::train(&train, &dev, &cfg.with_seed(seed))?;
    let pred = out.model.predict_all(&test)?;
    let tags = folds::tag_seen(ds, f)?;
    let report = EvalReport::build(
        EvalInput {
            model,
            task: ds.task,
            mode: plan.mode,
            fold,
            seed,
            labels: &ds.label_set,
            best_epoch: out.best_epoch,
        },
        &pred,
        &test.labels,
        &metrics::tags_for(&f.test, &tags),
    )?;
    Ok((report, out.model))
}

/// Every (mode, fold, seed) probe of one task, run on the rayon pool.
/// Reports come back sorted by (mode, fold, seed).
pub fn probe_task<F: Scalar>(
    model: &str,
    ds: &TaskDataset,
    store: &EmbeddingStore,
    modes: &[Mode],
    seeds: &[u64],
    cfg: &TrainConfig,
    plan_seed: u64,
) -> Result<Vec<EvalReport>> {
    let table = FeatureTable::build(store, ds)?;
    let plans = plan_pair(ds, plan_seed)?;
    let jobs: Vec<(Mode, usize, u64)> = modes
        .iter()
        .flat_map(|&m| (0..folds::FOLDS).flat_map(move |f| seeds.iter().map(move |&s| (m, f, s))))
        .collect();
    let mut reports = jobs
        .par_iter()
        .map(|&(m, f, s)| probe_fold::<F>(model, ds, &table, plan_for(&plans, m), f, s, cfg).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by_key(|r| (r.mode, r.fold, r.seed));
    Ok(reports)
}

/// Mean test macro-F1 over all reports of one mode.
pub fn mean_f1(reports: &[EvalReport], mode: Mode) -> f64 {
    let v: Vec<f64> = reports.iter().filter(|r| r.mode == mode).map(|r| r.macro_f1).collect();
    metrics::mean(&v)
}

/// Cross-minus-In table from fold reports (and optional MDL records).
pub fn gap_from_reports(reports: &[EvalReport], mdl: &[MdlRecord]) -> Result<GapReport> {
    let records = |mode: Mode| -> Vec<ScoreRecord> {
        reports
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| ScoreRecord {
                model: r.model.clone(),
                task: r.task.as_str().to_string(),
                macro_f1: r.macro_f1,
                compression: mdl
                    .iter()
                    .find(|m| m.model == r.model && m.task == r.task && m.report.mode == mode && m.fold == r.fold && m.seed == r.seed)
                    .map(|m| m.report.compression),
            })
            .collect()
    };
    gap(&records(Mode::In), &records(Mode::Cross))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlRecord {
    pub model: String,
    pub task: TaskKind,
    pub fold: usize,
    pub seed: u64,
    pub report: MdlReport,
}

/// Online codelength on each fold's TRAIN split, per mode and seed. The
/// seed drives both the instance order and the step probes.
#[allow(clippy::too_many_arguments)]
pub fn mdl_task<F: Scalar>(
    model: &str,
    ds: &TaskDataset,
    store: &EmbeddingStore,
    modes: &[Mode],
    seeds: &[u64],
    cfg: &TrainConfig,
    opts: &MdlOptions,
    plan_seed: u64,
) -> Result<Vec<MdlRecord>> {
    let table = FeatureTable::build(store, ds)?;
    let plans = plan_pair(ds, plan_seed)?;
    let jobs: Vec<(Mode, usize, u64)> = modes
        .iter()
        .flat_map(|&m| (0..folds::FOLDS).flat_map(move |f| seeds.iter().map(move |&s| (m, f, s))))
        .collect();
    let mut out = jobs
        .par_iter()
        .map(|&(m, f, s)| {
            let rows = plan_for(&plans, m).folds[f].indices(ds, Split::Train)?;
            let o = MdlOptions {
                order_seed: opts.order_seed.wrapping_add(s),
                ..opts.clone()
            };
            let report = metrics::mdl_online::<F>(ds, &table, &rows, &cfg.with_seed(s), m, &o)?;
            Ok(MdlRecord {
                model: model.to_string(),
                task: ds.task,
                fold: f,
                seed: s,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|r| (r.report.mode, r.fold, r.seed));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlSummary {
    pub model: String,
    pub task: TaskKind,
    pub in_compression: Option<f64>,
    pub cross_compression: Option<f64>,
    pub delta_compression: Option<f64>,
}

/// Mean compression per task and mode plus the rank correlation between
/// mean F1 and mean compression over all (task, mode) cells.
pub fn mdl_summary(records: &[MdlRecord], reports: &[EvalReport]) -> Result<(Vec<MdlSummary>, Option<f64>)> {
    let mut tasks: Vec<(String, TaskKind)> = Vec::new();
    for r in records {
        if !tasks.contains(&(r.model.clone(), r.task)) {
            tasks.push((r.model.clone(), r.task));
        }
    }
    let mean_i = |model: &str, task: TaskKind, mode: Mode| {
        let v: Vec<f64> = records
            .iter()
            .filter(|r| r.model == model && r.task == task && r.report.mode == mode)
            .map(|r| r.report.compression)
            .collect();
        (!v.is_empty()).then(|| metrics::mean(&v))
    };
    let mut rows = Vec::new();
    let (mut f1s, mut is) = (Vec::new(), Vec::new());
    for (model, task) in tasks {
        let (i_in, i_cross) = (mean_i(&model, task, Mode::In), mean_i(&model, task, Mode::Cross));
        for (mode, i) in [(Mode::In, i_in), (Mode::Cross, i_cross)] {
            let f: Vec<f64> = reports
                .iter()
                .filter(|r| r.model == model && r.task == task && r.mode == mode)
                .map(|r| r.macro_f1)
                .collect();
            if let (Some(i), false) = (i, f.is_empty()) {
                f1s.push(metrics::mean(&f));
                is.push(i);
            }
        }
        rows.push(MdlSummary {
            model,
            task,
            in_compression: i_in,
            cross_compression: i_cross,
            delta_compression: i_in.zip(i_cross).map(|(a, b)| b - a),
        });
    }
    let rho = if f1s.len() >= 2 {
        metrics::rank_corr(&f1s, &is).ok()
    } else {
        None
    };
    Ok((rows, rho))
}

pub struct AmnesicRun<F> {
    pub removal: Removal<F>,
    pub random: ProjectionMatrix<F>,
    pub reports: Vec<AmnesicReport>,
}

/// Baseline, property-removed and random-control probes for every task
/// and mode, each averaged over folds and seeds.
#[allow(clippy::too_many_arguments)]
pub fn amnesic_experiment<F: Scalar>(
    model: &str,
    store: &EmbeddingStore,
    property: &TaskDataset,
    tasks: &[&TaskDataset],
    modes: &[Mode],
    seeds: &[u64],
    cfg: &TrainConfig,
    acfg: &AmnesicConfig,
    plan_seed: u64,
) -> Result<AmnesicRun<F>> {
    let removal = amnesic::amnesic_remove::<F>(store, property, acfg)?;
    let random = amnesic::random_remove::<F>(store.dim(), removal.projection.removed_rank, acfg.split_seed)?;
    let removed = removal.projection.project_store(store)?;
    let control = random.project_store(store)?;
    let mut reports = Vec::new();
    for ds in tasks {
        let base = probe_task::<F>(model, ds, store, modes, seeds, cfg, plan_seed)?;
        let without = probe_task::<F>(model, ds, &removed, modes, seeds, cfg, plan_seed)?;
        let rand = probe_task::<F>(model, ds, &control, modes, seeds, cfg, plan_seed)?;
        for &mode in modes {
            reports.push(AmnesicReport::new(
                model,
                ds.task.as_str(),
                mode,
                mean_f1(&base, mode),
                mean_f1(&without, mode),
                mean_f1(&rand, mode),
                (
                    removal.final_accuracy,
                    removal.majority,
                    removal.projection.removed_rank,
                    removal.projection.iterations,
                ),
            ));
        }
    }
    Ok(AmnesicRun {
        removal,
        random,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprobeCell {
    pub task: TaskKind,
    pub mode: Mode,
    pub base_f1: f64,
    pub tuned_f1: f64,
    /// Fine-tuned minus pre-trained.
    pub delta: f64,
}

/// Probes the same tasks on two stores over identical sentences.
pub fn reprobe<F: Scalar>(
    base: &EmbeddingStore,
    tuned: &EmbeddingStore,
    tasks: &[&TaskDataset],
    modes: &[Mode],
    seeds: &[u64],
    cfg: &TrainConfig,
    plan_seed: u64,
) -> Result<Vec<ReprobeCell>> {
    let mut a: Vec<&String> = base.sentence_ids().iter().collect();
    let mut b: Vec<&String> = tuned.sentence_ids().iter().collect();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::KeyMismatch("the two stores cover different sentences".into()));
    }
    let mut out = Vec::new();
    for ds in tasks {
        let r0 = probe_task::<F>("base", ds, base, modes, seeds, cfg, plan_seed)?;
        let r1 = probe_task::<F>("tuned", ds, tuned, modes, seeds, cfg, plan_seed)?;
        for &mode in modes {
            let (b, t) = (mean_f1(&r0, mode), mean_f1(&r1, mode));
            out.push(ReprobeCell {
                task: ds.task,
                mode,
                base_f1: b,
                tuned_f1: t,
                delta: t - b,
            });
        }
    }
    Ok(out)
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn report_file_name(r: &EvalReport) -> String {
    format!("{}_{}_{}_{}.json", r.task.as_str().to_lowercase(), r.mode.as_str(), r.fold, r.seed)
}

/// One JSON file per report, each carrying `context`.
pub fn write_eval_reports(dir: &Path, reports: &[EvalReport], context: &ReportContext) -> Result<()> {
    for r in reports {
        let mut r = r.clone();
        r.context = Some(context.clone());
        write_atomic(&dir.join(report_file_name(&r)), serde_json::to_string_pretty(&r)?.as_bytes())?;
    }
    Ok(())
}

/// Flat `model,task,mode,fold,seed,metric,value` rows.
pub fn reports_csv(reports: &[EvalReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "task", "mode", "fold", "seed", "metric", "value"])?;
    for r in reports {
        for (metric, value) in r.metrics() {
            w.write_record([
                r.model.as_str(),
                r.task.as_str(),
                r.mode.as_str(),
                &r.fold.to_string(),
                &r.seed.to_string(),
                &metric,
                &format!("{value:.6}"),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Markdown summary: a per-task In/Cross/delta table and a seen/unseen table.
pub fn markdown_summary(gap: &GapReport, reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let tasks: Vec<&str> = {
        let mut t: Vec<&str> = Vec::new();
        for c in &gap.cells {
            if !t.contains(&c.task.as_str()) {
                t.push(&c.task);
            }
        }
        t
    };
    s.push_str("| model |");
    for t in &tasks {
        let _ = write!(s, " {t} in | {t} cross | {t} Δ |");
    }
    s.push_str(" avg in | avg cross | avg Δ |\n|---|");
    s.push_str(&"---|".repeat(3 * tasks.len() + 3));
    s.push('\n');
    for m in &gap.models {
        let _ = write!(s, "| {} |", m.model);
        for t in &tasks {
            match gap.cells.iter().find(|c| c.model == m.model && c.task == *t) {
                Some(c) => {
                    let _ = write!(s, " {} | {} | {} |", pct(c.in_f1), pct(c.cross_f1), pct(c.delta));
                }
                None => s.push_str(" - | - | - |"),
            }
        }
        let _ = writeln!(s, " {} | {} | {} |", pct(m.in_f1), pct(m.cross_f1), pct(m.delta));
    }
    s.push_str("\n| model | task | mode | seen % | seen F1 | unseen F1 | Δ |\n|---|---|---|---|---|---|---|\n");
    let mut keys: Vec<(String, TaskKind, Mode)> = Vec::new();
    for r in reports {
        let k = (r.model.clone(), r.task, r.mode);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (model, task, mode) in keys {
        let rs: Vec<&EvalReport> = reports.iter().filter(|r| r.model == model && r.task == task && r.mode == mode).collect();
        let avg = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
            let v: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| metrics::mean(&v))
        };
        let seen = avg(&|r| r.seen_f1);
        let unseen = avg(&|r| r.unseen_f1);
        let show = |v: Option<f64>| v.map_or("-".to_string(), pct);
        let _ = writeln!(
            s,
            "| {model} | {task} | {mode} | {} | {} | {} | {} |",
            pct(avg(&|r| Some(r.seen_ratio)).unwrap_or(0.0)),
            show(seen),
            show(unseen),
            show(seen.zip(unseen).map(|(a, b)| a - b)),
        );
    }
    s
}
