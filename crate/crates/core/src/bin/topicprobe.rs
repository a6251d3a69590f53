use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use topicprobe::corpus::load_dataset;
use topicprobe::experiments::{self, ExperimentConfig, MdlRecord};
use topicprobe::metrics::{EvalReport, ReportContext};
use topicprobe::topicspec;
use topicprobe::{Corpus, EmbeddingStore, Error, Mode, Result, Scalar, TaskDataset, TaskKind};

#[derive(Parser, Debug)]
#[command(name = "topicprobe", version, about = "In-topic vs cross-topic probing of frozen embeddings")]
struct Cli {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; falls back to the config, then TOPICPROBE_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent probing jobs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Comma-separated training seeds, e.g. `0,1,2`.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Comma-separated tasks, e.g. `pos,ner`.
    #[arg(long, global = true, value_delimiter = ',')]
    tasks: Option<Vec<TaskKind>>,
    /// Comma-separated modes: `in`, `cross`.
    #[arg(long, global = true, value_delimiter = ',')]
    modes: Option<Vec<Mode>>,
    /// Arithmetic precision of probe training.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate corpus, datasets and store against each other.
    IngestCheck,
    /// Write the Cross and In fold plans of every task.
    Plan,
    /// Probe every task, mode, fold and seed; write reports and the gap table.
    Probe,
    /// Online codelength per task, mode, fold and seed.
    Mdl,
    /// Score token topic specificity and write the TOPICSPEC dataset.
    Topicspec,
    /// Remove topic specificity from the store and re-probe, with a random control.
    Amnesic,
    /// Compare probes on the pre-trained store and a fine-tuned one.
    Reprobe,
    /// Re-render CSV and Markdown summaries from written reports.
    Report,
    /// Generate a synthetic planted-topic corpus, datasets and store.
    Synth,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut overrides = cli.set.clone();
    if let Some(s) = &cli.seed_list {
        overrides.push(format!("seeds={}", serde_json::to_string(s)?));
    }
    if let Some(t) = &cli.tasks {
        overrides.push(format!("tasks={}", serde_json::to_string(t)?));
    }
    if let Some(m) = &cli.modes {
        overrides.push(format!("modes={}", serde_json::to_string(m)?));
    }
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), &overrides)?;
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("TOPICPROBE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("topicprobe_out"));
    let ctx = Ctx { cfg, out };
    match cli.precision {
        Precision::F32 => dispatch::<f32>(&cli.command, &ctx),
        Precision::F64 => dispatch::<f64>(&cli.command, &ctx),
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
}

fn dispatch<F: Scalar>(cmd: &Command, ctx: &Ctx) -> Result<()> {
    match cmd {
        Command::IngestCheck => ingest_check(ctx),
        Command::Plan => plan(ctx),
        Command::Probe => probe::<F>(ctx),
        Command::Mdl => mdl::<F>(ctx),
        Command::Topicspec => topicspec_cmd(ctx),
        Command::Amnesic => amnesic::<F>(ctx),
        Command::Reprobe => reprobe::<F>(ctx),
        Command::Report => report(ctx),
        Command::Synth => synth(ctx),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("config has no {what} path")))
}

/// Corpus, store and the configured task datasets, cross-checked.
struct Inputs {
    corpus: Arc<Corpus>,
    store: EmbeddingStore,
    datasets: Vec<TaskDataset>,
    hashes: BTreeMap<String, String>,
}

fn load_inputs(cfg: &ExperimentConfig, tasks: &[TaskKind]) -> Result<Inputs> {
    let mut hashes = BTreeMap::new();
    let corpus_path = required(&cfg.corpus, "corpus")?;
    let corpus = Arc::new(Corpus::load(corpus_path)?);
    hashes.insert(corpus_path.display().to_string(), experiments::file_hash(corpus_path)?);
    let store_path = required(&cfg.store, "store")?;
    let store = EmbeddingStore::open(store_path)?;
    hashes.insert(store_path.display().to_string(), experiments::file_hash(store_path)?);
    store.check_corpus(&corpus)?;
    let mut datasets = Vec::new();
    for &task in tasks {
        let path = cfg.dataset_path(task)?;
        datasets.push(load_dataset(path, corpus.clone(), task)?);
        hashes.insert(path.display().to_string(), experiments::file_hash(path)?);
    }
    Ok(Inputs {
        corpus,
        store,
        datasets,
        hashes,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    experiments::write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn context(cfg: &ExperimentConfig, plan_hash: String, hashes: &BTreeMap<String, String>) -> Result<ReportContext> {
    Ok(ReportContext {
        config: serde_json::to_value(cfg)?,
        plan_hash,
        input_hashes: hashes.clone(),
    })
}

/// One hash over the plans of every task and mode, in config order.
fn plans_hash(datasets: &[TaskDataset], seed: u64) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for ds in datasets {
        let (cross, inn) = experiments::plan_pair(ds, seed)?;
        h.update(cross.hash());
        h.update(inn.hash());
    }
    Ok(hex::encode(h.finalize()))
}

fn ingest_check(ctx: &Ctx) -> Result<()> {
    let inp = load_inputs(&ctx.cfg, &ctx.cfg.tasks)?;
    println!(
        "corpus: {} sentences, {} topics; store: {} sentences, dim {}",
        inp.corpus.len(),
        inp.corpus.topics().len(),
        inp.store.len(),
        inp.store.dim()
    );
    for ds in &inp.datasets {
        println!(
            "{}: {} instances, {} labels, {} topics",
            ds.task,
            ds.len(),
            ds.num_labels(),
            ds.topic_set.len()
        );
        topicprobe::FeatureTable::build(&inp.store, ds)?;
    }
    Ok(())
}

fn plan(ctx: &Ctx) -> Result<()> {
    let inp = load_inputs(&ctx.cfg, &ctx.cfg.tasks)?;
    for ds in &inp.datasets {
        let plans = experiments::plan_pair(ds, ctx.cfg.plan_seed)?;
        for mode in [Mode::Cross, Mode::In] {
            let p = experiments::plan_for(&plans, mode);
            p.validate(ds)?;
            let path = ctx.out.join("plans").join(format!("{}_{}.json", ds.task.as_str().to_lowercase(), mode));
            experiments::write_atomic(&path, p.to_json().as_bytes())?;
            log::info!("{} {mode}: {}", ds.task, p.hash());
        }
    }
    Ok(())
}

fn run_probes<F: Scalar>(cfg: &ExperimentConfig, inp: &Inputs) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for ds in &inp.datasets {
        log::info!("probing {}", ds.task);
        reports.extend(experiments::probe_task::<F>(
            &cfg.model,
            ds,
            &inp.store,
            &cfg.modes,
            &cfg.seeds,
            &cfg.train,
            cfg.plan_seed,
        )?);
    }
    Ok(reports)
}

fn write_probe_outputs(out: &Path, reports: &[EvalReport], mdl: &[MdlRecord]) -> Result<()> {
    let gap = experiments::gap_from_reports(reports, mdl)?;
    experiments::write_atomic(&out.join("reports.csv"), &experiments::reports_csv(reports)?)?;
    write_json(&out.join("gap.json"), &gap)?;
    experiments::write_atomic(&out.join("summary.md"), experiments::markdown_summary(&gap, reports).as_bytes())
}

fn probe<F: Scalar>(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let inp = load_inputs(cfg, &cfg.tasks)?;
    let reports = run_probes::<F>(cfg, &inp)?;
    let c = context(cfg, plans_hash(&inp.datasets, cfg.plan_seed)?, &inp.hashes)?;
    experiments::write_eval_reports(&ctx.out.join("reports"), &reports, &c)?;
    write_probe_outputs(&ctx.out, &reports, &[])?;
    for m in &experiments::gap_from_reports(&reports, &[])?.cells {
        println!("{} {}: in {:.4} cross {:.4} delta {:+.4}", m.model, m.task, m.in_f1, m.cross_f1, m.delta);
    }
    Ok(())
}

#[derive(Serialize)]
struct MdlOutput<'a> {
    context: ReportContext,
    records: &'a [MdlRecord],
    summary: Vec<experiments::MdlSummary>,
    rho: Option<f64>,
}

fn mdl<F: Scalar>(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let inp = load_inputs(cfg, &cfg.tasks)?;
    let mut records = Vec::new();
    for ds in &inp.datasets {
        log::info!("codelength for {}", ds.task);
        records.extend(experiments::mdl_task::<F>(
            &cfg.model,
            ds,
            &inp.store,
            &cfg.modes,
            &cfg.seeds,
            &cfg.train,
            &cfg.mdl,
            cfg.plan_seed,
        )?);
    }
    let reports = run_probes::<F>(cfg, &inp)?;
    let (summary, rho) = experiments::mdl_summary(&records, &reports)?;
    for s in &summary {
        println!(
            "{} {}: I in {} cross {} delta {}",
            s.model,
            s.task,
            opt(s.in_compression),
            opt(s.cross_compression),
            opt(s.delta_compression)
        );
    }
    println!("rank correlation F1 vs I: {}", opt(rho));
    let c = context(cfg, plans_hash(&inp.datasets, cfg.plan_seed)?, &inp.hashes)?;
    experiments::write_eval_reports(&ctx.out.join("reports"), &reports, &c)?;
    write_json(
        &ctx.out.join("mdl.json"),
        &MdlOutput {
            context: c,
            records: &records,
            summary,
            rho,
        },
    )?;
    write_probe_outputs(&ctx.out, &reports, &records)
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

/// TOPICSPEC dataset from the config, or derived from corpus counts.
fn property_dataset(cfg: &ExperimentConfig, corpus: Arc<Corpus>) -> Result<TaskDataset> {
    if let Ok(path) = cfg.dataset_path(TaskKind::Topicspec) {
        return load_dataset(path, corpus, TaskKind::Topicspec);
    }
    let table = topicspec::build_counts(&corpus, cfg.topicspec.alpha)?;
    let binned = topicspec::bin_tokens(&topicspec::score_all(&table), cfg.topicspec.binning);
    topicspec::topicspec_dataset(corpus, &binned.bins)
}

fn topicspec_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let corpus = Arc::new(Corpus::load(required(&cfg.corpus, "corpus")?)?);
    let table = topicspec::build_counts(&corpus, cfg.topicspec.alpha)?;
    let scores = topicspec::score_all(&table);
    let binned = topicspec::bin_tokens(&scores, cfg.topicspec.binning);
    if binned.degenerate {
        log::warn!("specificity scores are degenerate; all tokens binned medium");
    }
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    topicspec::write_scores_csv(&ctx.out.join("topicspec_scores.csv"), &scores, &binned.bins)?;
    let ds = topicspec::topicspec_dataset(corpus, &binned.bins)?;
    ds.save(&ctx.out.join("topicspec.jsonl"))?;
    println!("{} token types, {} TOPICSPEC instances", scores.len(), ds.len());
    Ok(())
}

fn amnesic<F: Scalar>(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let tasks: Vec<TaskKind> = cfg.tasks.iter().copied().filter(|&t| t != TaskKind::Topicspec).collect();
    let inp = load_inputs(cfg, &tasks)?;
    let property = property_dataset(cfg, inp.corpus.clone())?;
    let refs: Vec<&TaskDataset> = inp.datasets.iter().collect();
    let run = experiments::amnesic_experiment::<F>(
        &cfg.model,
        &inp.store,
        &property,
        &refs,
        &cfg.modes,
        &cfg.seeds,
        &cfg.train,
        &cfg.amnesic,
        cfg.plan_seed,
    )?;
    experiments::write_atomic(&ctx.out.join("projection.prjm"), &run.removal.projection.to_bytes())?;
    experiments::write_atomic(&ctx.out.join("random_projection.prjm"), &run.random.to_bytes())?;
    #[derive(Serialize)]
    struct Out<'a> {
        context: ReportContext,
        history: &'a [topicprobe::amnesic::IterationLog],
        reports: &'a [topicprobe::amnesic::AmnesicReport],
    }
    let c = context(cfg, plans_hash(&inp.datasets, cfg.plan_seed)?, &inp.hashes)?;
    write_json(
        &ctx.out.join("amnesic.json"),
        &Out {
            context: c,
            history: &run.removal.history,
            reports: &run.reports,
        },
    )?;
    let mut md = format!(
        "Removed rank {} in {} iteration(s); property accuracy {:.1} (majority {:.1}).\n\n",
        run.removal.projection.removed_rank,
        run.removal.projection.iterations,
        100.0 * run.removal.final_accuracy,
        100.0 * run.removal.majority
    );
    md.push_str("| task | mode | F1 | F1 removed | Δ | F1 random | Δ random |\n|---|---|---|---|---|---|---|\n");
    for r in &run.reports {
        let _ = writeln!(
            md,
            "| {} | {} | {:.1} | {:.1} | {:+.1} | {:.1} | {:+.1} |",
            r.task,
            r.mode,
            100.0 * r.f1_with,
            100.0 * r.f1_without,
            100.0 * r.delta,
            100.0 * r.f1_random,
            100.0 * r.control_delta
        );
    }
    experiments::write_atomic(&ctx.out.join("amnesic.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}

fn reprobe<F: Scalar>(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let inp = load_inputs(cfg, &cfg.tasks)?;
    let tuned_path = required(&cfg.finetuned_store, "finetuned_store")?;
    let tuned = EmbeddingStore::open(tuned_path)?;
    tuned.check_corpus(&inp.corpus)?;
    let refs: Vec<&TaskDataset> = inp.datasets.iter().collect();
    let cells = experiments::reprobe::<F>(&inp.store, &tuned, &refs, &cfg.modes, &cfg.seeds, &cfg.train, cfg.plan_seed)?;
    let mut hashes = inp.hashes.clone();
    hashes.insert(tuned_path.display().to_string(), experiments::file_hash(tuned_path)?);
    #[derive(Serialize)]
    struct Out<'a> {
        context: ReportContext,
        cells: &'a [experiments::ReprobeCell],
    }
    write_json(
        &ctx.out.join("reprobe.json"),
        &Out {
            context: context(cfg, plans_hash(&inp.datasets, cfg.plan_seed)?, &hashes)?,
            cells: &cells,
        },
    )?;
    let mut md = String::from("| task | mode | pre-trained | fine-tuned | Δ |\n|---|---|---|---|---|\n");
    for c in &cells {
        let _ = writeln!(
            md,
            "| {} | {} | {:.1} | {:.1} | {:+.1} |",
            c.task,
            c.mode,
            100.0 * c.base_f1,
            100.0 * c.tuned_f1,
            100.0 * c.delta
        );
    }
    experiments::write_atomic(&ctx.out.join("reprobe.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}

fn report(ctx: &Ctx) -> Result<()> {
    let dir = ctx.out.join("reports");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let mut r: EvalReport = serde_json::from_str(&text)?;
        r.context = None;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::Insufficient(format!("no reports under {}", dir.display())));
    }
    reports.sort_by(|a, b| (&a.model, a.task, a.mode, a.fold, a.seed).cmp(&(&b.model, b.task, b.mode, b.fold, b.seed)));
    let mdl_path = ctx.out.join("mdl.json");
    let records: Vec<MdlRecord> = if mdl_path.exists() {
        let text = std::fs::read_to_string(&mdl_path).map_err(|e| Error::io(&mdl_path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        serde_json::from_value(v["records"].clone())?
    } else {
        Vec::new()
    };
    write_probe_outputs(&ctx.out, &reports, &records)?;
    println!("{} reports summarised", reports.len());
    Ok(())
}

fn synth(ctx: &Ctx) -> Result<()> {
    let data = topicprobe::synth::generate(&ctx.cfg.synth)?;
    data.write(&ctx.out)?;
    // A config that points the other commands at the generated files.
    let mut cfg = ctx.cfg.clone();
    cfg.model = "synthetic".into();
    cfg.corpus = Some(ctx.out.join("corpus.jsonl"));
    cfg.store = Some(ctx.out.join("embeddings.tprb"));
    cfg.datasets = data
        .datasets
        .keys()
        .map(|t| {
            let name = t.as_str().to_lowercase();
            let path = ctx.out.join(format!("{name}.jsonl"));
            (name, path)
        })
        .collect();
    cfg.out = None;
    write_json(&ctx.out.join("config.json"), &cfg)?;
    println!(
        "{} sentences, dim {}; config written to {}",
        data.corpus.len(),
        data.store.dim(),
        ctx.out.join("config.json").display()
    );
    Ok(())
}
