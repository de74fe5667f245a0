//! `simltd`: command-line front end for the multi-stage long-tailed detection
//! pipeline. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simltd_core::dataset::{
    compute_category_stats, load_dataset, lvis_shaped_fixture, partition_spec, sample_k_shot, save_dataset, BinThresholds,
    DatasetIndex,
};
use simltd_core::detector::Checkpoint;
use simltd_core::evaluation::{save_detections, Protocol};
use simltd_core::json::canonical_string;
use simltd_core::pipeline::*;
use simltd_core::plots::{emit_plots, PlotKind};
use simltd_core::synthgen::{generate_longtail_dataset, generate_unlabeled_pool, write_benchmark};
use simltd_core::CheckpointF32;

const DEFAULT_OUT_ROOT: &str = "runs";
const OUT_ENV: &str = "SIMLTD_OUT";

#[derive(Debug, Parser)]
#[command(name = "simltd", version, about = "Multi-stage long-tailed object detection at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run configuration; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output root; each invocation writes to `<out>/<timestamp>-<config digest>`.
    /// Defaults to $SIMLTD_OUT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Per-command overrides of config values.
#[derive(Debug, Clone, Args)]
struct Overrides {
    /// Head/tail image-count threshold M.
    #[arg(long)]
    m: Option<usize>,
    /// Instances per class for fine-tuning: an integer or `all`.
    #[arg(long)]
    k: Option<Shots>,
    /// Weight of the pseudo-label loss.
    #[arg(long)]
    alpha: Option<f64>,
    /// Pseudo-label score threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Fuse a freshly initialised tail head instead of running transfer.
    #[arg(long)]
    skip_stage2: bool,
    /// Enable semi-supervised training in Stages 1 and 2.
    #[arg(long, overrides_with = "no_semi")]
    semi: bool,
    #[arg(long, overrides_with = "semi")]
    no_semi: bool,
    /// Evaluation protocol: standard or fixed.
    #[arg(long)]
    protocol: Option<Protocol>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic long-tailed benchmark into the run directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Also write the LVIS-shaped category-count fixture.
        #[arg(long)]
        lvis_fixture: bool,
    },
    /// Per-class image and instance counts with frequency bins.
    Stats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// COCO-format annotation file; defaults to the configured training split.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Head/tail split at threshold M.
    Partition {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Stage 1: pre-train on the head split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Stage 2: transfer a Stage-1 checkpoint to the tail split.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        head: PathBuf,
    },
    /// Merge head and tail checkpoints into one detector over all classes.
    Fuse {
        #[arg(long)]
        head: PathBuf,
        /// Tail checkpoint; omit to fuse the head vocabulary alone.
        #[arg(long)]
        tail: Option<PathBuf>,
        /// Output checkpoint file; defaults to `fused.ckpt.json` in a new run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which model's box regressor the fused detector keeps: head, tail or average.
        #[arg(long, default_value = "head")]
        regressor: RegressorSource,
    },
    /// Stage 3: fine-tune a fused checkpoint on the k-shot replay set.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        fused: PathBuf,
    },
    /// Stages 1 to 3 and evaluation.
    RunAll {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Train the single-stage baseline with the combined budget instead.
        #[arg(long)]
        single_stage: bool,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a named comparison suite over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// table4, fig6, fig7 or fig3.
        #[arg(long)]
        suite: Suite,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Render charts from run manifests.
    Plot {
        /// transfer, ksweep or pretrain.
        #[arg(long)]
        kind: PlotKind,
        /// Output root (see other commands).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Manifest files, or directories searched recursively for manifest.json.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<simltd_core::Error> for Failure {
    fn from(e: simltd_core::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn runtime(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Configuration with overrides applied and validated, plus the raw text
/// of the file it came from.
struct Resolved {
    cfg: RunConfig,
    source: Option<String>,
}

fn resolve_config(common: &Common, ov: &Overrides) -> CliResult<Resolved> {
    let (mut cfg, source) = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("--config {}: {e}", path.display())))?;
            let cfg = RunConfig::from_toml(&text).map_err(|e| Failure::Validation(format!("--config {}: {e}", path.display())))?;
            (cfg, Some(text))
        }
        None => (RunConfig::default(), None),
    };
    if let Some(m) = ov.m {
        cfg.data.threshold_m = Threshold::Fixed(m);
    }
    if let Some(k) = ov.k {
        cfg.stage3.k = k;
    }
    if let Some(a) = ov.alpha {
        cfg.semi.alpha = a;
    }
    if let Some(t) = ov.tau {
        cfg.semi.tau = t;
    }
    if ov.skip_stage2 {
        cfg.stage2.skip = true;
    }
    if ov.semi || ov.no_semi {
        cfg.stage1.semi = ov.semi;
        cfg.stage2.train.semi = ov.semi;
    }
    if let Some(p) = ov.protocol {
        cfg.eval.protocol = p;
    }
    cfg.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(Resolved { cfg, source })
}

fn out_root(flag: Option<&PathBuf>) -> PathBuf {
    flag.cloned()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// Create `<root>/<UTC timestamp>-<digest>`, suffixed when the name is taken.
fn create_run_dir(root: &Path, digest: &str) -> CliResult<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    fs::create_dir_all(root).map_err(|e| runtime(root, e))?;
    let base = format!("{stamp}-{digest}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(runtime(&dir, e)),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Run directory holding the verbatim config (when one was given) and the
/// resolved config that the command actually used.
fn start_run(common: &Common, r: &Resolved) -> CliResult<PathBuf> {
    let dir = create_run_dir(&out_root(common.out.as_ref()), &r.cfg.digest())?;
    if let Some(text) = &r.source {
        write_text(&dir.join("config.toml"), text)?;
    }
    write_text(&dir.join("config.resolved.toml"), &r.cfg.to_toml())?;
    eprintln!("run directory: {}", dir.display());
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| runtime(path, e))
}

fn load_ckpt(flag: &str, path: &Path) -> CliResult<CheckpointF32> {
    Checkpoint::load(path).map_err(|e| Failure::Validation(format!("--{flag}: {e}")))
}

fn expect_classes(flag: &str, ckpt: &CheckpointF32, expected: &[simltd_core::dataset::CategoryId]) -> CliResult {
    if ckpt.meta.class_ids != expected {
        return Err(Failure::Validation(format!(
            "--{flag}: checkpoint classes {:?} do not match the expected {:?}",
            ckpt.meta.class_ids.iter().map(|c| c.0).collect::<Vec<_>>(),
            expected.iter().map(|c| c.0).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

fn dataset_or_train(path: Option<&PathBuf>, cfg: &RunConfig) -> CliResult<DatasetIndex> {
    match path {
        Some(p) => load_dataset(p).map_err(|e| Failure::Validation(format!("--dataset: {e}"))),
        None => Ok(RunData::from_config(cfg)?.train),
    }
}

fn save_report(dir: &Path, ctx: &RunContext, ckpt: &CheckpointF32, seed: u64) -> CliResult<simltd_core::evaluation::EvalReport> {
    let report = ctx.evaluate(ckpt, seed)?;
    let dets = predict(&ckpt.params, &ckpt.meta.class_ids, &ctx.data.val, &ctx.data.store, &ctx.cfg)?;
    save_detections(&dets, dir.join("detections.json"))?;
    write_text(&dir.join("report.json"), &report.to_json()?)?;
    write_text(&dir.join("report.txt"), &report.table())?;
    print!("{}", report.table());
    Ok(report)
}

fn collect_manifests(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult {
        let mut entries: Vec<PathBuf> =
            fs::read_dir(dir).map_err(|e| runtime(dir, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == "manifest.json") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(Failure::Validation(format!("manifest path {} does not exist", p.display())));
        }
    }
    if out.is_empty() {
        return Err(Failure::Validation("no manifest.json found under the given paths".into()));
    }
    Ok(out)
}

fn suite_plot(suite: Suite) -> PlotKind {
    match suite {
        Suite::Table4 | Suite::Fig6 => PlotKind::Transfer,
        Suite::Fig7 => PlotKind::KSweep,
        Suite::Fig3 => PlotKind::Pretrain,
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth { common, overrides, lvis_fixture } => {
            let r = resolve_config(&common, &overrides)?;
            let dir = start_run(&common, &r)?;
            let spec = &r.cfg.data.synth;
            let lt = generate_longtail_dataset(spec)?;
            let pool = generate_unlabeled_pool(spec)?;
            let data_dir = dir.join("data");
            write_benchmark(&data_dir, spec, &lt, &pool)?;
            if lvis_fixture {
                save_dataset(&lvis_shaped_fixture(), dir.join("lvis_fixture.json"))?;
            }
            println!(
                "wrote {} train, {} val and {} unlabeled images to {}",
                lt.train.images().len(),
                lt.val.images().len(),
                pool.index.images().len(),
                data_dir.display()
            );
        }
        Command::Stats { common, overrides, dataset } => {
            let r = resolve_config(&common, &overrides)?;
            let ds = dataset_or_train(dataset.as_ref(), &r.cfg)?;
            let m = resolve_threshold(&ds, r.cfg.data.threshold_m);
            let thresholds = BinThresholds { rare_max: m, common_max: r.cfg.data.common_max.max(m) };
            let stats = compute_category_stats(&ds, thresholds);
            let dir = start_run(&common, &r)?;
            write_text(&dir.join("stats.json"), &canonical_string(&stats)?)?;
            let mut table = format!("{:>8} {:>8} {:>10} {:>9}\n", "class", "images", "instances", "bin");
            for s in &stats {
                let _ = writeln!(table, "{:>8} {:>8} {:>10} {:>9?}", s.category_id.0, s.image_count, s.instance_count, s.frequency_bin);
            }
            print!("{table}");
        }
        Command::Partition { common, overrides, dataset } => {
            let r = resolve_config(&common, &overrides)?;
            let ds = dataset_or_train(dataset.as_ref(), &r.cfg)?;
            let m = resolve_threshold(&ds, r.cfg.data.threshold_m);
            let spec = partition_spec(&ds, m)?;
            let dir = start_run(&common, &r)?;
            write_text(&dir.join("partition.json"), &canonical_string(&spec)?)?;
            println!(
                "M = {m}: head {} classes, tail {} classes, total {}",
                spec.head_ids.len(),
                spec.tail_ids.len(),
                spec.head_ids.len() + spec.tail_ids.len()
            );
        }
        Command::Pretrain { common, overrides } => {
            let r = resolve_config(&common, &overrides)?;
            let ctx = RunContext::new(r.cfg.clone())?;
            let dir = start_run(&common, &r)?;
            let unl = if r.cfg.stage1.semi { Some((&ctx.data.unlabeled, &ctx.data.unlabeled_store)) } else { None };
            let s = &ctx.splits;
            let (ckpt, log) = run_stage1_pretrain(&s.partition.head, &ctx.data.store, unl, &s.bins, &r.cfg, common.seed)?;
            let mut manifest = RunManifest::new(&r.cfg, s, common.seed, Variant::Simltd);
            manifest.record("stage1", &ckpt, Some(log));
            ckpt.save(dir.join("stage1.ckpt.json"))?;
            manifest.save(dir.join("manifest.json"))?;
            println!("{}", dir.join("stage1.ckpt.json").display());
        }
        Command::Transfer { common, overrides, head } => {
            let r = resolve_config(&common, &overrides)?;
            let head = load_ckpt("head", &head)?;
            let ctx = RunContext::new(r.cfg.clone())?;
            expect_classes("head", &head, ctx.head_ids())?;
            let dir = start_run(&common, &r)?;
            let s = &ctx.splits;
            let unl = if r.cfg.stage2.train.semi { Some((&ctx.data.unlabeled, &ctx.data.unlabeled_store)) } else { None };
            let bank = (r.cfg.stage2.rare_paste && unl.is_some()).then_some(s.bank.as_slice());
            let (ckpt, log) =
                run_stage2_transfer(&head, &s.partition.tail, &ctx.data.store, unl, bank, &s.bins, &r.cfg, common.seed)?;
            let mut manifest = RunManifest::new(&r.cfg, s, common.seed, Variant::Simltd);
            manifest.record("stage2", &ckpt, Some(log));
            ckpt.save(dir.join("stage2.ckpt.json"))?;
            manifest.save(dir.join("manifest.json"))?;
            println!("{}", dir.join("stage2.ckpt.json").display());
        }
        Command::Fuse { head, tail, out, regressor } => {
            let head = load_ckpt("head", &head)?;
            let tail = tail.map(|p| load_ckpt("tail", &p)).transpose()?;
            let tail_ids = tail.as_ref().map(|t| t.meta.class_ids.clone()).unwrap_or_default();
            let fused = fuse_heads(&head, tail.as_ref(), &head.meta.class_ids, &tail_ids, regressor)?;
            let path = match out {
                Some(p) => p,
                None => create_run_dir(&out_root(None), &fused.digest()[..12])?.join("fused.ckpt.json"),
            };
            fused.save(&path)?;
            println!("{}", path.display());
        }
        Command::Finetune { common, overrides, fused } => {
            let r = resolve_config(&common, &overrides)?;
            let fused = load_ckpt("fused", &fused)?;
            let ctx = RunContext::new(r.cfg.clone())?;
            expect_classes("fused", &fused, &ctx.splits.partition.spec.all_ids())?;
            let dir = start_run(&common, &r)?;
            let k = r.cfg.stage3.k;
            let (dk, sample) = sample_k_shot(&ctx.data.train, k.count(), common.seed)?;
            let (ckpt, log) = run_stage3_finetune(&fused, &dk, &ctx.data.store, &ctx.splits.bins, &r.cfg, common.seed)?;
            let mut manifest = RunManifest::new(&r.cfg, &ctx.splits, common.seed, Variant::Simltd);
            manifest.k_shot = Some(kshot_summary(k, &dk, &sample));
            manifest.record("stage3", &ckpt, Some(log));
            ckpt.save(dir.join("stage3.ckpt.json"))?;
            manifest.report = Some(save_report(&dir, &ctx, &ckpt, common.seed)?);
            manifest.completed.push("eval".into());
            manifest.save(dir.join("manifest.json"))?;
        }
        Command::RunAll { common, overrides, single_stage } => {
            let r = resolve_config(&common, &overrides)?;
            let ctx = RunContext::new(r.cfg.clone())?;
            let dir = start_run(&common, &r)?;
            let variant = if single_stage { Variant::SingleStage } else { Variant::Simltd };
            let out = run_full_pipeline(&ctx, common.seed, variant, Some(&dir))?;
            if let Some(report) = &out.manifest.report {
                print!("{}", report.table());
            }
        }
        Command::Eval { common, overrides, checkpoint } => {
            let r = resolve_config(&common, &overrides)?;
            let ckpt = load_ckpt("checkpoint", &checkpoint)?;
            let ctx = RunContext::new(r.cfg.clone())?;
            let dir = start_run(&common, &r)?;
            save_report(&dir, &ctx, &ckpt, common.seed)?;
        }
        Command::Ablate { common, overrides, suite, seeds } => {
            if seeds.is_empty() {
                return Err(Failure::Validation("--seeds must list at least one seed".into()));
            }
            let r = resolve_config(&common, &overrides)?;
            let ctx = RunContext::new(r.cfg.clone())?;
            let dir = start_run(&common, &r)?;
            let result = run_suite(&ctx, suite, &seeds)?;
            let mut all = Vec::new();
            for variant in &result.variants {
                for m in &result.manifests[variant] {
                    let sub = dir.join(variant.replace('=', "_")).join(format!("seed{}", m.seed));
                    fs::create_dir_all(&sub).map_err(|e| runtime(&sub, e))?;
                    m.save(sub.join("manifest.json"))?;
                    all.push(m.clone());
                }
            }
            let mut text = result.table();
            for variant in &result.variants {
                let per_seed = result.per_seed(variant, "AP_r").unwrap_or_default();
                let _ = writeln!(text, "{variant} AP_r per seed: {:?}", per_seed.iter().map(|v| format!("{:.4}", v)).collect::<Vec<_>>());
            }
            write_text(&dir.join("table.txt"), &text)?;
            write_text(&dir.join("suite.json"), &canonical_string(&result)?)?;
            emit_plots(&all, suite_plot(suite), &dir)?;
            print!("{text}");
        }
        Command::Plot { kind, out, manifests } => {
            let paths = collect_manifests(&manifests)?;
            let loaded = paths.iter().map(RunManifest::load).collect::<Result<Vec<_>, _>>()?;
            let digest = loaded[0].config_digest.clone();
            let dir = create_run_dir(&out_root(out.as_ref()), &digest)?;
            let path = emit_plots(&loaded, kind, &dir)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
