use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Shots, StageConfig, Threshold};
use super::fusion::fuse_heads;
use super::train::{predict, train_stage, StageInputs, StageLog};
use crate::dataset::{
    build_rare_instance_bank, compute_category_stats, median_image_count, partition_head_tail, sample_k_shot,
    BankEntry, BinThresholds, CategoryId, CategoryStats, DatasetIndex, FrequencyBin, InstanceAnnotation, KShotSample,
    Partition, PixelStore,
};
use crate::detector::{reinit_head, Checkpoint, DetectorParams};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, save_detections, EvalReport};
use crate::json::canonical_string;
use crate::rng::rng_for;
use crate::synthgen::{generate_longtail_dataset, generate_unlabeled_pool, load_benchmark, SynthSpec};
use crate::CheckpointF32;

const INIT_STREAM: u64 = 0x49_4e;
const STAGE1: u64 = 1;
const STAGE2: u64 = 2;
const STAGE3: u64 = 3;
const SINGLE: u64 = 4;

/// Labeled splits, unlabeled pool and their pixels.
#[derive(Debug, Clone)]
pub struct RunData {
    pub spec: SynthSpec,
    pub train: DatasetIndex,
    pub val: DatasetIndex,
    pub store: PixelStore,
    pub unlabeled: DatasetIndex,
    pub unlabeled_store: PixelStore,
    /// Generator-side labels of the unlabeled pool (empty when loaded from disk).
    pub hidden: Vec<InstanceAnnotation>,
}

impl RunData {
    pub fn generate(spec: &SynthSpec) -> Result<Self> {
        let lt = generate_longtail_dataset(spec)?;
        let pool = generate_unlabeled_pool(spec)?;
        Ok(RunData {
            spec: spec.clone(),
            train: lt.train,
            val: lt.val,
            store: lt.store,
            unlabeled: pool.index,
            unlabeled_store: pool.store,
            hidden: pool.hidden,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (spec, lt, pool) = load_benchmark(dir)?;
        Ok(RunData {
            spec,
            train: lt.train,
            val: lt.val,
            store: lt.store,
            unlabeled: pool.index,
            unlabeled_store: pool.store,
            hidden: pool.hidden,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        if cfg.data.root.is_empty() {
            Self::generate(&cfg.data.synth)
        } else {
            Self::load(Path::new(&cfg.data.root))
        }
    }
}

/// Head/tail split and the quantities derived from training statistics.
#[derive(Debug, Clone)]
pub struct Splits {
    pub threshold_m: usize,
    pub stats: Vec<CategoryStats>,
    pub partition: Partition,
    /// Rarity bin of every class present in at least one training image.
    pub bins: BTreeMap<CategoryId, FrequencyBin>,
    pub bank: Vec<BankEntry>,
}

pub fn resolve_threshold(train: &DatasetIndex, rule: Threshold) -> usize {
    match rule {
        Threshold::Fixed(m) => m,
        Threshold::Named(_) => median_image_count(&compute_category_stats(train, BinThresholds::LVIS)),
    }
}

pub fn prepare_splits(data: &RunData, cfg: &RunConfig) -> Result<Splits> {
    let m = resolve_threshold(&data.train, cfg.data.threshold_m);
    let thresholds = BinThresholds { rare_max: m, common_max: cfg.data.common_max.max(m) };
    let stats = compute_category_stats(&data.train, thresholds);
    let bins = stats.iter().filter(|s| s.image_count > 0).map(|s| (s.category_id, s.frequency_bin)).collect();
    let partition = partition_head_tail(&data.train, m)?;
    if let Some(w) = &partition.warning {
        log::warn!("{w}");
    }
    let bank = if partition.tail.is_empty() { Vec::new() } else { build_rare_instance_bank(&partition.tail, &data.store)? };
    Ok(Splits { threshold_m: m, stats, partition, bins, bank })
}

/// Configuration plus loaded data: everything the stages read.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub cfg: RunConfig,
    pub data: RunData,
    pub splits: Splits,
}

impl RunContext {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let data = RunData::from_config(&cfg)?;
        Self::with_data(cfg, data)
    }

    pub fn with_data(cfg: RunConfig, data: RunData) -> Result<Self> {
        cfg.validate()?;
        let splits = prepare_splits(&data, &cfg)?;
        Ok(RunContext { cfg, data, splits })
    }

    pub fn head_ids(&self) -> &[CategoryId] {
        &self.splits.partition.spec.head_ids
    }

    pub fn tail_ids(&self) -> &[CategoryId] {
        &self.splits.partition.spec.tail_ids
    }

    pub(crate) fn unlabeled(&self) -> Option<(&DatasetIndex, &PixelStore)> {
        Some((&self.data.unlabeled, &self.data.unlabeled_store))
    }

    pub fn evaluate(&self, ckpt: &CheckpointF32, seed: u64) -> Result<EvalReport> {
        let dets = predict(&ckpt.params, &ckpt.meta.class_ids, &self.data.val, &self.data.store, &self.cfg)?;
        let mut report = evaluate(&dets, &self.data.val, &self.splits.bins, &self.cfg.eval)?;
        report.seeds = vec![seed];
        Ok(report)
    }
}

fn init_params(cfg: &RunConfig, num_classes: usize, seed: u64, stream: u64) -> DetectorParams<f32> {
    DetectorParams::init(&cfg.arch(), num_classes, &mut rng_for(seed, &[INIT_STREAM, stream]))
}

/// Step 1: train from scratch on the head split.
pub fn run_stage1_pretrain(
    d_head: &DatasetIndex,
    store: &PixelStore,
    unlabeled: Option<(&DatasetIndex, &PixelStore)>,
    bins: &BTreeMap<CategoryId, FrequencyBin>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(CheckpointF32, StageLog)> {
    if d_head.is_empty() {
        return Err(Error::EmptyDataset("stage 1 needs a non-empty head split".into()));
    }
    let class_ids = d_head.category_ids();
    let params = init_params(cfg, class_ids.len(), seed, STAGE1);
    let inputs = StageInputs {
        name: "stage1",
        stream: STAGE1,
        labeled: d_head,
        store,
        class_ids: &class_ids,
        unlabeled,
        bank: None,
        bins,
    };
    let (params, log) = train_stage(params, &inputs, &cfg.stage1, cfg, seed)?;
    Ok((Checkpoint::new("pretrain", class_ids, params)?, log))
}

/// Step 2: new head over the tail classes on top of the frozen representation.
#[allow(clippy::too_many_arguments)]
pub fn run_stage2_transfer(
    head: &CheckpointF32,
    d_tail: &DatasetIndex,
    store: &PixelStore,
    unlabeled: Option<(&DatasetIndex, &PixelStore)>,
    bank: Option<&[BankEntry]>,
    bins: &BTreeMap<CategoryId, FrequencyBin>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(CheckpointF32, StageLog)> {
    if d_tail.is_empty() {
        return Err(Error::EmptyDataset("stage 2 needs a non-empty tail split".into()));
    }
    let tail_ids = d_tail.category_ids();
    if let Some(bank) = bank {
        let bank_ids: BTreeSet<CategoryId> = bank.iter().map(|b| b.category_id).collect();
        let tail_set: BTreeSet<CategoryId> = tail_ids.iter().copied().collect();
        if !bank_ids.is_subset(&tail_set) {
            return Err(Error::StructureMismatch("rare instance bank holds classes outside tail_ids".into()));
        }
    }
    let params = reinit_head(&head.params, tail_ids.len(), &mut rng_for(seed, &[INIT_STREAM, STAGE2]))?;
    let inputs = StageInputs {
        name: "stage2",
        stream: STAGE2,
        labeled: d_tail,
        store,
        class_ids: &tail_ids,
        unlabeled,
        bank,
        bins,
    };
    let (params, log) = train_stage(params, &inputs, &cfg.stage2.train, cfg, seed)?;
    Ok((Checkpoint::new("transfer", tail_ids, params)?, log))
}

/// Tail head drawn fresh on the head representation (Step 2 skipped).
pub fn scratch_tail(head: &CheckpointF32, tail_ids: &[CategoryId], seed: u64) -> Result<CheckpointF32> {
    let params = reinit_head(&head.params, tail_ids.len(), &mut rng_for(seed, &[INIT_STREAM, STAGE2]))?;
    Checkpoint::new("scratch_tail", tail_ids.to_vec(), params)
}

/// Step 3: fine-tune classifier and regressor on the k-shot replay set.
pub fn run_stage3_finetune(
    fused: &CheckpointF32,
    d_k: &DatasetIndex,
    store: &PixelStore,
    bins: &BTreeMap<CategoryId, FrequencyBin>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(CheckpointF32, StageLog)> {
    if d_k.is_empty() {
        return Err(Error::EmptyDataset("stage 3 needs a non-empty k-shot sample".into()));
    }
    let class_ids = fused.meta.class_ids.clone();
    let inputs = StageInputs {
        name: "stage3",
        stream: STAGE3,
        labeled: d_k,
        store,
        class_ids: &class_ids,
        unlabeled: None,
        bank: None,
        bins,
    };
    let (params, log) = train_stage(fused.params.clone(), &inputs, &cfg.stage3.train, cfg, seed)?;
    Ok((Checkpoint::new("finetune", class_ids, params)?, log))
}

/// Train once on the full long-tailed set for the combined budget of all stages.
pub fn run_single_stage(ctx: &RunContext, cfg: &RunConfig, seed: u64) -> Result<(CheckpointF32, StageLog)> {
    let class_ids = ctx.data.train.category_ids();
    let params = init_params(cfg, class_ids.len(), seed, SINGLE);
    let stage = StageConfig { iterations: single_stage_budget(cfg), ..cfg.stage1.clone() };
    let inputs = StageInputs {
        name: "single_stage",
        stream: SINGLE,
        labeled: &ctx.data.train,
        store: &ctx.data.store,
        class_ids: &class_ids,
        unlabeled: ctx.unlabeled(),
        bank: None,
        bins: &ctx.splits.bins,
    };
    let (params, log) = train_stage(params, &inputs, &stage, cfg, seed)?;
    Ok((Checkpoint::new("single_stage", class_ids, params)?, log))
}

pub fn single_stage_budget(cfg: &RunConfig) -> usize {
    cfg.stage1.iterations + cfg.stage2.train.iterations + cfg.stage3.train.iterations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Simltd,
    SkipStage2,
    SingleStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KShotSummary {
    pub k: String,
    pub images: usize,
    pub instances: BTreeMap<CategoryId, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_digest: String,
    pub seed: u64,
    pub variant: Variant,
    pub threshold_m: usize,
    pub head_ids: Vec<CategoryId>,
    pub tail_ids: Vec<CategoryId>,
    pub k_shot: Option<KShotSummary>,
    /// Full parameter digest per stage output.
    pub checkpoints: BTreeMap<String, String>,
    pub representation_digests: BTreeMap<String, String>,
    pub stages: Vec<StageLog>,
    pub completed: Vec<String>,
    pub report: Option<EvalReport>,
}

impl RunManifest {
    pub fn new(cfg: &RunConfig, splits: &Splits, seed: u64, variant: Variant) -> Self {
        RunManifest {
            config: cfg.clone(),
            config_digest: cfg.digest(),
            seed,
            variant,
            threshold_m: splits.threshold_m,
            head_ids: splits.partition.spec.head_ids.clone(),
            tail_ids: splits.partition.spec.tail_ids.clone(),
            k_shot: None,
            checkpoints: BTreeMap::new(),
            representation_digests: BTreeMap::new(),
            stages: Vec::new(),
            completed: Vec::new(),
            report: None,
        }
    }

    pub fn record(&mut self, name: &str, ckpt: &CheckpointF32, log: Option<StageLog>) {
        self.checkpoints.insert(name.into(), ckpt.digest());
        self.representation_digests.insert(name.into(), ckpt.params.representation_digest());
        self.stages.extend(log);
        self.completed.push(name.into());
    }

    pub fn to_json(&self) -> Result<String> {
        canonical_string(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed { path: path.to_path_buf(), message: e.to_string() })
    }
}

pub fn kshot_summary(k: Shots, dk: &DatasetIndex, sample: &KShotSample) -> KShotSummary {
    KShotSummary {
        k: k.label(),
        images: dk.images().len(),
        instances: sample.selected.iter().map(|(&c, v)| (c, v.len())).collect(),
    }
}

/// Fuse, draw D_k and fine-tune; returns the fused and final checkpoints.
pub fn fuse_and_finetune(
    ctx: &RunContext,
    cfg: &RunConfig,
    head: &CheckpointF32,
    tail: Option<&CheckpointF32>,
    k: Shots,
    seed: u64,
) -> Result<(CheckpointF32, CheckpointF32, StageLog, KShotSummary)> {
    let fused = fuse_heads(head, tail, ctx.head_ids(), ctx.tail_ids(), cfg.stage3.regressor)?;
    let (dk, sample) = sample_k_shot(&ctx.data.train, k.count(), seed)?;
    let summary = kshot_summary(k, &dk, &sample);
    let (fin, log) = run_stage3_finetune(&fused, &dk, &ctx.data.store, &ctx.splits.bins, cfg, seed)?;
    Ok((fused, fin, log, summary))
}

pub struct PipelineOutput {
    pub final_checkpoint: CheckpointF32,
    pub checkpoints: BTreeMap<String, CheckpointF32>,
    pub manifest: RunManifest,
}

fn persist(out_dir: Option<&Path>, name: &str, ckpt: &CheckpointF32, manifest: &RunManifest) -> Result<()> {
    if let Some(dir) = out_dir {
        ckpt.save(dir.join(format!("{name}.ckpt.json")))?;
        manifest.save(dir.join("manifest.json"))?;
    }
    Ok(())
}

/// Stages 1 to 3 with checkpoint handoff (or the single-stage baseline),
/// then evaluation on the val split. With `out_dir`, checkpoints and the
/// manifest are written as each stage completes.
pub fn run_full_pipeline(ctx: &RunContext, seed: u64, variant: Variant, out_dir: Option<&Path>) -> Result<PipelineOutput> {
    let cfg = &ctx.cfg;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let variant = if variant == Variant::Simltd && cfg.stage2.skip { Variant::SkipStage2 } else { variant };
    let mut manifest = RunManifest::new(cfg, &ctx.splits, seed, variant);
    let mut checkpoints = BTreeMap::new();

    let final_ckpt = if variant == Variant::SingleStage {
        let (ckpt, log) = run_single_stage(ctx, cfg, seed)?;
        manifest.record("single_stage", &ckpt, Some(log));
        persist(out_dir, "single_stage", &ckpt, &manifest)?;
        ckpt
    } else {
        let unl = if cfg.stage1.semi { ctx.unlabeled() } else { None };
        let (head, log) = run_stage1_pretrain(&ctx.splits.partition.head, &ctx.data.store, unl, &ctx.splits.bins, cfg, seed)?;
        manifest.record("stage1", &head, Some(log));
        persist(out_dir, "stage1", &head, &manifest)?;

        let tail = if ctx.tail_ids().is_empty() {
            None
        } else if variant == Variant::SkipStage2 {
            let t = scratch_tail(&head, ctx.tail_ids(), seed)?;
            manifest.record("scratch_tail", &t, None);
            Some(t)
        } else {
            let unl = if cfg.stage2.train.semi { ctx.unlabeled() } else { None };
            let bank = (cfg.stage2.rare_paste && unl.is_some()).then_some(ctx.splits.bank.as_slice());
            let (t, log) = run_stage2_transfer(
                &head,
                &ctx.splits.partition.tail,
                &ctx.data.store,
                unl,
                bank,
                &ctx.splits.bins,
                cfg,
                seed,
            )?;
            manifest.record("stage2", &t, Some(log));
            persist(out_dir, "stage2", &t, &manifest)?;
            Some(t)
        };

        let (fused, fin, log, summary) = fuse_and_finetune(ctx, cfg, &head, tail.as_ref(), cfg.stage3.k, seed)?;
        manifest.k_shot = Some(summary);
        manifest.record("fused", &fused, None);
        persist(out_dir, "fused", &fused, &manifest)?;
        manifest.record("stage3", &fin, Some(log));
        persist(out_dir, "stage3", &fin, &manifest)?;
        checkpoints.insert("stage1".to_string(), head);
        if let Some(t) = tail {
            checkpoints.insert("stage2".to_string(), t);
        }
        checkpoints.insert("fused".to_string(), fused);
        fin
    };

    let report = ctx.evaluate(&final_ckpt, seed)?;
    if let Some(dir) = out_dir {
        let dets = predict(&final_ckpt.params, &final_ckpt.meta.class_ids, &ctx.data.val, &ctx.data.store, cfg)?;
        save_detections(&dets, dir.join("detections.json"))?;
        let path = dir.join("report.json");
        fs::write(&path, report.to_json()?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("report.txt");
        fs::write(&path, report.table()).map_err(|e| Error::io(&path, e))?;
    }
    manifest.report = Some(report);
    manifest.completed.push("eval".into());
    if let Some(dir) = out_dir {
        manifest.save(dir.join("manifest.json"))?;
    }
    checkpoints.insert("final".to_string(), final_ckpt.clone());
    Ok(PipelineOutput { final_checkpoint: final_ckpt, checkpoints, manifest })
}
