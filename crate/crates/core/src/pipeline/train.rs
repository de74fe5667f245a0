use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, StageConfig};
use crate::augment::{apply_strong, apply_weak, paste_rare_instances, simple_copy_paste, AugmentedSample};
use crate::dataset::{
    compute_repeat_factors, expand_epoch_indices, BankEntry, CategoryId, DatasetIndex, FrequencyBin, ImageId,
    InstanceAnnotation, PixelStore,
};
use crate::detector::{
    apply_freeze_policy, assign_targets, decode_and_nms, forward_image, grid_for, image_to_tensor, lr_at,
    weighted_loss_and_grads, Array, Detection, DetectorParams, LocationTarget, LossGroup, Sgd, TargetBox,
};
use crate::error::{Error, Result};
use crate::rng::{mix, rng_for, Rng};
use crate::semi::{semi_train_step, SemiStepConfig, TeacherState, UnlabeledPair};

const EPOCH_STREAM: u64 = 0x45_50;
const LABELED_STREAM: u64 = 0x4c_42;
const UNLABELED_STREAM: u64 = 0x55_4e;

/// Location targets for annotations in an image of `(height, width)`.
/// Annotations of classes outside `class_ids` are skipped.
pub fn annotation_targets(
    anns: &[InstanceAnnotation],
    class_ids: &[CategoryId],
    size: (usize, usize),
    center_radius: f64,
) -> Vec<LocationTarget> {
    let mut boxes = Vec::new();
    let mut ignore = Vec::new();
    for a in anns {
        if a.ignore {
            ignore.push(a.bbox);
        } else if let Ok(class) = class_ids.binary_search(&a.category_id) {
            boxes.push(TargetBox { bbox: a.bbox, class });
        }
    }
    assign_targets(&boxes, grid_for(size.0, size.1), &ignore, center_radius)
}

/// What one training stage reads.
pub struct StageInputs<'a> {
    pub name: &'static str,
    /// Distinguishes the random streams of different stages.
    pub stream: u64,
    pub labeled: &'a DatasetIndex,
    pub store: &'a PixelStore,
    pub class_ids: &'a [CategoryId],
    /// Unlabeled pool, used when the stage has `semi` enabled.
    pub unlabeled: Option<(&'a DatasetIndex, &'a PixelStore)>,
    /// Rare-instance bank pasted onto unlabeled images.
    pub bank: Option<&'a [BankEntry]>,
    pub bins: &'a BTreeMap<CategoryId, FrequencyBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub cls: f64,
    pub reg: f64,
    pub pseudo_loss: f64,
    pub grad_norm: f64,
    /// Pseudo labels produced since the previous entry, per frequency bin.
    pub pseudo_labels: BTreeMap<FrequencyBin, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub iterations: usize,
    pub entries: Vec<LogEntry>,
    pub pseudo_histogram: BTreeMap<FrequencyBin, usize>,
    pub wall_clock_s: f64,
}

/// Endless image stream: repeat-factor expanded, reshuffled every epoch.
struct EpochSampler {
    factors: BTreeMap<ImageId, f64>,
    seed: u64,
    epoch: u64,
    order: Vec<ImageId>,
    pos: usize,
}

impl EpochSampler {
    fn new(ds: &DatasetIndex, stage: &StageConfig, seed: u64) -> Result<Self> {
        let factors = if stage.rfs {
            compute_repeat_factors(ds, stage.rfs_threshold)?
        } else {
            ds.images().iter().map(|i| (i.id, 1.0)).collect()
        };
        Ok(EpochSampler { factors, seed, epoch: 0, order: Vec::new(), pos: 0 })
    }

    fn next(&mut self) -> ImageId {
        while self.pos >= self.order.len() {
            self.order = expand_epoch_indices(&self.factors, mix(self.seed, &[EPOCH_STREAM, self.epoch]));
            self.epoch += 1;
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn base_sample(ds: &DatasetIndex, store: &PixelStore, id: ImageId) -> Result<AugmentedSample> {
    Ok(AugmentedSample::new(id, store.get(id)?.clone(), ds.annotations_for(id).cloned().collect()))
}

/// Optional copy-paste from a random partner image, then the weak view.
fn labeled_example(
    inputs: &StageInputs<'_>,
    stage: &StageConfig,
    cfg: &RunConfig,
    id: ImageId,
    rng: &mut Rng,
) -> Result<(Array<f32>, Vec<LocationTarget>)> {
    let mut sample = base_sample(inputs.labeled, inputs.store, id)?;
    if stage.copy_paste {
        let images = inputs.labeled.images();
        let partner = images[rng.random_range(0..images.len())].id;
        let src = base_sample(inputs.labeled, inputs.store, partner)?;
        sample = simple_copy_paste(&sample, &src, &cfg.augment.copy_paste, rng);
    }
    let view = apply_weak(&sample, &cfg.augment.weak, rng)?;
    let img = image_to_tensor::<f32>(&view.pixels);
    let size = (img.shape[1], img.shape[2]);
    let targets = annotation_targets(&view.annotations, inputs.class_ids, size, cfg.model.center_radius);
    Ok((img, targets))
}

/// Teacher (weak) and student (strong) views of one unlabeled image, after
/// an optional rare-instance paste.
pub fn unlabeled_pair(
    id: ImageId,
    store: &PixelStore,
    bank: Option<&[BankEntry]>,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<UnlabeledPair> {
    let img = store.get(id)?;
    let base = match bank {
        Some(bank) => paste_rare_instances(id, img, bank, cfg.augment.rare_paste_count, rng)?,
        None => AugmentedSample::new(id, img.clone(), Vec::new()),
    };
    let weak = apply_weak(&base, &cfg.augment.teacher, rng)?;
    let strong = apply_strong(&base, &cfg.augment.strong, rng)?;
    Ok(UnlabeledPair { weak, strong })
}

fn bump(hist: &mut BTreeMap<FrequencyBin, usize>, bin: FrequencyBin, n: usize) {
    *hist.entry(bin).or_default() += n;
}

/// Run `stage.iterations` updates on `params` and return the result.
pub fn train_stage(
    mut params: DetectorParams<f32>,
    inputs: &StageInputs<'_>,
    stage: &StageConfig,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(DetectorParams<f32>, StageLog)> {
    let start = Instant::now();
    if inputs.labeled.is_empty() {
        return Err(Error::EmptyDataset(format!("{}: labeled training set is empty", inputs.name)));
    }
    if params.num_classes != inputs.class_ids.len() {
        return Err(Error::RowCountMismatch { which: "class_ids", rows: params.num_classes, ids: inputs.class_ids.len() });
    }
    let partition = apply_freeze_policy(&params, &stage.freeze.policy())?;
    let mut sampler = EpochSampler::new(inputs.labeled, stage, mix(seed, &[inputs.stream]))?;
    let mut sgd = Sgd::new(cfg.model.sgd);
    let semi_pool = inputs.unlabeled.filter(|(ds, _)| stage.semi && !ds.is_empty());
    let mut teacher = match semi_pool {
        Some(_) => Some(TeacherState::new(&params, cfg.semi.momentum)?),
        None => None,
    };
    let burn_in = (stage.iterations as f64 * cfg.semi.burn_in_fraction).round() as usize;
    let n_unlabeled = (stage.batch_size as f64 * cfg.semi.unlabeled_ratio).round() as usize;

    let mut entries = Vec::new();
    let mut histogram = BTreeMap::new();
    let mut interval_hist = BTreeMap::new();
    let mut acc = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
    for it in 0..stage.iterations {
        let lr = lr_at(stage.lr(), it, stage.iterations, &cfg.model.sgd);
        let ids: Vec<ImageId> = (0..stage.batch_size).map(|_| sampler.next()).collect();
        let prepared = ids
            .par_iter()
            .enumerate()
            .map(|(slot, &id)| {
                let mut rng = rng_for(seed, &[inputs.stream, LABELED_STREAM, it as u64, slot as u64]);
                labeled_example(inputs, stage, cfg, id, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let (images, targets): (Vec<_>, Vec<_>) = prepared.into_iter().unzip();

        let (loss, cls, reg, pseudo_loss, grad_norm) = match (semi_pool, teacher.as_mut()) {
            (Some((pool, pool_store)), Some(teacher)) => {
                let active = it >= burn_in && cfg.semi.alpha > 0.0;
                let pairs = if active {
                    let mut pick = rng_for(seed, &[inputs.stream, UNLABELED_STREAM, it as u64]);
                    let chosen: Vec<ImageId> =
                        (0..n_unlabeled).map(|_| pool.images()[pick.random_range(0..pool.images().len())].id).collect();
                    chosen
                        .par_iter()
                        .enumerate()
                        .map(|(slot, &id)| {
                            let mut rng = rng_for(seed, &[inputs.stream, UNLABELED_STREAM, it as u64, slot as u64]);
                            unlabeled_pair(id, pool_store, inputs.bank, cfg, &mut rng)
                        })
                        .collect::<Result<Vec<_>>>()?
                } else {
                    Vec::new()
                };
                let step_cfg = SemiStepConfig {
                    tau: cfg.semi.tau,
                    alpha: if active { cfg.semi.alpha } else { 0.0 },
                    center_radius: cfg.model.center_radius,
                    loss: cfg.model.loss,
                    decode: cfg.model.decode,
                };
                let out = semi_train_step(
                    &mut params,
                    &mut sgd,
                    teacher,
                    &images,
                    &targets,
                    &pairs,
                    inputs.class_ids,
                    &step_cfg,
                    &partition,
                    lr,
                )?;
                if !active {
                    teacher.params = params.clone();
                }
                for p in out.pseudo.iter().flatten() {
                    let bin = inputs.bins.get(&p.category_id).copied().unwrap_or(FrequencyBin::Rare);
                    bump(&mut histogram, bin, 1);
                    bump(&mut interval_hist, bin, 1);
                }
                let b = out.breakdown;
                (b.total, b.sup.cls, b.sup.reg, b.pseudo.total, out.grad_norm)
            }
            _ => {
                let groups = [LossGroup { images: &images, targets: &targets, weight: 1.0 }];
                let (parts, grads) =
                    weighted_loss_and_grads(&params, &groups, &cfg.model.loss, partition.representation_trainable())?;
                if !parts[0].total.is_finite() {
                    return Err(Error::NonFinite(format!("{} loss at iteration {it}", inputs.name)));
                }
                let norm = sgd.step(&mut params, &grads, &partition, lr);
                (parts[0].total, parts[0].cls, parts[0].reg, 0.0, norm)
            }
        };
        acc = (acc.0 + loss, acc.1 + cls, acc.2 + reg, acc.3 + pseudo_loss, acc.4 + grad_norm, acc.5 + 1);
        if (it + 1) % stage.log_interval == 0 || it + 1 == stage.iterations {
            let n = acc.5 as f64;
            let entry = LogEntry {
                iteration: it + 1,
                lr,
                loss: acc.0 / n,
                cls: acc.1 / n,
                reg: acc.2 / n,
                pseudo_loss: acc.3 / n,
                grad_norm: acc.4 / n,
                pseudo_labels: std::mem::take(&mut interval_hist),
            };
            log::info!(
                "{} it {}/{} lr {:.4} loss {:.4} (cls {:.4} reg {:.4} pseudo {:.4})",
                inputs.name,
                entry.iteration,
                stage.iterations,
                lr,
                entry.loss,
                entry.cls,
                entry.reg,
                entry.pseudo_loss
            );
            entries.push(entry);
            acc = Default::default();
        }
    }
    let log = StageLog {
        stage: inputs.name.to_string(),
        iterations: stage.iterations,
        entries,
        pseudo_histogram: histogram,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok((params, log))
}

/// Detections for every image of `ds` at native resolution.
pub fn predict(
    params: &DetectorParams<f32>,
    class_ids: &[CategoryId],
    ds: &DatasetIndex,
    store: &PixelStore,
    cfg: &RunConfig,
) -> Result<Vec<Detection>> {
    let per_image = ds
        .images()
        .par_iter()
        .map(|rec| {
            let pred = forward_image(params, &image_to_tensor::<f32>(store.get(rec.id)?))?;
            Ok(decode_and_nms(&pred, rec.id, class_ids, (1.0, 1.0), &cfg.model.decode))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}
