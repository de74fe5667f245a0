//! Named comparison suites. Every variant of a seed shares the Stage-1
//! checkpoint (and the Stage-2 transfer when it applies).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Shots};
use super::stages::*;
use super::train::StageLog;
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_seeds, EvalReport};
use crate::CheckpointF32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSource {
    Transfer,
    Scratch,
}

/// Lazily trained stage outputs for one seed under one configuration.
pub struct SeedRun<'a> {
    pub ctx: &'a RunContext,
    pub cfg: RunConfig,
    pub seed: u64,
    head: Option<(CheckpointF32, StageLog)>,
    transfer: Option<(CheckpointF32, StageLog)>,
}

impl<'a> SeedRun<'a> {
    pub fn new(ctx: &'a RunContext, seed: u64) -> Self {
        Self::with_config(ctx, ctx.cfg.clone(), seed)
    }

    pub fn with_config(ctx: &'a RunContext, cfg: RunConfig, seed: u64) -> Self {
        SeedRun { ctx, cfg, seed, head: None, transfer: None }
    }

    pub fn head(&mut self) -> Result<&CheckpointF32> {
        if self.head.is_none() {
            let unl = if self.cfg.stage1.semi { self.ctx.unlabeled() } else { None };
            let s = &self.ctx.splits;
            self.head = Some(run_stage1_pretrain(&s.partition.head, &self.ctx.data.store, unl, &s.bins, &self.cfg, self.seed)?);
        }
        Ok(&self.head.as_ref().expect("trained").0)
    }

    pub fn transfer_tail(&mut self) -> Result<&CheckpointF32> {
        if self.transfer.is_none() {
            self.head()?;
            let head = &self.head.as_ref().expect("trained").0;
            let unl = if self.cfg.stage2.train.semi { self.ctx.unlabeled() } else { None };
            let bank = (self.cfg.stage2.rare_paste && unl.is_some()).then_some(self.ctx.splits.bank.as_slice());
            let s = &self.ctx.splits;
            self.transfer = Some(run_stage2_transfer(
                head,
                &s.partition.tail,
                &self.ctx.data.store,
                unl,
                bank,
                &s.bins,
                &self.cfg,
                self.seed,
            )?);
        }
        Ok(&self.transfer.as_ref().expect("trained").0)
    }

    /// Fuse with the chosen tail head, fine-tune on D_k and evaluate.
    pub fn finish(&mut self, tail: TailSource, k: Shots) -> Result<(CheckpointF32, RunManifest)> {
        let mut cfg = self.cfg.clone();
        cfg.stage3.k = k;
        cfg.stage2.skip = tail == TailSource::Scratch;
        let variant = if cfg.stage2.skip { Variant::SkipStage2 } else { Variant::Simltd };
        let mut manifest = RunManifest::new(&cfg, &self.ctx.splits, self.seed, variant);
        let tail_ckpt = match tail {
            _ if self.ctx.tail_ids().is_empty() => {
                self.head()?;
                None
            }
            TailSource::Transfer => Some(self.transfer_tail()?.clone()),
            TailSource::Scratch => {
                let (ctx, seed) = (self.ctx, self.seed);
                Some(scratch_tail(self.head()?, ctx.tail_ids(), seed)?)
            }
        };
        let (head, head_log) = self.head.as_ref().expect("trained");
        manifest.record("stage1", head, Some(head_log.clone()));
        if let Some(t) = &tail_ckpt {
            match (tail, &self.transfer) {
                (TailSource::Transfer, Some((_, log))) => manifest.record("stage2", t, Some(log.clone())),
                _ => manifest.record("scratch_tail", t, None),
            }
        }
        let (fused, fin, log, summary) = fuse_and_finetune(self.ctx, &cfg, head, tail_ckpt.as_ref(), k, self.seed)?;
        manifest.k_shot = Some(summary);
        manifest.record("fused", &fused, None);
        manifest.record("stage3", &fin, Some(log));
        manifest.report = Some(self.ctx.evaluate(&fin, self.seed)?);
        manifest.completed.push("eval".into());
        Ok((fin, manifest))
    }

    pub fn single_stage(&mut self) -> Result<(CheckpointF32, RunManifest)> {
        let mut manifest = RunManifest::new(&self.cfg, &self.ctx.splits, self.seed, Variant::SingleStage);
        let (ckpt, log) = run_single_stage(self.ctx, &self.cfg, self.seed)?;
        manifest.record("single_stage", &ckpt, Some(log));
        manifest.report = Some(self.ctx.evaluate(&ckpt, self.seed)?);
        manifest.completed.push("eval".into());
        Ok((ckpt, manifest))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Table4,
    Fig6,
    Fig7,
    Fig3,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table4" => Ok(Suite::Table4),
            "fig6" => Ok(Suite::Fig6),
            "fig7" => Ok(Suite::Fig7),
            "fig3" => Ok(Suite::Fig3),
            other => Err(Error::InvalidArgument(format!("unknown suite {other:?} (table4|fig6|fig7|fig3)"))),
        }
    }
}

/// Stage-1 budget fractions swept by the pre-training strength suite.
pub const PRETRAIN_FRACTIONS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: Suite,
    pub seeds: Vec<u64>,
    /// Variant labels in presentation order.
    pub variants: Vec<String>,
    /// `manifests[variant][i]` belongs to `seeds[i]`.
    pub manifests: BTreeMap<String, Vec<RunManifest>>,
    pub aggregate: BTreeMap<String, EvalReport>,
}

impl SuiteResult {
    fn new(suite: Suite, seeds: &[u64]) -> Self {
        SuiteResult { suite, seeds: seeds.to_vec(), variants: Vec::new(), manifests: BTreeMap::new(), aggregate: BTreeMap::new() }
    }

    fn push(&mut self, label: &str, m: RunManifest) {
        if !self.variants.iter().any(|v| v == label) {
            self.variants.push(label.to_string());
        }
        self.manifests.entry(label.to_string()).or_default().push(m);
    }

    fn finish(mut self) -> Result<Self> {
        for (label, ms) in &self.manifests {
            let reports: Vec<EvalReport> = ms
                .iter()
                .map(|m| m.report.clone().ok_or_else(|| Error::MissingMetric("report".into())))
                .collect::<Result<_>>()?;
            self.aggregate.insert(label.clone(), aggregate_seeds(&reports)?);
        }
        Ok(self)
    }

    /// Per-seed values of a metric for one variant.
    pub fn per_seed(&self, variant: &str, metric: &str) -> Result<Vec<f64>> {
        let ms = self.manifests.get(variant).ok_or_else(|| Error::InvalidArgument(format!("no variant {variant:?}")))?;
        ms.iter()
            .map(|m| m.report.as_ref().ok_or_else(|| Error::MissingMetric("report".into()))?.metric(metric))
            .collect()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "suite {:?}, seeds {:?}", self.suite, self.seeds);
        let _ = writeln!(s, "{:<20} {:>8} {:>8} {:>8} {:>8}", "variant", "mAP", "AP_r", "AP_c", "AP_f");
        for v in &self.variants {
            let r = &self.aggregate[v];
            let cell = |name: &str| {
                r.aggregate.get(name).map_or_else(|| "-".to_string(), |ms| format!("{:.2}±{:.2}", 100.0 * ms.mean, 100.0 * ms.std))
            };
            let _ = writeln!(s, "{:<20} {:>8} {:>8} {:>8} {:>8}", v, cell("mAP_box"), cell("AP_r"), cell("AP_c"), cell("AP_f"));
        }
        s
    }
}

pub fn run_suite(ctx: &RunContext, suite: Suite, seeds: &[u64]) -> Result<SuiteResult> {
    let mut out = SuiteResult::new(suite, seeds);
    let k = ctx.cfg.stage3.k;
    for &seed in seeds {
        match suite {
            Suite::Table4 => {
                let mut run = SeedRun::new(ctx, seed);
                out.push("simltd", run.finish(TailSource::Transfer, k)?.1);
                out.push("single_stage", run.single_stage()?.1);
            }
            Suite::Fig6 => {
                let mut run = SeedRun::new(ctx, seed);
                out.push("transfer", run.finish(TailSource::Transfer, k)?.1);
                out.push("scratch", run.finish(TailSource::Scratch, k)?.1);
            }
            Suite::Fig7 => {
                let mut run = SeedRun::new(ctx, seed);
                for k in [Shots::K(10), Shots::K(20), Shots::K(30), Shots::ALL] {
                    out.push(&format!("k={}", k.label()), run.finish(TailSource::Transfer, k)?.1);
                }
            }
            Suite::Fig3 => {
                for frac in PRETRAIN_FRACTIONS {
                    let mut cfg = ctx.cfg.clone();
                    cfg.stage1.iterations = (ctx.cfg.stage1.iterations as f64 * frac).round() as usize;
                    let label = format!("stage1={}", cfg.stage1.iterations);
                    let mut run = SeedRun::with_config(ctx, cfg, seed);
                    out.push(&label, run.finish(TailSource::Transfer, k)?.1);
                }
            }
        }
    }
    out.finish()
}
