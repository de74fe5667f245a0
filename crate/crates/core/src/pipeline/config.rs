//! Run configuration: a TOML document with sections `[data]`, `[model]`,
//! `[augment]`, `[stage1]`, `[stage2]`, `[stage3]`, `[semi]` and `[eval]`.
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{AugPolicy, CopyPasteConfig, View};
use crate::detector::{Arch, DecodeConfig, FreezePolicy, LossConfig, SgdConfig};
use crate::error::{Error, Result};
use crate::evaluation::EvalSettings;
use crate::json::canonical_string;
use crate::synthgen::SynthSpec;

/// Head/tail threshold: a fixed image count or the median class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Fixed(usize),
    Named(ThresholdRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    Median,
}

/// Shots per class for the replay sample; `All` keeps every instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shots {
    K(usize),
    Named(ShotsRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotsRule {
    All,
}

impl Shots {
    pub const ALL: Shots = Shots::Named(ShotsRule::All);

    pub fn count(&self) -> usize {
        match self {
            Shots::K(k) => *k,
            Shots::Named(ShotsRule::All) => usize::MAX,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Shots::K(k) => k.to_string(),
            Shots::Named(ShotsRule::All) => "All".into(),
        }
    }
}

impl FromStr for Shots {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Shots::ALL);
        }
        s.parse::<usize>()
            .map(Shots::K)
            .map_err(|_| Error::InvalidArgument(format!("--k expects a positive integer or \"all\", got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Benchmark directory written by `simltd synth`; empty generates in memory.
    pub root: String,
    pub synth: SynthSpec,
    pub threshold_m: Threshold,
    /// Upper image count of the "common" bin; the rare bin ends at M.
    pub common_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: [usize; 5],
    pub center_radius: f64,
    pub loss: LossConfig,
    pub decode: DecodeConfig,
    pub sgd: SgdConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak: AugPolicy,
    pub strong: AugPolicy,
    /// View fed to the teacher when generating pseudo labels.
    pub teacher: AugPolicy,
    pub copy_paste: CopyPasteConfig,
    pub rare_paste_count: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freeze {
    Nothing,
    HeadOnly,
}

impl Freeze {
    pub fn policy(&self) -> FreezePolicy {
        match self {
            Freeze::Nothing => FreezePolicy::everything(),
            Freeze::HeadOnly => FreezePolicy::head_only(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorSource {
    Head,
    Tail,
    Average,
}

impl FromStr for RegressorSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(RegressorSource::Head),
            "tail" => Ok(RegressorSource::Tail),
            "average" => Ok(RegressorSource::Average),
            other => Err(Error::InvalidArgument(format!("unknown regressor source {other:?} (head|tail|average)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub iterations: usize,
    pub base_lr: f64,
    /// Multiplier on `base_lr`; below 1 for fine-tuning.
    pub lr_factor: f64,
    pub batch_size: usize,
    pub freeze: Freeze,
    pub rfs: bool,
    pub rfs_threshold: f64,
    pub copy_paste: bool,
    pub semi: bool,
    pub log_interval: usize,
}

impl StageConfig {
    pub fn lr(&self) -> f64 {
        self.base_lr * self.lr_factor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    #[serde(flatten)]
    pub train: StageConfig,
    /// Skip transfer and fuse a freshly initialized tail head instead.
    pub skip: bool,
    pub rare_paste: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Config {
    #[serde(flatten)]
    pub train: StageConfig,
    pub k: Shots,
    pub regressor: RegressorSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiConfig {
    pub tau: f64,
    pub momentum: f64,
    pub alpha: f64,
    /// Unlabeled images per labeled image in a batch.
    pub unlabeled_ratio: f64,
    /// Leading fraction of a stage during which the teacher tracks the
    /// student exactly and the pseudo term is off.
    pub burn_in_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub stage1: StageConfig,
    pub stage2: Stage2Config,
    pub stage3: Stage3Config,
    pub semi: SemiConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stage = StageConfig {
            iterations: 3000,
            base_lr: 0.01,
            lr_factor: 1.0,
            batch_size: 8,
            freeze: Freeze::Nothing,
            rfs: true,
            rfs_threshold: 0.3,
            copy_paste: true,
            semi: false,
            log_interval: 100,
        };
        let teacher = AugPolicy { photometric_probs: [0.0; 8], resize_short_edge_range: (0, 0), ..AugPolicy::weak() };
        RunConfig {
            data: DataConfig {
                root: String::new(),
                synth: SynthSpec::default(),
                threshold_m: Threshold::Named(ThresholdRule::Median),
                common_max: 200,
            },
            model: ModelConfig {
                widths: Arch::default().widths,
                center_radius: 1.5,
                loss: LossConfig::default(),
                decode: DecodeConfig::default(),
                sgd: SgdConfig::default(),
            },
            augment: AugmentConfig {
                weak: AugPolicy { photometric_probs: [0.05; 8], ..AugPolicy::weak() },
                strong: AugPolicy::strong(),
                teacher,
                copy_paste: CopyPasteConfig::default(),
                rare_paste_count: (1, 3),
            },
            stage2: Stage2Config {
                train: StageConfig { iterations: 2000, base_lr: 0.3, freeze: Freeze::HeadOnly, ..stage.clone() },
                skip: false,
                rare_paste: true,
            },
            stage3: Stage3Config {
                train: StageConfig {
                    iterations: 1000,
                    base_lr: 0.02,
                    lr_factor: 0.1,
                    freeze: Freeze::HeadOnly,
                    copy_paste: false,
                    ..stage.clone()
                },
                k: Shots::K(30),
                regressor: RegressorSource::Head,
            },
            stage1: stage,
            semi: SemiConfig { tau: 0.7, momentum: 0.999, alpha: 1.0, unlabeled_ratio: 1.0, burn_in_fraction: 0.2 },
            eval: EvalSettings::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value, path: &str) -> Result<()> {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

impl RunConfig {
    /// Parse a TOML document layered over the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let over: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Value::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, over, "")?;
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = canonical_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn arch(&self) -> Arch {
        Arch { widths: self.model.widths }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, m: &str| Err(Error::Config(format!("`{key}`: {m}")));
        self.data.synth.validate()?;
        if self.model.widths.contains(&0) {
            return bad("model.widths", "every width must be positive");
        }
        if self.model.center_radius <= 0.0 {
            return bad("model.center_radius", "must be positive");
        }
        self.augment.weak.validate()?;
        self.augment.strong.validate()?;
        self.augment.teacher.validate()?;
        if self.augment.strong.view != View::StrongUnlabeled {
            return bad("augment.strong.view", "must be strong_unlabeled");
        }
        let (p0, p1) = self.augment.rare_paste_count;
        if p0 > p1 {
            return bad("augment.rare_paste_count", "range must be ordered");
        }
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2.train), ("stage3", &self.stage3.train)] {
            if !(s.base_lr >= 0.0 && s.base_lr.is_finite()) {
                return bad(&format!("{name}.base_lr"), "must be finite and >= 0");
            }
            if !(s.lr_factor >= 0.0 && s.lr_factor.is_finite()) {
                return bad(&format!("{name}.lr_factor"), "must be finite and >= 0");
            }
            if s.batch_size == 0 {
                return bad(&format!("{name}.batch_size"), "must be >= 1");
            }
            if !(s.rfs_threshold > 0.0 && s.rfs_threshold < 1.0) {
                return bad(&format!("{name}.rfs_threshold"), "must lie in (0, 1)");
            }
            if s.log_interval == 0 {
                return bad(&format!("{name}.log_interval"), "must be >= 1");
            }
        }
        if self.stage3.train.lr_factor >= 1.0 {
            return bad("stage3.lr_factor", "fine-tuning must reduce the learning rate (< 1)");
        }
        if self.stage2.train.freeze != Freeze::HeadOnly || self.stage3.train.freeze != Freeze::HeadOnly {
            return bad("stage2.freeze/stage3.freeze", "transfer and fine-tuning freeze the representation (head_only)");
        }
        if self.stage3.k == Shots::K(0) {
            return bad("stage3.k", "must be >= 1 or \"all\"");
        }
        let s = &self.semi;
        if !(s.tau > 0.0 && s.tau <= 1.0) {
            return bad("semi.tau", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&s.momentum) {
            return bad("semi.momentum", "must lie in [0, 1]");
        }
        if !(s.alpha >= 0.0 && s.alpha.is_finite()) {
            return bad("semi.alpha", "must be finite and >= 0");
        }
        if !(s.unlabeled_ratio >= 0.0 && s.unlabeled_ratio.is_finite()) {
            return bad("semi.unlabeled_ratio", "must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&s.burn_in_fraction) {
            return bad("semi.burn_in_fraction", "must lie in [0, 1]");
        }
        if self.eval.max_dets_per_image == 0 || self.eval.max_dets_per_class == 0 {
            return bad("eval", "detection caps must be >= 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = RunConfig::from_toml("[stage3]\nk = \"all\"\nlr_factor = 0.2\n[data]\nthreshold_m = 12\n").unwrap();
        assert_eq!(cfg.stage3.k, Shots::ALL);
        assert_eq!(cfg.stage3.train.lr_factor, 0.2);
        assert_eq!(cfg.stage3.train.iterations, 1000);
        assert_eq!(cfg.data.threshold_m, Threshold::Fixed(12));
        let err = RunConfig::from_toml("[stage1]\nitters = 3\n").unwrap_err().to_string();
        assert!(err.contains("stage1.itters"), "{err}");
        let err = RunConfig::from_toml("[stage3]\nlr_factor = 1.5\n").unwrap_err().to_string();
        assert!(err.contains("stage3.lr_factor"), "{err}");
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.semi.alpha = 2.0;
        assert_eq!(a.digest(), RunConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 12);
    }

    #[test]
    fn shots_parse() {
        assert_eq!("all".parse::<Shots>().unwrap(), Shots::ALL);
        assert_eq!("10".parse::<Shots>().unwrap(), Shots::K(10));
        assert!("ten".parse::<Shots>().is_err());
        assert_eq!(Shots::ALL.count(), usize::MAX);
    }
}
