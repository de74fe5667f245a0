//! Box AP with COCO-style greedy matching, rarity-binned means and
//! multi-seed aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, CategoryId, DatasetIndex, FrequencyBin, ImageId};
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::json::canonical_string;

pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const RECALL_POINTS: usize = 101;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    Tp,
    Fp,
    Ignored,
}

/// Greedy matching of score-sorted detections: each takes the highest-IoU
/// unmatched ground truth at or above `iou_thresh`; failing that, overlap with
/// an ignore region at or above the threshold makes it neither TP nor FP.
pub fn match_detections(dets: &[BBox], gts: &[BBox], ignore: &[BBox], iou_thresh: f64) -> Vec<MatchOutcome> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let o = d.iou(gt);
                if o >= iou_thresh && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                MatchOutcome::Tp
            } else if ignore.iter().any(|r| d.iou(r) >= iou_thresh) {
                MatchOutcome::Ignored
            } else {
                MatchOutcome::Fp
            }
        })
        .collect()
}

/// 101-point interpolated AP of a score-ordered TP/FP sequence
/// (`true` = TP). `None` when there is no ground truth.
pub fn average_precision(tp: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let target = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < target - 1e-12);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    Standard,
    Fixed,
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Protocol::Standard),
            "fixed" => Ok(Protocol::Fixed),
            other => Err(Error::InvalidArgument(format!("unknown protocol {other:?} (standard|fixed)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub protocol: Protocol,
    /// Per-image cap applied under the standard protocol.
    pub max_dets_per_image: usize,
    /// Per-class cap over the whole split applied under the fixed protocol.
    pub max_dets_per_class: usize,
    /// Score classes without validation ground truth as 0 instead of skipping them.
    pub include_absent: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { protocol: Protocol::Standard, max_dets_per_image: 300, max_dets_per_class: 10_000, include_absent: false }
    }
}

impl EvalSettings {
    pub fn with_protocol(protocol: Protocol) -> Self {
        EvalSettings { protocol, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP_box")]
    pub map_box: f64,
    #[serde(rename = "AP_r")]
    pub ap_r: Option<f64>,
    #[serde(rename = "AP_c")]
    pub ap_c: Option<f64>,
    #[serde(rename = "AP_f")]
    pub ap_f: Option<f64>,
    pub per_class_ap: BTreeMap<CategoryId, f64>,
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aggregate: BTreeMap<String, MeanStd>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl EvalReport {
    fn from_per_class(
        per_class_ap: BTreeMap<CategoryId, f64>,
        bins: &BTreeMap<CategoryId, FrequencyBin>,
        protocol: Protocol,
    ) -> Self {
        let bin_mean = |b: FrequencyBin| {
            let v: Vec<f64> = per_class_ap.iter().filter(|(c, _)| bins.get(c) == Some(&b)).map(|(_, &ap)| ap).collect();
            mean(&v)
        };
        let all: Vec<f64> = per_class_ap.values().copied().collect();
        EvalReport {
            map_box: mean(&all).unwrap_or(0.0),
            ap_r: bin_mean(FrequencyBin::Rare),
            ap_c: bin_mean(FrequencyBin::Common),
            ap_f: bin_mean(FrequencyBin::Frequent),
            per_class_ap,
            protocol,
            seeds: Vec::new(),
            aggregate: BTreeMap::new(),
        }
    }

    /// Named scalar metric (`mAP_box`, `AP_r`, `AP_c`, `AP_f`).
    pub fn metric(&self, name: &str) -> Result<f64> {
        let v = match name {
            "mAP_box" => Some(self.map_box),
            "AP_r" => self.ap_r,
            "AP_c" => self.ap_c,
            "AP_f" => self.ap_f,
            _ => None,
        };
        v.ok_or_else(|| Error::MissingMetric(name.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        canonical_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "   -  ".to_string(), |x| format!("{:6.2}", 100.0 * x));
        let mut s = String::new();
        let _ = writeln!(s, "protocol {:?}", self.protocol);
        let _ = writeln!(s, "{:>8} {:>6} {:>6} {:>6}", "mAP", "AP_r", "AP_c", "AP_f");
        let _ = writeln!(s, "{:>8} {} {} {}", fmt(Some(self.map_box)), fmt(self.ap_r), fmt(self.ap_c), fmt(self.ap_f));
        for (k, ms) in &self.aggregate {
            let _ = writeln!(s, "{k:>8}: {:.2} +- {:.2}", 100.0 * ms.mean, 100.0 * ms.std);
        }
        s
    }
}

/// Apply the protocol's detection cap.
fn apply_cap(mut dets: Vec<Detection>, settings: &EvalSettings) -> Vec<Detection> {
    let (key, cap): (fn(&Detection) -> u64, usize) = match settings.protocol {
        Protocol::Standard => (|d| d.image_id.0, settings.max_dets_per_image),
        Protocol::Fixed => (|d| d.category_id.0 as u64, settings.max_dets_per_class),
    };
    dets.sort_by(|a, b| key(a).cmp(&key(b)).then(b.score.total_cmp(&a.score)));
    let mut out = Vec::with_capacity(dets.len());
    let mut run = (u64::MAX, 0usize);
    for d in dets {
        let k = key(&d);
        if k != run.0 {
            run = (k, 0);
        }
        if run.1 < cap {
            out.push(d);
        }
        run.1 += 1;
    }
    out
}

#[derive(Default)]
struct ClassImage {
    dets: Vec<(f64, BBox)>,
    gts: Vec<BBox>,
    ignore: Vec<BBox>,
}

fn class_ap(cells: &BTreeMap<ImageId, ClassImage>, num_gt: usize) -> f64 {
    let mut total = 0.0;
    for &t in &IOU_THRESHOLDS {
        let mut scored: Vec<(f64, bool)> = Vec::new();
        for cell in cells.values() {
            let boxes: Vec<BBox> = cell.dets.iter().map(|d| d.1).collect();
            for (o, &(s, _)) in match_detections(&boxes, &cell.gts, &cell.ignore, t).into_iter().zip(&cell.dets) {
                if o != MatchOutcome::Ignored {
                    scored.push((s, o == MatchOutcome::Tp));
                }
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let seq: Vec<bool> = scored.iter().map(|x| x.1).collect();
        total += average_precision(&seq, num_gt).unwrap_or(0.0);
    }
    total / IOU_THRESHOLDS.len() as f64
}

/// Evaluate detections against `val`. `bins` maps classes to their
/// training-split frequency bin.
pub fn evaluate(
    dets: &[Detection],
    val: &DatasetIndex,
    bins: &BTreeMap<CategoryId, FrequencyBin>,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let known: std::collections::BTreeSet<CategoryId> = val.category_ids().into_iter().collect();
    for d in dets {
        if val.image(d.image_id).is_none() {
            return Err(Error::InvalidArgument(format!("detection references unknown image {}", d.image_id)));
        }
        if !known.contains(&d.category_id) {
            return Err(Error::InvalidArgument(format!("detection references unknown category {}", d.category_id)));
        }
        if !d.score.is_finite() {
            return Err(Error::NonFinite("detection score".into()));
        }
    }
    let mut cells: BTreeMap<CategoryId, BTreeMap<ImageId, ClassImage>> = BTreeMap::new();
    let mut num_gt: BTreeMap<CategoryId, usize> = BTreeMap::new();
    for a in val.annotations() {
        let cell = cells.entry(a.category_id).or_default().entry(a.image_id).or_default();
        if a.ignore {
            cell.ignore.push(a.bbox);
        } else {
            cell.gts.push(a.bbox);
            *num_gt.entry(a.category_id).or_default() += 1;
        }
    }
    let mut capped = apply_cap(dets.to_vec(), settings);
    capped.sort_by(|a, b| b.score.total_cmp(&a.score));
    for d in capped {
        cells.entry(d.category_id).or_default().entry(d.image_id).or_default().dets.push((d.score, d.bbox));
    }
    let mut per_class = BTreeMap::new();
    for c in known {
        let n = num_gt.get(&c).copied().unwrap_or(0);
        if n == 0 {
            if settings.include_absent {
                per_class.insert(c, 0.0);
            }
            continue;
        }
        per_class.insert(c, cells.get(&c).map_or(0.0, |cl| class_ap(cl, n)));
    }
    Ok(EvalReport::from_per_class(per_class, bins, settings.protocol))
}

fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    MeanStd { mean: m, std }
}

/// Mean and sample standard deviation of every metric across seeds.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| Error::InvalidArgument("no reports to aggregate".into()))?;
    if reports.iter().any(|r| r.protocol != first.protocol) {
        return Err(Error::InvalidArgument("cannot aggregate reports with different protocols".into()));
    }
    let mut aggregate = BTreeMap::new();
    let mut out = first.clone();
    for name in ["mAP_box", "AP_r", "AP_c", "AP_f"] {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.metric(name).ok()).collect();
        if vals.is_empty() {
            continue;
        }
        let ms = mean_std(&vals);
        aggregate.insert(name.to_string(), ms);
        match name {
            "mAP_box" => out.map_box = ms.mean,
            "AP_r" => out.ap_r = Some(ms.mean),
            "AP_c" => out.ap_c = Some(ms.mean),
            _ => out.ap_f = Some(ms.mean),
        }
    }
    let mut per_class: BTreeMap<CategoryId, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (&c, &ap) in &r.per_class_ap {
            per_class.entry(c).or_default().push(ap);
        }
    }
    out.per_class_ap = per_class.into_iter().map(|(c, v)| (c, mean(&v).unwrap_or(0.0))).collect();
    out.seeds = reports.iter().flat_map(|r| r.seeds.iter().copied()).collect();
    out.aggregate = aggregate;
    Ok(out)
}

/// COCO results document: a list of `{bbox, category_id, image_id, score}`.
pub fn detections_to_json(dets: &[Detection]) -> Result<String> {
    canonical_string(dets)
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    Ok(serde_json::from_str(text)?)
}

pub fn save_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, detections_to_json(dets)?).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed { path: path.to_path_buf(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 0.0, 2.0, 2.0)) - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_match_rule() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(match_detections(&[g, g], &[g], &[], 0.5), vec![MatchOutcome::Tp, MatchOutcome::Fp]);
        assert_eq!(match_detections(&[g], &[], &[g], 0.5), vec![MatchOutcome::Ignored]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true], 2), Some(1.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[true], 0), None);
        // [TP, FP, TP], 2 gts: recall 0.5 at precision 1, recall 1 at precision 2/3.
        let want = (51.0 * 1.0 + 50.0 * 2.0 / 3.0) / 101.0;
        assert!((average_precision(&[true, false, true], 2).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn aggregate_arithmetic() {
        let mk = |m: f64| EvalReport::from_per_class(
            [(CategoryId(1), m)].into_iter().collect(),
            &BTreeMap::new(),
            Protocol::Standard,
        );
        let agg = aggregate_seeds(&[mk(0.30), mk(0.32), mk(0.34)]).unwrap();
        let ms = agg.aggregate["mAP_box"];
        assert!((ms.mean - 0.32).abs() < 1e-12 && (ms.std - 0.02).abs() < 1e-12);
        let one = aggregate_seeds(&[mk(0.5)]).unwrap();
        assert_eq!(one.aggregate["mAP_box"].std, 0.0);
        let mut fixed = mk(0.1);
        fixed.protocol = Protocol::Fixed;
        assert!(aggregate_seeds(&[mk(0.1), fixed]).is_err());
        assert!(aggregate_seeds(&[]).is_err());
    }
}
