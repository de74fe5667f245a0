//! Deterministic SVG charts built from run manifests.
//!
//! Every number is printed with a fixed precision and every group is ordered
//! by a stable key, so identical manifests render byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pipeline::{RunManifest, Shots, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Tail-bin AP per tail-head initialisation (transfer, scratch, single stage).
    Transfer,
    /// mAP and tail-bin AP against the number of fine-tuning shots.
    KSweep,
    /// Tail-bin AP against the Stage-1 iteration budget.
    Pretrain,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Transfer, PlotKind::KSweep, PlotKind::Pretrain];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Transfer => "transfer",
            PlotKind::KSweep => "ksweep",
            PlotKind::Pretrain => "pretrain",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown plot kind {s:?} (transfer|ksweep|pretrain)")))
    }
}

/// A named sequence of values, one per x label.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 140.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 4] = ["#4C72B0", "#DD8452", "#55A868", "#C44E52"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Upper end of the y axis: the maximum rounded up to a tenth, at least 0.1.
fn y_max(series: &[Series]) -> f64 {
    let m = series.iter().flat_map(|s| s.values.iter().copied()).fold(0.0_f64, f64::max);
    ((m * 10.0).ceil() / 10.0).max(0.1)
}

fn frame(title: &str, y_label: &str, ymax: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, y1) = (MARGIN_L, H - MARGIN_B, MARGIN_T);
    for i in 0..=5 {
        let v = ymax * i as f64 / 5.0;
        let y = y0 - (y0 - y1) * i as f64 / 5.0;
        let _ = writeln!(s, r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##, W - MARGIN_R);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#, x0 - 6.0, y + 4.0, v);
    }
    let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{:.1}" y2="{y0:.1}" stroke="black"/>"#, W - MARGIN_R);
    let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    s
}

fn legend(s: &mut String, series: &[Series]) {
    for (i, se) in series.iter().enumerate() {
        let y = MARGIN_T + 16.0 + 20.0 * i as f64;
        let x = W - MARGIN_R + 16.0;
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/>"#, y - 10.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, x + 18.0, escape(&se.name));
    }
}

fn check(labels: &[String], series: &[Series]) -> Result<()> {
    if labels.is_empty() || series.is_empty() {
        return Err(Error::InvalidArgument("chart needs at least one label and one series".into()));
    }
    for se in series {
        if se.values.len() != labels.len() {
            return Err(Error::Shape(format!("series {} has {} values for {} labels", se.name, se.values.len(), labels.len())));
        }
        if se.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series {}", se.name)));
        }
    }
    Ok(())
}

/// Grouped bar chart: one group per label, one bar per series.
pub fn bar_chart(title: &str, y_label: &str, labels: &[String], series: &[Series]) -> Result<String> {
    check(labels, series)?;
    let ymax = y_max(series);
    let mut s = frame(title, y_label, ymax);
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = H - MARGIN_T - MARGIN_B;
    let group_w = plot_w / labels.len() as f64;
    let bar_w = group_w * 0.8 / series.len() as f64;
    for (g, label) in labels.iter().enumerate() {
        let gx = MARGIN_L + group_w * g as f64;
        for (i, se) in series.iter().enumerate() {
            let h = plot_h * se.values[g] / ymax;
            let x = gx + group_w * 0.1 + bar_w * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bar_w:.1}" height="{h:.1}" fill="{}"/>"#,
                H - MARGIN_B - h,
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{:.3}</text>"#,
                x + bar_w / 2.0,
                H - MARGIN_B - h - 4.0,
                se.values[g]
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, gx + group_w / 2.0, H - MARGIN_B + 18.0, escape(label));
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    Ok(s)
}

/// Line chart with evenly spaced categorical x positions.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, labels: &[String], series: &[Series]) -> Result<String> {
    check(labels, series)?;
    let ymax = y_max(series);
    let mut s = frame(title, y_label, ymax);
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = H - MARGIN_T - MARGIN_B;
    let step = plot_w / labels.len() as f64;
    let px = |i: usize| MARGIN_L + step * (i as f64 + 0.5);
    let py = |v: f64| H - MARGIN_B - plot_h * v / ymax;
    for (i, label) in labels.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(i), H - MARGIN_B + 18.0, escape(label));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, MARGIN_L + plot_w / 2.0, H - 12.0, escape(x_label));
    for (k, se) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = se.values.iter().enumerate().map(|(i, &v)| format!("{:.1},{:.1}", px(i), py(v))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        for (i, &v) in se.values.iter().enumerate() {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, px(i), py(v));
        }
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    Ok(s)
}

fn metric(m: &RunManifest, name: &str) -> Result<f64> {
    m.report.as_ref().ok_or_else(|| Error::MissingMetric("report".into()))?.metric(name)
}

/// Mean of `names` over the manifests of each group, in group order.
fn group_means<K: Ord + Clone>(groups: &BTreeMap<K, Vec<&RunManifest>>, names: &[&str]) -> Result<Vec<Series>> {
    names
        .iter()
        .map(|&name| {
            let values = groups
                .values()
                .map(|ms| Ok(ms.iter().map(|m| metric(m, name)).sum::<Result<f64>>()? / ms.len() as f64))
                .collect::<Result<Vec<f64>>>()?;
            Ok(Series { name: name.to_string(), values })
        })
        .collect()
}

fn variant_label(v: Variant) -> &'static str {
    match v {
        Variant::Simltd => "transfer",
        Variant::SkipStage2 => "scratch",
        Variant::SingleStage => "single_stage",
    }
}

fn shots_key(k: Shots) -> usize {
    k.count()
}

/// Render the chart of `kind` as an SVG document (means over seeds).
pub fn render_plot(manifests: &[RunManifest], kind: PlotKind) -> Result<String> {
    if manifests.is_empty() {
        return Err(Error::InvalidArgument("no manifests to plot".into()));
    }
    match kind {
        PlotKind::Transfer => {
            let mut groups: BTreeMap<u8, Vec<&RunManifest>> = BTreeMap::new();
            for m in manifests {
                let key = match m.variant {
                    Variant::Simltd => 0,
                    Variant::SkipStage2 => 1,
                    Variant::SingleStage => 2,
                };
                groups.entry(key).or_default().push(m);
            }
            let labels = groups.values().map(|ms| variant_label(ms[0].variant).to_string()).collect::<Vec<_>>();
            let series = group_means(&groups, &["AP_r"])?;
            bar_chart("Tail-bin AP by tail-head initialisation", "AP", &labels, &series)
        }
        PlotKind::KSweep => {
            let mut groups: BTreeMap<usize, Vec<&RunManifest>> = BTreeMap::new();
            for m in manifests {
                groups.entry(shots_key(m.config.stage3.k)).or_default().push(m);
            }
            let labels = groups.values().map(|ms| ms[0].config.stage3.k.label()).collect::<Vec<_>>();
            let series = group_means(&groups, &["mAP_box", "AP_r"])?;
            line_chart("AP against fine-tuning shots", "k (instances per class)", "AP", &labels, &series)
        }
        PlotKind::Pretrain => {
            let mut groups: BTreeMap<usize, Vec<&RunManifest>> = BTreeMap::new();
            for m in manifests {
                groups.entry(m.config.stage1.iterations).or_default().push(m);
            }
            let labels = groups.keys().map(|k| k.to_string()).collect::<Vec<_>>();
            let series = group_means(&groups, &["mAP_box", "AP_r"])?;
            line_chart("AP against Stage-1 pre-training budget", "Stage-1 iterations", "AP", &labels, &series)
        }
    }
}

/// Render `kind` and write it to `out_dir/{kind}.svg`.
pub fn emit_plots(manifests: &[RunManifest], kind: PlotKind, out_dir: &Path) -> Result<PathBuf> {
    let svg = render_plot(manifests, kind)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(format!("{}.svg", kind.name()));
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
