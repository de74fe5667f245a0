use simltd_core::pipeline::*;
use simltd_core::plots::*;
use simltd_core::Error;

fn base() -> RunManifest {
    let mut cfg = RunConfig::default();
    cfg.data.synth.num_images = 60;
    cfg.data.synth.num_val = 10;
    cfg.data.synth.unlabeled_count = 0;
    cfg.model.widths = [4, 4, 4, 4, 8];
    cfg.stage1.iterations = 2;
    cfg.stage2.train.iterations = 1;
    cfg.stage3.train.iterations = 1;
    for s in [&mut cfg.stage1, &mut cfg.stage2.train, &mut cfg.stage3.train] {
        s.batch_size = 1;
    }
    run_full_pipeline(&RunContext::new(cfg).unwrap(), 0, Variant::Simltd, None).unwrap().manifest
}

fn with(m: &RunManifest, variant: Variant, k: Shots, ap_r: f64, map: f64) -> RunManifest {
    let mut out = m.clone();
    out.variant = variant;
    out.config.stage3.k = k;
    let r = out.report.as_mut().unwrap();
    r.ap_r = Some(ap_r);
    r.map_box = map;
    out
}

#[test]
fn plots_are_byte_deterministic() {
    let m = base();
    let runs = vec![
        with(&m, Variant::Simltd, Shots::K(30), 0.14, 0.3),
        with(&m, Variant::SkipStage2, Shots::K(30), 0.01, 0.2),
        with(&m, Variant::SingleStage, Shots::K(30), 0.08, 0.25),
    ];
    let dir = tempfile::tempdir().unwrap();
    for kind in PlotKind::ALL {
        let a = emit_plots(&runs, kind, &dir.path().join("a")).unwrap();
        let b = emit_plots(&runs, kind, &dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), "{}", kind.name());
    }
}

#[test]
fn single_manifest_gives_a_single_bar() {
    let svg = render_plot(&[with(&base(), Variant::Simltd, Shots::K(30), 0.5, 0.5)], PlotKind::Transfer).unwrap();
    // background, one bar, one legend swatch
    assert_eq!(svg.matches("<rect").count(), 3);
    assert!(svg.contains(">transfer<"));
}

#[test]
fn k_sweep_has_one_point_per_shot_count() {
    let m = base();
    let runs: Vec<_> = [Shots::K(10), Shots::K(20), Shots::K(30), Shots::ALL]
        .into_iter()
        .enumerate()
        .flat_map(|(i, k)| (0..3).map(move |s| (i, k, s)))
        .map(|(i, k, s)| with(&m, Variant::Simltd, k, 0.1 + 0.01 * i as f64 + 0.001 * s as f64, 0.3))
        .collect();
    let svg = render_plot(&runs, PlotKind::KSweep).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(svg.matches("<circle").count(), 8);
    let pos = |s: &str| svg.find(&format!(">{s}<")).unwrap();
    assert!(pos("10") < pos("20") && pos("20") < pos("30") && pos("30") < pos("All"));
}

#[test]
fn missing_metric_is_reported() {
    let mut m = base();
    m.report.as_mut().unwrap().ap_r = None;
    assert!(matches!(render_plot(&[m.clone()], PlotKind::Transfer), Err(Error::MissingMetric(_))));
    m.report = None;
    assert!(render_plot(&[m], PlotKind::KSweep).is_err());
    assert!(render_plot(&[], PlotKind::Pretrain).is_err());
    assert!("bogus".parse::<PlotKind>().is_err());
}
