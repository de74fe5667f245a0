use simltd_core::dataset::{sample_k_shot, FrequencyBin};
use simltd_core::pipeline::*;
use simltd_core::Error;

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.synth.num_images = 120;
    cfg.data.synth.num_val = 30;
    cfg.data.synth.unlabeled_count = 40;
    cfg.model.widths = [4, 6, 8, 8, 12];
    for s in [&mut cfg.stage1, &mut cfg.stage2.train, &mut cfg.stage3.train] {
        s.batch_size = 2;
        s.log_interval = 2;
    }
    cfg.stage1.iterations = 6;
    cfg.stage2.train.iterations = 4;
    cfg.stage3.train.iterations = 4;
    cfg.stage3.k = Shots::K(5);
    cfg
}

fn ctx(cfg: RunConfig) -> RunContext {
    RunContext::new(cfg).unwrap()
}

#[test]
fn zero_iteration_finetune_returns_the_fused_model() {
    let mut cfg = tiny();
    cfg.stage3.train.iterations = 0;
    let c = ctx(cfg.clone());
    let mut run = SeedRun::new(&c, 0);
    let head = run.head().unwrap().clone();
    let tail = run.transfer_tail().unwrap().clone();
    let (fused, fin, log, _) = fuse_and_finetune(&c, &cfg, &head, Some(&tail), Shots::K(5), 0).unwrap();
    assert_eq!(fin.params, fused.params);
    assert!(log.entries.is_empty());
}

#[test]
fn same_seed_same_digests() {
    let c = ctx(tiny());
    let a = run_full_pipeline(&c, 3, Variant::Simltd, None).unwrap();
    let b = run_full_pipeline(&c, 3, Variant::Simltd, None).unwrap();
    assert_eq!(a.manifest.checkpoints, b.manifest.checkpoints);
    assert_eq!(a.manifest.report, b.manifest.report);
    let other = run_full_pipeline(&c, 4, Variant::Simltd, None).unwrap();
    assert_ne!(a.manifest.checkpoints["stage1"], other.manifest.checkpoints["stage1"]);
}

#[test]
fn representation_is_frozen_after_stage_one() {
    let c = ctx(tiny());
    let out = run_full_pipeline(&c, 0, Variant::Simltd, None).unwrap();
    let r = &out.manifest.representation_digests;
    assert_eq!(out.manifest.completed, ["stage1", "stage2", "fused", "stage3", "eval"]);
    for stage in ["stage2", "fused", "stage3"] {
        assert_eq!(r[stage], r["stage1"], "{stage}");
    }
    assert_ne!(out.manifest.checkpoints["stage3"], out.manifest.checkpoints["fused"]);
}

#[test]
fn manifest_and_checkpoints_are_written_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let c = ctx(tiny());
    let out = run_full_pipeline(&c, 1, Variant::Simltd, Some(dir.path())).unwrap();
    for name in ["stage1", "stage2", "fused", "stage3"] {
        assert!(dir.path().join(format!("{name}.ckpt.json")).exists(), "{name}");
    }
    let back = RunManifest::load(dir.path().join("manifest.json")).unwrap();
    assert_eq!(back.to_json().unwrap(), out.manifest.to_json().unwrap());
    let fin = simltd_core::CheckpointF32::load(dir.path().join("stage3.ckpt.json")).unwrap();
    assert_eq!(fin.digest(), out.manifest.checkpoints["stage3"]);
    assert_eq!(c.evaluate(&fin, 1).unwrap(), *out.manifest.report.as_ref().unwrap());
}

#[test]
fn semi_stage_logs_pseudo_labels() {
    let mut cfg = tiny();
    cfg.stage1.semi = true;
    cfg.semi.tau = 0.005;
    cfg.semi.burn_in_fraction = 0.0;
    let c = ctx(cfg.clone());
    let unl = Some((&c.data.unlabeled, &c.data.unlabeled_store));
    let (_, log) = run_stage1_pretrain(&c.splits.partition.head, &c.data.store, unl, &c.splits.bins, &cfg, 0).unwrap();
    let total: usize = log.pseudo_histogram.values().sum();
    assert!(total > 0);
    assert!(log.entries.iter().any(|e| e.pseudo_loss > 0.0));
    let keys: Vec<FrequencyBin> = log.pseudo_histogram.keys().copied().collect();
    assert!(keys.iter().all(|b| [FrequencyBin::Rare, FrequencyBin::Common, FrequencyBin::Frequent].contains(b)));
}

#[test]
fn skip_stage2_fuses_a_scratch_tail() {
    let mut cfg = tiny();
    cfg.stage2.skip = true;
    let out = run_full_pipeline(&ctx(cfg), 0, Variant::Simltd, None).unwrap();
    assert_eq!(out.manifest.variant, Variant::SkipStage2);
    assert!(out.manifest.completed.contains(&"scratch_tail".to_string()));
    assert!(!out.manifest.completed.contains(&"stage2".to_string()));
}

#[test]
fn single_stage_trains_for_the_combined_budget() {
    let cfg = tiny();
    let out = run_full_pipeline(&ctx(cfg.clone()), 0, Variant::SingleStage, None).unwrap();
    assert_eq!(single_stage_budget(&cfg), 14);
    assert_eq!(out.manifest.stages[0].iterations, 14);
    assert_eq!(out.final_checkpoint.meta.num_classes, cfg.data.synth.num_classes);
}

#[test]
fn k_shot_draw_is_recorded_and_reproducible() {
    let c = ctx(tiny());
    let out = run_full_pipeline(&c, 2, Variant::Simltd, None).unwrap();
    let summary = out.manifest.k_shot.unwrap();
    let (dk, sample) = sample_k_shot(&c.data.train, 5, 2).unwrap();
    assert_eq!(summary, kshot_summary(Shots::K(5), &dk, &sample));
    assert!(summary.instances.values().all(|&n| n <= 5));
}

#[test]
fn config_toml_round_trip_and_errors() {
    let cfg = tiny();
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.digest(), cfg.digest());
    let partial = RunConfig::from_toml("[semi]\nalpha = 2.0\n").unwrap();
    assert_eq!(partial.semi.alpha, 2.0);
    assert_ne!(partial.digest(), RunConfig::default().digest());
    match RunConfig::from_toml("[stage1]\nbogus = 1\n") {
        Err(Error::Config(m)) => assert!(m.contains("stage1.bogus"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(RunConfig::from_toml("[stage3]\nlr_factor = 1.5\n").is_err());
    assert!(RunConfig::from_toml("[semi]\ntau = 0.0\n").is_err());
    assert_eq!(RunConfig::from_toml("[stage3]\nk = \"all\"\n").unwrap().stage3.k, Shots::ALL);
}
