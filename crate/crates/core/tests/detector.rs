use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simltd_core::dataset::{BBox, CategoryId, ImageId};
use simltd_core::detector::*;
use simltd_core::rng::rng_for;

const ARCH: Arch = Arch { widths: [3, 4, 4, 5, 6] };

fn image(seed: u64, h: usize, w: usize) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_vec(&[3, h, w], (0..3 * h * w).map(|_| rng.random_range(-2.0..2.0)).collect())
}

#[test]
fn doubling_a_classifier_row_doubles_its_logits() {
    let params = DetectorParams::<f64>::init(&ARCH, 4, &mut rng_for(1, &[]));
    let mut doubled = params.clone();
    let d = params.feature_dim();
    let c = 2;
    doubled.tensors.get_mut(CLASSIFIER_WEIGHT).unwrap().data[c * d..(c + 1) * d].iter_mut().for_each(|v| *v *= 2.0);
    doubled.tensors.get_mut(CLASSIFIER_BIAS).unwrap().data[c] *= 2.0;
    let img = image(3, 48, 64);
    let (a, b) = (forward_image(&params, &img).unwrap(), forward_image(&doubled, &img).unwrap());
    for loc in 0..a.locations() {
        for k in 0..4 {
            let want = if k == c { 2.0 * a.logit(loc, k) } else { a.logit(loc, k) };
            assert_eq!(b.logit(loc, k), want);
        }
    }
    assert_eq!(a.regs, b.regs);
}

#[test]
fn fresh_head_predicts_the_prior() {
    let params = DetectorParams::<f64>::init(&ARCH, 3, &mut rng_for(2, &[]));
    assert!((params.get(CLASSIFIER_BIAS).data[0] - prior_bias(PRIOR_PROB)).abs() < 1e-12);
    assert!((prior_bias(0.01) + 4.595).abs() < 1e-3);
}

#[test]
fn grid_is_input_over_stride() {
    let params = DetectorParams::<f32>::init(&ARCH, 2, &mut rng_for(0, &[]));
    let img = Array::<f32>::zeros(&[3, 64, 80]);
    let p = forward_image(&params, &img).unwrap();
    assert_eq!((p.grid_h, p.grid_w), (64 / STRIDE, 80 / STRIDE));
    assert_eq!(p.logits.len(), p.locations() * 2);
    assert_eq!(p.regs.len(), p.locations() * 4);
    assert!(p.all_finite());
}

fn targets_for(seed: u64) -> Vec<LocationTarget> {
    let boxes = [TargetBox { bbox: BBox::new(4.0 + seed as f64, 6.0, 20.0, 18.0), class: (seed % 3) as usize }];
    assign_targets(&boxes, GridSpec { height: 2, width: 2, stride: STRIDE as f64 }, &[], 1.5)
}

#[test]
fn head_only_training_leaves_representation_bit_identical() {
    let mut params = DetectorParams::<f64>::init(&ARCH, 3, &mut rng_for(4, &[]));
    let before_repr = params.representation_digest();
    let before_head = params.digest("detector");
    let partition = apply_freeze_policy(&params, &FreezePolicy::head_only()).unwrap();
    assert!(!partition.representation_trainable());
    let mut sgd = Sgd::new(SgdConfig::default());
    let images: Vec<Array<f64>> = (0..2).map(|i| image(10 + i, 32, 32)).collect();
    let targets: Vec<Vec<LocationTarget>> = (0..2).map(targets_for).collect();
    for it in 0..100 {
        let groups = [LossGroup { images: &images, targets: &targets, weight: 1.0 }];
        let (_, grads) = weighted_loss_and_grads(&params, &groups, &LossConfig::default(), false).unwrap();
        sgd.step(&mut params, &grads, &partition, lr_at(0.05, it, 100, &SgdConfig::default()));
    }
    assert_eq!(params.representation_digest(), before_repr);
    assert_ne!(params.digest("detector"), before_head);
}

#[test]
fn full_training_reduces_the_loss() {
    let mut params = DetectorParams::<f64>::init(&ARCH, 3, &mut rng_for(5, &[]));
    let partition = apply_freeze_policy(&params, &FreezePolicy::everything()).unwrap();
    let mut sgd = Sgd::new(SgdConfig::default());
    let images: Vec<Array<f64>> = (0..2).map(|i| image(20 + i, 32, 32)).collect();
    let targets: Vec<Vec<LocationTarget>> = (0..2).map(targets_for).collect();
    let loss = |p: &DetectorParams<f64>| {
        let preds = forward(p, &images).unwrap();
        supervised_loss(&preds, &targets, &LossConfig::default()).unwrap().breakdown.total
    };
    let start = loss(&params);
    for it in 0..60 {
        let groups = [LossGroup { images: &images, targets: &targets, weight: 1.0 }];
        let (_, grads) = weighted_loss_and_grads(&params, &groups, &LossConfig::default(), true).unwrap();
        sgd.step(&mut params, &grads, &partition, lr_at(0.01, it, 60, &SgdConfig::default()));
    }
    assert!(loss(&params) < start, "{} -> {}", start, loss(&params));
}

#[test]
fn unmatched_freeze_prefix_is_an_error() {
    let params = DetectorParams::<f32>::init(&ARCH, 2, &mut rng_for(0, &[]));
    let policy = FreezePolicy { trainable: vec!["backbone".into()] };
    assert!(apply_freeze_policy(&params, &policy).is_err());
    assert!(!apply_freeze_policy(&params, &FreezePolicy::nothing()).unwrap().any_trainable());
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let params = DetectorParams::<f32>::init(&ARCH, 3, &mut rng_for(8, &[]));
    let ckpt = Checkpoint::new("stage1", vec![CategoryId(2), CategoryId(5), CategoryId(7)], params).unwrap();
    let path = dir.path().join("c.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back.params, ckpt.params);
    assert_eq!(back.meta, ckpt.meta);
    assert_eq!(back.digest(), ckpt.digest());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("{\"meta\":{"));
}

#[test]
fn wrong_class_count_is_rejected() {
    let params = DetectorParams::<f32>::init(&ARCH, 3, &mut rng_for(8, &[]));
    assert!(Checkpoint::new("x", vec![CategoryId(1)], params).is_err());
}

/// Repeatedly take the best remaining box and drop everything of the same
/// image and class overlapping it above the threshold.
fn brute_force_nms(mut pool: Vec<Detection>, thresh: f64) -> Vec<Detection> {
    let mut kept = Vec::new();
    while !pool.is_empty() {
        let best = (0..pool.len()).fold(0, |b, i| if pool[i].score > pool[b].score { i } else { b });
        let top = pool.remove(best);
        pool.retain(|d| !(d.image_id == top.image_id && d.category_id == top.category_id && d.bbox.iou(&top.bbox) > thresh));
        kept.push(top);
    }
    kept
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn nms_matches_brute_force(
        raw in prop::collection::vec((1u64..=2, 1u32..=2, 0.0..40.0f64, 0.0..40.0f64, 5.0..30.0f64, 0u32..1_000_000), 0..25),
        thresh in 0.1..0.9f64,
    ) {
        // distinct scores make the greedy order unique
        let mut seen = std::collections::BTreeSet::new();
        let dets: Vec<Detection> = raw
            .into_iter()
            .filter(|r| seen.insert(r.5))
            .map(|(im, c, x, y, s, score)| Detection {
                image_id: ImageId(im),
                category_id: CategoryId(c),
                bbox: BBox::new(x, y, s, s),
                score: score as f64 / 1e6,
            })
            .collect();
        prop_assert_eq!(nms(dets.clone(), thresh), brute_force_nms(dets, thresh));
    }

    #[test]
    fn deltas_round_trip(px in 0.0..200.0f64, py in 0.0..200.0f64, l in 0.1..50.0f64, t in 0.1..50.0f64, r in 0.1..50.0f64, b in 0.1..50.0f64) {
        let bbox = BBox::from_corners(px - l, py - t, px + r, py + b);
        let back = decode_deltas((px, py), encode_deltas((px, py), &bbox, 16.0), 16.0);
        prop_assert!((back.x - bbox.x).abs() < 1e-9 && (back.y - bbox.y).abs() < 1e-9);
        prop_assert!((back.w - bbox.w).abs() < 1e-9 && (back.h - bbox.h).abs() < 1e-9);
    }
}
