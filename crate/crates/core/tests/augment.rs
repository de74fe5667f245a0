use image::{Rgb, RgbImage};
use proptest::prelude::*;
use simltd_core::augment::*;
use simltd_core::dataset::{BBox, CategoryId, ImageId, InstanceAnnotation, InstanceSource};
use simltd_core::rng::rng_for;

fn ann(id: u64, b: BBox) -> InstanceAnnotation {
    InstanceAnnotation {
        id,
        image_id: ImageId(1),
        category_id: CategoryId(1 + id as u32 % 3),
        bbox: b,
        area: b.area(),
        source: InstanceSource::Original,
        ignore: false,
    }
}

fn textured(w: u32, h: u32, seed: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = x.wrapping_mul(31).wrapping_add(y.wrapping_mul(17)).wrapping_add(seed.wrapping_mul(101));
        Rgb([(v % 251) as u8, (v / 3 % 241) as u8, (v / 7 % 239) as u8])
    })
}

fn sample(w: u32, h: u32, boxes: &[BBox]) -> AugmentedSample {
    let anns = boxes.iter().enumerate().map(|(i, b)| ann(i as u64 + 1, *b)).collect();
    AugmentedSample::new(ImageId(1), textured(w, h, 3), anns)
}

fn arb_box(w: f64, h: f64) -> impl Strategy<Value = BBox> {
    (0.0..w - 8.0, 0.0..h - 8.0, 4.0..40.0f64, 4.0..40.0f64)
        .prop_map(move |(x, y, bw, bh)| BBox::new(x, y, bw.min(w - x), bh.min(h - y)))
}

#[test]
fn strong_view_replays_bit_exactly() {
    let s = sample(96, 80, &[BBox::new(10.0, 12.0, 30.0, 20.0), BBox::new(50.0, 40.0, 25.0, 30.0)]);
    for seed in 0..30 {
        let out = apply_strong(&s, &AugPolicy::strong(), &mut rng_for(seed, &[])).unwrap();
        let again = replay(&s, &out.op_log);
        assert_eq!(again, out, "seed {seed}");
    }
}

#[test]
fn op_log_survives_json_round_trip() {
    let s = sample(64, 64, &[BBox::new(5.0, 5.0, 20.0, 20.0)]);
    let out = apply_strong(&s, &AugPolicy::strong(), &mut rng_for(4, &[])).unwrap();
    let text = serde_json::to_string(&out.op_log).unwrap();
    let ops: Vec<AugOp> = serde_json::from_str(&text).unwrap();
    assert_eq!(replay(&s, &ops), out);
}

#[test]
fn affine_box_is_hull_of_transformed_corners() {
    let (w, h) = (120u32, 100u32);
    let t = affine_about_center(w, h, 17.0, 8.0, -5.0, 3.0, -2.0);
    let b = BBox::new(40.0, 30.0, 30.0, 20.0);
    let corners = [(b.x, b.y), (b.x2(), b.y), (b.x, b.y2()), (b.x2(), b.y2())];
    // direct matrix application, independent of Affine::apply
    let m = t.m;
    let pts: Vec<(f64, f64)> = corners.iter().map(|&(x, y)| (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])).collect();
    let x1 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).max(0.0);
    let y1 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).max(0.0);
    let x2 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).min(w as f64);
    let y2 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).min(h as f64);
    let got = transform_box(&t, &b, w, h, 0.0).unwrap();
    for (g, e) in [got.x, got.y, got.x2(), got.y2()].iter().zip([x1, y1, x2, y2]) {
        assert!((g - e).abs() < 1e-9, "{got:?} vs {:?}", [x1, y1, x2, y2]);
    }
}

#[test]
fn pure_translation_moves_box_exactly() {
    let t = affine_about_center(100, 100, 0.0, 0.0, 0.0, 7.0, -4.0);
    let b = transform_box(&t, &BBox::new(20.0, 30.0, 10.0, 12.0), 100, 100, 0.25).unwrap();
    assert!((b.x - 27.0).abs() < 1e-9 && (b.y - 26.0).abs() < 1e-9);
    assert!((b.w - 10.0).abs() < 1e-9 && (b.h - 12.0).abs() < 1e-9);
}

#[test]
fn cutout_respects_count_and_size_bounds() {
    let s = sample(100, 80, &[]);
    let policy = AugPolicy { cutout_count_range: (1, 5), cutout_size_range: (0.0, 0.2), ..AugPolicy::strong() };
    for seed in 0..200 {
        let out = apply_strong(&s, &policy, &mut rng_for(seed, &[])).unwrap();
        for op in &out.op_log {
            if let AugOp::Cutout { rects } = op {
                assert!(!rects.is_empty() && rects.len() <= 5);
                let (w, h) = out.size();
                for &(x, y, cw, ch) in rects {
                    assert!(cw as f64 <= 0.2 * w as f64 && ch as f64 <= 0.2 * h as f64);
                    assert!(x + cw <= w && y + ch <= h);
                    for yy in y..y + ch {
                        for xx in x..x + cw {
                            assert_eq!(out.pixels.get_pixel(xx, yy).0, CUTOUT_FILL);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn copy_paste_writes_source_pixels_verbatim() {
    let dst = sample(80, 80, &[BBox::new(2.0, 2.0, 10.0, 10.0)]);
    let mut src = sample(60, 60, &[BBox::new(10.0, 20.0, 16.0, 12.0)]);
    src.pixels = textured(60, 60, 9);
    let cfg = CopyPasteConfig { select_prob: 1.0, ..CopyPasteConfig::default() };
    let out = simple_copy_paste(&dst, &src, &cfg, &mut rng_for(2, &[]));
    let pasted = out.annotations.iter().find(|a| a.source == InstanceSource::Pasted).unwrap();
    assert_eq!(pasted.category_id, src.annotations[0].category_id);
    assert_eq!((pasted.bbox.w, pasted.bbox.h), (16.0, 12.0));
    let (px, py) = (pasted.bbox.x as u32, pasted.bbox.y as u32);
    for dy in 0..12 {
        for dx in 0..16 {
            assert_eq!(out.pixels.get_pixel(px + dx, py + dy), src.pixels.get_pixel(10 + dx, 20 + dy));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn photometric_ops_never_move_boxes(boxes in prop::collection::vec(arb_box(96.0, 72.0), 0..5), seed in 0u64..10_000) {
        let s = sample(96, 72, &boxes);
        let policy = AugPolicy { resize_short_edge_range: (0, 0), flip_prob: 0.0, photometric_probs: [1.0; 8], ..AugPolicy::weak() };
        let out = apply_weak(&s, &policy, &mut rng_for(seed, &[])).unwrap();
        prop_assert!(out.op_log.iter().all(AugOp::is_photometric));
        prop_assert_eq!(out.annotations, s.annotations);
    }

    #[test]
    fn double_flip_is_identity(boxes in prop::collection::vec(arb_box(90.0, 70.0), 0..5)) {
        let s = sample(90, 70, &boxes);
        let once = replay(&s, &[AugOp::HFlip { width: 90 }]);
        let twice = replay(&once, &[AugOp::HFlip { width: 90 }]);
        prop_assert_eq!(twice.pixels, s.pixels);
        for (a, b) in twice.annotations.iter().zip(&s.annotations) {
            prop_assert!((a.bbox.x - b.bbox.x).abs() < 1e-9 && a.bbox.w == b.bbox.w);
        }
    }

    #[test]
    fn weak_boxes_follow_forward_map(boxes in prop::collection::vec(arb_box(96.0, 80.0), 1..5), seed in 0u64..10_000) {
        let s = sample(96, 80, &boxes);
        let out = apply_weak(&s, &AugPolicy::weak(), &mut rng_for(seed, &[])).unwrap();
        for (a, b) in out.annotations.iter().zip(&s.annotations) {
            let m = map_box_forward(&out.op_log, &b.bbox).unwrap();
            prop_assert!((m.x - a.bbox.x).abs() < 1e-9 && (m.y - a.bbox.y).abs() < 1e-9);
            prop_assert!((m.w - a.bbox.w).abs() < 1e-9 && (m.h - a.bbox.h).abs() < 1e-9);
            let back = map_box_inverse(&out.op_log, &a.bbox).unwrap();
            prop_assert!((back.x - b.bbox.x).abs() < 1e-6 && (back.w - b.bbox.w).abs() < 1e-6);
        }
    }

    #[test]
    fn strong_view_boxes_stay_inside_canvas(boxes in prop::collection::vec(arb_box(96.0, 80.0), 1..5), seed in 0u64..10_000) {
        let s = sample(96, 80, &boxes);
        let out = apply_strong(&s, &AugPolicy::strong(), &mut rng_for(seed, &[])).unwrap();
        let (w, h) = out.size();
        for a in &out.annotations {
            prop_assert!(a.bbox.x >= -1e-9 && a.bbox.y >= -1e-9);
            prop_assert!(a.bbox.x2() <= w as f64 + 1e-9 && a.bbox.y2() <= h as f64 + 1e-9);
            prop_assert!(a.bbox.w > 0.0 && a.bbox.h > 0.0);
        }
    }
}
