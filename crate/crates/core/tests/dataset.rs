use std::collections::BTreeMap;

use proptest::prelude::*;
use simltd_core::dataset::*;
use simltd_core::synthgen::{generate_longtail_dataset, SynthSpec};

/// Dataset with one 100x100 image per distinct id in `anns` = (image, class).
fn build(anns: &[(u64, u32)], num_classes: u32) -> DatasetIndex {
    let mut image_ids: Vec<u64> = anns.iter().map(|a| a.0).collect();
    image_ids.sort_unstable();
    image_ids.dedup();
    let images = image_ids
        .iter()
        .map(|&id| ImageRecord { id: ImageId(id), width: 100, height: 100, file_name: format!("{id}.png") })
        .collect();
    let annotations = anns
        .iter()
        .enumerate()
        .map(|(i, &(img, c))| InstanceAnnotation {
            id: i as u64 + 1,
            image_id: ImageId(img),
            category_id: CategoryId(c),
            bbox: BBox::new(1.0 + (i % 50) as f64, 2.0, 10.0, 10.0),
            area: 100.0,
            source: InstanceSource::Original,
            ignore: false,
        })
        .collect();
    let categories = (1..=num_classes).map(|c| Category { id: CategoryId(c), name: format!("c{c}") }).collect();
    DatasetIndex::new(images, annotations, categories, DatasetRole::Labeled).unwrap()
}

fn arb_dataset() -> impl Strategy<Value = DatasetIndex> {
    prop::collection::vec((1u64..40, 1u32..=8), 1..120).prop_map(|a| build(&a, 8))
}

#[test]
fn lvis_shaped_fixture_splits_866_337() {
    let fixture = lvis_shaped_fixture();
    let spec = partition_spec(&fixture, 10).unwrap();
    assert_eq!((spec.head_ids.len(), spec.tail_ids.len()), (866, 337));
    assert_eq!(spec.all_ids().len(), 1203);
    let bins = compute_category_stats(&fixture, BinThresholds::LVIS);
    let count = |b| bins.iter().filter(|s| s.frequency_bin == b).count();
    assert_eq!(count(FrequencyBin::Rare), 337);
    assert_eq!(count(FrequencyBin::Rare) + count(FrequencyBin::Common) + count(FrequencyBin::Frequent), 1203);
}

#[test]
fn class_in_exactly_ten_images_is_rare_and_tail() {
    let anns: Vec<(u64, u32)> = (1..=10).map(|i| (i, 1)).chain((1..=11).map(|i| (i, 2))).collect();
    let ds = build(&anns, 2);
    let stats = compute_category_stats(&ds, BinThresholds::LVIS);
    assert_eq!(stats[0].frequency_bin, FrequencyBin::Rare);
    assert_eq!(stats[1].frequency_bin, FrequencyBin::Common);
    let spec = partition_spec(&ds, 10).unwrap();
    assert_eq!(spec.tail_ids, vec![CategoryId(1)]);
    assert_eq!(spec.head_ids, vec![CategoryId(2)]);
}

#[test]
fn rfs_hand_values() {
    assert!((category_repeat_factor(0.0001, 0.001) - 10f64.sqrt()).abs() < 1e-9);
    assert_eq!(category_repeat_factor(0.5, 0.001), 1.0);
    assert_eq!(category_repeat_factor(0.001, 0.001), 1.0);
}

#[test]
fn rfs_expansion_mean_over_ten_thousand_trials() {
    let factors: BTreeMap<ImageId, f64> = [(ImageId(1), 1.5), (ImageId(2), 2.25), (ImageId(3), 1.0)].into_iter().collect();
    let trials = 10_000;
    let mut totals: BTreeMap<ImageId, usize> = BTreeMap::new();
    for seed in 0..trials {
        for id in expand_epoch_indices(&factors, seed) {
            *totals.entry(id).or_default() += 1;
        }
    }
    for (id, r) in &factors {
        let mean = totals[id] as f64 / trials as f64;
        assert!((mean - r).abs() <= 0.02 * r, "image {id:?}: mean {mean} vs r {r}");
    }
}

#[test]
fn k_shot_sampling_is_reproducible_and_capped() {
    let data = generate_longtail_dataset(&SynthSpec { num_images: 300, num_val: 1, unlabeled_count: 0, ..SynthSpec::default() }).unwrap();
    let (a, sa) = sample_k_shot(&data.train, 30, 7).unwrap();
    let (b, sb) = sample_k_shot(&data.train, 30, 7).unwrap();
    let (_, sc) = sample_k_shot(&data.train, 30, 8).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_ne!(sa, sc);
    let stats = compute_category_stats(&data.train, BinThresholds::LVIS);
    for s in &stats {
        let chosen = sa.selected.get(&s.category_id).map_or(0, Vec::len);
        assert_eq!(chosen, s.instance_count.min(30), "class {}", s.category_id);
    }
}

#[test]
fn bank_patches_paste_back_onto_their_source_pixels() {
    let data = generate_longtail_dataset(&SynthSpec { num_images: 200, num_val: 1, unlabeled_count: 0, ..SynthSpec::default() }).unwrap();
    let part = partition_head_tail(&data.train, 20).unwrap();
    let bank = build_rare_instance_bank(&part.tail, &data.store).unwrap();
    assert_eq!(bank.len(), part.tail.annotations().iter().filter(|a| !a.ignore).count());
    for entry in &bank {
        let ann = part.tail.annotations().iter().find(|a| a.id == entry.annotation_id).unwrap();
        let src = data.store.get(ann.image_id).unwrap();
        let mut canvas = src.clone();
        let (x, y, w, h) = pixel_rect(&ann.bbox, src.width(), src.height());
        assert_eq!((entry.patch.width(), entry.patch.height()), (w, h));
        image::imageops::replace(&mut canvas, &entry.patch, x as i64, y as i64);
        assert_eq!(&canvas, src);
    }
}

#[test]
fn coco_documents_round_trip_canonically() {
    let data = generate_longtail_dataset(&SynthSpec { num_images: 30, num_val: 5, unlabeled_count: 0, ..SynthSpec::default() }).unwrap();
    let text = to_coco_string(&data.train);
    let back = parse_dataset(&text, std::path::Path::new("mem")).unwrap();
    assert_eq!(back, data.train);
    assert_eq!(to_coco_string(&back), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_monotone_in_m(ds in arb_dataset(), m in 0usize..40) {
        let lo = partition_spec(&ds, m).unwrap();
        let hi = partition_spec(&ds, m + 1).unwrap();
        for c in &lo.tail_ids {
            prop_assert!(hi.tail_ids.contains(c));
        }
        check_sorted_disjoint(&lo.head_ids, &lo.tail_ids).unwrap();
        prop_assert_eq!(lo.all_ids(), ds.category_ids());
    }

    #[test]
    fn partition_subsets_never_leak_classes(ds in arb_dataset(), m in 0usize..20) {
        let p = partition_head_tail(&ds, m).unwrap();
        prop_assert!(p.head.annotations().iter().all(|a| p.spec.head_ids.contains(&a.category_id)));
        prop_assert!(p.tail.annotations().iter().all(|a| p.spec.tail_ids.contains(&a.category_id)));
        prop_assert_eq!(p.head.annotations().len() + p.tail.annotations().len(), ds.annotations().len());
    }

    #[test]
    fn repeat_factors_are_at_least_one(ds in arb_dataset(), t in 0.001f64..0.9) {
        let r = compute_repeat_factors(&ds, t).unwrap();
        let n = ds.images().len() as f64;
        let stats = compute_category_stats(&ds, BinThresholds::LVIS);
        for img in ds.images() {
            prop_assert!(r[&img.id] >= 1.0);
            let all_common = ds.annotations_for(img.id).all(|a| {
                let s = stats.iter().find(|s| s.category_id == a.category_id).unwrap();
                s.image_count as f64 / n >= t
            });
            if all_common {
                prop_assert_eq!(r[&img.id], 1.0);
            }
        }
    }

    #[test]
    fn k_shot_never_exceeds_k(ds in arb_dataset(), k in 0usize..6, seed in 0u64..1000) {
        let (dk, sample) = sample_k_shot(&ds, k, seed).unwrap();
        let stats = compute_category_stats(&ds, BinThresholds::LVIS);
        for s in &stats {
            let n = sample.selected.get(&s.category_id).map_or(0, Vec::len);
            prop_assert_eq!(n, s.instance_count.min(k));
        }
        let trained = dk.annotations().iter().filter(|a| !a.ignore).count();
        prop_assert_eq!(trained, sample.selected.values().map(Vec::len).sum::<usize>());
    }
}
