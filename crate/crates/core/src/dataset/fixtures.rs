//! Synthetic category-count fixtures.

use super::types::*;

/// A labeled dataset whose per-class image counts mimic the LVIS v1 shape:
/// 1203 classes, of which 337 appear in at most 10 images, 461 in 11-100
/// and 405 in more than 100. Boxes are placeholders.
pub fn lvis_shaped_fixture() -> DatasetIndex {
    const POOL: u64 = 512;
    let mut counts = Vec::with_capacity(1203);
    counts.extend((0..337).map(|i| 1 + i % 10));
    counts.extend((0..461).map(|i| 11 + i % 90));
    counts.extend((0..405).map(|i| 101 + i % 5));

    let images = (1..=POOL)
        .map(|id| ImageRecord { id: ImageId(id), width: 64, height: 64, file_name: format!("{id:06}.png") })
        .collect();
    let mut categories = Vec::with_capacity(counts.len());
    let mut annotations = Vec::new();
    let mut next_ann = 1u64;
    // Interleave bins over the id space so ids carry no bin information.
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (i * 7919) % counts.len());
    for (slot, &which) in order.iter().enumerate() {
        let cat = CategoryId(slot as u32 + 1);
        categories.push(Category { id: cat, name: format!("lvis_{:04}", slot + 1) });
        let start = (slot as u64 * 37) % POOL;
        for j in 0..counts[which] as u64 {
            let bbox = BBox::new(((next_ann * 13) % 48) as f64, ((next_ann * 29) % 48) as f64, 8.0, 8.0);
            annotations.push(InstanceAnnotation {
                id: next_ann,
                image_id: ImageId(1 + (start + j) % POOL),
                category_id: cat,
                bbox,
                area: bbox.area(),
                source: InstanceSource::Original,
                ignore: false,
            });
            next_ann += 1;
        }
    }
    DatasetIndex::new(images, annotations, categories, DatasetRole::Labeled).expect("fixture is valid")
}
