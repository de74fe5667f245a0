//! Detection datasets: COCO-format I/O, class statistics, head/tail
//! partitioning, repeat factor sampling, k-shot sampling and the rare
//! instance bank.

mod bank;
mod coco;
mod fixtures;
mod kshot;
mod partition;
mod rfs;
mod stats;
mod store;
mod types;

pub use bank::{build_rare_instance_bank, crop_box, pixel_rect, BankEntry};
pub use coco::{load_dataset, parse_dataset, save_dataset, to_coco_string};
pub use fixtures::lvis_shaped_fixture;
pub use kshot::{sample_k_shot, KShotSample};
pub use partition::{check_sorted_disjoint, partition_head_tail, partition_spec, Partition, PartitionSpec};
pub use rfs::{category_repeat_factor, compute_repeat_factors, expand_epoch_indices};
pub use stats::{bin_map, compute_category_stats, median_image_count, BinThresholds, CategoryStats, FrequencyBin};
pub use store::PixelStore;
pub use types::*;

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Labeled dataset from `(annotation_id, image_id, category_id)` triples;
    /// images are 100x50 and created on demand.
    pub fn dataset(anns: &[(u64, u64, u32)], cats: &[u32]) -> DatasetIndex {
        let mut image_ids: Vec<u64> = anns.iter().map(|a| a.1).collect();
        image_ids.sort_unstable();
        image_ids.dedup();
        let images = image_ids
            .iter()
            .map(|&id| ImageRecord { id: ImageId(id), width: 100, height: 50, file_name: format!("{id}.png") })
            .collect();
        let annotations = anns
            .iter()
            .map(|&(id, img, cat)| {
                let bbox = BBox::new(((id * 7) % 80) as f64, 5.0, 10.0, 8.0);
                InstanceAnnotation {
                    id,
                    image_id: ImageId(img),
                    category_id: CategoryId(cat),
                    bbox,
                    area: bbox.area(),
                    source: InstanceSource::Original,
                    ignore: false,
                }
            })
            .collect();
        let categories = cats.iter().map(|&c| Category { id: CategoryId(c), name: format!("c{c}") }).collect();
        DatasetIndex::new(images, annotations, categories, DatasetRole::Labeled).unwrap()
    }
}
