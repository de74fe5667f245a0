use std::collections::BTreeMap;

use super::config::RegressorSource;
use crate::dataset::{check_sorted_disjoint, CategoryId};
use crate::detector::{Array, Checkpoint, DetectorParams, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT, REGRESSOR_BIAS, REGRESSOR_WEIGHT};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_rows<F>(ckpt: Option<&Checkpoint<F>>, ids: &[CategoryId], which: &'static str) -> Result<()> {
    let rows = ckpt.map_or(0, |c| c.meta.num_classes);
    if rows != ids.len() {
        return Err(Error::RowCountMismatch { which, rows, ids: ids.len() });
    }
    if let Some(c) = ckpt {
        if c.meta.class_ids != ids {
            return Err(Error::StructureMismatch(format!("checkpoint class ids do not match `{which}`")));
        }
    }
    Ok(())
}

/// Merge a head-class and a tail-class detector into one over
/// `sorted(head_ids ++ tail_ids)`. Each classifier row (weight and bias) is
/// copied bit-exactly from its owning model; the representation comes from
/// the head model and the class-agnostic regressor from `regressor`.
pub fn fuse_heads<F: Scalar>(
    head: &Checkpoint<F>,
    tail: Option<&Checkpoint<F>>,
    head_ids: &[CategoryId],
    tail_ids: &[CategoryId],
    regressor: RegressorSource,
) -> Result<Checkpoint<F>> {
    check_sorted_disjoint(head_ids, tail_ids)?;
    check_rows(Some(head), head_ids, "head_ids")?;
    check_rows(tail, tail_ids, "tail_ids")?;
    let dim = head.params.feature_dim();
    if let Some(t) = tail {
        if t.params.feature_dim() != dim {
            return Err(Error::StructureMismatch("head and tail feature widths differ".into()));
        }
    }

    let mut all_ids: Vec<CategoryId> = head_ids.iter().chain(tail_ids).copied().collect();
    all_ids.sort_unstable();
    let id2label: BTreeMap<CategoryId, usize> = all_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let k = all_ids.len();
    let mut weight = Array::<F>::zeros(&[k, dim]);
    let mut bias = Array::<F>::zeros(&[k]);
    let mut copy_rows = |src: &DetectorParams<F>, ids: &[CategoryId]| {
        let (w, b) = (src.get(CLASSIFIER_WEIGHT), src.get(CLASSIFIER_BIAS));
        for (row, id) in ids.iter().enumerate() {
            let dst = id2label[id];
            weight.data[dst * dim..(dst + 1) * dim].copy_from_slice(&w.data[row * dim..(row + 1) * dim]);
            bias.data[dst] = b.data[row];
        }
    };
    copy_rows(&head.params, head_ids);
    if let Some(t) = tail {
        copy_rows(&t.params, tail_ids);
    }

    let mut params = head.params.clone();
    params.num_classes = k;
    params.tensors.insert(CLASSIFIER_WEIGHT.into(), weight);
    params.tensors.insert(CLASSIFIER_BIAS.into(), bias);
    match (regressor, tail) {
        (RegressorSource::Head, _) | (_, None) => {}
        (RegressorSource::Tail, Some(t)) => {
            for name in [REGRESSOR_WEIGHT, REGRESSOR_BIAS] {
                params.tensors.insert(name.into(), t.params.get(name).clone());
            }
        }
        (RegressorSource::Average, Some(t)) => {
            let half = F::lit(0.5);
            for name in [REGRESSOR_WEIGHT, REGRESSOR_BIAS] {
                let dst = params.tensors.get_mut(name).expect("regressor present");
                for (a, &b) in dst.data.iter_mut().zip(&t.params.get(name).data) {
                    *a = (*a + b) * half;
                }
            }
        }
    }
    params.validate()?;
    Checkpoint::new("fused", all_ids, params)
}
