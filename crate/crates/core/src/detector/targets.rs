//! Center-based target assignment on the location grid.

use crate::dataset::BBox;

/// Location grid: cell `(i, j)` sits at `((j + 0.5) * stride, (i + 0.5) * stride)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub stride: f64,
}

impl GridSpec {
    pub fn point(&self, loc: usize) -> (f64, f64) {
        let (i, j) = (loc / self.width, loc % self.width);
        ((j as f64 + 0.5) * self.stride, (i as f64 + 0.5) * self.stride)
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }
}

/// Grid for an input of `height x width` pixels at the detector's stride.
pub fn grid_for(height: usize, width: usize) -> GridSpec {
    let s = super::params::STRIDE;
    GridSpec { height: height.div_ceil(s), width: width.div_ceil(s), stride: s as f64 }
}

/// A box to learn, with its class as a classifier row index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetBox {
    pub bbox: BBox,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocationTarget {
    Negative,
    Ignore,
    /// `deltas` are left/top/right/bottom distances in stride units.
    Positive { class: usize, deltas: [f64; 4] },
}

/// Distances from a location point to the box sides, in stride units.
pub fn encode_deltas(point: (f64, f64), b: &BBox, stride: f64) -> [f64; 4] {
    [(point.0 - b.x) / stride, (point.1 - b.y) / stride, (b.x2() - point.0) / stride, (b.y2() - point.1) / stride]
}

pub fn decode_deltas(point: (f64, f64), d: [f64; 4], stride: f64) -> BBox {
    BBox::from_corners(point.0 - d[0] * stride, point.1 - d[1] * stride, point.0 + d[2] * stride, point.1 + d[3] * stride)
}

fn in_center_region(point: (f64, f64), b: &BBox, grid: &GridSpec, center_radius: f64) -> bool {
    let (cx, cy) = b.center();
    let rx = (center_radius * grid.stride).min(b.w / 2.0);
    let ry = (center_radius * grid.stride).min(b.h / 2.0);
    if (point.0 - cx).abs() <= rx && (point.1 - cy).abs() <= ry {
        return true;
    }
    // the cell holding the box centre is always part of the region
    let j = ((cx / grid.stride).floor() as usize).min(grid.width.saturating_sub(1));
    let i = ((cy / grid.stride).floor() as usize).min(grid.height.saturating_sub(1));
    let (px, py) = ((j as f64 + 0.5) * grid.stride, (i as f64 + 0.5) * grid.stride);
    px == point.0 && py == point.1
}

/// A location is positive for the smallest-area box whose centre region
/// contains it (ties go to the earlier box). Remaining locations whose point
/// falls inside an ignore region are ignored; the rest are negative.
pub fn assign_targets(boxes: &[TargetBox], grid: GridSpec, ignore: &[BBox], center_radius: f64) -> Vec<LocationTarget> {
    (0..grid.locations())
        .map(|loc| {
            let point = grid.point(loc);
            let mut best: Option<(f64, &TargetBox)> = None;
            for tb in boxes {
                if in_center_region(point, &tb.bbox, &grid, center_radius) {
                    let area = tb.bbox.area();
                    if best.is_none_or(|(a, _)| area < a) {
                        best = Some((area, tb));
                    }
                }
            }
            match best {
                Some((_, tb)) => LocationTarget::Positive {
                    class: tb.class,
                    deltas: encode_deltas(point, &tb.bbox, grid.stride),
                },
                None if ignore.iter().any(|r| r.contains_point(point.0, point.1)) => LocationTarget::Ignore,
                None => LocationTarget::Negative,
            }
        })
        .collect()
}
