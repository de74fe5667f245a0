use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Array<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Array { shape: shape.to_vec(), data: vec![F::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length mismatch");
        Array { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `[3, H, W]` input tensor, per-channel values `(v / 255 - 0.5) / 0.25`.
pub fn image_to_tensor<F: Scalar>(img: &image::RgbImage) -> Array<F> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![F::zero(); 3 * h * w];
    let scale = F::lit(1.0 / (255.0 * 0.25));
    let shift = F::lit(2.0);
    for (x, y, p) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = F::lit(p.0[c] as f64) * scale - shift;
        }
    }
    Array { shape: vec![3, h, w], data }
}
