//! Forward and backward passes.
//!
//! Convolutions are lowered to GEMM through im2col. All passes work on a
//! single image; batching happens one level up so results never depend on
//! batch composition.

use std::collections::BTreeMap;

use super::array::Array;
use super::params::*;
use crate::error::{Error, Result};
use crate::scalar::{matmul, MatRef, Scalar};

/// Per-image head outputs on a `grid_h x grid_w` location grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<F> {
    pub grid_h: usize,
    pub grid_w: usize,
    pub num_classes: usize,
    /// Input resolution `(height, width)` the grid was computed from.
    pub image_size: (usize, usize),
    /// `[locations, num_classes]`
    pub logits: Vec<F>,
    /// `[locations, 4]`: left, top, right, bottom distances in stride units.
    pub regs: Vec<F>,
}

impl<F: Scalar> Predictions<F> {
    pub fn locations(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn logit(&self, loc: usize, class: usize) -> F {
        self.logits[loc * self.num_classes + class]
    }

    pub fn all_finite(&self) -> bool {
        self.logits.iter().chain(&self.regs).all(|v| v.is_finite())
    }
}

struct LayerCache<F> {
    cols: Vec<F>,
    out: Vec<F>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
    stride: usize,
}

/// Activations retained for the backward pass.
pub struct ForwardCache<F> {
    layers: Vec<LayerCache<F>>,
}

fn out_dim(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

fn im2col<F: Scalar>(input: &[F], c: usize, h: usize, w: usize, stride: usize, cols: &mut Vec<F>) -> (usize, usize) {
    let (ho, wo) = (out_dim(h, stride), out_dim(w, stride));
    let p = ho * wo;
    cols.clear();
    cols.resize(c * 9 * p, F::zero());
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * p..((ci * 9) + ky * 3 + kx + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (ho, wo)
}

fn col2im<F: Scalar>(cols: &[F], c: usize, h: usize, w: usize, stride: usize, out: &mut [F]) {
    let (ho, wo) = (out_dim(h, stride), out_dim(w, stride));
    let p = ho * wo;
    out.iter_mut().for_each(|v| *v = F::zero());
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * p..((ci * 9) + ky * 3 + kx + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Representation features `[C, grid_h * grid_w]` and the grid shape.
pub fn features<F: Scalar>(params: &DetectorParams<F>, image: &Array<F>) -> Result<(Vec<F>, (usize, usize))> {
    let (feat, hw, _) = run_representation(params, image, false)?;
    Ok((feat, hw))
}

fn run_representation<F: Scalar>(
    params: &DetectorParams<F>,
    image: &Array<F>,
    keep: bool,
) -> Result<(Vec<F>, (usize, usize), Vec<LayerCache<F>>)> {
    if image.shape.len() != 3 || image.shape[0] != 3 {
        return Err(Error::Shape(format!("expected a [3, H, W] image, got {:?}", image.shape)));
    }
    let (mut c, mut h, mut w) = (image.shape[0], image.shape[1], image.shape[2]);
    if h == 0 || w == 0 {
        return Err(Error::Shape("empty image".into()));
    }
    let arch = params.arch();
    let mut caches = Vec::new();
    let mut current = image.data.clone();
    let mut cols = Vec::new();
    for (name, cin, cout, stride) in conv_layout(&arch) {
        if cin != c {
            return Err(Error::Shape(format!("{name} expects {cin} channels, input has {c}")));
        }
        let weight = params.get(&format!("{name}.weight"));
        let bias = params.get(&format!("{name}.bias"));
        let (ho, wo) = im2col(&current, c, h, w, stride, &mut cols);
        let p = ho * wo;
        let mut out = vec![F::zero(); cout * p];
        matmul(MatRef::new(&weight.data, cout, cin * 9), MatRef::new(&cols, cin * 9, p), F::zero(), &mut out);
        for (o, row) in out.chunks_mut(p).enumerate() {
            let b = bias.data[o];
            for v in row {
                *v += b;
                if *v < F::zero() {
                    *v = F::zero();
                }
            }
        }
        if keep {
            caches.push(LayerCache {
                cols: std::mem::take(&mut cols),
                out: out.clone(),
                in_shape: (c, h, w),
                out_hw: (ho, wo),
                stride,
            });
        }
        current = out;
        c = cout;
        h = ho;
        w = wo;
    }
    Ok((current, (h, w), caches))
}

/// Linear classifier and regressor over a feature map.
pub fn head<F: Scalar>(params: &DetectorParams<F>, feat: &[F], grid: (usize, usize), image_size: (usize, usize)) -> Predictions<F> {
    let l = grid.0 * grid.1;
    let c = params.feature_dim();
    let k = params.num_classes;
    let wc = params.get(CLASSIFIER_WEIGHT);
    let bc = params.get(CLASSIFIER_BIAS);
    let wr = params.get(REGRESSOR_WEIGHT);
    let br = params.get(REGRESSOR_BIAS);
    let mut logits = vec![F::zero(); l * k];
    let mut regs = vec![F::zero(); l * 4];
    let feat_t = MatRef::new(feat, c, l).t();
    matmul(feat_t, MatRef::new(&wc.data, k, c).t(), F::zero(), &mut logits);
    matmul(feat_t, MatRef::new(&wr.data, 4, c).t(), F::zero(), &mut regs);
    for row in logits.chunks_mut(k) {
        for (v, b) in row.iter_mut().zip(&bc.data) {
            *v += *b;
        }
    }
    for row in regs.chunks_mut(4) {
        for (v, b) in row.iter_mut().zip(&br.data) {
            *v += *b;
        }
    }
    Predictions { grid_h: grid.0, grid_w: grid.1, num_classes: k, image_size, logits, regs }
}

/// Pure forward pass for one `[3, H, W]` image.
pub fn forward_image<F: Scalar>(params: &DetectorParams<F>, image: &Array<F>) -> Result<Predictions<F>> {
    let (feat, grid, _) = run_representation(params, image, false)?;
    Ok(head(params, &feat, grid, (image.shape[1], image.shape[2])))
}

/// Forward pass keeping what [`backward`] needs.
pub fn forward_train<F: Scalar>(params: &DetectorParams<F>, image: &Array<F>) -> Result<(Predictions<F>, ForwardCache<F>)> {
    let (feat, grid, layers) = run_representation(params, image, true)?;
    Ok((head(params, &feat, grid, (image.shape[1], image.shape[2])), ForwardCache { layers }))
}

/// Batched forward; all images must share one resolution.
pub fn forward<F: Scalar>(params: &DetectorParams<F>, batch: &[Array<F>]) -> Result<Vec<Predictions<F>>> {
    if let Some(first) = batch.first() {
        if batch.iter().any(|b| b.shape != first.shape) {
            return Err(Error::Shape("images in a batch must share one resolution".into()));
        }
    }
    batch.iter().map(|img| forward_image(params, img)).collect()
}

pub type Grads<F> = BTreeMap<String, Array<F>>;

pub fn zero_grads<F: Scalar>(params: &DetectorParams<F>) -> Grads<F> {
    params.tensors.iter().map(|(n, a)| (n.clone(), a.zeros_like())).collect()
}

/// Accumulate parameter gradients for one image into `grads` given the
/// loss gradients w.r.t. logits and regressions. The representation is
/// skipped unless `through_representation`.
pub fn backward<F: Scalar>(
    params: &DetectorParams<F>,
    cache: &ForwardCache<F>,
    dlogits: &[F],
    dregs: &[F],
    through_representation: bool,
    grads: &mut Grads<F>,
) {
    let last = cache.layers.last().expect("cache holds layers");
    let feat = &last.out;
    let l = last.out_hw.0 * last.out_hw.1;
    let c = params.feature_dim();
    let k = params.num_classes;

    let dl_t = MatRef::new(dlogits, l, k).t();
    let dr_t = MatRef::new(dregs, l, 4).t();
    let feat_t = MatRef::new(feat, c, l).t();
    matmul(dl_t, feat_t, F::one(), &mut grads.get_mut(CLASSIFIER_WEIGHT).unwrap().data);
    matmul(dr_t, feat_t, F::one(), &mut grads.get_mut(REGRESSOR_WEIGHT).unwrap().data);
    {
        let gb = &mut grads.get_mut(CLASSIFIER_BIAS).unwrap().data;
        for row in dlogits.chunks(k) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += *d;
            }
        }
    }
    {
        let gb = &mut grads.get_mut(REGRESSOR_BIAS).unwrap().data;
        for row in dregs.chunks(4) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += *d;
            }
        }
    }
    if !through_representation {
        return;
    }

    let mut dout = vec![F::zero(); c * l];
    let wc = params.get(CLASSIFIER_WEIGHT);
    let wr = params.get(REGRESSOR_WEIGHT);
    matmul(MatRef::new(&wc.data, k, c).t(), dl_t, F::zero(), &mut dout);
    matmul(MatRef::new(&wr.data, 4, c).t(), dr_t, F::one(), &mut dout);

    let layout = conv_layout(&params.arch());
    for (i, (layer, (name, cin, cout, _))) in cache.layers.iter().zip(&layout).enumerate().rev() {
        let p = layer.out_hw.0 * layer.out_hw.1;
        for (d, o) in dout.iter_mut().zip(&layer.out) {
            if *o <= F::zero() {
                *d = F::zero();
            }
        }
        let wname = format!("{name}.weight");
        let bname = format!("{name}.bias");
        matmul(
            MatRef::new(&dout, *cout, p),
            MatRef::new(&layer.cols, cin * 9, p).t(),
            F::one(),
            &mut grads.get_mut(&wname).unwrap().data,
        );
        {
            let gb = &mut grads.get_mut(&bname).unwrap().data;
            for (g, row) in gb.iter_mut().zip(dout.chunks(p)) {
                *g += row.iter().copied().sum::<F>();
            }
        }
        if i == 0 {
            break;
        }
        let weight = params.get(&wname);
        let mut dcols = vec![F::zero(); cin * 9 * p];
        matmul(MatRef::new(&weight.data, *cout, cin * 9).t(), MatRef::new(&dout, *cout, p), F::zero(), &mut dcols);
        let (ci, h, w) = layer.in_shape;
        let mut dinput = vec![F::zero(); ci * h * w];
        col2im(&dcols, ci, h, w, layer.stride, &mut dinput);
        dout = dinput;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn naive_conv(input: &[f64], c: usize, h: usize, w: usize, weight: &[f64], cout: usize, stride: usize) -> Vec<f64> {
        let (ho, wo) = (out_dim(h, stride), out_dim(w, stride));
        let mut out = vec![0.0; cout * ho * wo];
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += weight[((o * c + ci) * 3 + ky) * 3 + kx] * input[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let (c, h, w, cout) = (2, 7, 5, 3);
        let input: Vec<f64> = (0..c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let weight: Vec<f64> = (0..cout * c * 9).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        for stride in [1, 2] {
            let mut cols = Vec::new();
            let (ho, wo) = im2col(&input, c, h, w, stride, &mut cols);
            let mut out = vec![0.0; cout * ho * wo];
            matmul(MatRef::new(&weight, cout, c * 9), MatRef::new(&cols, c * 9, ho * wo), 0.0, &mut out);
            assert_eq!(out, naive_conv(&input, c, h, w, &weight, cout, stride));
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w) = (2, 6, 5);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut cols = Vec::new();
        let (ho, wo) = im2col(&x, c, h, w, 2, &mut cols);
        let y: Vec<f64> = (0..c * 9 * ho * wo).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, 2, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn grid_is_sixteen_times_smaller() {
        let mut rng = rng_for(0, &[]);
        let p: DetectorParams<f32> = DetectorParams::init(&Arch { widths: [4, 4, 4, 4, 4] }, 3, &mut rng);
        let img = Array::zeros(&[3, 128, 96]);
        let pred = forward_image(&p, &img).unwrap();
        assert_eq!((pred.grid_h, pred.grid_w), (8, 6));
        assert_eq!(pred.logits.len(), 48 * 3);
        assert!(forward_image(&p, &Array::zeros(&[1, 32, 32])).is_err());
    }
}
