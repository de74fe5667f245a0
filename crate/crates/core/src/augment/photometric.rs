//! Pixel-value operations. None of these touch box coordinates.

use image::RgbImage;

#[inline]
fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_channels(img: &mut RgbImage, luts: &[[u8; 256]; 3]) {
    for p in img.pixels_mut() {
        for c in 0..3 {
            p.0[c] = luts[c][p.0[c] as usize];
        }
    }
}

fn histograms(img: &RgbImage) -> [[u32; 256]; 3] {
    let mut h = [[0u32; 256]; 3];
    for p in img.pixels() {
        for c in 0..3 {
            h[c][p.0[c] as usize] += 1;
        }
    }
    h
}

/// Stretch each channel to the full `[0, 255]` range.
pub fn autocontrast(img: &mut RgbImage) {
    let hist = histograms(img);
    let mut luts = [[0u8; 256]; 3];
    for c in 0..3 {
        let lo = hist[c].iter().position(|&n| n > 0).unwrap_or(0);
        let hi = hist[c].iter().rposition(|&n| n > 0).unwrap_or(255);
        for v in 0..256 {
            luts[c][v] = if hi > lo {
                clamp_u8((v as f64 - lo as f64) * 255.0 / (hi - lo) as f64)
            } else {
                v as u8
            };
        }
    }
    map_channels(img, &luts);
}

/// Per-channel histogram equalization.
pub fn equalize(img: &mut RgbImage) {
    let hist = histograms(img);
    let mut luts = [[0u8; 256]; 3];
    for c in 0..3 {
        let h = &hist[c];
        let last = h.iter().rposition(|&n| n > 0).map_or(0, |i| h[i]);
        let step = (h.iter().sum::<u32>() - last) / 255;
        let mut n = 0u32;
        for v in 0..256 {
            luts[c][v] = if step == 0 { v as u8 } else { ((n + step / 2) / step).min(255) as u8 };
            n += h[v];
        }
    }
    map_channels(img, &luts);
}

/// Invert every value at or above `threshold`.
pub fn solarize(img: &mut RgbImage, threshold: u8) {
    for p in img.pixels_mut() {
        for v in p.0.iter_mut() {
            if *v >= threshold {
                *v = 255 - *v;
            }
        }
    }
}

fn luma(p: [u8; 3]) -> f64 {
    (299.0 * p[0] as f64 + 587.0 * p[1] as f64 + 114.0 * p[2] as f64) / 1000.0
}

/// Saturation jitter: blend with the greyscale image.
pub fn color(img: &mut RgbImage, factor: f64) {
    for p in img.pixels_mut() {
        let l = luma(p.0).round();
        for v in p.0.iter_mut() {
            *v = clamp_u8(l + factor * (*v as f64 - l));
        }
    }
}

/// Blend with the mean grey level.
pub fn contrast(img: &mut RgbImage, factor: f64) {
    let n = (img.width() * img.height()).max(1) as f64;
    let mean = (img.pixels().map(|p| luma(p.0).round()).sum::<f64>() / n).round();
    for p in img.pixels_mut() {
        for v in p.0.iter_mut() {
            *v = clamp_u8(mean + factor * (*v as f64 - mean));
        }
    }
}

pub fn brightness(img: &mut RgbImage, factor: f64) {
    for p in img.pixels_mut() {
        for v in p.0.iter_mut() {
            *v = clamp_u8(factor * *v as f64);
        }
    }
}

/// Blend with a 3x3 smoothed copy (border pixels are left as is).
pub fn sharpness(img: &mut RgbImage, factor: f64) {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return;
    }
    let src = img.clone();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wgt = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                        acc += wgt * src.get_pixel(x + dx - 1, y + dy - 1).0[c] as f64;
                    }
                }
                let smooth = (acc / 13.0).round();
                let v = src.get_pixel(x, y).0[c] as f64;
                img.get_pixel_mut(x, y).0[c] = clamp_u8(smooth + factor * (v - smooth));
            }
        }
    }
}

/// Keep the top `bits` bits of every value.
pub fn posterize(img: &mut RgbImage, bits: u8) {
    let bits = bits.clamp(1, 8);
    let mask: u8 = !((1u16 << (8 - bits)) - 1) as u8;
    for p in img.pixels_mut() {
        for v in p.0.iter_mut() {
            *v &= mask;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn ramp() -> RgbImage {
        RgbImage::from_fn(16, 16, |x, y| Rgb([(40 + x * 4) as u8, (60 + y * 2) as u8, 100]))
    }

    #[test]
    fn unit_factors_are_identity() {
        let base = ramp();
        for f in [color as fn(&mut RgbImage, f64), contrast, brightness, sharpness] {
            let mut img = base.clone();
            f(&mut img, 1.0);
            assert_eq!(img, base);
        }
        let mut img = base.clone();
        posterize(&mut img, 8);
        assert_eq!(img, base);
    }

    #[test]
    fn autocontrast_stretches_range() {
        let mut img = ramp();
        autocontrast(&mut img);
        let reds: Vec<u8> = img.pixels().map(|p| p.0[0]).collect();
        assert_eq!(*reds.iter().min().unwrap(), 0);
        assert_eq!(*reds.iter().max().unwrap(), 255);
        // constant channel untouched
        assert!(img.pixels().all(|p| p.0[2] == 100));
    }

    #[test]
    fn solarize_and_posterize() {
        let mut img = RgbImage::from_pixel(2, 2, Rgb([200, 100, 255]));
        solarize(&mut img, 128);
        assert_eq!(img.get_pixel(0, 0), &Rgb([55, 100, 0]));
        posterize(&mut img, 4);
        assert_eq!(img.get_pixel(0, 0), &Rgb([48, 96, 0]));
    }

    #[test]
    fn equalize_spreads_histogram() {
        let mut img = RgbImage::from_fn(64, 64, |x, _| Rgb([(40 + (x % 16) * 4) as u8, 0, 0]));
        equalize(&mut img);
        let max = img.pixels().map(|p| p.0[0]).max().unwrap();
        assert!(max > 200);
    }
}
