//! Random image transforms for contrastive views and finetuning.
//!
//! [`augment`] applies, in order: resized crop, horizontal flip, rotation by
//! a multiple of 90°, color jitter, Gaussian blur. Every random draw happens
//! unconditionally and in that order, so the output is a pure function of
//! the image, policy and RNG state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::Image;
use crate::error::{Error, Result};
use crate::nn::ImageShape;

/// Multiplicative jitter strengths; each factor is drawn from `[1-s, 1+s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub output_height: usize,
    pub output_width: usize,
    /// Crop area as a fraction of the image; `None` keeps the full frame.
    #[serde(default)]
    pub crop_scale: Option<[f64; 2]>,
    #[serde(default = "default_crop_ratio")]
    pub crop_ratio: [f64; 2],
    #[serde(default)]
    pub hflip_prob: f64,
    #[serde(default)]
    pub rotate90: bool,
    #[serde(default)]
    pub jitter: Option<ColorJitter>,
    #[serde(default)]
    pub blur_prob: f64,
    #[serde(default = "default_blur_sigma")]
    pub blur_sigma: [f64; 2],
}

fn default_crop_ratio() -> [f64; 2] {
    [3.0 / 4.0, 4.0 / 3.0]
}

fn default_blur_sigma() -> [f64; 2] {
    [0.1, 1.0]
}

impl AugmentationPolicy {
    /// Identity at the given size.
    pub fn none(height: usize, width: usize) -> Self {
        Self {
            output_height: height,
            output_width: width,
            crop_scale: None,
            crop_ratio: default_crop_ratio(),
            hflip_prob: 0.0,
            rotate90: false,
            jitter: None,
            blur_prob: 0.0,
            blur_sigma: default_blur_sigma(),
        }
    }

    /// Crop, flip, 90° rotations, jitter 0.4 and blur with p = 0.5.
    pub fn pretraining(height: usize, width: usize) -> Self {
        Self {
            crop_scale: Some([0.5, 1.0]),
            hflip_prob: 0.5,
            rotate90: true,
            jitter: Some(ColorJitter {
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
            }),
            blur_prob: 0.5,
            ..Self::none(height, width)
        }
    }

    /// [`Self::pretraining`] without flips and rotations, for encoders that
    /// see the image as a flat vector and cannot share weights across poses.
    pub fn pretraining_upright(height: usize, width: usize) -> Self {
        Self {
            hflip_prob: 0.0,
            rotate90: false,
            ..Self::pretraining(height, width)
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.output_height == 0 || self.output_width == 0 {
            return Err(Error::config(format!("{field}.output_height"), "output size must be positive"));
        }
        if let Some([lo, hi]) = self.crop_scale {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::config(format!("{field}.crop_scale"), "must satisfy 0 < lo <= hi <= 1"));
            }
        }
        let [rlo, rhi] = self.crop_ratio;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(Error::config(format!("{field}.crop_ratio"), "must satisfy 0 < lo <= hi"));
        }
        for (name, p) in [("hflip_prob", self.hflip_prob), ("blur_prob", self.blur_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{field}.{name}"), "must lie in [0, 1]"));
            }
        }
        let [slo, shi] = self.blur_sigma;
        if !(slo > 0.0 && slo <= shi) {
            return Err(Error::config(format!("{field}.blur_sigma"), "must satisfy 0 < lo <= hi"));
        }
        if let Some(j) = self.jitter {
            if [j.brightness, j.contrast, j.saturation].iter().any(|s| !(0.0..1.0).contains(s)) {
                return Err(Error::config(format!("{field}.jitter"), "strengths must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Axis-aligned source window in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

impl CropBox {
    pub fn full(shape: ImageShape) -> Self {
        Self {
            top: 0.0,
            left: 0.0,
            height: shape.height as f64,
            width: shape.width as f64,
        }
    }
}

/// Bilinear resample of `window` to `out_h x out_w`. Windows narrower than
/// one pixel are widened to one pixel and kept inside the image.
pub fn resized_crop(image: &Image, window: CropBox, out_h: usize, out_w: usize) -> Image {
    let shape = image.shape();
    let (h, w) = (shape.height as f64, shape.width as f64);
    let ch = window.height.clamp(1.0, h);
    let cw = window.width.clamp(1.0, w);
    let top = window.top.clamp(0.0, h - ch);
    let left = window.left.clamp(0.0, w - cw);
    let out_shape = ImageShape::new(out_h, out_w, shape.channels);
    let mut out = Image::filled(out_shape, 0.0);
    let (sy, sx) = (ch / out_h as f64, cw / out_w as f64);
    for oy in 0..out_h {
        let fy = (top + (oy as f64 + 0.5) * sy - 0.5).clamp(0.0, h - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(shape.height - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = (left + (ox as f64 + 0.5) * sx - 0.5).clamp(0.0, w - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(shape.width - 1);
            let tx = fx - x0 as f64;
            for c in 0..shape.channels {
                let top_row = image.get(y0, x0, c) * (1.0 - tx) + image.get(y0, x1, c) * tx;
                let bottom_row = image.get(y1, x0, c) * (1.0 - tx) + image.get(y1, x1, c) * tx;
                let idx = out.index(oy, ox, c);
                out.data_mut()[idx] = top_row * (1.0 - ty) + bottom_row * ty;
            }
        }
    }
    out
}

pub fn hflip(image: &Image) -> Image {
    let s = image.shape();
    let mut out = Image::filled(s, 0.0);
    for y in 0..s.height {
        for x in 0..s.width {
            for c in 0..s.channels {
                let idx = out.index(y, x, c);
                out.data_mut()[idx] = image.get(y, s.width - 1 - x, c);
            }
        }
    }
    out
}

/// Rotates counter-clockwise by `quarter_turns * 90°`.
pub fn rotate90(image: &Image, quarter_turns: usize) -> Image {
    let mut current = image.clone();
    for _ in 0..quarter_turns % 4 {
        let s = current.shape();
        let mut out = Image::filled(ImageShape::new(s.width, s.height, s.channels), 0.0);
        for y in 0..s.width {
            for x in 0..s.height {
                for c in 0..s.channels {
                    let idx = out.index(y, x, c);
                    out.data_mut()[idx] = current.get(x, s.width - 1 - y, c);
                }
            }
        }
        current = out;
    }
    current
}

fn luma(px: &[f64]) -> f64 {
    if px.len() == 3 {
        0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
    } else {
        px.iter().sum::<f64>() / px.len() as f64
    }
}

pub fn adjust_brightness(image: &mut Image, factor: f64) {
    image.data_mut().iter_mut().for_each(|v| *v *= factor);
    image.clamp_unit();
}

/// Blends each pixel with the image's mean luminance.
pub fn adjust_contrast(image: &mut Image, factor: f64) {
    let c = image.shape().channels;
    let n = image.data().len() / c;
    let mean = image.data().chunks(c).map(luma).sum::<f64>() / n as f64;
    image
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v - mean) * factor + mean);
    image.clamp_unit();
}

/// Blends each pixel with its own luminance. No-op for single-channel images.
pub fn adjust_saturation(image: &mut Image, factor: f64) {
    let c = image.shape().channels;
    if c < 2 {
        return;
    }
    for px in image.data_mut().chunks_mut(c) {
        let gray = luma(px);
        px.iter_mut().for_each(|v| *v = (*v - gray) * factor + gray);
    }
    image.clamp_unit();
}

/// Separable 3x3 Gaussian blur with edge replication.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let norm = 1.0 + 2.0 * side;
    let k = [side / norm, 1.0 / norm, side / norm];
    let s = image.shape();
    let mut tmp = Image::filled(s, 0.0);
    for y in 0..s.height {
        for x in 0..s.width {
            let xs = [x.saturating_sub(1), x, (x + 1).min(s.width - 1)];
            for c in 0..s.channels {
                let v: f64 = xs.iter().zip(&k).map(|(&xx, w)| w * image.get(y, xx, c)).sum();
                let idx = tmp.index(y, x, c);
                tmp.data_mut()[idx] = v;
            }
        }
    }
    let mut out = Image::filled(s, 0.0);
    for y in 0..s.height {
        let ys = [y.saturating_sub(1), y, (y + 1).min(s.height - 1)];
        for x in 0..s.width {
            for c in 0..s.channels {
                let v: f64 = ys.iter().zip(&k).map(|(&yy, w)| w * tmp.get(yy, x, c)).sum();
                let idx = out.index(y, x, c);
                out.data_mut()[idx] = v;
            }
        }
    }
    out.clamp_unit();
    out
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sample_crop(rng: &mut impl Rng, shape: ImageShape, scale: [f64; 2], ratio: [f64; 2]) -> CropBox {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let area = uniform(rng, scale) * h * w;
    let log_ratio = uniform(rng, [ratio[0].ln(), ratio[1].ln()]);
    let aspect = log_ratio.exp();
    let width = (area * aspect).sqrt().clamp(1.0, w);
    let height = (area / aspect).sqrt().clamp(1.0, h);
    let top = uniform(rng, [0.0, h - height]);
    let left = uniform(rng, [0.0, w - width]);
    CropBox {
        top,
        left,
        height,
        width,
    }
}

/// Applies the policy's random pipeline to `image`.
pub fn augment(image: &Image, policy: &AugmentationPolicy, rng: &mut impl Rng) -> Image {
    let shape = image.shape();
    let window = match policy.crop_scale {
        Some(scale) => sample_crop(rng, shape, scale, policy.crop_ratio),
        None => CropBox::full(shape),
    };
    let mut out = if policy.crop_scale.is_none()
        && shape.height == policy.output_height
        && shape.width == policy.output_width
    {
        image.clone()
    } else {
        resized_crop(image, window, policy.output_height, policy.output_width)
    };

    if rng.random::<f64>() < policy.hflip_prob {
        out = hflip(&out);
    }

    let turns = rng.random_range(0..4usize);
    if policy.rotate90 {
        // Non-square outputs only admit half turns.
        let turns = if policy.output_height == policy.output_width {
            turns
        } else {
            turns & 2
        };
        out = rotate90(&out, turns);
    }

    let factors: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
    if let Some(j) = policy.jitter {
        let scale = |u: f64, s: f64| 1.0 - s + 2.0 * s * u;
        adjust_brightness(&mut out, scale(factors[0], j.brightness));
        adjust_contrast(&mut out, scale(factors[1], j.contrast));
        adjust_saturation(&mut out, scale(factors[2], j.saturation));
    }

    let blur_draw = rng.random::<f64>();
    let sigma = uniform(rng, policy.blur_sigma);
    if blur_draw < policy.blur_prob {
        out = gaussian_blur(&out, sigma);
    }
    out.clamp_unit();
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> Image {
        let n = h * w * c;
        Image::new(
            ImageShape::new(h, w, c),
            (0..n).map(|i| i as f64 / n as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn four_quarter_turns_is_identity() {
        let img = ramp(5, 5, 3);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate90(&cur, 1);
        }
        assert_eq!(cur, img);
        let rect = ramp(3, 5, 2);
        assert_eq!(rotate90(&rect, 4), rect);
        assert_eq!(rotate90(&rect, 1).shape(), ImageShape::new(5, 3, 2));
    }

    #[test]
    fn double_flip_is_identity() {
        let img = ramp(4, 6, 3);
        assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn quarter_turn_matches_coordinate_rotation() {
        // Pixel-center coordinates (u, v) with v pointing down; a visual
        // counter-clockwise quarter turn maps (u, v) to (v, -u).
        let img = Image::new(ImageShape::new(2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let rotated = rotate90(&img, 1);
        for y in 0..2 {
            for x in 0..2 {
                let (u, v) = (x as f64 - 0.5, y as f64 - 0.5);
                let (u2, v2) = (v, -u);
                let (x2, y2) = ((u2 + 0.5) as usize, (v2 + 0.5) as usize);
                assert_eq!(rotated.get(y2, x2, 0), img.get(y, x, 0));
            }
        }
        assert_eq!(rotated.data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn full_window_resample_is_identity() {
        let img = ramp(6, 6, 3);
        let out = resized_crop(&img, CropBox::full(img.shape()), 6, 6);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_window_is_clamped() {
        let img = ramp(4, 4, 1);
        let window = CropBox {
            top: 10.0,
            left: -3.0,
            height: 0.01,
            width: 0.0,
        };
        let out = resized_crop(&img, window, 4, 4);
        assert_eq!(out.shape(), ImageShape::new(4, 4, 1));
        assert!(out.in_unit_range());
    }

    #[test]
    fn augment_respects_size_range_and_seed() {
        let img = ramp(16, 16, 3);
        let policy = AugmentationPolicy::pretraining(12, 12);
        let a = augment(&img, &policy, &mut ChaCha8Rng::seed_from_u64(5));
        let b = augment(&img, &policy, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_eq!(a.shape(), ImageShape::new(12, 12, 3));
        assert!(a.in_unit_range());
    }

    #[test]
    fn policy_validation_names_field() {
        let mut p = AugmentationPolicy::pretraining(8, 8);
        p.crop_scale = Some([0.0, 1.0]);
        match p.validate("augment") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "augment.crop_scale"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
