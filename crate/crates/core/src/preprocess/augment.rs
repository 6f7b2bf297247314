//! Photometric jitter for training frames. Geometry is never altered, so
//! there are no flips.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;

/// Maximum jitter magnitudes. Each call draws one factor per jitter uniformly
/// from `[-delta, delta]`; hue is a fraction of the full color circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub brightness: f64,
    pub saturation: f64,
    pub hue: f64,
    pub contrast: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            brightness: 0.1,
            saturation: 0.1,
            hue: 0.02,
            contrast: 0.1,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn none() -> Self {
        AugmentationConfig {
            brightness: 0.0,
            saturation: 0.0,
            hue: 0.0,
            contrast: 0.0,
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.brightness == 0.0 && self.saturation == 0.0 && self.hue == 0.0 && self.contrast == 0.0
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> Option<f64> {
    (delta > 0.0).then(|| rng.random_range(-delta..=delta))
}

fn clip(img: &mut Image) {
    img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// Applies brightness, saturation, hue, then contrast jitter; clips after each.
/// A zero delta skips its jitter entirely.
pub fn augment<R: Rng + ?Sized>(image: &Image, config: &AugmentationConfig, rng: &mut R) -> Image {
    let mut img = image.clone();
    if let Some(d) = draw(rng, config.brightness) {
        img.data.iter_mut().for_each(|v| *v += d);
        clip(&mut img);
    }
    if let Some(s) = draw(rng, config.saturation) {
        for px in img.data.chunks_exact_mut(3) {
            let gray = luma(px);
            px.iter_mut().for_each(|v| *v = gray + (*v - gray) * (1.0 + s));
        }
        clip(&mut img);
    }
    if let Some(h) = draw(rng, config.hue) {
        for px in img.data.chunks_exact_mut(3) {
            let (hue, sat, val) = rgb_to_hsv([px[0], px[1], px[2]]);
            let rgb = hsv_to_rgb((hue + h).rem_euclid(1.0), sat, val);
            px.copy_from_slice(&rgb);
        }
        clip(&mut img);
    }
    if let Some(c) = draw(rng, config.contrast) {
        let mean = img.data.chunks_exact(3).map(luma).sum::<f64>() / (img.height * img.width) as f64;
        img.data.iter_mut().for_each(|v| *v = mean + (*v - mean) * (1.0 + c));
        clip(&mut img);
    }
    img
}

fn luma(px: &[f64]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let sector = h6.floor() as i64 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
