use std::path::Path;

use crate::error::{Error, Result};

pub const FRAME_SIZE: usize = 224;

/// Interleaved `H x W x C` image with `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::Format(format!(
                "image {height}x{width}x{channels} with {} samples",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Image {
            height,
            width,
            channels: 3,
            data,
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * self.channels;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn is_prepared(&self) -> bool {
        self.height == FRAME_SIZE && self.width == FRAME_SIZE && self.channels == 3
    }

    /// Channel-major copy, as consumed by convolution blocks.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + p] = v;
            }
        }
        out
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Format(format!(
                "crop {h}x{w}+{y0}+{x0} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Image::new(h, w, self.channels, data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Decodes an image file into 8-bit-scale RGB samples (0..=255).
    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(f64::from).collect();
        Image::new(h as usize, w as usize, 3, data)
    }

    /// Encodes a `[0, 1]` image as 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Format("only RGB images can be saved".into()));
        }
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions");
        buf.save(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Bilinear resampling with half-pixel centers; edges are clamped.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    if img.height == out_h && img.width == out_w {
        return img.clone();
    }
    let ch = img.channels;
    let sy = img.height as f64 / out_h as f64;
    let sx = img.width as f64 / out_w as f64;
    let axis = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, sx, img.width)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for &(x0, x1, fx) in &cols {
            for c in 0..ch {
                let top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
                let bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Image {
        height: out_h,
        width: out_w,
        channels: ch,
        data,
    }
}

/// Resizes to 224x224 and divides by `full_scale` (255 for 8-bit sources).
pub fn resize_and_scale(img: &Image, full_scale: f64) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::Format(format!("expected 3 channels, got {}", img.channels)));
    }
    if !(full_scale > 0.0) {
        return Err(Error::Format(format!("full-scale constant {full_scale}")));
    }
    let mut out = resize_bilinear(img, FRAME_SIZE, FRAME_SIZE);
    if full_scale != 1.0 {
        out.data.iter_mut().for_each(|v| *v /= full_scale);
    }
    Ok(out)
}
