//! Floating-point RGB images and PNG conversion.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

use crate::mesh::Vec3;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image has zero size")]
    Empty,
    #[error("png codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("buffer holds {got} pixels, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

/// Row-major RGB image with channels nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    pixels: Vec<Vec3>,
}

impl ColorImage {
    pub fn filled(width: usize, height: usize, color: Vec3) -> Self {
        Self { width, height, pixels: vec![color; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Vec3>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::SizeMismatch { expected: width * height, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Vec3) -> Self {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[Vec3] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Vec3] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Vec3) {
        self.pixels[y * self.width + x] = c;
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centers at +0.5), clamped at the border.
    pub fn sample_bilinear(&self, px: f64, py: f64) -> Vec3 {
        let x = (px - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (py - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (x - x0 as f64, y - y0 as f64);
        let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
        let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    fn to_rgb8(&self) -> RgbImage {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let c = self.get(x as usize, y as usize);
            image::Rgb([q(c.x), q(c.y), q(c.z)])
        })
    }

    fn from_rgb8(img: &RgbImage) -> Self {
        let f = |v: u8| v as f64 / 255.0;
        Self::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            let p = img.get_pixel(x as u32, y as u32);
            Vec3::new(f(p[0]), f(p[1]), f(p[2]))
        })
    }

    /// 8-bit PNG encoding; channels are clamped to [0, 1].
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        if self.is_empty() {
            return Err(ImageError::Empty);
        }
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

/// Writes a single-channel buffer as 8-bit grayscale PNG, mapping `[lo, hi]` to `[0, 255]`.
pub fn save_gray_png(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64], lo: f64, hi: f64) -> Result<(), ImageError> {
    if values.len() != width * height {
        return Err(ImageError::SizeMismatch { expected: width * height, got: values.len() });
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = image::GrayImage::from_fn(width as u32, height as u32, |x, y| {
        let v = values[y as usize * width + x as usize];
        let t = if v.is_finite() { ((v - lo) / span).clamp(0.0, 1.0) } else { 1.0 };
        image::Luma([(t * 255.0).round() as u8])
    });
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}
