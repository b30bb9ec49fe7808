//! Float rasters with interleaved channels.
//!
//! Continuous image coordinates place pixel `(i, j)` over the square
//! `[i, i+1) x [j, j+1)`, so its center sits at `(i + 0.5, j + 0.5)`.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{io_err, Result, TtcError};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(TtcError::Shape(format!(
                "{}x{}x{} raster needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Bilinear sample at continuous coordinates with edge clamping.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f32 {
        let (x0, x1, fx) = clamp_taps(x - 0.5, self.width);
        let (y0, y1, fy) = clamp_taps(y - 0.5, self.height);
        let a = self.get(x0, y0, c) as f64;
        let b = self.get(x1, y0, c) as f64;
        let d = self.get(x0, y1, c) as f64;
        let e = self.get(x1, y1, c) as f64;
        let top = a + (b - a) * fx;
        let bot = d + (e - d) * fx;
        (top + (bot - top) * fy) as f32
    }

    /// Channel-averaged single-channel copy.
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let inv = 1.0 / self.channels as f32;
        let data = self.data.chunks_exact(self.channels).map(|p| p.iter().sum::<f32>() * inv).collect();
        Raster { width: self.width, height: self.height, channels: 1, data }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// `v -> clamp(gain * v + bias, 0, 1)`.
    pub fn apply_gain_bias(&mut self, gain: f32, bias: f32) {
        for v in &mut self.data {
            *v = (gain * *v + bias).clamp(0.0, 1.0);
        }
    }

    /// Writes an 8-bit RGB PNG. Single-channel rasters are replicated.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                let p = self.pixel(x as usize, y as usize);
                match self.channels {
                    1 => Rgb([to_u8(p[0]); 3]),
                    _ => Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])]),
                }
            });
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
        std::fs::write(path, bytes).map_err(io_err(path))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Raster> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Raster::from_vec(w as usize, h as usize, 3, data)
    }

    /// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
}

/// Neighbouring taps and fractional weight for an index-space coordinate,
/// clamped to `[0, len - 1]`.
#[inline]
pub(crate) fn clamp_taps(u: f64, len: usize) -> (usize, usize, f64) {
    let max = (len - 1) as f64;
    let u = u.clamp(0.0, max);
    let i0 = u.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, u - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_at_pixel_centers_is_exact() {
        let r = Raster::from_fn(4, 3, 2, |x, y, c| (x * 10 + y * 100 + c) as f32);
        for y in 0..3 {
            for x in 0..4 {
                for c in 0..2 {
                    assert_eq!(r.sample(x as f64 + 0.5, y as f64 + 0.5, c), r.get(x, y, c));
                }
            }
        }
    }

    #[test]
    fn sample_interpolates_and_clamps() {
        let r = Raster::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert!((r.sample(1.0, 0.5, 0) - 0.5).abs() < 1e-7);
        assert_eq!(r.sample(-5.0, 0.5, 0), 0.0);
        assert_eq!(r.sample(9.0, 0.5, 0), 1.0);
    }

    #[test]
    fn gain_bias_clamps() {
        let mut r = Raster::from_vec(3, 1, 1, vec![0.2, 0.5, 0.9]).unwrap();
        r.apply_gain_bias(1.2, 0.0);
        assert!((r.get(0, 0, 0) - 0.24).abs() < 1e-6);
        assert!((r.get(1, 0, 0) - 0.6).abs() < 1e-6);
        assert_eq!(r.get(2, 0, 0), 1.0);
    }

    #[test]
    fn png_round_trip_matches_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let mut r = Raster::from_fn(5, 4, 3, |x, y, c| ((x + 2 * y + c) % 7) as f32 / 6.3);
        r.save_png(&path).unwrap();
        let back = Raster::load_png(&path).unwrap();
        r.quantize_u8();
        assert_eq!(back, r);
    }
}
