//! Dense raster image: channels x height x width, f32 values in [0, 1].

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::input(format!(
                "image buffer length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// One channel as a contiguous slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let hw = self.height * self.width;
        &mut self.data[c * hw..(c + 1) * hw]
    }

    /// Clamp every value into [0, 1] in place.
    pub fn clip01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every pixel of every channel holds the same value.
    pub fn is_constant(&self) -> bool {
        match self.data.first() {
            Some(&v0) => self.data.iter().all(|&v| v == v0),
            None => true,
        }
    }

    /// Luminance plane (Rec. 601 weights for 3-channel input, plain mean otherwise).
    pub fn luminance(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0f32; hw];
        if self.channels == 3 {
            let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
            for i in 0..hw {
                out[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
            }
        } else {
            for c in 0..self.channels {
                let p = self.plane(c);
                for i in 0..hw {
                    out[i] += p[i] / self.channels as f32;
                }
            }
        }
        out
    }

    /// Axis-aligned crop, top-left anchor (y0, x0), size (h, w).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::input("crop window exceeds image bounds"));
        }
        let mut out = Image::new(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        Ok(out)
    }

    /// Paste `patch` at top-left anchor (y0, x0).
    pub fn paste(&mut self, patch: &Image, y0: usize, x0: usize) -> Result<()> {
        if patch.channels != self.channels
            || y0 + patch.height > self.height
            || x0 + patch.width > self.width
        {
            return Err(Error::input("paste window exceeds image bounds"));
        }
        for c in 0..self.channels {
            for y in 0..patch.height {
                for x in 0..patch.width {
                    self.set(c, y0 + y, x0 + x, patch.get(c, y, x));
                }
            }
        }
        Ok(())
    }

    /// Quantize to 8-bit levels in place, so PNG round-trips are bit-exact.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            *v = q as f32 / 255.0;
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::input("png save expects 3 channels"));
        }
        let mut buf = vec![0u8; self.height * self.width * 3];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    buf[(y * self.width + x) * 3 + c] =
                        (self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("raw buffer size matches dimensions");
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(3, h, w);
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x as u32, y as u32);
                for c in 0..3 {
                    out.set(c, y, x, p.0[c] as f32 / 255.0);
                }
            }
        }
        Ok(out)
    }
}

/// 8-bit grayscale PNG of a [0,1] grid; used for saliency previews.
pub fn save_gray_png(values: &[f32], height: usize, width: usize, path: &Path) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::input("grid length does not match dimensions"));
    }
    let buf: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, buf)
        .expect("raw buffer size matches dimensions");
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_paste_roundtrip() {
        let mut img = Image::new(3, 8, 8);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 97) as f32 / 97.0;
        }
        let crop = img.crop(2, 3, 4, 4).unwrap();
        let mut img2 = img.clone();
        img2.paste(&crop, 2, 3).unwrap();
        assert_eq!(img, img2);
    }

    #[test]
    fn png_roundtrip_bit_exact_after_quantize() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(3, 16, 16);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 31) % 256) as f32 / 255.0;
        }
        img.quantize_u8();
        let path = dir.path().join("x.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(img, back);
    }
}
