//! Planar pixel arrays and the deterministic bilinear resize used to
//! build global and local sub-images.

use crate::error::{Error, Result};

/// Dense image with planar channel layout: `data[c * h * w + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Image> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Input(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Input(format!(
                "pixel buffer length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Image {
        Image::new(channels, height, width, vec![0.0; channels * height * width])
            .expect("positive dimensions")
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.height * self.width + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[c * self.height * self.width + y * self.width + x] = value;
    }

    /// Bilinear resample with half-pixel-center sampling: source
    /// coordinate = (dest + 0.5) * scale - 0.5, clamped to the image.
    /// Resizing to the source dimensions reproduces the input exactly.
    pub fn resize_bilinear(&self, out_height: usize, out_width: usize) -> Image {
        if out_height == self.height && out_width == self.width {
            return self.clone();
        }
        let mut out = Image::zeros(self.channels, out_height, out_width);
        let scale_y = self.height as f64 / out_height as f64;
        let scale_x = self.width as f64 / out_width as f64;
        for c in 0..self.channels {
            for oy in 0..out_height {
                let sy = ((oy as f64 + 0.5) * scale_y - 0.5).max(0.0);
                let y0 = (sy.floor() as usize).min(self.height - 1);
                let y1 = (y0 + 1).min(self.height - 1);
                let fy = sy - y0 as f64;
                for ox in 0..out_width {
                    let sx = ((ox as f64 + 0.5) * scale_x - 0.5).max(0.0);
                    let x0 = (sx.floor() as usize).min(self.width - 1);
                    let x1 = (x0 + 1).min(self.width - 1);
                    let fx = sx - x0 as f64;
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out.set(c, oy, ox, top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        out
    }

    /// Exact pixel copy of a rectangular window.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Input(format!(
                "crop [{top}+{height}, {left}+{width}] exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Image::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    out.set(c, y, x, self.get(c, top + y, left + x));
                }
            }
        }
        Ok(out)
    }
}
