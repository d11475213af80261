//! Single-channel float rasters and the resampling used across the pipeline.

use std::path::Path;

use image::{ImageBuffer, Luma};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster buffer has {got} values, expected {height}x{width}")]
    SizeMismatch { height: usize, width: usize, got: usize },
    #[error("cannot read image {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("cannot write image {path}: {reason}")]
    Write { path: String, reason: String },
}

/// Row-major single-channel `f32` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Undecoded integer pixels straight from an 8- or 16-bit PNG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntRaster {
    pub height: usize,
    pub width: usize,
    pub bit_depth: u8,
    pub data: Vec<u16>,
}

impl IntRaster {
    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let unreadable = |reason: String| RasterError::Unreadable {
            path: path.display().to_string(),
            reason,
        };
        let img = image::open(path).map_err(|e| unreadable(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(b) => Ok(Self {
                height: h,
                width: w,
                bit_depth: 8,
                data: b.into_raw().into_iter().map(u16::from).collect(),
            }),
            image::DynamicImage::ImageLuma16(b) => Ok(Self {
                height: h,
                width: w,
                bit_depth: 16,
                data: b.into_raw(),
            }),
            image::DynamicImage::ImageLumaA8(b) => Ok(Self {
                height: h,
                width: w,
                bit_depth: 8,
                data: b.pixels().map(|p| u16::from(p.0[0])).collect(),
            }),
            image::DynamicImage::ImageLumaA16(b) => Ok(Self {
                height: h,
                width: w,
                bit_depth: 16,
                data: b.pixels().map(|p| p.0[0]).collect(),
            }),
            other => Err(unreadable(format!(
                "expected a single-channel image, found {:?}",
                other.color()
            ))),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let fail = |e: image::ImageError| RasterError::Write {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        if self.bit_depth == 8 {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
                self.width as u32,
                self.height as u32,
                self.data.iter().map(|&v| v.min(255) as u8).collect(),
            )
            .expect("buffer size matches dimensions");
            buf.save(path).map_err(fail)
        } else {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                    .expect("buffer size matches dimensions");
            buf.save(path).map_err(fail)
        }
    }
}

/// Reads only the PNG header; returns (height, width).
pub fn image_dimensions(path: &Path) -> Result<(usize, usize), RasterError> {
    image::image_dimensions(path)
        .map(|(w, h)| (h as usize, w as usize))
        .map_err(|e| RasterError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
}

impl Raster {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if data.len() != height * width {
            return Err(RasterError::SizeMismatch {
                height,
                width,
                got: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            out.data[r * self.width..(r + 1) * self.width].reverse();
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let data = self.data.chunks(self.width.max(1)).rev().flatten().copied().collect();
        Self { height: self.height, width: self.width, data }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        assert!(top + height <= self.height && left + width <= self.width, "crop out of bounds");
        let mut data = Vec::with_capacity(height * width);
        for r in top..top + height {
            data.extend_from_slice(&self.data[r * self.width + left..r * self.width + left + width]);
        }
        Self { height, width, data }
    }

    /// Area-averaging when shrinking an axis, bilinear when growing it.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        let wy = if height < self.height {
            area_weights(self.height, height)
        } else {
            bilinear_weights(self.height, height)
        };
        let wx = if width < self.width {
            area_weights(self.width, width)
        } else {
            bilinear_weights(self.width, width)
        };
        self.resample(&wy, &wx)
    }

    /// Pure area averaging (box filter with fractional coverage).
    pub fn resize_area(&self, height: usize, width: usize) -> Self {
        self.resample(&area_weights(self.height, height), &area_weights(self.width, width))
    }

    /// Bilinear interpolation with half-pixel centers and no antialiasing.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        self.resample(
            &bilinear_weights(self.height, height),
            &bilinear_weights(self.width, width),
        )
    }

    fn resample(&self, wy: &[Vec<(usize, f32)>], wx: &[Vec<(usize, f32)>]) -> Self {
        let (h, w) = (wy.len(), wx.len());
        // rows first
        let mut tmp = vec![0.0f32; h * self.width];
        for (i, taps) in wy.iter().enumerate() {
            let dst = &mut tmp[i * self.width..(i + 1) * self.width];
            for &(k, wt) in taps {
                let src = &self.data[k * self.width..(k + 1) * self.width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
        let mut data = vec![0.0f32; h * w];
        for r in 0..h {
            let src = &tmp[r * self.width..(r + 1) * self.width];
            for (j, taps) in wx.iter().enumerate() {
                data[r * w + j] = taps.iter().map(|&(k, wt)| wt * src[k]).sum();
            }
        }
        Self { height: h, width: w, data }
    }

    /// Rotation about the image center, bilinear sampling, zero fill.
    pub fn rotate(&self, degrees: f32) -> Self {
        if degrees == 0.0 {
            return self.clone();
        }
        let (s, c) = degrees.to_radians().sin_cos();
        let cy = (self.height as f32 - 1.0) / 2.0;
        let cx = (self.width as f32 - 1.0) / 2.0;
        let mut out = Self::zeros(self.height, self.width);
        for r in 0..self.height {
            for q in 0..self.width {
                let (dy, dx) = (r as f32 - cy, q as f32 - cx);
                let sy = c * dy - s * dx + cy;
                let sx = s * dy + c * dx + cx;
                out.data[r * self.width + q] = self.sample_bilinear_zero(sy, sx);
            }
        }
        out
    }

    fn sample_bilinear_zero(&self, y: f32, x: f32) -> f32 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let px = |yy: f32, xx: f32| -> f32 {
            if yy < 0.0 || xx < 0.0 || yy >= self.height as f32 || xx >= self.width as f32 {
                0.0
            } else {
                self.get(yy as usize, xx as usize)
            }
        };
        px(y0, x0) * (1.0 - fy) * (1.0 - fx)
            + px(y0, x0 + 1.0) * (1.0 - fy) * fx
            + px(y0 + 1.0, x0) * fy * (1.0 - fx)
            + px(y0 + 1.0, x0 + 1.0) * fy * fx
    }

    /// `v' = (v - mean) * contrast + mean + brightness`, clamped to [0, 1].
    pub fn adjust(&self, brightness: f32, contrast: f32) -> Self {
        let mean = self.mean();
        let data = self
            .data
            .iter()
            .map(|&v| ((v - mean) * contrast + mean + brightness).clamp(0.0, 1.0))
            .collect();
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    /// Saves as a 16-bit grayscale PNG (values clamped to [0, 1]).
    pub fn save_png16(&self, path: &Path) -> Result<(), RasterError> {
        IntRaster {
            height: self.height,
            width: self.width,
            bit_depth: 16,
            data: self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                .collect(),
        }
        .save_png(path)
    }
}

/// Box-filter taps for shrinking `src` samples to `dst`.
pub(crate) fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            let mut taps = Vec::new();
            let mut k = lo.floor() as usize;
            while (k as f64) < hi && k < src {
                let overlap = (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((k, (overlap / scale) as f32));
                }
                k += 1;
            }
            taps
        })
        .collect()
}

/// Two-tap bilinear weights, half-pixel centers, edge clamped.
pub(crate) fn bilinear_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    bilinear_taps(src, dst)
        .into_iter()
        .map(|(i0, i1, w1)| {
            if i0 == i1 || w1 == 0.0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - w1), (i1, w1)]
            }
        })
        .collect()
}

/// `(lower index, upper index, weight of upper)` per output sample.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (x.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let w1 = if i0 == i1 { 0.0 } else { (x - i0 as f64) as f32 };
            (i0, i1, w1)
        })
        .collect()
}
