//! Grayscale rasters and the pixel operations used for glyph preprocessing
//! and word composition.
//!
//! Intensities are reals in `[0, 1]` with `1.0` = white paper and `0.0` =
//! black ink. Conversion to 8-bit happens only at PNG boundaries.

use std::path::Path;

use thiserror::Error;

/// Default whiteness cutoff: a pixel is ink iff its intensity is below it.
pub const DEFAULT_INK_THRESHOLD: f64 = 0.98;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("raster dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("intensity {value} at index {index} outside [0, 1]")]
    IntensityRange { index: usize, value: f64 },
    #[error("no ink pixel below threshold {threshold}")]
    EmptyInk { threshold: f64 },
    #[error("height mismatch: left {left}, right {right}")]
    HeightMismatch { left: usize, right: usize },
    #[error("overlap {overlap} must satisfy 0 < overlap < min({left_width}, {right_width})")]
    OverlapTooLarge {
        overlap: usize,
        left_width: usize,
        right_width: usize,
    },
    #[error("ink threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
    #[error("crop rectangle ({x},{y},{w},{h}) exceeds {width}x{height} raster")]
    CropOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("failed to read {path}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write {path}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Row-major grayscale raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(ImagingError::BufferSize {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImagingError::IntensityRange { index, value });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        check_dims(width, height)?;
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Intensity at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Copies the sub-rectangle with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        check_dims(w, h)?;
        if x + w > self.width || y + h > self.height {
            return Err(ImagingError::CropOutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            pixels.extend_from_slice(&self.row(row)[x..x + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            pixels,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| ImagingError::Read {
            path: path.display().to_string(),
            source,
        })?;
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let pixels = rgb
                .pixels()
                .map(|p| p.0.map(|c| f64::from(c) / 255.0))
                .collect();
            to_grayscale(&RgbRaster::new(w as usize, h as usize, pixels)?)
        } else {
            let luma = img.to_luma8();
            let (w, h) = luma.dimensions();
            let pixels = luma.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
            Self::new(w as usize, h as usize, pixels)
        }
    }

    /// Writes an 8-bit grayscale PNG (`byte = round(255 * intensity)`).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| ImagingError::Write {
                path: path.display().to_string(),
                source,
            })
    }
}

/// Three-channel raster with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(ImagingError::BufferSize {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Whiteness cutoff for [`tight_crop`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InkThreshold(f64);

impl InkThreshold {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(ImagingError::InvalidThreshold(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_ink(self, intensity: f64) -> bool {
        intensity < self.0
    }
}

impl Default for InkThreshold {
    fn default() -> Self {
        Self(DEFAULT_INK_THRESHOLD)
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        Err(ImagingError::ZeroDimension { width, height })
    } else {
        Ok(())
    }
}

/// Luminance conversion `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(rgb: &RgbRaster) -> Result<GrayRaster> {
    check_dims(rgb.width, rgb.height)?;
    let pixels = rgb
        .pixels
        .iter()
        .map(|&[r, g, b]| {
            // the weights sum to 1 only up to rounding; keep neutral pixels exact
            if r == g && g == b {
                r
            } else {
                (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
            }
        })
        .collect();
    GrayRaster::new(rgb.width, rgb.height, pixels)
}

/// Crops to the minimal rectangle containing every ink pixel.
///
/// Columns are scanned inward from the left and right edges and rows from
/// the top and bottom edges until an ink pixel is met.
pub fn tight_crop(img: &GrayRaster, thr: InkThreshold) -> Result<GrayRaster> {
    let col_has_ink = |x: usize| (0..img.height).any(|y| thr.is_ink(img.get(x, y)));
    let row_has_ink = |y: usize| img.row(y).iter().any(|&v| thr.is_ink(v));

    let empty = || ImagingError::EmptyInk {
        threshold: thr.value(),
    };
    let left = (0..img.width).find(|&x| col_has_ink(x)).ok_or_else(empty)?;
    let right = (0..img.width).rev().find(|&x| col_has_ink(x)).ok_or_else(empty)?;
    let top = (0..img.height).find(|&y| row_has_ink(y)).ok_or_else(empty)?;
    let bottom = (0..img.height).rev().find(|&y| row_has_ink(y)).ok_or_else(empty)?;

    img.crop(left, top, right - left + 1, bottom - top + 1)
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize(img: &GrayRaster, out_w: usize, out_h: usize) -> Result<GrayRaster> {
    check_dims(out_w, out_h)?;
    let xs = sample_positions(img.width, out_w);
    let ys = sample_positions(img.height, out_h);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (img.row(y0), img.row(y1));
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            pixels.push((top + (bottom - top) * fy).clamp(0.0, 1.0));
        }
    }
    GrayRaster::new(out_w, out_h, pixels)
}

/// For each output coordinate: the two source neighbours and the weight of
/// the second one.
fn sample_positions(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Places `right` immediately after `left`.
pub fn hjoin(left: &GrayRaster, right: &GrayRaster) -> Result<GrayRaster> {
    if left.height != right.height {
        return Err(ImagingError::HeightMismatch {
            left: left.height,
            right: right.height,
        });
    }
    let width = left.width + right.width;
    let mut pixels = Vec::with_capacity(width * left.height);
    for y in 0..left.height {
        pixels.extend_from_slice(left.row(y));
        pixels.extend_from_slice(right.row(y));
    }
    Ok(GrayRaster {
        width,
        height: left.height,
        pixels,
    })
}

/// Joins with the first `overlap` columns of `right` laid over the last
/// `overlap` columns of `left`; inside that band the darker pixel wins.
pub fn hjoin_overlap(left: &GrayRaster, right: &GrayRaster, overlap: usize) -> Result<GrayRaster> {
    if left.height != right.height {
        return Err(ImagingError::HeightMismatch {
            left: left.height,
            right: right.height,
        });
    }
    if overlap == 0 || overlap >= left.width.min(right.width) {
        return Err(ImagingError::OverlapTooLarge {
            overlap,
            left_width: left.width,
            right_width: right.width,
        });
    }
    let keep = left.width - overlap;
    let width = left.width + right.width - overlap;
    let mut pixels = Vec::with_capacity(width * left.height);
    for y in 0..left.height {
        let (l, r) = (left.row(y), right.row(y));
        pixels.extend_from_slice(&l[..keep]);
        pixels.extend(l[keep..].iter().zip(&r[..overlap]).map(|(a, b)| a.min(*b)));
        pixels.extend_from_slice(&r[overlap..]);
    }
    Ok(GrayRaster {
        width,
        height: left.height,
        pixels,
    })
}
