//! Grayscale raster and binary ink-mask primitives shared by the render,
//! augment, curate, and metrics stages.
//!
//! Intensity convention: 0 = black ink, 255 = white paper.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {0}x{1}")]
    ZeroDimension(u32, u32),
    #[error("pixel buffer length {got} does not match {width}x{height}")]
    LengthMismatch { got: usize, width: u32, height: u32 },
    #[error("failed to read {path}")]
    Read {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write {path}")]
    Write {
        path: String,
        source: image::ImageError,
    },
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension(width, height));
        }
        let expect = width as usize * height as usize;
        if pixels.len() != expect {
            return Err(ImageError::LengthMismatch {
                got: pixels.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniform image filled with `intensity`.
    pub fn filled(width: u32, height: u32, intensity: u8) -> Self {
        Self::new(
            width,
            height,
            vec![intensity; width as usize * height as usize],
        )
        .expect("positive dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.pixels.chunks_exact(self.width as usize)
    }

    /// Bounding box of pixels darker than `threshold` as (x0, y0, x1, y1),
    /// inclusive. `None` when the image has no such pixel.
    pub fn ink_bbox(&self, threshold: u8) -> Option<(u32, u32, u32, u32)> {
        let mut x0 = u32::MAX;
        let mut y0 = u32::MAX;
        let mut x1 = 0u32;
        let mut y1 = 0u32;
        let mut seen = false;
        for (y, row) in self.rows().enumerate() {
            for (x, &p) in row.iter().enumerate() {
                if p < threshold {
                    seen = true;
                    x0 = x0.min(x as u32);
                    y0 = y0.min(y as u32);
                    x1 = x1.max(x as u32);
                    y1 = y1.max(y as u32);
                }
            }
        }
        seen.then_some((x0, y0, x1, y1))
    }

    /// Crop to the ink bounding box plus `margin` pixels of white border.
    /// Returns `None` for blank images.
    pub fn crop_to_ink(&self, threshold: u8, margin: u32) -> Option<GrayImage> {
        let (x0, y0, x1, y1) = self.ink_bbox(threshold)?;
        let w = x1 - x0 + 1 + 2 * margin;
        let h = y1 - y0 + 1 + 2 * margin;
        let mut out = GrayImage::filled(w, h, 255);
        for y in y0..=y1 {
            for x in x0..=x1 {
                out.set(x - x0 + margin, y - y0 + margin, self.get(x, y));
            }
        }
        Some(out)
    }

    /// Nearest-neighbour resample to `width` x `height`.
    pub fn resample(&self, width: u32, height: u32) -> GrayImage {
        let mut out = GrayImage::filled(width, height, 255);
        for y in 0..height {
            let sy = (y as u64 * self.height as u64 / height as u64).min(self.height as u64 - 1);
            for x in 0..width {
                let sx = (x as u64 * self.width as u64 / width as u64).min(self.width as u64 - 1);
                out.set(x, y, self.get(sx as u32, sy as u32));
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path)
            .map_err(|source| ImageError::Read {
                path: path.display().to_string(),
                source,
            })?
            .into_luma8();
        GrayImage::new(img.width(), img.height(), img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| ImageError::Write {
                path: path.display().to_string(),
                source,
            })
    }

    /// PNG-encode into memory. Used for content hashing and byte-level
    /// determinism checks.
    pub fn png_bytes(&self) -> Vec<u8> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction");
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)
            .expect("in-memory png encode");
        buf.into_inner()
    }
}

/// Binary ink mask (true = ink), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: u32,
    height: u32,
    mask: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32, mask: Vec<bool>) -> Result<Self, ImageError> {
        let expect = width as usize * height as usize;
        if mask.len() != expect {
            return Err(ImageError::LengthMismatch {
                got: mask.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            mask: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.mask[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.mask[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count_ink(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}
