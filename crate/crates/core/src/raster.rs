//! Raster containers and PNG / PPM / PGM file I/O.

use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// 8-bit RGB pixel grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParams(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidParams(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniformly filled image. Panics on a zero dimension.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn row(&self, y: usize) -> &[[u8; 3]] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Reads a PNG or binary PPM file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::bad_image(path, e))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.pixels().map(|p| p.0).collect();
        Self::new(w as usize, h as usize, pixels).map_err(|e| Error::bad_image(path, e))
    }

    /// Writes PNG, or binary PPM when the extension is `.ppm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in out.pixels_mut().zip(&self.pixels) {
            *dst = Rgb(*src);
        }
        out.save_with_format(path, format_for(path, ImageFormat::Png))
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

/// Binary raster marking body pixels (`true`), row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BodyMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BodyMask {
    /// All-background mask.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidParams(format!(
                "expected {} bits for {width}x{height}, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Builds a mask from rows of `'#'` (body) and anything else (background).
    /// Handy in tests; all rows must have equal length.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut bits = Vec::with_capacity(width * height);
        for r in rows {
            assert_eq!(r.chars().count(), width, "ragged ascii mask");
            bits.extend(r.chars().map(|c| c == '#'));
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Mask of the given size with `pred(x, y)` deciding membership.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut pred: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(pred(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn row(&self, y: usize) -> &[bool] {
        &self.bits[y * self.width..(y + 1) * self.width]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Number of positions where the two masks differ. Dimensions must match.
    pub fn disagreement(&self, other: &BodyMask) -> usize {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mask dimensions differ"
        );
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Sub-mask covering columns `x0..x0+w` and rows `y0..y0+h`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> BodyMask {
        assert!(
            x0 + w <= self.width && y0 + h <= self.height,
            "crop out of bounds"
        );
        let mut bits = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            bits.extend_from_slice(&self.row(y)[x0..x0 + w]);
        }
        BodyMask {
            width: w,
            height: h,
            bits,
        }
    }

    /// Mirror image about the vertical centre line.
    pub fn flip_horizontal(&self) -> BodyMask {
        BodyMask::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    /// Reads a PNG or binary PGM; gray values ≥ 128 are body.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::bad_image(path, e))?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        let bits = gray.pixels().map(|p| p.0[0] >= 128).collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            bits,
        })
    }

    /// Writes 0/255 grayscale PNG, or binary PGM when the extension is `.pgm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = GrayImage::new(self.width as u32, self.height as u32);
        for (dst, &on) in out.pixels_mut().zip(&self.bits) {
            *dst = Luma([if on { 255 } else { 0 }]);
        }
        out.save_with_format(path, format_for(path, ImageFormat::Png))
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

impl std::fmt::Debug for BodyMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BodyMask({}x{}, {} body px)",
            self.width,
            self.height,
            self.count()
        )?;
        if self.width * self.height <= 400 {
            for y in 0..self.height {
                f.write_str("\n")?;
                for &b in self.row(y) {
                    f.write_str(if b { "#" } else { "." })?;
                }
            }
        }
        Ok(())
    }
}

fn format_for(path: &Path, default: ImageFormat) -> ImageFormat {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("ppm") | Some("pgm") | Some("pnm") => ImageFormat::Pnm,
        _ => default,
    }
}
