//! Raster types shared by every stage: images, binary masks and depth maps.

mod colormap;
mod io;

pub use colormap::{decode_depth_colormap, encode_depth_colormap, palette, RgbImage};
pub use io::{
    encode_pfm, encode_pgm, load_pfm, load_pgm, parse_pfm, parse_pgm, save_pfm, save_pgm,
};

use crate::error::{Error, Result};

/// Single-channel floating point raster stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image2D {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite pixel at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Panics on non-finite values to keep the finiteness invariant.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        assert!(value.is_finite(), "non-finite pixel value");
        self.data[y * self.width + x] = value;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::from_vec(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Standard 4-neighbour bilinear blend. Coordinates outside the pixel
    /// grid are rejected rather than clamped.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Result<f64> {
        let max_x = self.width as f64 - 1.0;
        let max_y = self.height as f64 - 1.0;
        if self.data.is_empty() || !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
            return Err(Error::Domain { x, y, max_x, max_y });
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        if fx == 0.0 && fy == 0.0 {
            return Ok(p00);
        }
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        Ok(top + (bottom - top) * fy)
    }
}

/// Binary raster with values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(format!(
                "{} bits for a {}x{} mask",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Builds a mask from ASCII art: `#`, `1` or `X` are foreground.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut mask = Self::new(width, height);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                if matches!(ch, '#' | '1' | 'X') {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    /// Foreground wherever `img > threshold`.
    pub fn threshold(img: &Image2D, threshold: f32) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            bits: img.data().iter().map(|&v| v > threshold).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds reads are background.
    #[inline]
    pub fn get_i(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.bits[y as usize * self.width + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground pixels in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub fn to_image(&self) -> Image2D {
        Image2D {
            width: self.width,
            height: self.height,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Depth raster in [0, 1] (0 = nearest to the sensor) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    image: Image2D,
    valid: BinaryMask,
}

impl DepthMap {
    pub fn new(image: Image2D, valid: BinaryMask) -> Result<Self> {
        if image.dims() != valid.dims() {
            return Err(Error::shape(format!(
                "depth image {:?} vs valid mask {:?}",
                image.dims(),
                valid.dims()
            )));
        }
        for (i, (&v, &ok)) in image.data().iter().zip(valid.bits()).enumerate() {
            if ok && !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidValue(format!(
                    "valid depth {v} at index {i} outside [0, 1]"
                )));
            }
        }
        Ok(Self { image, valid })
    }

    /// Every pixel with a value above `eps` is considered valid.
    pub fn from_image_positive(image: Image2D, eps: f32) -> Result<Self> {
        let valid = BinaryMask::threshold(&image, eps);
        Self::new(image, valid)
    }

    pub fn image(&self) -> &Image2D {
        &self.image
    }

    pub fn valid(&self) -> &BinaryMask {
        &self.valid
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid.get(x, y)
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.image.get(x, y)
    }
}


/// Millimetres per pixel laterally and per unit of normalised depth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalScale {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl PhysicalScale {
    /// 3 mm field of view across `width` pixels, 0.5 mm per unit depth.
    pub fn for_width(width: usize) -> Self {
        let s = 3.0 / width as f64;
        Self { sx: s, sy: s, sz: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sx", self.sx), ("sy", self.sy), ("sz", self.sz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("scale {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        [x * self.sx, y * self.sy, z * self.sz]
    }
}
