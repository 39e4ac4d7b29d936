//! Depth colour palette: red (near, d = 0) through green (d = 0.5) to blue
//! (far, d = 1), piecewise linear in each half. Invalid pixels are black.

use super::{BinaryMask, DepthMap, Image2D};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

/// Palette colour of a depth value, clamped to [0, 1].
pub fn palette(d: f32) -> [u8; 3] {
    let d = d.clamp(0.0, 1.0) as f64;
    let q = |v: f64| (v * 255.0).round() as u8;
    if d <= 0.5 {
        [q(1.0 - 2.0 * d), q(2.0 * d), 0]
    } else {
        [0, q(2.0 - 2.0 * d), q(2.0 * d - 1.0)]
    }
}

fn inverse_palette(c: [u8; 3]) -> f32 {
    let [r, g, b] = c.map(|v| v as f64);
    let d = if r >= b {
        (g - r + 255.0) / 1020.0
    } else {
        (b - g + 765.0) / 1020.0
    };
    d.clamp(0.0, 1.0) as f32
}

pub fn encode_depth_colormap(depth: &DepthMap) -> RgbImage {
    let (width, height) = depth.dims();
    let data = depth
        .image()
        .data()
        .iter()
        .zip(depth.valid().bits())
        .map(|(&d, &ok)| if ok { palette(d) } else { [0, 0, 0] })
        .collect();
    RgbImage {
        width,
        height,
        data,
    }
}

pub fn decode_depth_colormap(rgb: &RgbImage) -> Result<DepthMap> {
    let valid: Vec<bool> = rgb.data.iter().map(|&c| c != [0, 0, 0]).collect();
    let values = rgb
        .data
        .iter()
        .zip(&valid)
        .map(|(&c, &ok)| if ok { inverse_palette(c) } else { 0.0 })
        .collect();
    DepthMap::new(
        Image2D::from_vec(rgb.width, rgb.height, values)?,
        BinaryMask::from_bits(rgb.width, rgb.height, valid)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn palette_endpoints_and_midpoint() {
        assert_eq!(palette(0.0), [255, 0, 0]);
        assert_eq!(palette(1.0), [0, 0, 255]);
        assert_eq!(palette(0.5), [0, 255, 0]);
        // quarter points blend the neighbouring primaries evenly
        assert_eq!(palette(0.25), [128, 128, 0]);
        assert_eq!(palette(0.75), [0, 128, 128]);
    }

    #[test]
    fn round_trip_within_quantum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f32> = (0..1000).map(|_| rng.random_range(0.0f32..=1.0)).collect();
        let img = Image2D::from_vec(1000, 1, values.clone()).unwrap();
        let valid = BinaryMask::from_bits(1000, 1, vec![true; 1000]).unwrap();
        let d = DepthMap::new(img, valid).unwrap();
        let back = decode_depth_colormap(&encode_depth_colormap(&d)).unwrap();
        for (a, b) in back.image().data().iter().zip(&values) {
            assert!((a - b).abs() <= 1.0 / 255.0, "{a} vs {b}");
        }
    }
}
