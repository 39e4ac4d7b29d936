//! Gaussian-windowed structural similarity, shared by the training loss and
//! the evaluation metrics.
//!
//! The SSIM map is computed over the "valid" region only (no padding), so an
//! image must be at least one window wide in each direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalised 1-D Gaussian taps.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Separable valid-region correlation.
fn filter_valid<T: Real>(img: &[T], w: usize, h: usize, k: &[T]) -> Vec<T> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut horiz = vec![T::zero(); ow * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * row[x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let src = &horiz[(y + i) * ow..(y + i + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an (ow x oh) map back onto (w x h).
fn filter_valid_adjoint<T: Real>(map: &[T], w: usize, h: usize, k: &[T]) -> Vec<T> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut horiz = vec![T::zero(); ow * h];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let src = &map[y * ow..(y + 1) * ow];
            let dst = &mut horiz[(y + i) * ow..(y + i + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let src = &horiz[y * ow..(y + 1) * ow];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &s) in src.iter().enumerate() {
            for (i, &kv) in k.iter().enumerate() {
                dst[x + i] += kv * s;
            }
        }
    }
    out
}

struct Moments<T> {
    mu_x: Vec<T>,
    mu_y: Vec<T>,
    e_xx: Vec<T>,
    e_yy: Vec<T>,
    e_xy: Vec<T>,
}

fn check(w: usize, h: usize, x_len: usize, y_len: usize, params: &SsimParams) -> Result<()> {
    if x_len != w * h || y_len != w * h {
        return Err(Error::shape(format!(
            "SSIM inputs of {x_len} and {y_len} values for {w}x{h}"
        )));
    }
    if params.window == 0 || w < params.window || h < params.window {
        return Err(Error::shape(format!(
            "{w}x{h} image is smaller than the {} px SSIM window",
            params.window
        )));
    }
    Ok(())
}

fn moments<T: Real>(x: &[T], y: &[T], w: usize, h: usize, k: &[T]) -> Moments<T> {
    let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
    let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
    let xy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
    Moments {
        mu_x: filter_valid(x, w, h, k),
        mu_y: filter_valid(y, w, h, k),
        e_xx: filter_valid(&xx, w, h, k),
        e_yy: filter_valid(&yy, w, h, k),
        e_xy: filter_valid(&xy, w, h, k),
    }
}

/// SSIM map over the valid region; returns (map, map_width, map_height).
pub fn ssim_map<T: Real>(
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
    params: &SsimParams,
) -> Result<(Vec<T>, usize, usize)> {
    check(w, h, x.len(), y.len(), params)?;
    let k: Vec<T> = params.kernel().into_iter().map(T::lit).collect();
    let m = moments(x, y, w, h, &k);
    let (c1, c2) = (T::lit(params.c1()), T::lit(params.c2()));
    let two = T::lit(2.0);
    let map = (0..m.mu_x.len())
        .map(|i| {
            let (mx, my) = (m.mu_x[i], m.mu_y[i]);
            let a = two * mx * my + c1;
            let b = two * (m.e_xy[i] - mx * my) + c2;
            let c = mx * mx + my * my + c1;
            let d = (m.e_xx[i] - mx * mx) + (m.e_yy[i] - my * my) + c2;
            (a * b) / (c * d)
        })
        .collect();
    Ok((map, w + 1 - params.window, h + 1 - params.window))
}

pub fn mean_ssim<T: Real>(x: &[T], y: &[T], w: usize, h: usize, params: &SsimParams) -> Result<T> {
    let (map, _, _) = ssim_map(x, y, w, h, params)?;
    let n = T::lit(map.len() as f64);
    Ok(map.into_iter().sum::<T>() / n)
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn mean_ssim_with_grad<T: Real>(
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
    params: &SsimParams,
) -> Result<(T, Vec<T>)> {
    check(w, h, x.len(), y.len(), params)?;
    let k: Vec<T> = params.kernel().into_iter().map(T::lit).collect();
    let m = moments(x, y, w, h, &k);
    let (c1, c2) = (T::lit(params.c1()), T::lit(params.c2()));
    let two = T::lit(2.0);
    let len = m.mu_x.len();
    let inv_n = T::one() / T::lit(len as f64);
    let mut sum = T::zero();
    let mut g_mu = vec![T::zero(); len];
    let mut g_xx = vec![T::zero(); len];
    let mut g_xy = vec![T::zero(); len];
    for i in 0..len {
        let (mx, my) = (m.mu_x[i], m.mu_y[i]);
        let a = two * mx * my + c1;
        let b = two * (m.e_xy[i] - mx * my) + c2;
        let c = mx * mx + my * my + c1;
        let d = (m.e_xx[i] - mx * mx) + (m.e_yy[i] - my * my) + c2;
        let s = (a * b) / (c * d);
        sum += s;
        let gs = s * inv_n;
        g_mu[i] = gs * (two * my / a - two * my / b - two * mx / c + two * mx / d);
        g_xx[i] = -gs / d;
        g_xy[i] = gs * two / b;
    }
    let back_mu = filter_valid_adjoint(&g_mu, w, h, &k);
    let back_xx = filter_valid_adjoint(&g_xx, w, h, &k);
    let back_xy = filter_valid_adjoint(&g_xy, w, h, &k);
    let grad = (0..w * h)
        .map(|i| back_mu[i] + two * x[i] * back_xx[i] + y[i] * back_xy[i])
        .collect();
    Ok((sum * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn identical_images_score_one() {
        let x = random(16 * 14, 1);
        let s = mean_ssim(&x, &x, 16, 14, &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_closed_form() {
        let a = vec![0.5f64; 144];
        let b = vec![0.6f64; 144];
        let s = mean_ssim(&a, &b, 12, 12, &SsimParams::default()).unwrap();
        let expected = (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
        assert!((s - expected).abs() < 1e-9, "{s} vs {expected}");
        assert!((s - 0.98361).abs() < 1e-5);
    }

    #[test]
    fn symmetric() {
        let a = random(20 * 20, 2);
        let b = random(20 * 20, 3);
        let p = SsimParams::default();
        let ab = mean_ssim(&a, &b, 20, 20, &p).unwrap();
        let ba = mean_ssim(&b, &a, 20, 20, &p).unwrap();
        assert!((ab - ba).abs() < 1e-14);
    }

    #[test]
    fn rejects_small_images() {
        let a = vec![0.0f64; 100];
        assert!(mean_ssim(&a, &a, 10, 10, &SsimParams::default()).is_err());
    }

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        let k = SsimParams::default().kernel();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn adjoint_identity() {
        // <F x, y> == <x, F^T y>
        let k: Vec<f64> = SsimParams::default().kernel();
        let x = random(15 * 13, 4);
        let y = random(5 * 3, 5);
        let fx = filter_valid(&x, 15, 13, &k);
        let fty = filter_valid_adjoint(&y, 15, 13, &k);
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&fty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (w, h) = (13, 12);
        let p = SsimParams::default();
        let x = random(w * h, 6);
        let y = random(w * h, 7);
        let (_, grad) = mean_ssim_with_grad(&x, &y, w, h, &p).unwrap();
        let eps = 1e-5;
        for i in 0..w * h {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (mean_ssim(&xp, &y, w, h, &p).unwrap() - mean_ssim(&xm, &y, w, h, &p).unwrap())
                / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "pixel {i}: fd {fd} analytic {}", grad[i]);
        }
    }
}
