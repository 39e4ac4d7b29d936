//! Layer kernels. Every forward has a matching backward that returns exact
//! gradients; the unit tests check each one against central differences.

use rayon::prelude::*;

use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::real::Real;

pub const BN_EPS: f64 = 1e-5;

/// Zero-padded stride-1 cross-correlation. `weight` is laid out
/// `[cout][cin][k][k]`; `bias` is empty or has `cout` entries.
pub fn conv2d<T: Real>(
    x: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    cout: usize,
    k: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let [n, cin, h, w] = x.shape();
    if weight.len() != cout * cin * k * k {
        return Err(Error::shape(format!(
            "conv kernel of {} values does not fit {cout}x{cin}x{k}x{k}",
            weight.len()
        )));
    }
    if !bias.is_empty() && bias.len() != cout {
        return Err(Error::shape(format!("{} biases for {cout} outputs", bias.len())));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape(format!("{h}x{w} input smaller than {k}x{k} kernel")));
    }
    let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
    let mut out = Tensor4::zeros(n, cout, oh, ow);
    let plane = oh * ow;
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, co) = (idx / cout, idx % cout);
            if !bias.is_empty() {
                dst.fill(bias[co]);
            }
            for ci in 0..cin {
                let src = x.plane(b, ci);
                let wk = &weight[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (x_lo, x_hi) = valid_range(kx, pad, w, ow);
                        if x_lo >= x_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let srow = &src[(iy - pad) * w..(iy - pad + 1) * w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            let shift = x_lo + kx - pad;
                            for (d, &s) in drow[x_lo..x_hi].iter_mut().zip(&srow[shift..]) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Output columns `ox` for which `ox + kx - pad` lands inside `[0, w)`.
#[inline]
fn valid_range(kx: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (w + pad).saturating_sub(kx).min(ow);
    (lo, hi)
}

pub struct ConvGrads<T> {
    pub dx: Tensor4<T>,
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &[T],
    has_bias: bool,
    cout: usize,
    k: usize,
    pad: usize,
    dy: &Tensor4<T>,
) -> ConvGrads<T> {
    let [n, cin, h, w] = x.shape();
    let [_, _, oh, ow] = dy.shape();
    let mut dx = Tensor4::zeros(n, cin, h, w);
    dx.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, ci) = (idx / cin, idx % cin);
            for co in 0..cout {
                let g = dy.plane(b, co);
                let wk = &weight[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (x_lo, x_hi) = valid_range(kx, pad, w, ow);
                        if x_lo >= x_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let drow = &mut dst[(iy - pad) * w..(iy - pad + 1) * w];
                            let shift = x_lo + kx - pad;
                            for (d, &s) in drow[shift..].iter_mut().zip(&grow[x_lo..x_hi]) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        });

    let mut dweight = vec![T::zero(); weight.len()];
    dweight
        .par_chunks_mut(cin * k * k)
        .enumerate()
        .for_each(|(co, dw)| {
            for b in 0..n {
                let g = dy.plane(b, co);
                for ci in 0..cin {
                    let src = x.plane(b, ci);
                    for ky in 0..k {
                        for kx in 0..k {
                            let (x_lo, x_hi) = valid_range(kx, pad, w, ow);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for oy in 0..oh {
                                let iy = oy + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                let srow = &src[(iy - pad) * w..(iy - pad + 1) * w];
                                let shift = x_lo + kx - pad;
                                for (&a, &s) in grow[x_lo..x_hi].iter().zip(&srow[shift..]) {
                                    acc += a * s;
                                }
                            }
                            dw[(ci * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        });

    let dbias = if has_bias {
        (0..cout)
            .map(|co| (0..n).map(|b| dy.plane(b, co).iter().copied().sum::<T>()).sum())
            .collect()
    } else {
        Vec::new()
    };
    ConvGrads { dx, dweight, dbias }
}

/// Normalisation statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance; empty when running statistics were used.
    pub var: Vec<T>,
    pub batch_stats: bool,
}

/// Batch normalisation with statistics over (batch, height, width).
pub fn batchnorm_train<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
) -> (Tensor4<T>, BnCache<T>) {
    let [n, c, _, _] = x.shape();
    let m = T::lit((n * x.plane_len()) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += x.plane(b, ch).iter().copied().sum::<T>();
        }
        let mu = s / m;
        let mut v = T::zero();
        for b in 0..n {
            for &val in x.plane(b, ch) {
                v += (val - mu) * (val - mu);
            }
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(BN_EPS)).sqrt()).collect();
    normalise(x, gamma, beta, mean, var, inv_std, true)
}

/// Batch normalisation with fixed (running) statistics.
pub fn batchnorm_eval<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> (Tensor4<T>, BnCache<T>) {
    let inv_std = running_var
        .iter()
        .map(|&v| T::one() / (v + T::lit(BN_EPS)).sqrt())
        .collect();
    normalise(x, gamma, beta, running_mean.to_vec(), Vec::new(), inv_std, false)
}

fn normalise<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    mean: Vec<T>,
    var: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
) -> (Tensor4<T>, BnCache<T>) {
    let [n, c, _, _] = x.shape();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let (mu, is) = (mean[ch], inv_std[ch]);
            for (xh, yv) in xhat.plane_mut(b, ch).iter_mut().zip(y.plane_mut(b, ch).iter_mut()) {
                *xh = (*xh - mu) * is;
                *yv = gamma[ch] * *xh + beta[ch];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
            batch_stats,
        },
    )
}

pub struct BnGrads<T> {
    pub dx: Tensor4<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub fn batchnorm_backward<T: Real>(cache: &BnCache<T>, gamma: &[T], dy: &Tensor4<T>) -> BnGrads<T> {
    let [n, c, _, _] = dy.shape();
    let m = T::lit((n * dy.plane_len()) as f64);
    let mut dx = Tensor4::zeros(n, c, dy.h(), dy.w());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..n {
            for (&g, &xh) in dy.plane(b, ch).iter().zip(cache.xhat.plane(b, ch)) {
                sum_dy += g;
                sum_dy_xhat += g * xh;
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            let g = dy.plane(b, ch);
            let xh = cache.xhat.plane(b, ch);
            let d = dx.plane_mut(b, ch);
            if cache.batch_stats {
                for i in 0..d.len() {
                    d[i] = scale * (g[i] - sum_dy / m - xh[i] * sum_dy_xhat / m);
                }
            } else {
                for i in 0..d.len() {
                    d[i] = scale * g[i];
                }
            }
        }
    }
    BnGrads { dx, dgamma, dbeta }
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

/// `y` is the relu output; the derivative at zero is taken as zero.
pub fn relu_backward<T: Real>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (d, &out) in dx.data_mut().iter_mut().zip(y.data()) {
        if out <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn sigmoid<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = T::one() / (T::one() + (-*v).exp());
    }
    y
}

pub fn sigmoid_backward<T: Real>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= s * (T::one() - s);
    }
    dx
}

/// 2x2 max pooling; returns the output and the flat in-plane index of each
/// winner. Ties go to the first element in row-major order.
pub fn maxpool2<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("maxpool2 needs even dimensions, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros(n, c, oh, ow);
    let mut arg = vec![0u32; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let base = (b * c + ch) * oh * ow;
            let dst = y.plane_mut(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (2 * oy) * w + 2 * ox;
                    for cand in [
                        (2 * oy) * w + 2 * ox + 1,
                        (2 * oy + 1) * w + 2 * ox,
                        (2 * oy + 1) * w + 2 * ox + 1,
                    ] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    dst[oy * ow + ox] = src[best];
                    arg[base + oy * ow + ox] = best as u32;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Real>(input_shape: [usize; 4], arg: &[u32], dy: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor4::zeros(n, c, h, w);
    let p = dy.plane_len();
    for b in 0..n {
        for ch in 0..c {
            let g = dy.plane(b, ch);
            let base = (b * c + ch) * p;
            let d = dx.plane_mut(b, ch);
            for i in 0..p {
                d[arg[base + i] as usize] += g[i];
            }
        }
    }
    dx
}

/// Bilinear 2x upsampling with half-pixel centres and clamped borders.
pub fn upsample2<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let (q, t) = (T::lit(0.25), T::lit(0.75));
    let mut y = Tensor4::zeros(n, c, 2 * h, 2 * w);
    let mut horiz = vec![T::zero(); h * 2 * w];
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            for yy in 0..h {
                let row = &src[yy * w..(yy + 1) * w];
                let out = &mut horiz[yy * 2 * w..(yy + 1) * 2 * w];
                for i in 0..w {
                    let left = row[i.saturating_sub(1)];
                    let right = row[(i + 1).min(w - 1)];
                    out[2 * i] = t * row[i] + q * left;
                    out[2 * i + 1] = t * row[i] + q * right;
                }
            }
            let dst = y.plane_mut(b, ch);
            let ow = 2 * w;
            for j in 0..h {
                let up = j.saturating_sub(1);
                let down = (j + 1).min(h - 1);
                for xx in 0..ow {
                    let centre = horiz[j * ow + xx];
                    dst[(2 * j) * ow + xx] = t * centre + q * horiz[up * ow + xx];
                    dst[(2 * j + 1) * ow + xx] = t * centre + q * horiz[down * ow + xx];
                }
            }
        }
    }
    y
}

/// Adjoint of [`upsample2`].
pub fn upsample2_backward<T: Real>(dy: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, oh, ow] = dy.shape();
    let (h, w) = (oh / 2, ow / 2);
    let (q, t) = (T::lit(0.25), T::lit(0.75));
    let mut dx = Tensor4::zeros(n, c, h, w);
    let mut horiz = vec![T::zero(); h * ow];
    for b in 0..n {
        for ch in 0..c {
            horiz.fill(T::zero());
            let g = dy.plane(b, ch);
            for j in 0..h {
                let up = j.saturating_sub(1);
                let down = (j + 1).min(h - 1);
                for xx in 0..ow {
                    let a = g[(2 * j) * ow + xx];
                    let bb = g[(2 * j + 1) * ow + xx];
                    horiz[j * ow + xx] += t * (a + bb);
                    horiz[up * ow + xx] += q * a;
                    horiz[down * ow + xx] += q * bb;
                }
            }
            let d = dx.plane_mut(b, ch);
            for yy in 0..h {
                let row = &horiz[yy * ow..(yy + 1) * ow];
                let out = &mut d[yy * w..(yy + 1) * w];
                for i in 0..w {
                    let (a, bb) = (row[2 * i], row[2 * i + 1]);
                    out[i] += t * (a + bb);
                    out[i.saturating_sub(1)] += q * a;
                    out[(i + 1).min(w - 1)] += q * bb;
                }
            }
        }
    }
    dx
}

pub fn concat_channels<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if n != nb || h != hb || w != wb {
        return Err(Error::shape(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor4::from_vec([n, ca + cb, h, w], data)
}

pub fn split_channels<T: Real>(d: &Tensor4<T>, first: usize) -> (Tensor4<T>, Tensor4<T>) {
    let [n, c, h, w] = d.shape();
    let p = h * w;
    let mut a = Vec::with_capacity(n * first * p);
    let mut b = Vec::with_capacity(n * (c - first) * p);
    for i in 0..n {
        let item = d.item(i);
        a.extend_from_slice(&item[..first * p]);
        b.extend_from_slice(&item[first * p..]);
    }
    (
        Tensor4::from_vec([n, first, h, w], a).expect("split shape"),
        Tensor4::from_vec([n, c - first, h, w], b).expect("split shape"),
    )
}

/// Multiplies every channel of `u` by the single-channel map `a`.
pub fn gate<T: Real>(u: &Tensor4<T>, a: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, c, h, w] = u.shape();
    if a.shape() != [n, 1, h, w] {
        return Err(Error::shape(format!(
            "attention map {:?} does not gate {:?}",
            a.shape(),
            u.shape()
        )));
    }
    let mut y = u.clone();
    for b in 0..n {
        let att = a.plane(b, 0);
        for ch in 0..c {
            for (v, &s) in y.plane_mut(b, ch).iter_mut().zip(att) {
                *v *= s;
            }
        }
    }
    Ok(y)
}

pub fn gate_backward<T: Real>(u: &Tensor4<T>, a: &Tensor4<T>, dy: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    let [n, c, h, w] = u.shape();
    let du = gate(dy, a).expect("gate shape");
    let mut da = Tensor4::zeros(n, 1, h, w);
    for b in 0..n {
        let d = da.plane_mut(b, 0);
        for ch in 0..c {
            for ((acc, &g), &uv) in d.iter_mut().zip(dy.plane(b, ch)).zip(u.plane(b, ch)) {
                *acc += g * uv;
            }
        }
    }
    (du, da)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        Tensor4::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    const STEP: f64 = 1e-5;

    /// Central-difference derivative of `f` along each coordinate of `v`.
    fn numeric_grad(v: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..v.len())
            .map(|i| {
                let mut p = v.to_vec();
                p[i] += STEP;
                let mut m = v.to_vec();
                m[i] -= STEP;
                (f(&p) - f(&m)) / (2.0 * STEP)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            assert!(rel_err(a, n) < 1e-4, "coordinate {i}: analytic {a} numeric {n}");
        }
    }

    #[test]
    fn conv_all_ones_hand_values() {
        let x = Tensor4::filled([1, 1, 3, 3], 1.0f64);
        let y = conv2d(&x, &[1.0; 9], &[], 1, 3, 1).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (yy, xx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, yy, xx), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = rand_tensor([2, 1, 5, 4], 1);
        let mut k = [0.0; 9];
        k[4] = 1.0;
        assert_eq!(conv2d(&x, &k, &[], 1, 3, 1).unwrap(), x);
    }

    #[test]
    fn conv_channel_mismatch_is_shape_error() {
        let x = rand_tensor([1, 2, 4, 4], 1);
        assert!(matches!(conv2d(&x, &[0.0; 9], &[], 1, 3, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_gradients() {
        let shape = [2, 3, 5, 6];
        let (cout, k, pad) = (2, 3, 1);
        let x = rand_tensor(shape, 2);
        let wt = rand_vec(cout * 3 * k * k, 3);
        let bias = rand_vec(cout, 4);
        let probe = rand_tensor([2, cout, 5, 6], 5);
        let loss = |x: &Tensor4<f64>, wt: &[f64], bias: &[f64]| {
            dot(conv2d(x, wt, bias, cout, k, pad).unwrap().data(), probe.data())
        };
        let g = conv2d_backward(&x, &wt, true, cout, k, pad, &probe);
        assert_close(
            g.dx.data(),
            &numeric_grad(x.data(), |v| loss(&Tensor4::from_vec(shape, v.to_vec()).unwrap(), &wt, &bias)),
        );
        assert_close(&g.dweight, &numeric_grad(&wt, |v| loss(&x, v, &bias)));
        assert_close(&g.dbias, &numeric_grad(&bias, |v| loss(&x, &wt, v)));
    }

    #[test]
    fn conv_1x1_gradients() {
        let shape = [1, 4, 3, 3];
        let x = rand_tensor(shape, 6);
        let wt = rand_vec(2 * 4, 7);
        let probe = rand_tensor([1, 2, 3, 3], 8);
        let g = conv2d_backward(&x, &wt, false, 2, 1, 0, &probe);
        let numeric = numeric_grad(x.data(), |v| {
            let t = Tensor4::from_vec(shape, v.to_vec()).unwrap();
            dot(conv2d(&t, &wt, &[], 2, 1, 0).unwrap().data(), probe.data())
        });
        assert_close(g.dx.data(), &numeric);
    }

    #[test]
    fn batchnorm_gradients() {
        let shape = [2, 3, 3, 4];
        let x = rand_tensor(shape, 9);
        let gamma = rand_vec(3, 10);
        let beta = rand_vec(3, 11);
        let probe = rand_tensor(shape, 12);
        let loss = |x: &Tensor4<f64>, g: &[f64], b: &[f64]| dot(batchnorm_train(x, g, b).0.data(), probe.data());
        let (_, cache) = batchnorm_train(&x, &gamma, &beta);
        let g = batchnorm_backward(&cache, &gamma, &probe);
        assert_close(
            g.dx.data(),
            &numeric_grad(x.data(), |v| loss(&Tensor4::from_vec(shape, v.to_vec()).unwrap(), &gamma, &beta)),
        );
        assert_close(&g.dgamma, &numeric_grad(&gamma, |v| loss(&x, v, &beta)));
        assert_close(&g.dbeta, &numeric_grad(&beta, |v| loss(&x, &gamma, v)));
    }

    #[test]
    fn batchnorm_eval_gradients() {
        let shape = [1, 2, 3, 3];
        let x = rand_tensor(shape, 13);
        let (gamma, beta) = (vec![0.7, -1.2], vec![0.1, 0.2]);
        let (rm, rv) = (vec![0.3, -0.1], vec![0.5, 2.0]);
        let probe = rand_tensor(shape, 14);
        let (_, cache) = batchnorm_eval(&x, &gamma, &beta, &rm, &rv);
        let g = batchnorm_backward(&cache, &gamma, &probe);
        let numeric = numeric_grad(x.data(), |v| {
            let t = Tensor4::from_vec(shape, v.to_vec()).unwrap();
            dot(batchnorm_eval(&t, &gamma, &beta, &rm, &rv).0.data(), probe.data())
        });
        assert_close(g.dx.data(), &numeric);
    }

    #[test]
    fn batchnorm_normalises() {
        let x = rand_tensor([3, 2, 4, 4], 15);
        let (y, _) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0]);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.plane(b, ch).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn relu_definition_and_gradient() {
        let x = Tensor4::from_vec([1, 1, 1, 2], vec![-1.0f64, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 2.0]);
        let x = rand_tensor([1, 2, 3, 3], 16);
        let probe = rand_tensor([1, 2, 3, 3], 17);
        let g = relu_backward(&relu(&x), &probe);
        let numeric = numeric_grad(x.data(), |v| {
            dot(relu(&Tensor4::from_vec([1, 2, 3, 3], v.to_vec()).unwrap()).data(), probe.data())
        });
        assert_close(g.data(), &numeric);
    }

    #[test]
    fn sigmoid_gradient() {
        let x = rand_tensor([1, 2, 3, 3], 18);
        let probe = rand_tensor([1, 2, 3, 3], 19);
        let g = sigmoid_backward(&sigmoid(&x), &probe);
        let numeric = numeric_grad(x.data(), |v| {
            dot(sigmoid(&Tensor4::from_vec([1, 2, 3, 3], v.to_vec()).unwrap()).data(), probe.data())
        });
        assert_close(g.data(), &numeric);
    }

    #[test]
    fn maxpool_block_max_and_gradient() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert!(matches!(maxpool2(&Tensor4::<f64>::zeros(1, 1, 3, 2)), Err(Error::Shape(_))));

        let shape = [2, 2, 4, 6];
        let x = rand_tensor(shape, 20);
        let probe = rand_tensor([2, 2, 2, 3], 21);
        let (_, arg) = maxpool2(&x).unwrap();
        let g = maxpool2_backward(shape, &arg, &probe);
        let numeric = numeric_grad(x.data(), |v| {
            dot(maxpool2(&Tensor4::from_vec(shape, v.to_vec()).unwrap()).unwrap().0.data(), probe.data())
        });
        assert_close(g.data(), &numeric);
    }

    #[test]
    fn upsample_constant_round_trip() {
        let x = Tensor4::filled([1, 2, 3, 5], 0.37f64);
        let y = upsample2(&x);
        assert_eq!(y.shape(), [1, 2, 6, 10]);
        // 2x2 block averaging brings back the original field
        for ch in 0..2 {
            for yy in 0..3 {
                for xx in 0..5 {
                    let avg = (y.at(0, ch, 2 * yy, 2 * xx)
                        + y.at(0, ch, 2 * yy, 2 * xx + 1)
                        + y.at(0, ch, 2 * yy + 1, 2 * xx)
                        + y.at(0, ch, 2 * yy + 1, 2 * xx + 1))
                        / 4.0;
                    assert!((avg - 0.37).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn upsample_gradient() {
        let shape = [2, 2, 3, 4];
        let x = rand_tensor(shape, 22);
        let probe = rand_tensor([2, 2, 6, 8], 23);
        let g = upsample2_backward(&probe);
        let numeric = numeric_grad(x.data(), |v| {
            dot(upsample2(&Tensor4::from_vec(shape, v.to_vec()).unwrap()).data(), probe.data())
        });
        assert_close(g.data(), &numeric);
    }

    #[test]
    fn upsample_single_pixel() {
        let x = Tensor4::filled([1, 1, 1, 1], 2.0f64);
        assert_eq!(upsample2(&x).data(), &[2.0; 4]);
        let g = upsample2_backward(&Tensor4::filled([1, 1, 2, 2], 1.0f64));
        assert_eq!(g.data(), &[4.0]);
    }

    #[test]
    fn gate_identity_annihilator_and_gradient() {
        let u = rand_tensor([2, 3, 4, 4], 24);
        let ones = Tensor4::filled([2, 1, 4, 4], 1.0);
        assert_eq!(gate(&u, &ones).unwrap(), u);
        let zeros = Tensor4::zeros(2, 1, 4, 4);
        assert!(gate(&u, &zeros).unwrap().data().iter().all(|&v| v == 0.0));

        let a = rand_tensor([2, 1, 4, 4], 25);
        let probe = rand_tensor([2, 3, 4, 4], 26);
        let (du, da) = gate_backward(&u, &a, &probe);
        let nu = numeric_grad(u.data(), |v| {
            dot(gate(&Tensor4::from_vec([2, 3, 4, 4], v.to_vec()).unwrap(), &a).unwrap().data(), probe.data())
        });
        let na = numeric_grad(a.data(), |v| {
            dot(gate(&u, &Tensor4::from_vec([2, 1, 4, 4], v.to_vec()).unwrap()).unwrap().data(), probe.data())
        });
        assert_close(du.data(), &nu);
        assert_close(da.data(), &na);
    }

    #[test]
    fn concat_split_inverse() {
        let a = rand_tensor([2, 2, 3, 3], 27);
        let b = rand_tensor([2, 3, 3, 3], 28);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), [2, 5, 3, 3]);
        assert_eq!(cat.plane(1, 2), b.plane(1, 0));
        let (a2, b2) = split_channels(&cat, 2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }
}
