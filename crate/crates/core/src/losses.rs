//! Training objective: vessel-map MSE, region-weighted depth MSE and an SSIM
//! term, each returning its value and the gradient with respect to the
//! network outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scnet::Tensor4;
use crate::ssim::{self, SsimParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_vessel: f64,
    pub lambda_background: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_vessel: 0.8,
            lambda_background: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_vessel) || !ok(self.lambda_background) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_seg: f64,
    pub l_accuracy: f64,
    pub l_structure: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn from_parts(l_seg: f64, l_accuracy: f64, l_structure: f64) -> Self {
        Self {
            l_seg,
            l_accuracy,
            l_structure,
            l_total: l_seg + l_accuracy + l_structure,
        }
    }
}

fn same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a} vs {b} elements")));
    }
    if a == 0 {
        return Err(Error::shape(format!("{what}: empty input")));
    }
    Ok(())
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn loss_seg<T: Real>(pred: &[T], gt: &[T]) -> Result<(f64, Vec<T>)> {
    same_len("loss_seg", pred.len(), gt.len())?;
    let n = pred.len() as f64;
    let scale = T::lit(2.0 / n);
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let r = p - g;
            sum += r.as_f64() * r.as_f64();
            scale * r
        })
        .collect();
    Ok((sum / n, grad))
}

/// Gradients of [`loss_accuracy`].
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyGrads<T> {
    pub d_depth: Vec<T>,
    pub d_mask: Vec<T>,
}

/// `λ1·mean((p·m − g·m̃)²) + λ2·mean((p·(1−m) − g·(1−m̃))²)` with `m` the soft
/// predicted vessel map and `m̃` the ground-truth vessel map.
pub fn loss_accuracy<T: Real>(
    pred_depth: &[T],
    gt_depth: &[T],
    pred_mask: &[T],
    gt_mask: &[T],
    weights: &LossWeights,
) -> Result<(f64, AccuracyGrads<T>)> {
    same_len("loss_accuracy depth", pred_depth.len(), gt_depth.len())?;
    same_len("loss_accuracy mask", pred_depth.len(), pred_mask.len())?;
    same_len("loss_accuracy gt mask", pred_depth.len(), gt_mask.len())?;
    let n = pred_depth.len() as f64;
    let (l1, l2) = (weights.lambda_vessel, weights.lambda_background);
    let (c1, c2) = (T::lit(2.0 * l1 / n), T::lit(2.0 * l2 / n));
    let one = T::one();
    let (mut sv, mut sb) = (0.0, 0.0);
    let mut d_depth = Vec::with_capacity(pred_depth.len());
    let mut d_mask = Vec::with_capacity(pred_depth.len());
    for i in 0..pred_depth.len() {
        let (p, g, m, mt) = (pred_depth[i], gt_depth[i], pred_mask[i], gt_mask[i]);
        let rv = p * m - g * mt;
        let rb = p * (one - m) - g * (one - mt);
        sv += rv.as_f64() * rv.as_f64();
        sb += rb.as_f64() * rb.as_f64();
        d_depth.push(c1 * rv * m + c2 * rb * (one - m));
        d_mask.push((c1 * rv - c2 * rb) * p);
    }
    Ok((l1 * (sv / n) + l2 * (sb / n), AccuracyGrads { d_depth, d_mask }))
}

/// `1 − meanSSIM(pred, gt)` for one image and its gradient.
pub fn loss_structure<T: Real>(
    pred: &[T],
    gt: &[T],
    width: usize,
    height: usize,
    params: &SsimParams,
) -> Result<(f64, Vec<T>)> {
    let (s, grad) = ssim::mean_ssim_with_grad(pred, gt, width, height, params)?;
    Ok((1.0 - s.as_f64(), grad.into_iter().map(|g| -g).collect()))
}

/// Network outputs and the matching ground truth, all `[n, 1, h, w]`.
pub struct LossInputs<'a, T> {
    pub pred_depth: &'a Tensor4<T>,
    pub pred_seg: &'a Tensor4<T>,
    pub gt_depth: &'a Tensor4<T>,
    pub gt_seg: &'a Tensor4<T>,
}

#[derive(Debug, Clone)]
pub struct TotalGrads<T> {
    pub d_depth: Tensor4<T>,
    pub d_seg: Tensor4<T>,
}

/// Sum of the three terms over a batch; each term is the mean over items.
pub fn loss_total<T: Real>(
    inputs: &LossInputs<'_, T>,
    weights: &LossWeights,
    ssim_params: &SsimParams,
) -> Result<(LossBreakdown, TotalGrads<T>)> {
    let shape = inputs.pred_depth.shape();
    for t in [inputs.pred_seg, inputs.gt_depth, inputs.gt_seg] {
        if t.shape() != shape {
            return Err(Error::shape(format!("loss inputs {:?} vs {:?}", t.shape(), shape)));
        }
    }
    let [n, c, h, w] = shape;
    if c != 1 {
        return Err(Error::shape("loss inputs must have one channel"));
    }
    let inv_n = 1.0 / n as f64;
    let scale = T::lit(inv_n);
    let mut d_depth = Tensor4::zeros(n, 1, h, w);
    let mut d_seg = Tensor4::zeros(n, 1, h, w);
    let (mut seg, mut acc, mut st) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let pd = inputs.pred_depth.item(i);
        let ps = inputs.pred_seg.item(i);
        let gd = inputs.gt_depth.item(i);
        let gs = inputs.gt_seg.item(i);
        let (l_seg, g_seg) = loss_seg(ps, gs)?;
        let (l_acc, g_acc) = loss_accuracy(pd, gd, ps, gs, weights)?;
        let (l_st, g_st) = loss_structure(pd, gd, w, h, ssim_params)?;
        seg += l_seg;
        acc += l_acc;
        st += l_st;
        let dd = d_depth.plane_mut(i, 0);
        for j in 0..dd.len() {
            dd[j] = scale * (g_acc.d_depth[j] + g_st[j]);
        }
        let ds = d_seg.plane_mut(i, 0);
        for j in 0..ds.len() {
            ds[j] = scale * (g_seg[j] + g_acc.d_mask[j]);
        }
    }
    let breakdown = LossBreakdown::from_parts(seg * inv_n, acc * inv_n, st * inv_n);
    Ok((breakdown, TotalGrads { d_depth, d_seg }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scnet::gradcheck::check_gradient;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.05..0.95)).collect()
    }

    #[test]
    fn seg_hand_values() {
        assert_eq!(loss_seg(&[0.5, 1.0], &[0.0, 1.0]).unwrap().0, 0.125);
        assert_eq!(loss_seg(&[0.0f64; 100], &[1.0; 100]).unwrap().0, 1.0);
        let x = random(9, 1);
        assert_eq!(loss_seg(&x, &x).unwrap().0, 0.0);
        assert!(loss_seg(&[0.0f64; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn unit_weights_and_full_mask_reduce_to_mse() {
        let p = random(20, 2);
        let g = random(20, 3);
        let ones = vec![1.0; 20];
        let w = LossWeights {
            lambda_vessel: 1.0,
            lambda_background: 1.0,
        };
        let (acc, _) = loss_accuracy(&p, &g, &ones, &ones, &w).unwrap();
        let (mse, _) = loss_seg(&p, &g).unwrap();
        assert!((acc - mse).abs() < 1e-15);
    }

    #[test]
    fn structure_constant_images() {
        let p = vec![0.5f64; 16 * 16];
        let g = vec![0.6f64; 16 * 16];
        let (l, _) = loss_structure(&p, &g, 16, 16, &SsimParams::default()).unwrap();
        let expected = 1.0 - (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
        assert!((l - expected).abs() < 1e-9);
        assert!((l - 0.0164).abs() < 1e-4);
        let (z, _) = loss_structure(&g, &g, 16, 16, &SsimParams::default()).unwrap();
        assert!(z.abs() < 1e-12);
        assert!(loss_structure(&p[..100], &g[..100], 10, 10, &SsimParams::default()).is_err());
    }

    #[test]
    fn accuracy_gradients_match_finite_differences() {
        let n = 12;
        let p = random(n, 4);
        let g = random(n, 5);
        let m = random(n, 6);
        let mt: Vec<f64> = random(n, 7).into_iter().map(|v| (v > 0.5) as u8 as f64).collect();
        let w = LossWeights::default();
        let (_, grads) = loss_accuracy(&p, &g, &m, &mt, &w).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let r = check_gradient(&p, &grads.d_depth, &idx, 1e-5, 1e-8, |x| {
            loss_accuracy(x, &g, &m, &mt, &w).unwrap().0
        });
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        let r = check_gradient(&m, &grads.d_mask, &idx, 1e-5, 1e-8, |x| {
            loss_accuracy(&p, &g, x, &mt, &w).unwrap().0
        });
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn seg_and_structure_gradients_match_finite_differences() {
        let (w, h) = (14, 13);
        let p = random(w * h, 8);
        let g = random(w * h, 9);
        let idx: Vec<usize> = (0..w * h).step_by(7).collect();
        let (_, gs) = loss_seg(&p, &g).unwrap();
        let r = check_gradient(&p, &gs, &idx, 1e-5, 1e-8, |x| loss_seg(x, &g).unwrap().0);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        let params = SsimParams::default();
        let (_, gst) = loss_structure(&p, &g, w, h, &params).unwrap();
        let r = check_gradient(&p, &gst, &idx, 1e-5, 1e-6, |x| {
            loss_structure(x, &g, w, h, &params).unwrap().0
        });
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn structure_loss_grows_with_noise() {
        let (w, h) = (32, 32);
        let g = random(w * h, 10);
        let noise: Vec<f64> = random(w * h, 11).into_iter().map(|v| v - 0.5).collect();
        let losses: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|&a| {
                let p: Vec<f64> = g.iter().zip(&noise).map(|(x, n)| x + a * n).collect();
                loss_structure(&p, &g, w, h, &SsimParams::default()).unwrap().0
            })
            .collect();
        assert!(losses[0] < losses[1] && losses[1] < losses[2], "{losses:?}");
    }

    #[test]
    fn breakdown_adds_up() {
        let b = LossBreakdown::from_parts(0.1, 0.12, 0.02);
        assert_eq!(b.l_total, 0.1 + 0.12 + 0.02);
        assert!((b.l_total - 0.24).abs() < 1e-15);
    }
}
