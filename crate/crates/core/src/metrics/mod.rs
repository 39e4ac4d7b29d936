//! Depth-map and point-set evaluation.

mod kdtree;

pub use kdtree::{brute_nearest, dist2, KdTree, Point3};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DepthMap, Image2D};
use crate::ssim::{self, SsimParams};

/// Ground-truth depths at or below this are excluded from evaluation.
pub const DEPTH_EPS: f64 = 1e-6;

/// The three standard thresholds 1.25, 1.25², 1.25³.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

fn check_pairs(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("{} predictions for {} targets", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("no evaluable pixels".into()));
    }
    Ok(())
}

/// Fraction of pairs with `max(p/g, g/p) < t`.
pub fn delta_accuracy(pred: &[f64], gt: &[f64], t: f64) -> Result<f64> {
    check_pairs(pred, gt)?;
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(&p, &g)| (p / g).max(g / p) < t)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean of `|p − g| / g`.
pub fn ard(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pairs(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g).abs() / g).sum();
    Ok(sum / pred.len() as f64)
}

pub fn rmse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pairs(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Mean SSIM of two images with the shared window definition.
pub fn mean_ssim(a: &Image2D, b: &Image2D, params: &SsimParams) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    ssim::mean_ssim(&x, &y, a.width(), a.height(), params)
}

/// Depth pairs on the evaluation domain: pixels valid in `gt` with
/// `gt > DEPTH_EPS`, optionally restricted to `mask`, in row-major order.
pub fn evaluation_pairs(pred: &DepthMap, gt: &DepthMap, mask: Option<&BinaryMask>) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.dims() != gt.dims() || mask.is_some_and(|m| m.dims() != gt.dims()) {
        return Err(Error::shape("prediction, ground truth and mask must share dimensions"));
    }
    let (w, h) = gt.dims();
    let mut p = Vec::new();
    let mut g = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let gv = gt.get(x, y) as f64;
            if gt.is_valid(x, y) && gv > DEPTH_EPS && mask.is_none_or(|m| m.get(x, y)) {
                p.push(pred.image().get(x, y) as f64);
                g.push(gv);
            }
        }
    }
    Ok((p, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricReport {
    pub acc_delta1: f64,
    pub acc_delta2: f64,
    pub acc_delta3: f64,
    pub ard: f64,
    pub rmse: f64,
    /// Whole-image SSIM; absent when the image is smaller than the window.
    pub ssim: Option<f64>,
    pub n_pixels: usize,
}

pub fn depth_report(pred: &DepthMap, gt: &DepthMap, mask: Option<&BinaryMask>) -> Result<DepthMetricReport> {
    let (p, g) = evaluation_pairs(pred, gt, mask)?;
    let [a1, a2, a3] = DELTA_THRESHOLDS.map(|t| delta_accuracy(&p, &g, t));
    let params = SsimParams::default();
    let ssim = match mean_ssim(pred.image(), gt.image(), &params) {
        Ok(v) => Some(v),
        Err(Error::Shape(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(DepthMetricReport {
        acc_delta1: a1?,
        acc_delta2: a2?,
        acc_delta3: a3?,
        ard: ard(&p, &g)?,
        rmse: rmse(&p, &g)?,
        ssim,
        n_pixels: p.len(),
    })
}

fn nonempty(a: &[Point3], b: &[Point3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric("point set is empty".into()));
    }
    Ok(())
}

/// Distance from each point of `from` to its nearest neighbour in `to`.
fn nn_distances(from: &[Point3], to: &KdTree) -> Vec<f64> {
    from.par_iter()
        .map(|q| to.nearest(q).expect("non-empty").0.sqrt())
        .collect()
}

fn brute_nn_distances(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    from.iter()
        .map(|q| brute_nearest(to, q).expect("non-empty").0.sqrt())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// `½ (mean_a d(a, B) + mean_b d(b, A))`, Euclidean, not squared.
pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<f64> {
    nonempty(a, b)?;
    let (ta, tb) = (KdTree::build(a), KdTree::build(b));
    Ok(0.5 * (mean(&nn_distances(a, &tb)) + mean(&nn_distances(b, &ta))))
}

pub fn hausdorff(a: &[Point3], b: &[Point3]) -> Result<f64> {
    nonempty(a, b)?;
    let (ta, tb) = (KdTree::build(a), KdTree::build(b));
    Ok(max(&nn_distances(a, &tb)).max(max(&nn_distances(b, &ta))))
}

pub fn chamfer_brute(a: &[Point3], b: &[Point3]) -> Result<f64> {
    nonempty(a, b)?;
    Ok(0.5 * (mean(&brute_nn_distances(a, b)) + mean(&brute_nn_distances(b, a))))
}

pub fn hausdorff_brute(a: &[Point3], b: &[Point3]) -> Result<f64> {
    nonempty(a, b)?;
    Ok(max(&brute_nn_distances(a, b)).max(max(&brute_nn_distances(b, a))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudMetricReport {
    pub chamfer: f64,
    pub hausdorff: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    pub units: String,
}

pub fn cloud_report(pred: &[Point3], gt: &[Point3], units: &str) -> Result<CloudMetricReport> {
    nonempty(pred, gt)?;
    let (tp, tg) = (KdTree::build(pred), KdTree::build(gt));
    let d_pg = nn_distances(pred, &tg);
    let d_gp = nn_distances(gt, &tp);
    Ok(CloudMetricReport {
        chamfer: 0.5 * (mean(&d_pg) + mean(&d_gp)),
        hausdorff: max(&d_pg).max(max(&d_gp)),
        n_pred: pred.len(),
        n_gt: gt.len(),
        units: units.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn depth_hand_cases() {
        assert_eq!(delta_accuracy(&[2.0], &[1.0], 1.25).unwrap(), 0.0);
        assert_eq!(delta_accuracy(&[1.2], &[1.0], 1.25).unwrap(), 1.0);
        assert!((ard(&[1.5, 1.0], &[1.0, 1.0]).unwrap() - 0.25).abs() < 1e-12);
        assert!((rmse(&[4.0, 5.0], &[1.0, 1.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(ard(&[], &[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ard_is_scale_invariant_and_rmse_dominates_mae() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..50).map(|_| rng.random_range(0.1..1.0)).collect();
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(0.1..1.0)).collect();
        let c = 3.7;
        let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
        let gs: Vec<f64> = g.iter().map(|v| v * c).collect();
        assert!((ard(&p, &g).unwrap() - ard(&ps, &gs).unwrap()).abs() < 1e-12);
        let mae = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / 50.0;
        assert!(rmse(&p, &g).unwrap() >= mae);
    }

    #[test]
    fn point_set_hand_cases() {
        assert_eq!(chamfer(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 1.0);
        assert_eq!(hausdorff(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap(), 1.0);
        let a = [[0.5, 0.2, 0.1], [0.0, 1.0, 2.0]];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert!(matches!(chamfer(&[], &a), Err(Error::UndefinedMetric(_))));
        assert!(matches!(hausdorff(&a, &[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn hausdorff_triangle_inequality() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut set = |n: usize| -> Vec<Point3> { (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..1.0))).collect() };
        for _ in 0..20 {
            let (a, b, c) = (set(30), set(40), set(25));
            let ab = hausdorff(&a, &b).unwrap();
            assert_eq!(ab, hausdorff(&b, &a).unwrap());
            assert!(hausdorff(&a, &c).unwrap() <= ab + hausdorff(&b, &c).unwrap() + 1e-12);
        }
    }

    #[test]
    #[ignore = "timing benchmark; run explicitly"]
    fn index_is_much_faster_than_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let a: Vec<Point3> = (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..1.0))).collect();
        let b: Vec<Point3> = (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..1.0))).collect();
        let t = std::time::Instant::now();
        let fast = chamfer(&a, &b).unwrap();
        let t_fast = t.elapsed();
        // brute force on a 1% subsample, extrapolated
        let t = std::time::Instant::now();
        let _ = brute_nn_distances(&a[..n / 100], &b);
        let t_brute = t.elapsed() * 200;
        assert!(fast > 0.0);
        assert!(t_brute >= t_fast * 10, "{t_fast:?} vs ~{t_brute:?}");
    }
}
