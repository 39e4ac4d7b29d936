//! Synthetic vessel trees with exact ground truth.
//!
//! Trees are grown in normalised `[0, 1]^2` coordinates and only then scaled
//! to the canvas, so the random stream (and therefore the topology) does not
//! depend on the canvas size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DepthMap, Image2D, PhysicalScale};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Number of generations, the root included.
    pub depth_levels: usize,
    pub branch_prob: f64,
    /// Root radius in pixels.
    pub radius_root: f64,
    pub radius_decay: f64,
    /// Maximum heading change per growth step, radians.
    pub angle_jitter: f64,
    pub width: usize,
    pub height: usize,
    /// Depth of the root generation and of the deepest generation.
    pub z_min: f64,
    pub z_max: f64,
    /// Amplitude of the along-branch depth undulation.
    pub z_wobble: f64,
    pub noise_level: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            depth_levels: 4,
            branch_prob: 0.8,
            radius_root: 6.0,
            radius_decay: 0.7,
            angle_jitter: 0.12,
            width: 512,
            height: 512,
            z_min: 0.15,
            z_max: 0.85,
            z_wobble: 0.05,
            noise_level: 0.05,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth_levels == 0 {
            return fail("depth_levels must be >= 1".into());
        }
        if !(self.radius_root >= 1.0) || !self.radius_root.is_finite() {
            return fail(format!("radius_root must be >= 1 px, got {}", self.radius_root));
        }
        if !(self.radius_decay > 0.0 && self.radius_decay < 1.0) {
            return fail(format!("radius_decay must lie in (0, 1), got {}", self.radius_decay));
        }
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return fail(format!("branch_prob must lie in [0, 1], got {}", self.branch_prob));
        }
        if !(self.angle_jitter >= 0.0 && self.angle_jitter.is_finite()) {
            return fail(format!("angle_jitter must be >= 0, got {}", self.angle_jitter));
        }
        if self.width < 8 || self.height < 8 {
            return fail(format!("canvas {}x{} is too small", self.width, self.height));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.z_min) || !unit(self.z_max) || self.z_min > self.z_max {
            return fail(format!("need 0 <= z_min <= z_max <= 1, got {} {}", self.z_min, self.z_max));
        }
        if !(self.z_wobble >= 0.0 && self.z_wobble <= 0.5) {
            return fail(format!("z_wobble must lie in [0, 0.5], got {}", self.z_wobble));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail(format!("noise_level must be >= 0, got {}", self.noise_level));
        }
        Ok(())
    }

    pub fn scale(&self) -> PhysicalScale {
        PhysicalScale::for_width(self.width)
    }
}

/// One vessel: a polyline in pixel coordinates with normalised depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// `(x, y, z)` with x, y in pixels and z in `[0, 1]`.
    pub points: Vec<[f64; 3]>,
    pub radius: f64,
    pub generation: usize,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomScene {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub branches: Vec<Branch>,
}

impl PhantomScene {
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.branches.iter().enumerate() {
            if b.points.len() < 2 {
                return Err(Error::InvalidValue(format!("branch {i} has fewer than 2 points")));
            }
            if !(b.radius > 0.0) {
                return Err(Error::InvalidValue(format!("branch {i} has radius {}", b.radius)));
            }
            if b.points.iter().any(|p| !(0.0..=1.0).contains(&p[2]) || !p[0].is_finite() || !p[1].is_finite()) {
                return Err(Error::InvalidValue(format!("branch {i} has a point out of range")));
            }
            if b.parent.is_some_and(|p| p >= i) {
                return Err(Error::InvalidValue(format!("branch {i} precedes its parent")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub angiogram: Image2D,
    pub depth_gt: DepthMap,
    pub seg_gt: BinaryMask,
    /// Every branch vertex in millimetres.
    pub centerline_gt: Vec<[f64; 3]>,
}

const STEP: f64 = 0.012;
const MARGIN: f64 = 0.02;
const ROOT_LENGTH: f64 = 0.95;

struct Pending {
    start: [f64; 2],
    heading: f64,
    length: f64,
    generation: usize,
    parent: Option<usize>,
    z_start: f64,
}

fn inside(p: [f64; 2]) -> bool {
    (MARGIN..=1.0 - MARGIN).contains(&p[0]) && (MARGIN..=1.0 - MARGIN).contains(&p[1])
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Grows a random tree. Deterministic in `(seed, config)`.
pub fn generate_tree(seed: u64, config: &PhantomConfig) -> Result<PhantomScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generation_z = |g: usize| {
        let t = if config.depth_levels > 1 {
            g as f64 / (config.depth_levels - 1) as f64
        } else {
            0.0
        };
        config.z_min + (config.z_max - config.z_min) * t
    };

    let side = rng.random_range(0..4u32);
    let along = rng.random_range(0.25..0.75);
    let (start, inward) = match side {
        0 => ([along, MARGIN], std::f64::consts::FRAC_PI_2),
        1 => ([1.0 - MARGIN, along], std::f64::consts::PI),
        2 => ([along, 1.0 - MARGIN], -std::f64::consts::FRAC_PI_2),
        _ => ([MARGIN, along], 0.0),
    };
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(Pending {
        start,
        heading: inward + rng.random_range(-0.35..0.35),
        length: ROOT_LENGTH,
        generation: 0,
        parent: None,
        z_start: generation_z(0),
    });

    // normalised polylines with their per-vertex headings
    let mut grown: Vec<(Vec<[f64; 3]>, usize, Option<usize>)> = Vec::new();
    while let Some(job) = queue.pop_front() {
        let steps = (job.length / STEP).ceil().max(1.0) as usize;
        let target_z = generation_z(job.generation);
        let freq = rng.random_range(0.5..1.5);
        let mut heading = job.heading;
        let mut p = job.start;
        let mut pts = vec![[p[0], p[1], job.z_start]];
        let mut headings = vec![heading];
        for i in 1..=steps {
            heading += config.angle_jitter * rng.random_range(-1.0..1.0);
            let next = [p[0] + STEP * heading.cos(), p[1] + STEP * heading.sin()];
            if !inside(next) {
                break;
            }
            p = next;
            let s = i as f64 / steps as f64;
            let z = job.z_start
                + (target_z - job.z_start) * smoothstep(s / 0.3)
                + config.z_wobble * (2.0 * std::f64::consts::PI * freq * s).sin();
            pts.push([p[0], p[1], z.clamp(0.0, 1.0)]);
            headings.push(heading);
        }
        // child candidates are drawn unconditionally to keep the stream stable
        let mut children = Vec::new();
        for sign in [1.0, -1.0] {
            let spawn = rng.random_bool(config.branch_prob);
            let frac = rng.random_range(0.3..0.8);
            let turn = sign * rng.random_range(0.5..1.0);
            let shrink = rng.random_range(0.45..0.65);
            if spawn && job.generation + 1 < config.depth_levels {
                children.push((frac, turn, shrink));
            }
        }
        if pts.len() < 2 {
            continue;
        }
        let index = grown.len();
        let n = pts.len();
        for (frac, turn, shrink) in children {
            let at = ((n - 1) as f64 * frac).round() as usize;
            if at == 0 || at + 1 >= n {
                continue;
            }
            queue.push_back(Pending {
                start: [pts[at][0], pts[at][1]],
                heading: headings[at] + turn,
                length: job.length * shrink,
                generation: job.generation + 1,
                parent: Some(index),
                z_start: pts[at][2],
            });
        }
        grown.push((pts, job.generation, job.parent));
    }
    if grown.is_empty() {
        return Err(Error::EmptyScene);
    }

    let (sx, sy) = ((config.width - 1) as f64, (config.height - 1) as f64);
    let branches = grown
        .into_iter()
        .map(|(pts, generation, parent)| {
            let scaled: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] * sx, p[1] * sy, p[2]]).collect();
            Branch {
                points: densify(&scaled, 1.0),
                radius: config.radius_root * config.radius_decay.powi(generation as i32),
                generation,
                parent,
            }
        })
        .collect();
    Ok(PhantomScene {
        width: config.width,
        height: config.height,
        seed,
        branches,
    })
}

/// Inserts evenly spaced points so consecutive xy spacing is at most `max_gap`.
/// Original vertices are kept.
fn densify(pts: &[[f64; 3]], max_gap: f64) -> Vec<[f64; 3]> {
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let k = (d / max_gap).ceil().max(1.0) as usize;
        for j in 1..k {
            let t = j as f64 / k as f64;
            out.push([
                a[0] + t * (b[0] - a[0]),
                a[1] + t * (b[1] - a[1]),
                a[2] + t * (b[2] - a[2]),
            ]);
        }
        out.push(b);
    }
    out
}

/// Distance from `p` to segment `ab` and the segment parameter of the closest point.
fn segment_distance(p: [f64; 2], a: [f64; 3], b: [f64; 3]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    ((cx * cx + cy * cy).sqrt(), t)
}

/// Renders the scene. Pixel centres sit at integer coordinates; a pixel is a
/// vessel pixel when it lies within `radius` of a branch polyline, and takes
/// the smallest depth among the covering branches.
pub fn rasterize(scene: &PhantomScene, noise_level: f64, scale: &PhysicalScale) -> Result<PhantomSample> {
    scene.validate()?;
    let (w, h) = (scene.width, scene.height);
    let mut depth = vec![f32::INFINITY; w * h];
    for b in &scene.branches {
        for seg in b.points.windows(2) {
            let (a, c) = (seg[0], seg[1]);
            let r = b.radius;
            let x0 = (a[0].min(c[0]) - r).floor().max(0.0) as usize;
            let y0 = (a[1].min(c[1]) - r).floor().max(0.0) as usize;
            let x1 = ((a[0].max(c[0]) + r).ceil().max(-1.0) as i64).min(w as i64 - 1);
            let y1 = ((a[1].max(c[1]) + r).ceil().max(-1.0) as i64).min(h as i64 - 1);
            for y in y0 as i64..=y1 {
                for x in x0 as i64..=x1 {
                    let (d, t) = segment_distance([x as f64, y as f64], a, c);
                    if d <= r {
                        let z = (a[2] + t * (c[2] - a[2])) as f32;
                        let cell = &mut depth[y as usize * w + x as usize];
                        if z < *cell {
                            *cell = z;
                        }
                    }
                }
            }
        }
    }
    let bits: Vec<bool> = depth.iter().map(|d| d.is_finite()).collect();
    let seg_gt = BinaryMask::from_bits(w, h, bits)?;
    let depth_img = Image2D::from_vec(w, h, depth.iter().map(|&d| if d.is_finite() { d } else { 0.0 }).collect())?;
    let depth_gt = DepthMap::new(depth_img, seg_gt.clone())?;

    let mut angio: Vec<f32> = seg_gt.bits().iter().map(|&b| b as u8 as f32).collect();
    if noise_level > 0.0 {
        let normal = Normal::new(0.0, noise_level).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        rng.set_stream(1);
        for v in angio.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    let centerline_gt = scene
        .branches
        .iter()
        .flat_map(|b| b.points.iter().map(|p| scale.apply(p[0], p[1], p[2])))
        .collect();
    Ok(PhantomSample {
        angiogram: Image2D::from_vec(w, h, angio)?,
        depth_gt,
        seg_gt,
        centerline_gt,
    })
}

/// `generate_tree` followed by `rasterize` with the configured noise and scale.
pub fn generate_sample(seed: u64, config: &PhantomConfig) -> Result<(PhantomScene, PhantomSample)> {
    let scene = generate_tree(seed, config)?;
    let sample = rasterize(&scene, config.noise_level, &config.scale())?;
    Ok((scene, sample))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(y: f64, z: f64, x0: f64, x1: f64, r: f64) -> Branch {
        Branch {
            points: vec![[x0, y, z], [x1, y, z]],
            radius: r,
            generation: 0,
            parent: None,
        }
    }

    fn scene(branches: Vec<Branch>) -> PhantomScene {
        PhantomScene {
            width: 32,
            height: 32,
            seed: 1,
            branches,
        }
    }

    #[test]
    fn deterministic() {
        let c = PhantomConfig::default();
        assert_eq!(generate_tree(11, &c).unwrap(), generate_tree(11, &c).unwrap());
        assert_ne!(generate_tree(11, &c).unwrap(), generate_tree(12, &c).unwrap());
    }

    #[test]
    fn single_generation_without_branching_gives_one_branch() {
        let c = PhantomConfig {
            depth_levels: 1,
            branch_prob: 0.0,
            ..Default::default()
        };
        for seed in 0..5 {
            assert_eq!(generate_tree(seed, &c).unwrap().branches.len(), 1);
        }
    }

    #[test]
    fn tree_invariants_hold() {
        let c = PhantomConfig::default();
        for seed in 0..20 {
            let s = generate_tree(seed, &c).unwrap();
            s.validate().unwrap();
            for b in &s.branches {
                for p in &b.points {
                    assert!(p[0] >= 0.0 && p[0] <= (c.width - 1) as f64);
                    assert!(p[1] >= 0.0 && p[1] <= (c.height - 1) as f64);
                }
                for w in b.points.windows(2) {
                    let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
                    assert!(d <= 1.0 + 1e-9);
                }
                if let Some(p) = b.parent {
                    let parent = &s.branches[p];
                    assert!((b.radius - parent.radius * c.radius_decay).abs() < 1e-12);
                    assert!(b.radius < parent.radius);
                    assert!(parent.points.contains(&b.points[0]), "child root lies on parent");
                }
            }
        }
    }

    #[test]
    fn canvas_scaling_preserves_topology() {
        let small = PhantomConfig::default();
        let big = PhantomConfig {
            width: 1024,
            height: 1024,
            ..small
        };
        for seed in 0..5 {
            let a = generate_tree(seed, &small).unwrap();
            let b = generate_tree(seed, &big).unwrap();
            let parents = |s: &PhantomScene| s.branches.iter().map(|b| b.parent).collect::<Vec<_>>();
            assert_eq!(parents(&a), parents(&b));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            PhantomConfig { depth_levels: 0, ..Default::default() },
            PhantomConfig { radius_root: 0.5, ..Default::default() },
            PhantomConfig { branch_prob: 1.5, ..Default::default() },
        ];
        for c in bad {
            assert!(generate_tree(0, &c).is_err());
        }
    }

    #[test]
    fn constant_depth_branch() {
        let s = scene(vec![straight(16.0, 0.5, 2.0, 29.0, 2.0)]);
        let out = rasterize(&s, 0.0, &PhysicalScale::for_width(32)).unwrap();
        assert!(out.seg_gt.count() > 0);
        for (x, y) in out.seg_gt.foreground() {
            assert_eq!(out.depth_gt.get(x, y), 0.5);
        }
        assert_eq!(out.depth_gt.valid(), &out.seg_gt);
        assert_eq!(out.angiogram, out.seg_gt.to_image());
    }

    #[test]
    fn crossing_takes_the_shallower_branch() {
        let mut v = straight(0.0, 0.7, 16.0, 16.0, 1.5);
        v.points = vec![[16.0, 2.0, 0.7], [16.0, 29.0, 0.7]];
        let s = scene(vec![v, straight(16.0, 0.3, 2.0, 29.0, 1.5)]);
        let out = rasterize(&s, 0.0, &PhysicalScale::for_width(32)).unwrap();
        assert!((out.depth_gt.get(16, 16) - 0.3).abs() < 1e-7);
        assert!((out.depth_gt.get(16, 5) - 0.7).abs() < 1e-7);
    }

    #[test]
    fn deeper_branch_never_lowers_depth() {
        let c = PhantomConfig { width: 128, height: 128, radius_root: 3.0, ..Default::default() };
        let s = generate_tree(3, &c).unwrap();
        let base = rasterize(&s, 0.0, &c.scale()).unwrap();
        let mut deeper = s.clone();
        for p in deeper.branches[0].points.iter_mut() {
            p[2] = (p[2] + 0.2).min(1.0);
        }
        let moved = rasterize(&deeper, 0.0, &c.scale()).unwrap();
        for (a, b) in base.depth_gt.image().data().iter().zip(moved.depth_gt.image().data()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn noise_is_clipped_and_seeded() {
        let c = PhantomConfig { width: 64, height: 64, radius_root: 3.0, ..Default::default() };
        let (_, a) = generate_sample(5, &c).unwrap();
        let (_, b) = generate_sample(5, &c).unwrap();
        assert_eq!(a.angiogram, b.angiogram);
        assert!(a.angiogram.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a.angiogram, a.seg_gt.to_image());
    }
}
