//! Lifting the vessel graph to 3D with a depth map, resampling, tube
//! sweeping and export.

mod export;
mod mesh;

pub use export::{
    encode_cloud_ply, encode_mesh_ply, encode_polydata, load_ply, parse_ply, save_cloud_ply, save_mesh_ply,
    save_polydata, PlyData,
};
pub use mesh::{tube_mesh, TubeMesh, Vec3};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DepthMap, PhysicalScale};
use crate::vesselgraph::{self, GraphExtraction, Pixel, VesselGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub scale: PhysicalScale,
    /// Resampling step in pixels (converted with `sx`).
    pub resample_step: f64,
    pub sides: usize,
    pub caps: bool,
    /// Side branches shorter than this many pixels are pruned; 0 disables.
    pub min_spur: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            scale: PhysicalScale::for_width(512),
            resample_step: 1.0,
            sides: 8,
            caps: true,
            min_spur: 3,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        if !(self.resample_step > 0.0 && self.resample_step.is_finite()) {
            return Err(Error::Config(format!("resample_step must be > 0, got {}", self.resample_step)));
        }
        if self.sides < 3 {
            return Err(Error::Config(format!("sides must be >= 3, got {}", self.sides)));
        }
        Ok(())
    }
}

/// A lifted polyline in millimetres with per-point tube radius (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline3 {
    pub points: Vec<Vec3>,
    pub radii: Vec<f64>,
}

/// Depth lookup that falls back to the nearest valid pixel.
pub struct DepthLookup<'a> {
    depth: &'a DepthMap,
    valid: Vec<Pixel>,
    filled: std::cell::Cell<usize>,
}

impl<'a> DepthLookup<'a> {
    pub fn new(depth: &'a DepthMap) -> Self {
        let valid = depth.valid().foreground().map(|(x, y)| [x, y]).collect();
        Self {
            depth,
            valid,
            filled: std::cell::Cell::new(0),
        }
    }

    /// Normalised depth at a pixel. Invalid pixels take the value of the
    /// nearest valid pixel (ties in row-major order); with no valid pixel at
    /// all the depth is 0.
    pub fn at(&self, p: Pixel) -> f64 {
        if self.depth.is_valid(p[0], p[1]) {
            return self
                .depth
                .image()
                .bilinear_sample(p[0] as f64, p[1] as f64)
                .expect("pixel inside the depth map");
        }
        self.filled.set(self.filled.get() + 1);
        let nearest = self
            .valid
            .iter()
            .min_by_key(|q| q[0].abs_diff(p[0]).pow(2) + q[1].abs_diff(p[1]).pow(2));
        nearest.map_or(0.0, |q| self.depth.get(q[0], q[1]) as f64)
    }

    pub fn filled(&self) -> usize {
        self.filled.get()
    }
}

/// Lifts one pixel: `(x·sx, y·sy, depth·sz)`.
pub fn lift_pixel(p: Pixel, lookup: &DepthLookup<'_>, scale: &PhysicalScale) -> Vec3 {
    scale.apply(p[0] as f64, p[1] as f64, lookup.at(p))
}

/// Pixel path of a segment: its node, the chain, the other node, with
/// repeated consecutive pixels removed.
pub fn segment_path(graph: &VesselGraph, segment: usize) -> Vec<Pixel> {
    let s = &graph.segments[segment];
    let na = &graph.nodes[s.node_a];
    let nb = &graph.nodes[s.node_b];
    let mut path: Vec<Pixel> = Vec::with_capacity(s.pixels.len() + 2);
    for p in std::iter::once([na.x, na.y])
        .chain(s.pixels.iter().copied())
        .chain(std::iter::once([nb.x, nb.y]))
    {
        if path.last() != Some(&p) {
            path.push(p);
        }
    }
    path
}

/// Lifts every segment of the graph; returns the polylines (segment order)
/// and the number of pixels whose depth had to be filled.
pub fn lift_centerline(
    graph: &VesselGraph,
    depth: &DepthMap,
    radius_px: &[f64],
    scale: &PhysicalScale,
) -> Result<(Vec<Polyline3>, usize)> {
    let (w, h) = depth.dims();
    if radius_px.len() != w * h {
        return Err(Error::shape("radius map does not match the depth map"));
    }
    let lookup = DepthLookup::new(depth);
    let mut out = Vec::with_capacity(graph.segments.len());
    for s in 0..graph.segments.len() {
        let path = segment_path(graph, s);
        if path.iter().any(|p| p[0] >= w || p[1] >= h) {
            return Err(Error::shape("graph pixel outside the depth map"));
        }
        out.push(Polyline3 {
            points: path.iter().map(|&p| lift_pixel(p, &lookup, scale)).collect(),
            radii: path
                .iter()
                .map(|p| radius_px[p[1] * w + p[0]].max(0.5) * scale.sx)
                .collect(),
        });
    }
    Ok((out, lookup.filled()))
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    mesh::norm(mesh::sub(a, b))
}

/// Arc-length resampling with uniform spacing no larger than `step`. The
/// first and last points are kept exactly; radii are interpolated linearly.
pub fn resample_segment(line: &Polyline3, step: f64) -> Result<Polyline3> {
    if !(step > 0.0) {
        return Err(Error::InvalidValue(format!("resample step must be > 0, got {step}")));
    }
    let n = line.points.len();
    if n < 2 {
        return Ok(line.clone());
    }
    let mut cum = vec![0.0];
    for w in line.points.windows(2) {
        cum.push(cum.last().unwrap() + dist(w[0], w[1]));
    }
    let total = cum[n - 1];
    if total == 0.0 {
        return Ok(line.clone());
    }
    let pieces = (total / step).ceil().max(1.0) as usize;
    let mut points = vec![line.points[0]];
    let mut radii = vec![line.radii[0]];
    let mut seg = 0;
    for k in 1..pieces {
        let s = total * k as f64 / pieces as f64;
        while cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let (a, b) = (line.points[seg], line.points[seg + 1]);
        points.push(mesh::add(a, mesh::scale(mesh::sub(b, a), t)));
        radii.push(line.radii[seg] + t * (line.radii[seg + 1] - line.radii[seg]));
    }
    points.push(line.points[n - 1]);
    radii.push(line.radii[n - 1]);
    Ok(Polyline3 { points, radii })
}

pub fn polyline_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub extraction: GraphExtraction,
    /// Resampled polylines in segment order.
    pub polylines: Vec<Polyline3>,
    /// Every skeleton pixel, lifted, in row-major order.
    pub cloud: Vec<Vec3>,
    pub mesh: TubeMesh,
    pub filled_pixels: usize,
}

/// Skeleton, graph, lifting, resampling and tube sweep.
pub fn reconstruct(seg: &BinaryMask, depth: &DepthMap, cfg: &ReconConfig) -> Result<Reconstruction> {
    cfg.validate()?;
    if seg.dims() != depth.dims() {
        return Err(Error::shape(format!(
            "segmentation {:?} and depth {:?} differ in size",
            seg.dims(),
            depth.dims()
        )));
    }
    if seg.is_empty() {
        log::warn!("empty segmentation; reconstruction is empty");
    }
    let extraction = vesselgraph::extract_graph(seg, cfg.min_spur);
    let (lifted, filled) = lift_centerline(&extraction.graph, depth, &extraction.radius, &cfg.scale)?;
    if filled > 0 {
        log::warn!("{filled} centreline pixels had no valid depth and were filled");
    }
    let step = cfg.resample_step * cfg.scale.sx;
    let polylines: Vec<Polyline3> = lifted
        .par_iter()
        .map(|l| resample_segment(l, step))
        .collect::<Result<_>>()?;
    let tubes: Vec<Option<TubeMesh>> = polylines
        .par_iter()
        .map(|l| tube_mesh(&l.points, &l.radii, cfg.sides, cfg.caps).ok())
        .collect();
    let mut mesh = TubeMesh::default();
    for t in tubes.iter().flatten() {
        mesh.append(t);
    }
    let lookup = DepthLookup::new(depth);
    let cloud = extraction
        .skeleton
        .foreground()
        .map(|(x, y)| lift_pixel([x, y], &lookup, &cfg.scale))
        .collect();
    Ok(Reconstruction {
        extraction,
        polylines,
        cloud,
        mesh,
        filled_pixels: filled,
    })
}
