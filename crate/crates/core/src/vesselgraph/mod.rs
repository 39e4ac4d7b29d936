//! Centreline extraction and vessel graph construction from a binary
//! segmentation.

mod distance;
mod graph;
mod thinning;

pub use distance::{distance_transform, estimate_radius};
pub use graph::{
    decompose_segments, find_junctions, junction_neighbourhoods, prune_spurs, relink, validate_graph, Node,
    NodeKind, Pixel, Segment, VesselGraph, RELINK_RADIUS,
};
pub use thinning::{count_components, has_2x2_block, label_components, skeletonize};

use crate::raster::BinaryMask;

/// Everything derived from one segmentation mask.
#[derive(Debug, Clone)]
pub struct GraphExtraction {
    pub skeleton: BinaryMask,
    pub junctions: Vec<Pixel>,
    pub graph: VesselGraph,
    /// Distance-transform radius per pixel (row-major), meaningful on the skeleton.
    pub radius: Vec<f64>,
}

/// Thinning, spur pruning, junction detection, decomposition and relinking.
pub fn extract_graph(mask: &BinaryMask, min_spur: usize) -> GraphExtraction {
    let skeleton = prune_spurs(&skeletonize(mask), min_spur);
    let junctions = find_junctions(&skeleton);
    let chains = decompose_segments(&skeleton, &junctions);
    let graph = relink(&skeleton, &chains, &junctions);
    let radius = distance_transform(mask).into_iter().map(|d| (d - 0.5).max(0.0)).collect();
    GraphExtraction {
        skeleton,
        junctions,
        graph,
        radius,
    }
}
