use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::thinning::{crossing_number, neighbour_count, ring, RING};
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

pub type Pixel = [usize; 2];

/// Maximum Euclidean distance between a segment end and its node.
pub const RELINK_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Junction,
    Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub x: usize,
    pub y: usize,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub node_a: usize,
    pub node_b: usize,
    /// Ordered chain from the `node_a` end to the `node_b` end.
    pub pixels: Vec<Pixel>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VesselGraph {
    pub nodes: Vec<Node>,
    pub segments: Vec<Segment>,
}

impl VesselGraph {
    /// Incident segment ids per node; a segment joining a node to itself is
    /// listed twice.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for s in &self.segments {
            adj[s.node_a].push(s.id);
            adj[s.node_b].push(s.id);
        }
        adj
    }

    pub fn degree(&self, node: usize) -> usize {
        self.segments
            .iter()
            .map(|s| (s.node_a == node) as usize + (s.node_b == node) as usize)
            .sum()
    }

    pub fn junction_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Junction).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: VesselGraph = serde_json::from_str(text).map_err(|e| Error::Format {
            format: "graph json",
            reason: e.to_string(),
        })?;
        g.check_structure()?;
        Ok(g)
    }

    /// Id and index consistency.
    pub fn check_structure(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format {
            format: "graph json",
            reason: m,
        });
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node {i} has id {}", n.id));
            }
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.id != i || s.node_a >= self.nodes.len() || s.node_b >= self.nodes.len() {
                return bad(format!("segment {i} references missing ids"));
            }
        }
        Ok(())
    }
}

fn chebyshev(a: Pixel, b: Pixel) -> usize {
    a[0].abs_diff(b[0]).max(a[1].abs_diff(b[1]))
}

fn dist2(a: Pixel, b: Pixel) -> usize {
    a[0].abs_diff(b[0]).pow(2) + a[1].abs_diff(b[1]).pow(2)
}

fn neighbours(p: Pixel, w: usize, h: usize) -> impl Iterator<Item = Pixel> {
    RING.into_iter().filter_map(move |(dx, dy)| {
        let (x, y) = (p[0] as i64 + dx, p[1] as i64 + dy);
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then_some([x as usize, y as usize])
    })
}

fn is_four_adjacent(a: Pixel, b: Pixel) -> bool {
    a[0].abs_diff(b[0]) + a[1].abs_diff(b[1]) == 1
}

/// Bifurcation pixels, in row-major order.
///
/// A skeleton pixel is a junction when at least three separate runs of
/// foreground surround it. Counting runs rather than raw neighbours keeps
/// staircase corners and the pixels flanking a T junction from being
/// reported. Clusters of crowded pixels where no single pixel sees three
/// runs, but which still open onto three or more separate branches, are
/// represented by their most connected pixel.
pub fn find_junctions(skel: &BinaryMask) -> Vec<Pixel> {
    let (w, h) = skel.dims();
    let mut is_junction = vec![false; w * h];
    let mut crowded = vec![false; w * h];
    for (x, y) in skel.foreground() {
        let r = ring(skel, x, y);
        if crossing_number(&r) >= 3 {
            is_junction[y * w + x] = true;
        } else if neighbour_count(&r) >= 3 {
            crowded[y * w + x] = true;
        }
    }
    // cluster fallback
    let mut seen = vec![false; w * h];
    for start in 0..w * h {
        if !crowded[start] || seen[start] {
            continue;
        }
        let mut cluster = Vec::new();
        let mut touches_junction = false;
        let mut stack = vec![[start % w, start / w]];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            cluster.push(p);
            for q in neighbours(p, w, h) {
                let i = q[1] * w + q[0];
                touches_junction |= is_junction[i];
                if crowded[i] && !seen[i] {
                    seen[i] = true;
                    stack.push(q);
                }
            }
        }
        if touches_junction {
            continue;
        }
        let in_cluster = |q: Pixel| cluster.contains(&q);
        let mut exits: Vec<Pixel> = Vec::new();
        for &p in &cluster {
            for q in neighbours(p, w, h) {
                if skel.get(q[0], q[1]) && !in_cluster(q) && !exits.contains(&q) {
                    exits.push(q);
                }
            }
        }
        if exit_groups(&exits) >= 3 {
            cluster.sort_by_key(|p| (p[1], p[0]));
            let best = cluster
                .iter()
                .max_by_key(|p| (neighbour_count(&ring(skel, p[0], p[1])), std::cmp::Reverse((p[1], p[0]))))
                .copied()
                .expect("non-empty cluster");
            is_junction[best[1] * w + best[0]] = true;
        }
    }
    (0..w * h)
        .filter(|&i| is_junction[i])
        .map(|i| [i % w, i / w])
        .collect()
}

fn exit_groups(exits: &[Pixel]) -> usize {
    let mut group = vec![usize::MAX; exits.len()];
    let mut count = 0;
    for i in 0..exits.len() {
        if group[i] != usize::MAX {
            continue;
        }
        group[i] = count;
        let mut stack = vec![i];
        while let Some(a) = stack.pop() {
            for b in 0..exits.len() {
                if group[b] == usize::MAX && chebyshev(exits[a], exits[b]) == 1 {
                    group[b] = count;
                    stack.push(b);
                }
            }
        }
        count += 1;
    }
    count
}

/// Skeleton pixels removed around the junctions: each junction plus its
/// foreground 8-neighbours.
pub fn junction_neighbourhoods(skel: &BinaryMask, junctions: &[Pixel]) -> BinaryMask {
    let (w, h) = skel.dims();
    let mut removed = BinaryMask::new(w, h);
    for &j in junctions {
        removed.set(j[0], j[1], true);
        for q in neighbours(j, w, h) {
            if skel.get(q[0], q[1]) {
                removed.set(q[0], q[1], true);
            }
        }
    }
    removed
}

/// Orders a set of 8-connected pixels into chains. Each chain starts at the
/// row-major smallest end pixel (or the smallest pixel if there is no end)
/// and greedily follows unvisited neighbours, preferring 4-adjacent ones.
/// Pixels left over by a walk seed further chains.
fn order_component(mut pixels: Vec<Pixel>, out: &mut Vec<Vec<Pixel>>) {
    pixels.sort_by_key(|p| (p[1], p[0]));
    let mut visited = vec![false; pixels.len()];
    let index_of = |pixels: &[Pixel], q: Pixel| pixels.binary_search_by_key(&(q[1], q[0]), |p| (p[1], p[0])).ok();
    loop {
        let remaining: Vec<usize> = (0..pixels.len()).filter(|&i| !visited[i]).collect();
        if remaining.is_empty() {
            break;
        }
        let degree = |i: usize| {
            remaining
                .iter()
                .filter(|&&j| j != i && chebyshev(pixels[i], pixels[j]) == 1)
                .count()
        };
        let start = remaining
            .iter()
            .copied()
            .find(|&i| degree(i) <= 1)
            .unwrap_or(remaining[0]);
        let mut chain = vec![pixels[start]];
        visited[start] = true;
        let mut cur = pixels[start];
        loop {
            let mut best: Option<(bool, usize)> = None;
            for (dx, dy) in RING {
                let (x, y) = (cur[0] as i64 + dx, cur[1] as i64 + dy);
                if x < 0 || y < 0 {
                    continue;
                }
                let q = [x as usize, y as usize];
                if let Some(i) = index_of(&pixels, q) {
                    if visited[i] {
                        continue;
                    }
                    let key = (!is_four_adjacent(cur, q), i);
                    if best.is_none_or(|b| key < b) {
                        best = Some(key);
                    }
                }
            }
            match best {
                Some((_, i)) => {
                    visited[i] = true;
                    cur = pixels[i];
                    chain.push(cur);
                }
                None => break,
            }
        }
        out.push(chain);
    }
}

/// Splits the skeleton into chains by deleting every junction and its
/// 8-neighbourhood; each remaining 8-connected piece becomes an ordered chain.
pub fn decompose_segments(skel: &BinaryMask, junctions: &[Pixel]) -> Vec<Vec<Pixel>> {
    let (w, h) = skel.dims();
    let removed = junction_neighbourhoods(skel, junctions);
    let rest = BinaryMask::from_bits(
        w,
        h,
        skel.bits().iter().zip(removed.bits()).map(|(&s, &r)| s && !r).collect(),
    )
    .expect("same dimensions");
    let (labels, n) = super::thinning::label_components(&rest);
    let mut comps: Vec<Vec<Pixel>> = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        if l != u32::MAX {
            comps[l as usize].push([i % w, i / w]);
        }
    }
    let mut chains = Vec::new();
    for c in comps {
        order_component(c, &mut chains);
    }
    chains
}

/// Builds the graph: junction nodes first (row-major), then endpoint nodes in
/// the order they are created. Each chain end attaches to the nearest
/// junction whose removed neighbourhood it touches; ends touching none become
/// endpoint nodes. Junctions whose neighbourhoods merge are joined by bridge
/// segments through the removed pixels.
pub fn relink(skel: &BinaryMask, chains: &[Vec<Pixel>], junctions: &[Pixel]) -> VesselGraph {
    let (w, h) = skel.dims();
    let removed = junction_neighbourhoods(skel, junctions);
    let mut nodes: Vec<Node> = junctions
        .iter()
        .enumerate()
        .map(|(id, j)| Node {
            id,
            x: j[0],
            y: j[1],
            kind: NodeKind::Junction,
        })
        .collect();
    // junctions whose neighbourhood touches a pixel, nearest first
    let touching = |p: Pixel| -> Vec<usize> {
        let mut c: Vec<usize> = (0..junctions.len())
            .filter(|&k| {
                let j = junctions[k];
                chebyshev(p, j) <= 2
                    && std::iter::once(p)
                        .chain(neighbours(p, w, h))
                        .any(|q| removed.get(q[0], q[1]) && chebyshev(q, j) <= 1)
            })
            .collect();
        c.sort_by_key(|&k| (dist2(p, junctions[k]), k));
        c
    };
    let mut segments = Vec::new();
    for chain in chains {
        let (a, b) = (chain[0], chain[chain.len() - 1]);
        let ca = touching(a);
        let na = match ca.first() {
            Some(&k) => k,
            None => push_endpoint(&mut nodes, a),
        };
        let cb = touching(b);
        let pick_b = if chain.len() == 1 {
            cb.iter().copied().find(|&k| k != na)
        } else {
            cb.first().copied()
        };
        let nb = match pick_b {
            Some(k) => k,
            None => push_endpoint(&mut nodes, b),
        };
        segments.push(Segment {
            id: segments.len(),
            node_a: na,
            node_b: nb,
            pixels: chain.clone(),
        });
    }
    for (na, nb, pixels) in bridges(&removed, junctions) {
        segments.push(Segment {
            id: segments.len(),
            node_a: na,
            node_b: nb,
            pixels,
        });
    }
    VesselGraph { nodes, segments }
}

fn push_endpoint(nodes: &mut Vec<Node>, p: Pixel) -> usize {
    let id = nodes.len();
    nodes.push(Node {
        id,
        x: p[0],
        y: p[1],
        kind: NodeKind::Endpoint,
    });
    id
}

/// Links junctions that share a connected removed region: each junction,
/// taken in breadth-first order from the region's first junction, is joined
/// to the nearest already linked one by a shortest path through the region.
fn bridges(removed: &BinaryMask, junctions: &[Pixel]) -> Vec<(usize, usize, Vec<Pixel>)> {
    let (w, h) = removed.dims();
    let (labels, n) = super::thinning::label_components(removed);
    let mut by_region: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, j) in junctions.iter().enumerate() {
        by_region[labels[j[1] * w + j[0]] as usize].push(k);
    }
    let junction_at = |p: Pixel| junctions.iter().position(|&j| j == p);
    let mut out = Vec::new();
    for members in by_region.into_iter().filter(|m| m.len() >= 2) {
        let mut linked = vec![members[0]];
        while linked.len() < members.len() {
            // multi-source BFS from the linked set until an unlinked junction is hit
            let mut prev = vec![usize::MAX; w * h];
            let mut queue = VecDeque::new();
            for &k in &linked {
                let j = junctions[k];
                prev[j[1] * w + j[0]] = j[1] * w + j[0];
                queue.push_back(j);
            }
            let mut found = None;
            'bfs: while let Some(p) = queue.pop_front() {
                for q in neighbours(p, w, h) {
                    let i = q[1] * w + q[0];
                    if !removed.get(q[0], q[1]) || prev[i] != usize::MAX {
                        continue;
                    }
                    prev[i] = p[1] * w + p[0];
                    if let Some(k) = junction_at(q) {
                        if !linked.contains(&k) {
                            found = Some((k, q));
                            break 'bfs;
                        }
                    }
                    queue.push_back(q);
                }
            }
            let (k, end) = found.expect("region is connected");
            let mut path = Vec::new();
            let mut i = prev[end[1] * w + end[0]];
            while prev[i] != i {
                path.push([i % w, i / w]);
                i = prev[i];
            }
            let origin = junction_at([i % w, i / w]).expect("bfs starts at a junction");
            path.reverse();
            out.push((origin, k, path));
            linked.push(k);
        }
    }
    out
}

/// Deletes short side branches: a run of pixels traced from an end pixel
/// that reaches a junction pixel after fewer than `min_len + 1` steps.
/// Isolated short pieces are kept.
pub fn prune_spurs(skel: &BinaryMask, min_len: usize) -> BinaryMask {
    let (w, h) = skel.dims();
    let mut out = skel.clone();
    if min_len == 0 {
        return out;
    }
    let ends: Vec<Pixel> = skel
        .foreground()
        .filter(|&(x, y)| neighbour_count(&ring(skel, x, y)) == 1)
        .map(|(x, y)| [x, y])
        .collect();
    for e in ends {
        let mut path = vec![e];
        let mut cur = e;
        let reached = loop {
            let next: Vec<Pixel> = neighbours(cur, w, h)
                .filter(|q| skel.get(q[0], q[1]) && !path.contains(q))
                .collect();
            if next.is_empty() {
                break false;
            }
            if next.iter().any(|q| crossing_number(&ring(skel, q[0], q[1])) >= 3) {
                break true;
            }
            let &q = next
                .iter()
                .min_by_key(|&&q| (!is_four_adjacent(cur, q), q[1], q[0]))
                .expect("non-empty");
            path.push(q);
            cur = q;
            if path.len() > min_len {
                break false;
            }
        };
        if reached && path.len() <= min_len {
            for p in path {
                out.set(p[0], p[1], false);
            }
        }
    }
    out
}

/// Graph invariants: chains are 8-connected and duplicate-free, ends lie
/// within the relink radius of their nodes, junctions have degree >= 3 and
/// endpoints degree 1.
pub fn validate_graph(g: &VesselGraph) -> std::result::Result<(), String> {
    g.check_structure().map_err(|e| e.to_string())?;
    for s in &g.segments {
        for w in s.pixels.windows(2) {
            if chebyshev(w[0], w[1]) != 1 {
                return Err(format!("segment {} breaks between {:?} and {:?}", s.id, w[0], w[1]));
            }
        }
        let mut sorted = s.pixels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != s.pixels.len() {
            return Err(format!("segment {} repeats a pixel", s.id));
        }
        if let (Some(&first), Some(&last)) = (s.pixels.first(), s.pixels.last()) {
            for (node, end) in [(s.node_a, first), (s.node_b, last)] {
                let n = &g.nodes[node];
                if (dist2([n.x, n.y], end) as f64).sqrt() > RELINK_RADIUS {
                    return Err(format!("segment {} end {:?} is far from node {}", s.id, end, node));
                }
            }
        }
    }
    for n in &g.nodes {
        let d = g.degree(n.id);
        let ok = match n.kind {
            NodeKind::Junction => d >= 3,
            NodeKind::Endpoint => d == 1,
        };
        if !ok {
            return Err(format!("{:?} node {} has degree {d}", n.kind, n.id));
        }
    }
    Ok(())
}
