use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 1e-12).then(|| scale(a, 1.0 / n))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TubeMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex tube radius; zero for cap centres.
    pub radius: Vec<f64>,
}

impl TubeMesh {
    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &TubeMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.radius.extend_from_slice(&other.radius);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if self.radius.len() != self.vertices.len() {
            return Err(Error::shape("radius count differs from vertex count"));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite vertex".into()));
        }
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::InvalidValue(format!("triangle {t:?} out of range")));
            }
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            if norm(cross(sub(b, a), sub(c, a))) <= 1e-18 {
                return Err(Error::InvalidValue(format!("degenerate triangle {t:?}")));
            }
        }
        Ok(())
    }
}

/// Drops consecutive duplicate points (and their radii).
fn collapse(points: &[Vec3], radii: &[f64]) -> (Vec<Vec3>, Vec<f64>) {
    let mut p: Vec<Vec3> = Vec::with_capacity(points.len());
    let mut r = Vec::with_capacity(points.len());
    for (&q, &rad) in points.iter().zip(radii) {
        if p.last().is_some_and(|&l| norm(sub(q, l)) <= 1e-12) {
            continue;
        }
        p.push(q);
        r.push(rad);
    }
    (p, r)
}

fn any_perpendicular(t: Vec3) -> Vec3 {
    let axis = if t[0].abs() <= t[1].abs() && t[0].abs() <= t[2].abs() {
        [1.0, 0.0, 0.0]
    } else if t[1].abs() <= t[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    normalize(cross(t, axis)).expect("axis not parallel to tangent")
}

/// Rotates `v` by the minimal rotation taking unit `from` onto unit `to`.
fn transport(v: Vec3, from: Vec3, to: Vec3) -> Vec3 {
    let axis = cross(from, to);
    let s = norm(axis);
    let c = dot(from, to);
    if s < 1e-12 {
        if c > 0.0 {
            return v;
        }
        // reversal: any rotation by pi about an axis perpendicular to `from`
        let k = any_perpendicular(from);
        return sub(scale(k, 2.0 * dot(k, v)), v);
    }
    let k = scale(axis, 1.0 / s);
    // Rodrigues
    add(
        add(scale(v, c), scale(cross(k, v), s)),
        scale(k, dot(k, v) * (1.0 - c)),
    )
}

/// Sweeps circles of the given radii along a polyline with parallel-transport
/// frames. Ring `i` holds vertices `i*sides .. (i+1)*sides`; with caps, the
/// start and end centres follow. Faces point outwards.
pub fn tube_mesh(points: &[Vec3], radii: &[f64], sides: usize, caps: bool) -> Result<TubeMesh> {
    if points.len() != radii.len() {
        return Err(Error::shape("one radius per point is required"));
    }
    if sides < 3 {
        return Err(Error::InvalidValue(format!("a tube needs at least 3 sides, got {sides}")));
    }
    if radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidValue("tube radii must be positive".into()));
    }
    let (p, r) = collapse(points, radii);
    if p.len() < 2 {
        return Err(Error::InvalidValue("fewer than 2 distinct points".into()));
    }
    let n = p.len();
    let dirs: Vec<Vec3> = p
        .windows(2)
        .map(|w| normalize(sub(w[1], w[0])).expect("distinct points"))
        .collect();
    let tangents: Vec<Vec3> = (0..n)
        .map(|i| {
            if i == 0 {
                dirs[0]
            } else if i == n - 1 {
                dirs[n - 2]
            } else {
                normalize(add(dirs[i - 1], dirs[i])).unwrap_or(dirs[i - 1])
            }
        })
        .collect();
    let mut normal = any_perpendicular(tangents[0]);
    let mut mesh = TubeMesh::default();
    for i in 0..n {
        if i > 0 {
            normal = transport(normal, tangents[i - 1], tangents[i]);
            // re-orthogonalise against drift
            let t = tangents[i];
            normal = normalize(sub(normal, scale(t, dot(normal, t)))).unwrap_or_else(|| any_perpendicular(t));
        }
        let binormal = cross(tangents[i], normal);
        for k in 0..sides {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
            let offset = add(scale(normal, theta.cos()), scale(binormal, theta.sin()));
            mesh.vertices.push(add(p[i], scale(offset, r[i])));
            mesh.radius.push(r[i]);
        }
    }
    let s = sides as u32;
    for i in 0..(n as u32 - 1) {
        for k in 0..s {
            let a = i * s + k;
            let b = i * s + (k + 1) % s;
            let c = (i + 1) * s + k;
            let d = (i + 1) * s + (k + 1) % s;
            mesh.triangles.push([a, b, d]);
            mesh.triangles.push([a, d, c]);
        }
    }
    if caps {
        let start = (n * sides) as u32;
        let end = start + 1;
        mesh.vertices.push(p[0]);
        mesh.vertices.push(p[n - 1]);
        mesh.radius.push(0.0);
        mesh.radius.push(0.0);
        let last = (n as u32 - 1) * s;
        for k in 0..s {
            mesh.triangles.push([start, (k + 1) % s, k]);
            mesh.triangles.push([end, last + k, last + (k + 1) % s]);
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let m = tube_mesh(&[[0.0; 3], [1.0, 0.0, 0.0]], &[0.1, 0.1], 8, false).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (16, 16));
        let m = tube_mesh(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.5, 0.0]], &[0.1; 3], 6, true).unwrap();
        assert_eq!(m.vertices.len(), 3 * 6 + 2);
        assert_eq!(m.triangles.len(), 2 * 6 * 2 + 2 * 6);
        m.validate().unwrap();
    }

    #[test]
    fn capped_tube_is_closed_with_euler_two() {
        let m = tube_mesh(&[[0.0; 3], [0.0, 0.0, 1.0], [0.3, 0.2, 2.0]], &[0.2, 0.3, 0.2], 7, true).unwrap();
        let mut edges = std::collections::BTreeMap::new();
        for t in &m.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
        let chi = m.vertices.len() as i64 - edges.len() as i64 + m.triangles.len() as i64;
        assert_eq!(chi, 2);
    }

    #[test]
    fn straight_tube_is_a_cylinder() {
        let r = 0.37;
        let m = tube_mesh(&[[1.0, 2.0, 3.0], [1.0, 2.0, 4.0], [1.0, 2.0, 6.0]], &[r; 3], 12, false).unwrap();
        for v in &m.vertices {
            let d = ((v[0] - 1.0).powi(2) + (v[1] - 2.0).powi(2)).sqrt();
            assert!((d - r).abs() < 1e-6);
        }
    }

    #[test]
    fn bend_has_no_flipped_triangles() {
        let mut pts = Vec::new();
        for i in 0..=10 {
            pts.push([i as f64 * 0.1, 0.0, 0.0]);
        }
        for i in 1..=10 {
            pts.push([1.0, i as f64 * 0.1, 0.0]);
        }
        let radii = vec![0.05; pts.len()];
        let m = tube_mesh(&pts, &radii, 8, false).unwrap();
        m.validate().unwrap();
        for (ti, t) in m.triangles.iter().enumerate() {
            let [a, b, c] = t.map(|i| m.vertices[i as usize]);
            let normal = cross(sub(b, a), sub(c, a));
            let ring = ti / 16;
            let axis = scale(add(pts[ring], pts[ring + 1]), 0.5);
            let centroid = scale(add(add(a, b), c), 1.0 / 3.0);
            assert!(dot(normal, sub(centroid, axis)) > 0.0, "triangle {ti} faces inward");
        }
    }

    #[test]
    fn duplicates_collapse_and_too_few_points_fail() {
        let m = tube_mesh(&[[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]], &[0.1; 3], 4, false).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert!(tube_mesh(&[[0.0; 3], [0.0; 3]], &[0.1; 2], 4, false).is_err());
        assert!(tube_mesh(&[[0.0; 3], [1.0, 0.0, 0.0]], &[0.1; 2], 2, false).is_err());
    }
}
