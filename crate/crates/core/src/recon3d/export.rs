//! ASCII PLY and legacy VTK polydata.

use std::fmt::Write as _;
use std::path::Path;

use super::mesh::{TubeMesh, Vec3};
use crate::error::{Error, Result};

fn num(out: &mut String, v: f64) {
    let text = format!("{v:.6}");
    // values that round to zero are written without a sign
    match text.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => out.push_str(rest),
        _ => out.push_str(&text),
    }
}

fn point_line(out: &mut String, p: &Vec3, extra: Option<f64>) {
    num(out, p[0]);
    out.push(' ');
    num(out, p[1]);
    out.push(' ');
    num(out, p[2]);
    if let Some(e) = extra {
        out.push(' ');
        num(out, e);
    }
    out.push('\n');
}

/// Vertex-only PLY.
pub fn encode_cloud_ply(points: &[Vec3]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    );
    for p in points {
        point_line(&mut s, p, None);
    }
    s
}

/// Mesh PLY with a per-vertex radius property.
pub fn encode_mesh_ply(mesh: &TubeMesh) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property float radius\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    for (p, r) in mesh.vertices.iter().zip(&mesh.radius) {
        point_line(&mut s, p, Some(*r));
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

/// Legacy VTK polydata with one line cell per polyline.
pub fn encode_polydata(polylines: &[Vec<Vec3>]) -> String {
    let total: usize = polylines.iter().map(Vec::len).sum();
    let mut s = format!(
        "# vtk DataFile Version 3.0\nvessel centrelines\nASCII\nDATASET POLYDATA\nPOINTS {total} float\n"
    );
    for p in polylines.iter().flatten() {
        point_line(&mut s, p, None);
    }
    let size: usize = polylines.iter().map(|l| l.len() + 1).sum();
    let _ = writeln!(s, "LINES {} {}", polylines.len(), size);
    let mut next = 0;
    for l in polylines {
        s.push_str(&l.len().to_string());
        for _ in 0..l.len() {
            let _ = write!(s, " {next}");
            next += 1;
        }
        s.push('\n');
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_cloud_ply(points: &[Vec3], path: &Path) -> Result<()> {
    write_text(path, &encode_cloud_ply(points))
}

pub fn save_mesh_ply(mesh: &TubeMesh, path: &Path) -> Result<()> {
    write_text(path, &encode_mesh_ply(mesh))
}

pub fn save_polydata(polylines: &[Vec<Vec3>], path: &Path) -> Result<()> {
    write_text(path, &encode_polydata(polylines))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub radius: Option<Vec<f64>>,
    pub faces: Vec<Vec<u32>>,
}

/// Reads the ASCII PLY subset written above: a vertex element whose first
/// properties are x, y, z (an optional `radius` is kept, other scalar
/// properties are skipped) and an optional face element of index lists.
pub fn parse_ply(text: &str) -> Result<PlyData> {
    let bad = |m: &str| Error::Format {
        format: "ply",
        reason: m.to_string(),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing magic"));
    }
    if lines.next().map(str::trim) != Some("format ascii 1.0") {
        return Err(Error::Unsupported {
            format: "ply",
            reason: "only ascii 1.0 is read".into(),
        });
    }
    let mut n_vertex = 0usize;
    let mut n_face = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    loop {
        let line = lines.next().ok_or_else(|| bad("header ends early"))?.trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                n_vertex = n.parse().map_err(|_| bad("bad vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                n_face = n.parse().map_err(|_| bad("bad face count"))?;
                current = "face";
            }
            ["element", ..] => return Err(bad("unexpected element")),
            ["property", "list", ..] if current == "face" => {}
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            _ => return Err(bad(&format!("unexpected header line {line:?}"))),
        }
    }
    if vertex_props.len() < 3 || vertex_props[..3] != ["x", "y", "z"] {
        return Err(bad("vertex element must start with x y z"));
    }
    let radius_at = vertex_props.iter().position(|p| p == "radius");
    let mut data = PlyData {
        radius: radius_at.map(|_| Vec::with_capacity(n_vertex)),
        ..Default::default()
    };
    for _ in 0..n_vertex {
        let line = lines.next().ok_or_else(|| bad("missing vertex rows"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad vertex value"))?;
        if vals.len() != vertex_props.len() {
            return Err(bad("vertex row has the wrong arity"));
        }
        data.vertices.push([vals[0], vals[1], vals[2]]);
        if let (Some(i), Some(r)) = (radius_at, data.radius.as_mut()) {
            r.push(vals[i]);
        }
    }
    for _ in 0..n_face {
        let line = lines.next().ok_or_else(|| bad("missing face rows"))?;
        let vals: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad face index"))?;
        let Some((&k, rest)) = vals.split_first() else {
            return Err(bad("empty face row"));
        };
        if rest.len() != k as usize || rest.iter().any(|&i| i as usize >= n_vertex) {
            return Err(bad("face row is inconsistent"));
        }
        data.faces.push(rest.to_vec());
    }
    Ok(data)
}

pub fn load_ply(path: &Path) -> Result<PlyData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud() {
        let s = encode_cloud_ply(&[]);
        assert!(s.contains("element vertex 0\n"));
        assert!(s.ends_with("end_header\n"));
        assert!(parse_ply(&s).unwrap().vertices.is_empty());
    }

    #[test]
    fn negative_zero_is_folded() {
        let s = encode_cloud_ply(&[[-0.0, -1e-9, 1.0]]);
        assert!(s.ends_with("0.000000 0.000000 1.000000\n"), "{s}");
    }

    #[test]
    fn polydata_layout() {
        let s = encode_polydata(&[vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![[0.0, 1.0, 0.0]; 3]]);
        assert!(s.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(s.contains("POINTS 5 float\n"));
        assert!(s.ends_with("LINES 2 7\n2 0 1\n3 2 3 4\n"));
    }

    #[test]
    fn mesh_round_trip() {
        let mesh = TubeMesh {
            vertices: vec![[0.1234567, 2.0, -3.5], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
            radius: vec![0.5, 0.25, 0.125],
        };
        let back = parse_ply(&encode_mesh_ply(&mesh)).unwrap();
        assert_eq!(back.faces, vec![vec![0, 1, 2]]);
        assert_eq!(back.radius.unwrap(), vec![0.5, 0.25, 0.125]);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 5e-7);
            }
        }
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(parse_ply("").is_err());
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        assert!(parse_ply("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").is_err());
    }
}
