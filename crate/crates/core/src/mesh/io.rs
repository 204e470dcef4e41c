//! STL/OBJ mesh loading and point-list files.
//!
//! Mesh files in medical pipelines are in millimeters; loaders take a scale
//! factor (use [`MM_TO_M`]) and return meshes in meters, oriented outward.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::{MeshError, TriangleMesh};

pub const MM_TO_M: f64 = 1e-3;

pub fn load_mesh(path: &Path, scale: f64) -> Result<TriangleMesh, MeshError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = fs::read(path)?;
    match ext.as_str() {
        "stl" => parse_stl(&bytes, scale),
        "obj" => parse_obj(&String::from_utf8_lossy(&bytes), scale),
        other => Err(MeshError::UnsupportedFormat(other.to_string())),
    }
}

fn finish(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<TriangleMesh, MeshError> {
    let mut mesh = TriangleMesh::new(vertices, triangles)?;
    mesh.orient_outward();
    Ok(mesh)
}

/// Parses binary or ASCII STL. Coincident vertices are welded so that the
/// resulting mesh is indexed.
pub fn parse_stl(bytes: &[u8], scale: f64) -> Result<TriangleMesh, MeshError> {
    if is_binary_stl(bytes) {
        parse_binary_stl(bytes, scale)
    } else {
        parse_ascii_stl(&String::from_utf8_lossy(bytes), scale)
    }
}

fn is_binary_stl(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    // ASCII files may also start with "solid", so the size check decides.
    bytes.len() == 84 + count * 50
}

#[derive(Default)]
struct Welder {
    vertices: Vec<Vector3<f64>>,
    index: HashMap<[u64; 3], usize>,
}

impl Welder {
    fn add(&mut self, v: Vector3<f64>) -> usize {
        let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(v);
            self.vertices.len() - 1
        })
    }
}

fn parse_binary_stl(bytes: &[u8], scale: f64) -> Result<TriangleMesh, MeshError> {
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    let mut welder = Welder::default();
    let mut tris = Vec::with_capacity(count);
    for t in 0..count {
        let rec = &bytes[84 + t * 50..84 + (t + 1) * 50];
        let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64 * scale;
        let mut tri = [0usize; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let o = 12 + 12 * k;
            *slot = welder.add(Vector3::new(f(o), f(o + 4), f(o + 8)));
        }
        tris.push(tri);
    }
    finish(welder.vertices, tris)
}

fn parse_ascii_stl(text: &str, scale: f64) -> Result<TriangleMesh, MeshError> {
    let mut welder = Welder::default();
    let mut tris = Vec::new();
    let mut pending = Vec::with_capacity(3);
    for (n, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("vertex") => {
                let v = parse_xyz(it, n + 1)? * scale;
                pending.push(welder.add(v));
            }
            Some("endfacet") => {
                if pending.len() != 3 {
                    return Err(MeshError::Parse {
                        line: n + 1,
                        message: format!("facet with {} vertices", pending.len()),
                    });
                }
                tris.push([pending[0], pending[1], pending[2]]);
                pending.clear();
            }
            _ => {}
        }
    }
    finish(welder.vertices, tris)
}

fn parse_xyz<'a>(mut it: impl Iterator<Item = &'a str>, line: usize) -> Result<Vector3<f64>, MeshError> {
    let mut c = [0.0; 3];
    for slot in &mut c {
        let tok = it.next().ok_or_else(|| MeshError::Parse {
            line,
            message: "expected three coordinates".into(),
        })?;
        *slot = tok.parse().map_err(|_| MeshError::Parse {
            line,
            message: format!("bad number {tok:?}"),
        })?;
    }
    Ok(Vector3::new(c[0], c[1], c[2]))
}

/// Parses Wavefront OBJ `v` and `f` records; polygons are fan-triangulated.
pub fn parse_obj(text: &str, scale: f64) -> Result<TriangleMesh, MeshError> {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => verts.push(parse_xyz(it, n + 1)? * scale),
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|_| MeshError::Parse {
                            line: n + 1,
                            message: format!("bad face index {tok:?}"),
                        })?;
                        let resolved = if i < 0 { verts.len() as i64 + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(MeshError::Parse {
                                line: n + 1,
                                message: format!("face index {i} out of range"),
                            });
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(MeshError::Parse {
                        line: n + 1,
                        message: "face with fewer than 3 vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    tris.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    finish(verts, tris)
}

/// Writes a binary STL, multiplying coordinates by `scale` (e.g. 1000 for
/// millimeter output).
pub fn write_binary_stl(mesh: &TriangleMesh, path: &Path, scale: f64) -> Result<(), MeshError> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.triangle_count());
    let mut header = [0u8; 80];
    header[..10].copy_from_slice(b"rams-phant");
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.triangle_count() as u32).to_le_bytes());
    for t in 0..mesh.triangle_count() {
        let n = mesh.triangle_normal(t);
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for v in mesh.corners(t) {
            for c in v.iter() {
                out.extend_from_slice(&((*c * scale) as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads points from a JSON array of `[x, y, z]` triples or from CSV with one
/// `x,y,z` row per point (a non-numeric header row is skipped).
pub fn load_points(path: &Path, scale: f64) -> Result<Vec<Vector3<f64>>, MeshError> {
    let text = fs::read_to_string(path)?;
    let is_json = path.extension().and_then(|e| e.to_str()) == Some("json") || text.trim_start().starts_with('[');
    if is_json {
        let raw: Vec<[f64; 3]> = serde_json::from_str(&text).map_err(|e| MeshError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        return Ok(raw.into_iter().map(|p| Vector3::from(p) * scale).collect());
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 3 => out.push(Vector3::new(v[0], v[1], v[2]) * scale),
            Err(_) if n == 0 => continue,
            _ => {
                return Err(MeshError::Parse {
                    line: n + 1,
                    message: "expected x,y,z".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn save_points_csv(points: &[Vector3<f64>], path: &Path, scale: f64) -> Result<(), MeshError> {
    let mut s = String::from("x,y,z\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.x * scale, p.y * scale, p.z * scale));
    }
    fs::write(path, s)?;
    Ok(())
}
