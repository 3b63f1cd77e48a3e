use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};

/// Parses the `v` / triangular `f` subset of Wavefront OBJ.
///
/// Face entries may carry `/vt/vn` suffixes, which are ignored. Other record
/// types (`vn`, `vt`, `o`, `g`, `s`, `usemtl`, `mtllib`) are skipped.
pub fn read_obj_str(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(Error::Format(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<&str> = parts.collect();
                if idx.len() != 3 {
                    return Err(Error::UnsupportedGeometry(format!(
                        "line {}: face with {} vertices, only triangles are supported",
                        lineno + 1,
                        idx.len()
                    )));
                }
                let mut tri = [0u32; 3];
                for (k, s) in idx.iter().enumerate() {
                    let head = s.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
                    if i < 1 || i as usize > vertices.len() {
                        return Err(Error::Validation(format!(
                            "line {}: face index {i} out of range 1..={}",
                            lineno + 1,
                            vertices.len()
                        )));
                    }
                    tri[k] = (i - 1) as u32;
                }
                faces.push(tri);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_obj_str(&text)
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let mut s = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
