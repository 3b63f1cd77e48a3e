use std::collections::HashMap;

use crate::error::{Error, Result};

use super::Vec3;

/// Minimum accepted triangle area; anything smaller is rejected at construction.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Indexed triangle mesh with per-face unit normals (right-hand rule).
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let m = vertices.len();
        let mut normals = Vec::with_capacity(triangles.len());
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i as usize >= m) {
                return Err(Error::Validation(format!(
                    "triangle {k} references vertex outside 0..{m}: {t:?}"
                )));
            }
            let [a, b, c] = t.map(|i| vertices[i as usize]);
            if !(a.x.is_finite() && b.x.is_finite() && c.x.is_finite()) {
                return Err(Error::Validation(format!("triangle {k} has non-finite vertices")));
            }
            let n = (b - a).cross(c - a);
            let area = 0.5 * n.norm();
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::Validation(format!("triangle {k} is degenerate (area {area:e})")));
            }
            normals.push(n / n.norm());
        }
        Ok(Self {
            vertices,
            triangles,
            normals,
        })
    }

    /// Same topology with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Validation(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Self::new(vertices, self.triangles.clone())
    }

    pub fn map_vertices(&self, mut f: impl FnMut(Vec3) -> Vec3) -> Result<Self> {
        self.with_vertices(self.vertices.iter().map(|&v| f(v)).collect())
    }

    /// Mirror across the x = 0 plane. Winding is reversed so normals stay outward.
    pub fn mirrored_x(&self) -> Self {
        let vertices = self.vertices.iter().map(|v| Vec3::new(-v.x, v.y, v.z)).collect();
        let triangles = self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect();
        Self::new(vertices, triangles).expect("mirroring preserves validity")
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    #[inline]
    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        self.triangles[tri].map(|i| self.vertices[i as usize])
    }

    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| v.to_array()).collect()
    }

    pub fn max_edge_length(&self) -> f64 {
        (0..self.triangle_count())
            .flat_map(|t| {
                let [a, b, c] = self.corners(t);
                [(b - a).norm(), (c - b).norm(), (a - c).norm()]
            })
            .fold(0.0, f64::max)
    }

    /// Icosphere of the given radius; 20·4^subdivisions triangles.
    pub fn icosphere(subdivisions: u32, radius: f64) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalized());
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let verts = verts.into_iter().map(|v| v * radius).collect();
        Self::new(verts, faces).expect("icosphere is valid")
    }
}

/// Nearest point on a triangle to a query, as projection weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarycentricHit {
    pub triangle: usize,
    /// Weights for the triangle's three corners, clamped to the closed triangle.
    pub uvw: [f64; 3],
    /// Signed distance along the face normal from the projection to the query.
    pub offset: f64,
    /// Squared distance from the query to the projection.
    pub dist_sq: f64,
}

/// Barycentric weights of the closest point to `p` on triangle `(a, b, c)`,
/// clamped to the closed triangle (vertex, edge and face regions).
pub fn closest_point_barycentric(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

#[inline]
pub(crate) fn interpolate(corners: &[Vec3; 3], uvw: [f64; 3]) -> Vec3 {
    corners[0] * uvw[0] + corners[1] * uvw[1] + corners[2] * uvw[2]
}

/// Distance query against a single triangle.
#[inline]
pub(crate) fn triangle_hit(mesh: &TriMesh, tri: usize, p: Vec3) -> BarycentricHit {
    let corners = mesh.corners(tri);
    let uvw = closest_point_barycentric(p, corners[0], corners[1], corners[2]);
    let proj = interpolate(&corners, uvw);
    let d = p - proj;
    BarycentricHit {
        triangle: tri,
        uvw,
        offset: d.dot(mesh.normals[tri]),
        dist_sq: d.norm_sq(),
    }
}

/// Exhaustive nearest-triangle scan; ties go to the lowest triangle index.
pub fn closest_triangle(mesh: &TriMesh, p: Vec3) -> Result<BarycentricHit> {
    if mesh.triangle_count() == 0 {
        return Err(Error::Validation("closest_triangle on an empty mesh".into()));
    }
    let mut best = triangle_hit(mesh, 0, p);
    for t in 1..mesh.triangle_count() {
        let h = triangle_hit(mesh, t, p);
        if h.dist_sq < best.dist_sq {
            best = h;
        }
    }
    Ok(best)
}
