use crate::assets::ImageBuffer;
use crate::geometry::{TriMesh, Vec3};

use super::camera::Camera;

/// Value stored in every channel of pixels no triangle covers.
pub const BACKGROUND_SENTINEL: f32 = -1.0e4;

const MIN_DEPTH: f64 = 1e-9;

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Top or left edge for positively oriented triangles in y-down pixel space.
#[inline]
fn is_top_left(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

#[inline]
fn covers(w: f64, top_left: bool) -> bool {
    w > 0.0 || (w == 0.0 && top_left)
}

/// Z-buffered rasterization of `mesh` where every covered pixel stores the
/// world-space position of the visible surface point (perspective-correct
/// barycentric interpolation of vertex coordinates). Triangles with a vertex
/// at or behind the camera plane are skipped; there is no near-plane clipping.
pub fn render_mesh_coords(mesh: &TriMesh, cam: &Camera) -> ImageBuffer {
    let (w, h) = (cam.width, cam.height);
    let mut img = ImageBuffer::filled(w, h, 3, BACKGROUND_SENTINEL);
    let mut zbuf = vec![f64::INFINITY; w * h];
    for tri in 0..mesh.triangle_count() {
        let world = mesh.corners(tri);
        let cs: [Vec3; 3] = world.map(|v| cam.to_camera(v));
        if cs.iter().any(|c| c.z <= MIN_DEPTH) {
            continue;
        }
        let mut sp: [(f64, f64); 3] = cs.map(|c| (cam.focal * c.x / c.z + cam.cx, cam.focal * c.y / c.z + cam.cy));
        let mut zs = [cs[0].z, cs[1].z, cs[2].z];
        let mut ws = world;
        let mut area = edge(sp[0], sp[1], sp[2]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            sp.swap(1, 2);
            zs.swap(1, 2);
            ws.swap(1, 2);
            area = -area;
        }
        let min_x = sp.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = sp.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = sp.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = sp.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if max_x < 0.0 || max_y < 0.0 || min_x > w as f64 || min_y > h as f64 {
            continue;
        }
        let x0 = (min_x - 0.5).floor().max(0.0) as usize;
        let x1 = ((max_x - 0.5).ceil().max(0.0) as usize).min(w - 1);
        let y0 = (min_y - 0.5).floor().max(0.0) as usize;
        let y1 = ((max_y - 0.5).ceil().max(0.0) as usize).min(h - 1);
        let tl = [is_top_left(sp[1], sp[2]), is_top_left(sp[2], sp[0]), is_top_left(sp[0], sp[1])];
        for py in y0..=y1 {
            for px in x0..=x1 {
                let p = (px as f64 + 0.5, py as f64 + 0.5);
                let l0 = edge(sp[1], sp[2], p);
                let l1 = edge(sp[2], sp[0], p);
                let l2 = edge(sp[0], sp[1], p);
                if !(covers(l0, tl[0]) && covers(l1, tl[1]) && covers(l2, tl[2])) {
                    continue;
                }
                let b = [l0 / area, l1 / area, l2 / area];
                let inv = b[0] / zs[0] + b[1] / zs[1] + b[2] / zs[2];
                let z = 1.0 / inv;
                let k = py * w + px;
                if z < zbuf[k] {
                    zbuf[k] = z;
                    let mu = [b[0] / zs[0] * z, b[1] / zs[1] * z, b[2] / zs[2] * z];
                    let q = ws[0] * mu[0] + ws[1] * mu[1] + ws[2] * mu[2];
                    img.set(px, py, 0, q.x as f32);
                    img.set(px, py, 1, q.y as f32);
                    img.set(px, py, 2, q.z as f32);
                }
            }
        }
    }
    img
}
