use crate::error::{Error, Result};

use super::mesh::{triangle_hit, BarycentricHit, TriMesh};
use super::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    min: Vec3,
    max: Vec3,
    /// Leaf: index of first triangle in `order`. Inner: index of left child
    /// (right child is `left + 1`).
    first: u32,
    /// Zero for inner nodes.
    count: u32,
}

impl Node {
    #[inline]
    fn dist_sq(&self, p: Vec3) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        let dz = (self.min.z - p.z).max(0.0).max(p.z - self.max.z);
        dx * dx + dy * dy + dz * dz
    }
}

/// Axis-aligned bounding-volume hierarchy over a mesh's triangles, built with
/// median splits along the longest centroid axis.
///
/// Queries return exactly what the exhaustive scan in
/// [`closest_triangle`](super::closest_triangle) returns, including the
/// lowest-index tie-break.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let n = mesh.triangle_count();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Vec3> = (0..n)
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * n.div_ceil(LEAF_SIZE).max(1));
        if n > 0 {
            nodes.push(Node {
                min: Vec3::ZERO,
                max: Vec3::ZERO,
                first: 0,
                count: 0,
            });
            build_node(mesh, &centroids, &mut order, &mut nodes, 0, 0, n);
        }
        Self { nodes, order }
    }

    pub fn closest(&self, mesh: &TriMesh, p: Vec3) -> Result<BarycentricHit> {
        if self.nodes.is_empty() {
            return Err(Error::Validation("closest_triangle on an empty mesh".into()));
        }
        let mut best: Option<BarycentricHit> = None;
        let mut best_d = f64::INFINITY;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].dist_sq(p)));
        while let Some((idx, d)) = stack.pop() {
            if d > best_d {
                continue;
            }
            let node = &self.nodes[idx as usize];
            if node.count > 0 {
                let start = node.first as usize;
                for &t in &self.order[start..start + node.count as usize] {
                    let h = triangle_hit(mesh, t as usize, p);
                    let better = match &best {
                        None => true,
                        Some(b) => h.dist_sq < b.dist_sq || (h.dist_sq == b.dist_sq && h.triangle < b.triangle),
                    };
                    if better {
                        best_d = h.dist_sq;
                        best = Some(h);
                    }
                }
            } else {
                let l = node.first;
                let r = l + 1;
                let dl = self.nodes[l as usize].dist_sq(p);
                let dr = self.nodes[r as usize].dist_sq(p);
                // push the farther child first so the nearer one is visited first
                if dl <= dr {
                    stack.push((r, dr));
                    stack.push((l, dl));
                } else {
                    stack.push((l, dl));
                    stack.push((r, dr));
                }
            }
        }
        Ok(best.expect("non-empty hierarchy yields a hit"))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

fn build_node(
    mesh: &TriMesh,
    centroids: &[Vec3],
    order: &mut [u32],
    nodes: &mut Vec<Node>,
    idx: usize,
    start: usize,
    end: usize,
) {
    let mut min = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut max = -min;
    let mut cmin = min;
    let mut cmax = max;
    for &t in &order[start..end] {
        for v in mesh.corners(t as usize) {
            min = min.min(v);
            max = max.max(v);
        }
        cmin = cmin.min(centroids[t as usize]);
        cmax = cmax.max(centroids[t as usize]);
    }
    nodes[idx].min = min;
    nodes[idx].max = max;
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes[idx].first = start as u32;
        nodes[idx].count = count as u32;
        return;
    }
    let ext = cmax - cmin;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = start + count / 2;
    order[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let left = nodes.len();
    let blank = Node {
        min: Vec3::ZERO,
        max: Vec3::ZERO,
        first: 0,
        count: 0,
    };
    nodes.push(blank.clone());
    nodes.push(blank);
    nodes[idx].first = left as u32;
    nodes[idx].count = 0;
    build_node(mesh, centroids, order, nodes, left, start, mid);
    build_node(mesh, centroids, order, nodes, left + 1, mid, end);
}
