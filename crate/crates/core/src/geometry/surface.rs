use crate::error::{Error, Result};

use super::bvh::Bvh;
use super::mesh::{interpolate, BarycentricHit, TriMesh};
use super::Vec3;

/// Deformation from observation space to canonical space driven by two meshes
/// with shared topology.
///
/// A point is projected onto its nearest observation triangle; the projection
/// weights are replayed on the same-index canonical triangle and the signed
/// normal offset is carried over along the canonical normal.
#[derive(Clone, Debug)]
pub struct SurfaceField {
    observation: TriMesh,
    canonical: TriMesh,
    index: Bvh,
    identity: bool,
}

impl SurfaceField {
    pub fn new(observation: TriMesh, canonical: TriMesh) -> Result<Self> {
        if observation.triangles() != canonical.triangles() {
            return Err(Error::Validation(
                "observation and canonical meshes must share triangle topology".into(),
            ));
        }
        if observation.triangle_count() == 0 {
            return Err(Error::Validation("surface field needs a non-empty mesh".into()));
        }
        let identity = observation.vertices() == canonical.vertices();
        let index = Bvh::build(&observation);
        Ok(Self {
            observation,
            canonical,
            index,
            identity,
        })
    }

    pub fn observation(&self) -> &TriMesh {
        &self.observation
    }

    pub fn canonical(&self) -> &TriMesh {
        &self.canonical
    }

    /// True when both meshes have bit-identical vertices; `deform` then
    /// returns its input unchanged.
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn closest(&self, x: Vec3) -> Result<BarycentricHit> {
        self.index.closest(&self.observation, x)
    }

    /// Maps an observation-space point into canonical space.
    pub fn deform(&self, x: Vec3) -> Result<Vec3> {
        if self.identity {
            return Ok(x);
        }
        self.transfer(x)
    }

    /// Evaluates the barycentric transfer unconditionally (no identity shortcut).
    pub fn transfer(&self, x: Vec3) -> Result<Vec3> {
        let hit = self.closest(x)?;
        Ok(self.transfer_hit(x, &hit))
    }

    #[inline]
    pub fn transfer_hit(&self, x: Vec3, hit: &BarycentricHit) -> Vec3 {
        let obs = self.observation.corners(hit.triangle);
        let can = self.canonical.corners(hit.triangle);
        let proj = interpolate(&obs, hit.uvw);
        let offset = (x - proj).dot(self.observation.normals()[hit.triangle]);
        interpolate(&can, hit.uvw) + self.canonical.normals()[hit.triangle] * offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::RngStream;
    use crate::geometry::Mat3;

    /// Point on a random triangle displaced along that triangle's normal.
    fn sample_near(mesh: &TriMesh, rng: &mut RngStream, spread: f64) -> Vec3 {
        let t = rng.below(mesh.triangle_count());
        let [a, b, c] = mesh.corners(t);
        let (mut u, mut v) = (rng.uniform(), rng.uniform());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = a + (b - a) * u + (c - a) * v;
        p + mesh.normals()[t] * (spread * (2.0 * rng.uniform() - 1.0))
    }

    #[test]
    fn edge_region_keeps_only_normal_offset() {
        // Off the face region the tangential residual is dropped by construction.
        let tri = TriMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let sf = SurfaceField::new(tri.clone(), tri).unwrap();
        let x = Vec3::new(-0.5, 0.25, 0.3);
        let n = sf.observation().normals()[0];
        let expected = Vec3::new(0.0, 0.25, 0.0) + n * (x.dot(n));
        assert!((sf.transfer(x).unwrap() - expected).norm() < 1e-12);
        assert_eq!(sf.deform(x).unwrap(), x);
    }

    #[test]
    fn identity_field_shortcut_and_formula() {
        let m = TriMesh::icosphere(2, 1.0);
        let sf = SurfaceField::new(m.clone(), m.clone()).unwrap();
        assert!(sf.is_identity());
        let mut rng = RngStream::new(1, 0);
        for _ in 0..500 {
            let x = sample_near(&m, &mut rng, 0.1);
            assert_eq!(sf.deform(x).unwrap(), x);
            assert!((sf.transfer(x).unwrap() - x).norm() < 1e-6);
        }
    }

    #[test]
    fn rigid_translation() {
        let canon = TriMesh::icosphere(2, 1.0);
        let t = Vec3::new(0.3, -0.2, 0.5);
        let obs = canon.map_vertices(|v| v + t).unwrap();
        let sf = SurfaceField::new(obs.clone(), canon).unwrap();
        let edge = obs.max_edge_length();
        let mut rng = RngStream::new(2, 0);
        for _ in 0..500 {
            let x = sample_near(&obs, &mut rng, edge / 3.0);
            assert!((sf.deform(x).unwrap() - (x - t)).norm() < 1e-5);
        }
    }

    #[test]
    fn rigid_equivariance() {
        let obs = TriMesh::icosphere(2, 1.0)
            .map_vertices(|v| Vec3::new(v.x * 1.1, v.y * 0.9, v.z))
            .unwrap();
        let canon = TriMesh::icosphere(2, 1.0);
        let rot = Mat3::from_axis_angle(Vec3::new(0.3, -0.7, 0.2));
        let shift = Vec3::new(0.5, 0.1, -0.4);
        let sf = SurfaceField::new(obs.clone(), canon.clone()).unwrap();
        let sf2 = SurfaceField::new(
            obs.map_vertices(|v| rot * v + shift).unwrap(),
            canon.map_vertices(|v| rot * v + shift).unwrap(),
        )
        .unwrap();
        let mut rng = RngStream::new(4, 0);
        for _ in 0..300 {
            let x = sample_near(&obs, &mut rng, 0.05);
            let lhs = sf2.deform(rot * x + shift).unwrap();
            let rhs = rot * sf.deform(x).unwrap() + shift;
            assert!((lhs - rhs).norm() < 1e-5, "{lhs:?} vs {rhs:?}");
        }
    }

    #[test]
    fn topology_mismatch_rejected() {
        let a = TriMesh::icosphere(1, 1.0);
        let b = TriMesh::icosphere(2, 1.0);
        assert!(SurfaceField::new(a, b).is_err());
    }
}
