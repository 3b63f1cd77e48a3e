//! Triangle meshes, nearest-triangle queries, the surface-field deformation and
//! a linear toy morphable model.

mod bvh;
mod mesh;
mod morph;
mod surface;
mod vec3;

pub use bvh::Bvh;
pub use mesh::{closest_point_barycentric, closest_triangle, BarycentricHit, TriMesh};
pub use morph::{MorphDims, MorphParams, ToyMorphModel};
pub use surface::SurfaceField;
pub use vec3::{Mat3, Vec3};
