//! Cameras, alpha-compositing quadrature of the volume rendering integral with
//! per-sample deformation, depth maps, a differentiable batched renderer for
//! optimization, and the vertex-coordinate rasterizer.

mod camera;
mod diff;
mod raster;
mod volume;

pub use camera::{Camera, CameraConfig, Ray, RayBatch};
pub use diff::{RaySamples, VolumeTrace};
pub use raster::{render_mesh_coords, BACKGROUND_SENTINEL};
pub use volume::{
    composite, render_image, render_ray, sample_depths, FnField, QuadratureSpec, RayResult, VolumeField,
};
