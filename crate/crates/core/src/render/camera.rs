use serde::{Deserialize, Serialize};

use crate::error::{validate, Result};
use crate::geometry::{Mat3, Vec3};

/// Pinhole camera. `rotation` maps camera axes (right, down, forward) to world
/// space; `position` is the camera center in world space.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3,
    pub position: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

/// JSON form of a camera: pose as axis-angle plus translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub focal: f64,
    #[serde(default)]
    pub principal: Option<[f64; 2]>,
    pub width: usize,
    pub height: usize,
    pub axis_angle: [f64; 3],
    pub translation: [f64; 3],
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    /// Pixel index `y * width + x`, also keys the jitter substream.
    pub index: usize,
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Debug)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        focal: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Mat3,
        position: Vec3,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self> {
        validate(focal > 0.0, || "focal length must be positive".into())?;
        validate(width > 0 && height > 0, || "resolution must be positive".into())?;
        validate(rotation.orthonormality_error() < 1e-6, || "rotation is not orthonormal".into())?;
        validate(rotation.det() > 0.0, || "rotation must be proper (det = +1)".into())?;
        validate(0.0 < t_near && t_near < t_far, || format!("need 0 < near < far, got {t_near}, {t_far}"))?;
        Ok(Self {
            focal,
            cx,
            cy,
            width,
            height,
            rotation,
            position,
            t_near,
            t_far,
        })
    }

    /// Camera at `eye` looking at `target`; image "up" follows `up`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        Self::new(
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            Mat3::from_columns(right, down, forward),
            eye,
            t_near,
            t_far,
        )
    }

    /// Camera on a sphere of radius `distance` around the origin. Azimuth turns
    /// about +y starting from the −z axis; positive elevation looks from above.
    pub fn orbit(azimuth: f64, elevation: f64, distance: f64, focal: f64, width: usize, height: usize, near: f64, far: f64) -> Result<Self> {
        let eye = Vec3::new(
            -distance * elevation.cos() * azimuth.sin(),
            distance * elevation.sin(),
            -distance * elevation.cos() * azimuth.cos(),
        );
        Self::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), focal, width, height, near, far)
    }

    pub fn from_config(cfg: &CameraConfig) -> Result<Self> {
        let [cx, cy] = cfg.principal.unwrap_or([cfg.width as f64 / 2.0, cfg.height as f64 / 2.0]);
        Self::new(
            cfg.focal,
            cx,
            cy,
            cfg.width,
            cfg.height,
            Mat3::from_axis_angle(Vec3::from_array(cfg.axis_angle)),
            Vec3::from_array(cfg.translation),
            cfg.near,
            cfg.far,
        )
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            focal: self.focal * sx,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    /// Mirror image of this camera across the world x = 0 plane. With a
    /// centered principal point, pixel `x` of the mirrored camera sees the
    /// mirror of what pixel `width-1-x` of this camera sees.
    pub fn mirrored(&self) -> Self {
        let m = Mat3([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        Self {
            rotation: m.mul_mat(&self.rotation).mul_mat(&m),
            position: Vec3::new(-self.position.x, self.position.y, self.position.z),
            cx: self.width as f64 - self.cx,
            ..self.clone()
        }
    }

    /// Unit world-space direction through the center of pixel `(x, y)`.
    #[inline]
    pub fn pixel_direction(&self, x: usize, y: usize) -> Vec3 {
        let d = Vec3::new(
            (x as f64 + 0.5 - self.cx) / self.focal,
            (y as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        );
        (self.rotation * d).normalized()
    }

    pub fn ray(&self, x: usize, y: usize) -> Ray {
        Ray {
            origin: self.position,
            direction: self.pixel_direction(x, y),
            t_near: self.t_near,
            t_far: self.t_far,
            index: y * self.width + x,
        }
    }

    /// One ray per pixel, row-major.
    pub fn make_rays(&self) -> RayBatch {
        let mut rays = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                rays.push(self.ray(x, y));
            }
        }
        RayBatch {
            rays,
            width: self.width,
            height: self.height,
        }
    }

    /// World point to camera coordinates `(right, down, forward)`.
    #[inline]
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.position)
    }

    /// Flattened rotation (9) and position (3): the discriminator's camera condition.
    pub fn condition_vector(&self) -> Vec<f64> {
        let mut v = self.rotation.flatten().to_vec();
        v.extend_from_slice(&self.position.to_array());
        v
    }

    pub fn axis(&self) -> Vec3 {
        self.rotation.column(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frontal(w: usize) -> Camera {
        Camera::look_at(
            Vec3::new(0.0, 0.0, -2.7),
            Vec3::ZERO,
            Vec3::new(0.0, 1.0, 0.0),
            w as f64,
            w,
            w,
            1.0,
            4.0,
        )
        .unwrap()
    }

    #[test]
    fn center_pixel_is_optical_axis() {
        let cam = frontal(5);
        let d = cam.pixel_direction(2, 2);
        assert!((d - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn directions_unit_length() {
        let cam = Camera::orbit(0.7, 0.3, 2.5, 20.0, 16, 12, 1.0, 4.0).unwrap();
        for r in cam.make_rays().rays {
            assert!((r.direction.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn corner_pixel_matches_pinhole_formula() {
        // focal = width, principal point at the center
        let w = 32;
        let cam = frontal(w);
        let d = cam.pixel_direction(0, 0);
        // camera frame: ((0.5 - 16)/32, (0.5 - 16)/32, 1), right = -x world, down = -y world
        let a: f64 = (0.5 - 16.0) / 32.0;
        let n = (2.0 * a * a + 1.0).sqrt();
        let expected = Vec3::new(-a / n, -a / n, 1.0 / n);
        assert!((d - expected).norm() < 1e-12);
    }

    #[test]
    fn mirrored_camera_mirrors_rays() {
        let cam = Camera::orbit(0.4, 0.2, 2.7, 16.0, 16, 16, 1.0, 4.0).unwrap();
        let m = cam.mirrored();
        assert!(m.rotation.orthonormality_error() < 1e-12);
        assert!(m.rotation.det() > 0.0);
        for (x, y) in [(0, 0), (3, 7), (15, 15)] {
            let a = cam.pixel_direction(x, y);
            let b = m.pixel_direction(cam.width - 1 - x, y);
            assert!((Vec3::new(-a.x, a.y, a.z) - b).norm() < 1e-12);
        }
    }

    #[test]
    fn invalid_cameras_rejected() {
        let r = Mat3::IDENTITY;
        assert!(Camera::new(1.0, 0.0, 0.0, 4, 4, r, Vec3::ZERO, 2.0, 1.0).is_err());
        assert!(Camera::new(1.0, 0.0, 0.0, 4, 4, r, Vec3::ZERO, 0.0, 1.0).is_err());
        let skew = Mat3([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(Camera::new(1.0, 0.0, 0.0, 4, 4, skew, Vec3::ZERO, 1.0, 2.0).is_err());
    }

    #[test]
    fn config_round_trip() {
        let cfg = CameraConfig {
            focal: 32.0,
            principal: None,
            width: 32,
            height: 32,
            axis_angle: [0.0, 0.0, 0.0],
            translation: [0.0, 0.0, -2.7],
            near: 1.5,
            far: 3.9,
        };
        let cam = Camera::from_config(&cfg).unwrap();
        assert_eq!(cam.axis(), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!((cam.cx, cam.cy), (16.0, 16.0));
    }
}
