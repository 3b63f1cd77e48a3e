use serde::{Deserialize, Serialize};

use crate::assets::Checkpoint;
use crate::error::{validate, Error, Result};
use crate::geometry::Vec3;

/// Axis pairs of the three planes: XY, XZ, YZ.
const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Three `R × R × C` feature grids over an axis-aligned box. A point's
/// feature is the sum of bilinear lookups on each plane. Grid nodes sit on the
/// box faces (node 0 at `min`, node `R-1` at `max`).
///
/// Plane storage is `[plane][row][col][channel]`, with the first axis of the
/// pair indexing columns.
#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneField {
    pub resolution: usize,
    pub channels: usize,
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
    pub planes: Vec<f64>,
}

/// The twelve (texel offset, weight) pairs of one point's lookups.
#[derive(Clone, Copy, Debug)]
pub struct PlaneTaps {
    pub offsets: [u32; 12],
    pub weights: [f64; 12],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriPlaneMeta {
    kind: String,
    resolution: usize,
    channels: usize,
    bounds_min: [f64; 3],
    bounds_max: [f64; 3],
}

impl TriPlaneField {
    pub fn zeros(resolution: usize, channels: usize, bounds_min: Vec3, bounds_max: Vec3) -> Result<Self> {
        Self::new(
            resolution,
            channels,
            bounds_min,
            bounds_max,
            vec![0.0; 3 * resolution * resolution * channels],
        )
    }

    pub fn new(resolution: usize, channels: usize, bounds_min: Vec3, bounds_max: Vec3, planes: Vec<f64>) -> Result<Self> {
        validate(resolution >= 2, || "tri-plane resolution must be at least 2".into())?;
        validate(channels >= 1, || "tri-plane needs at least one channel".into())?;
        validate(
            bounds_max.x > bounds_min.x && bounds_max.y > bounds_min.y && bounds_max.z > bounds_min.z,
            || "tri-plane bounds need positive extent on every axis".into(),
        )?;
        validate(planes.len() == 3 * resolution * resolution * channels, || {
            format!(
                "plane data has {} values, expected {}",
                planes.len(),
                3 * resolution * resolution * channels
            )
        })?;
        Ok(Self {
            resolution,
            channels,
            bounds_min,
            bounds_max,
            planes,
        })
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    #[inline]
    pub fn texel_offset(&self, plane: usize, row: usize, col: usize) -> usize {
        ((plane * self.resolution + row) * self.resolution + col) * self.channels
    }

    pub fn contains(&self, x: Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.bounds_min[a] && x[a] <= self.bounds_max[a])
    }

    /// Lookup taps, or `None` outside the bounds.
    #[inline]
    pub fn taps(&self, x: Vec3) -> Option<PlaneTaps> {
        if !self.contains(x) {
            return None;
        }
        let r = self.resolution;
        let mut g = [0.0; 3];
        for a in 0..3 {
            g[a] = (x[a] - self.bounds_min[a]) / (self.bounds_max[a] - self.bounds_min[a]) * (r - 1) as f64;
        }
        let mut taps = PlaneTaps {
            offsets: [0; 12],
            weights: [0.0; 12],
        };
        for (p, &(ac, ar)) in PLANE_AXES.iter().enumerate() {
            let (c0, fc) = cell(g[ac], r);
            let (r0, fr) = cell(g[ar], r);
            let k = 4 * p;
            taps.offsets[k] = self.texel_offset(p, r0, c0) as u32;
            taps.offsets[k + 1] = self.texel_offset(p, r0, c0 + 1) as u32;
            taps.offsets[k + 2] = self.texel_offset(p, r0 + 1, c0) as u32;
            taps.offsets[k + 3] = self.texel_offset(p, r0 + 1, c0 + 1) as u32;
            taps.weights[k] = (1.0 - fc) * (1.0 - fr);
            taps.weights[k + 1] = fc * (1.0 - fr);
            taps.weights[k + 2] = (1.0 - fc) * fr;
            taps.weights[k + 3] = fc * fr;
        }
        Some(taps)
    }

    #[inline]
    pub fn gather(&self, taps: &PlaneTaps, out: &mut [f64]) {
        out.fill(0.0);
        let c = self.channels;
        for (&off, &w) in taps.offsets.iter().zip(&taps.weights) {
            if w == 0.0 {
                continue;
            }
            let texel = &self.planes[off as usize..off as usize + c];
            for (o, t) in out.iter_mut().zip(texel) {
                *o += w * t;
            }
        }
    }

    /// Adds the plane gradient of `Σ dfeat·feature(x)` into `grad`.
    #[inline]
    pub fn scatter(&self, taps: &PlaneTaps, dfeat: &[f64], grad: &mut [f64]) {
        let c = self.channels;
        for (&off, &w) in taps.offsets.iter().zip(&taps.weights) {
            if w == 0.0 {
                continue;
            }
            let g = &mut grad[off as usize..off as usize + c];
            for (gv, d) in g.iter_mut().zip(dfeat) {
                *gv += w * d;
            }
        }
    }

    /// Summed bilinear feature at `x`; zero outside the bounds.
    pub fn sample(&self, x: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        if let Some(t) = self.taps(x) {
            self.gather(&t, &mut out);
        }
        out
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = TriPlaneMeta {
            kind: "triplane".into(),
            resolution: self.resolution,
            channels: self.channels,
            bounds_min: self.bounds_min.to_array(),
            bounds_max: self.bounds_max.to_array(),
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?);
        ck.put(
            "planes",
            vec![3, self.resolution, self.resolution, self.channels],
            &self.planes,
        )?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: TriPlaneMeta =
            serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Format(format!("triplane manifest: {e}")))?;
        let n = 3 * meta.resolution * meta.resolution * meta.channels;
        Self::new(
            meta.resolution,
            meta.channels,
            Vec3::from_array(meta.bounds_min),
            Vec3::from_array(meta.bounds_max),
            ck.get_f64("planes", n)?,
        )
    }
}

#[inline]
fn cell(g: f64, r: usize) -> (usize, f64) {
    let i = (g.floor() as isize).clamp(0, r as isize - 2) as usize;
    (i, g - i as f64)
}
