use serde::{Deserialize, Serialize};

use crate::assets::{Checkpoint, RngStream};
use crate::error::{validate, Error, Result};

use super::{TriMesh, Vec3};

/// Coefficient counts for shape, pose and expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphDims {
    pub shape: usize,
    pub pose: usize,
    pub expression: usize,
}

impl Default for MorphDims {
    fn default() -> Self {
        Self {
            shape: 100,
            pose: 6,
            expression: 50,
        }
    }
}

/// Shape (β), pose (θ) and expression (ψ) coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphParams {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl MorphParams {
    pub fn zeros(dims: MorphDims) -> Self {
        Self {
            beta: vec![0.0; dims.shape],
            theta: vec![0.0; dims.pose],
            psi: vec![0.0; dims.expression],
        }
    }

    pub fn dims(&self) -> MorphDims {
        MorphDims {
            shape: self.beta.len(),
            pose: self.theta.len(),
            expression: self.psi.len(),
        }
    }
}

/// Linear morphable model: `template + S·β + E·ψ + P·θ` over flattened
/// `[x0, y0, z0, x1, ...]` vertex coordinates, plus a fixed jaw-open displacement
/// that defines the canonical configuration.
///
/// Bases are stored row-major with `3 · vertex_count` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyMorphModel {
    template: TriMesh,
    dims: MorphDims,
    shape_basis: Vec<f64>,
    expr_basis: Vec<f64>,
    pose_basis: Vec<f64>,
    jaw_open: Vec<f64>,
}

impl ToyMorphModel {
    pub fn new(
        template: TriMesh,
        dims: MorphDims,
        shape_basis: Vec<f64>,
        expr_basis: Vec<f64>,
        pose_basis: Vec<f64>,
        jaw_open: Vec<f64>,
    ) -> Result<Self> {
        let rows = 3 * template.vertex_count();
        validate(shape_basis.len() == rows * dims.shape, || "shape basis size mismatch".into())?;
        validate(expr_basis.len() == rows * dims.expression, || "expression basis size mismatch".into())?;
        validate(pose_basis.len() == rows * dims.pose, || "pose basis size mismatch".into())?;
        validate(jaw_open.len() == rows, || "jaw-open vector size mismatch".into())?;
        Ok(Self {
            template,
            dims,
            shape_basis,
            expr_basis,
            pose_basis,
            jaw_open,
        })
    }

    /// Head-like ellipsoid with smooth random shape modes, expression modes
    /// localized around the lower front, linearized head and jaw rotations as
    /// pose modes, and a jaw-open vector that drops the lower front region.
    /// The face looks toward −z.
    pub fn synthetic(seed: u64, subdivisions: u32, dims: MorphDims) -> Self {
        let sphere = TriMesh::icosphere(subdivisions, 1.0);
        let radii = Vec3::new(0.55, 0.7, 0.6);
        let template = sphere
            .map_vertices(|v| Vec3::new(v.x * radii.x, v.y * radii.y, v.z * radii.z))
            .expect("scaled icosphere is valid");
        let m = template.vertex_count();
        let rows = 3 * m;
        let unit: Vec<Vec3> = sphere.vertices().to_vec();
        let mut rng = RngStream::new(seed, 0x6d6f7270);

        let smooth_mode = |rng: &mut RngStream, amp: f64, weight: &dyn Fn(Vec3) -> f64| -> Vec<f64> {
            let g = rng.gaussian_vec(4);
            let freq = Vec3::new(g[0], g[1], g[2]) * 1.5;
            let phase = g[3];
            let mut col = vec![0.0; rows];
            for (i, u) in unit.iter().enumerate() {
                let s = amp * weight(*u) * (freq.dot(*u) + phase).sin();
                // displacement along the sphere normal
                col[3 * i] = s * u.x;
                col[3 * i + 1] = s * u.y;
                col[3 * i + 2] = s * u.z;
            }
            col
        };
        let to_row_major = |cols: Vec<Vec<f64>>| -> Vec<f64> {
            let d = cols.len();
            let mut out = vec![0.0; rows * d];
            for (j, c) in cols.iter().enumerate() {
                for r in 0..rows {
                    out[r * d + j] = c[r];
                }
            }
            out
        };

        let everywhere = |_: Vec3| 1.0;
        let mouth = |u: Vec3| {
            let w = (-u.y).max(0.0) * (-u.z).max(0.0);
            (2.0 * w).min(1.0)
        };
        let jaw_weight = |u: Vec3| ((-u.y - 0.2) / 0.5).clamp(0.0, 1.0) * (-u.z + 0.3).clamp(0.0, 1.0);

        let shape_cols: Vec<Vec<f64>> = (0..dims.shape)
            .map(|k| smooth_mode(&mut rng, 0.03 / (1.0 + k as f64).sqrt(), &everywhere))
            .collect();
        let expr_cols: Vec<Vec<f64>> = (0..dims.expression)
            .map(|k| smooth_mode(&mut rng, 0.02 / (1.0 + k as f64).sqrt(), &mouth))
            .collect();

        let verts = template.vertices();
        let jaw_pivot = Vec3::new(0.0, -0.1, 0.15);
        let axes = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
        let pose_cols: Vec<Vec<f64>> = (0..dims.pose)
            .map(|k| {
                let axis = axes[k % 3];
                let mut col = vec![0.0; rows];
                for (i, v) in verts.iter().enumerate() {
                    // small-angle rotation generator: whole head for the first
                    // three modes, jaw region about a pivot for the rest
                    let d = if k < 3 {
                        axis.cross(*v)
                    } else {
                        axis.cross(*v - jaw_pivot) * jaw_weight(unit[i])
                    };
                    col[3 * i] = d.x;
                    col[3 * i + 1] = d.y;
                    col[3 * i + 2] = d.z;
                }
                col
            })
            .collect();

        let mut jaw_open = vec![0.0; rows];
        for (i, u) in unit.iter().enumerate() {
            let w = jaw_weight(*u);
            jaw_open[3 * i + 1] = -0.06 * w;
            jaw_open[3 * i + 2] = 0.02 * w;
        }

        Self::new(
            template,
            dims,
            to_row_major(shape_cols),
            to_row_major(expr_cols),
            to_row_major(pose_cols),
            jaw_open,
        )
        .expect("synthetic bases are consistent")
    }

    pub fn template(&self) -> &TriMesh {
        &self.template
    }

    pub fn dims(&self) -> MorphDims {
        self.dims
    }

    pub fn jaw_open(&self) -> &[f64] {
        &self.jaw_open
    }

    pub fn shape_basis(&self) -> &[f64] {
        &self.shape_basis
    }

    pub fn expr_basis(&self) -> &[f64] {
        &self.expr_basis
    }

    pub fn pose_basis(&self) -> &[f64] {
        &self.pose_basis
    }

    /// Flattened vertex offsets from the template for `params`.
    pub fn displacement(&self, params: &MorphParams) -> Result<Vec<f64>> {
        if params.dims() != self.dims {
            return Err(Error::Validation(format!(
                "morph params {:?} do not match model {:?}",
                params.dims(),
                self.dims
            )));
        }
        let rows = 3 * self.template.vertex_count();
        let mut out = vec![0.0; rows];
        for (basis, coeffs) in [
            (&self.shape_basis, &params.beta),
            (&self.expr_basis, &params.psi),
            (&self.pose_basis, &params.theta),
        ] {
            let d = coeffs.len();
            if d == 0 {
                continue;
            }
            for (r, o) in out.iter_mut().enumerate() {
                let row = &basis[r * d..(r + 1) * d];
                *o += row.iter().zip(coeffs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn morph(&self, params: &MorphParams) -> Result<TriMesh> {
        let disp = self.displacement(params)?;
        self.apply(&disp)
    }

    fn apply(&self, disp: &[f64]) -> Result<TriMesh> {
        let verts = self
            .template
            .vertices()
            .iter()
            .enumerate()
            .map(|(i, v)| *v + Vec3::new(disp[3 * i], disp[3 * i + 1], disp[3 * i + 2]))
            .collect();
        self.template.with_vertices(verts)
    }

    /// Zero shape, pose and expression.
    pub fn canonical_params(&self) -> MorphParams {
        MorphParams::zeros(self.dims)
    }

    /// Template with the jaw opened.
    pub fn canonical_mesh(&self) -> Result<TriMesh> {
        self.apply(&self.jaw_open)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "toy_morph_model",
            "dims": self.dims,
            "vertex_count": self.template.vertex_count(),
            "triangle_count": self.template.triangle_count(),
        }));
        let m = self.template.vertex_count();
        let rows = 3 * m;
        ck.put("template_vertices", vec![m, 3], &self.template.flat_vertices())?;
        let tris: Vec<f64> = self
            .template
            .triangles()
            .iter()
            .flat_map(|t| t.map(|i| i as f64))
            .collect();
        ck.put("template_triangles", vec![self.template.triangle_count(), 3], &tris)?;
        for (name, basis, d) in [
            ("shape_basis", &self.shape_basis, self.dims.shape),
            ("expr_basis", &self.expr_basis, self.dims.expression),
            ("pose_basis", &self.pose_basis, self.dims.pose),
        ] {
            if d > 0 {
                ck.put(name, vec![rows, d], basis)?;
            }
        }
        ck.put("jaw_open", vec![rows], &self.jaw_open)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let dims: MorphDims = serde_json::from_value(ck.meta["dims"].clone())
            .map_err(|e| Error::Format(format!("morph manifest: {e}")))?;
        let verts = ck.get("template_vertices")?;
        let tris = ck.get("template_triangles")?;
        let m = verts.shape[0];
        let rows = 3 * m;
        let vertices = verts
            .to_f64()
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        let triangles = tris
            .data
            .chunks_exact(3)
            .map(|c| [c[0] as u32, c[1] as u32, c[2] as u32])
            .collect();
        let template = TriMesh::new(vertices, triangles)?;
        let basis = |name: &str, d: usize| -> Result<Vec<f64>> {
            if d == 0 {
                Ok(Vec::new())
            } else {
                ck.get_f64(name, rows * d)
            }
        };
        Self::new(
            template,
            dims,
            basis("shape_basis", dims.shape)?,
            basis("expr_basis", dims.expression)?,
            basis("pose_basis", dims.pose)?,
            ck.get_f64("jaw_open", rows)?,
        )
    }
}
