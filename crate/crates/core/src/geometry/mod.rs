//! Pinhole camera, rigid poses and the differentiable inverse warp used for
//! view synthesis.
//!
//! Conventions: camera frame is x right, y down, z forward. Pixel `(u, v)` is
//! (column, row) with integer coordinates at pixel centres. A pose `T_{s←t}`
//! maps points expressed in the target camera into the source camera:
//! `p_s = R p_t + t`.

mod rotation;
mod sample;

pub use rotation::{axis_angle_to_matrix, rotation_matrix};
pub use sample::bilinear_sample;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Points whose transformed depth is at or below this are behind the camera.
pub const Z_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("depth must be positive and finite (found {0})")]
    NonPositiveDepth(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centred principal point and a focal length giving the requested
    /// horizontal field of view.
    pub fn with_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_focal = self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite();
        let ok_pp = (0.0..self.width as f64).contains(&self.cx) && (0.0..self.height as f64).contains(&self.cy);
        if !ok_focal || !ok_pp || self.width == 0 || self.height == 0 {
            return Err(GeometryError::Intrinsics(format!("{self:?}")));
        }
        Ok(())
    }

    /// Unit-depth ray `K⁻¹ (u, v, 1)` of every pixel, `[H, W, 3]` row-major.
    pub fn rays(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height * 3);
        for v in 0..self.height {
            for u in 0..self.width {
                out.push((u as f64 - self.cx) / self.fx);
                out.push((v as f64 - self.cy) / self.fy);
                out.push(1.0);
            }
        }
        out
    }

    pub fn project_point(&self, p: [f64; 3]) -> [f64; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }
}

/// Rigid transform with axis-angle rotation (radians) and translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Pose { rotation, translation }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let r = Vector3::from(self.rotation);
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            UnitQuaternion::from_scaled_axis(r),
        )
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let r = iso.rotation.scaled_axis();
        let t = iso.translation.vector;
        Pose {
            rotation: [r.x, r.y, r.z],
            translation: [t.x, t.y, t.z],
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn inverse(&self) -> Pose {
        Pose::from_isometry(&self.to_isometry().inverse())
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        rotation_matrix(self.rotation)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.to_isometry() * Point3::from(p);
        [q.x, q.y, q.z]
    }

    pub fn angle(&self) -> f64 {
        Vector3::from(self.rotation).norm()
    }

    /// Largest absolute entry difference of the 4×4 matrices.
    pub fn distance(&self, other: &Pose) -> f64 {
        let a = self.to_isometry().to_homogeneous();
        let b = other.to_isometry().to_homogeneous();
        (a - b).abs().max()
    }
}

/// Batched differentiable pose: rotation and translation tensors `[B, 3]`.
#[derive(Debug, Clone)]
pub struct PoseTensor {
    pub rotation: Tensor,
    pub translation: Tensor,
}

impl PoseTensor {
    pub fn from_poses(poses: &[Pose]) -> Self {
        let b = poses.len();
        let r = poses.iter().flat_map(|p| p.rotation).collect();
        let t = poses.iter().flat_map(|p| p.translation).collect();
        PoseTensor {
            rotation: Tensor::new(r, &[b, 3]).expect("shape"),
            translation: Tensor::new(t, &[b, 3]).expect("shape"),
        }
    }

    pub fn identity(batch: usize) -> Self {
        Self::from_poses(&vec![Pose::identity(); batch])
    }

    pub fn batch(&self) -> usize {
        self.rotation.shape()[0]
    }

    pub fn to_poses(&self) -> Vec<Pose> {
        self.rotation
            .data()
            .chunks(3)
            .zip(self.translation.data().chunks(3))
            .map(|(r, t)| Pose::new([r[0], r[1], r[2]], [t[0], t[1], t[2]]))
            .collect()
    }

    /// Differentiable inverse: `R' = R(-r)`, `t' = -Rᵀ t`.
    pub fn inverse(&self) -> Result<PoseTensor> {
        let b = self.batch();
        let rot = axis_angle_to_matrix(&self.rotation)?;
        let t = self.translation.reshape(&[b, 3, 1])?;
        let rt_t = rot.transpose(1, 2)?.matmul(&t)?.reshape(&[b, 3])?;
        Ok(PoseTensor {
            rotation: self.rotation.neg(),
            translation: rt_t.neg(),
        })
    }
}

/// Pixelwise positive depth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(TensorError::ElementCount {
                op: "DepthMap",
                shape: vec![height, width],
                got: values.len(),
            }
            .into());
        }
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(GeometryError::NonPositiveDepth(bad));
        }
        Ok(DepthMap { width, height, values })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        DepthMap {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn within(&self, d_min: f64, d_max: f64) -> bool {
        self.values.iter().all(|&d| d >= d_min && d <= d_max)
    }

    pub fn to_tensor(maps: &[DepthMap]) -> Result<Tensor> {
        let (w, h) = (maps[0].width, maps[0].height);
        let data = maps.iter().flat_map(|m| m.values.iter().copied()).collect();
        Ok(Tensor::new(data, &[maps.len(), h, w])?)
    }
}

/// 3D points `[B,H,W,3]` of every pixel: `depth · K⁻¹ (u, v, 1)`.
pub fn backproject(depth: &Tensor, k: &Intrinsics) -> Result<Tensor> {
    let s = depth.shape();
    if s.len() != 3 || s[1] != k.height || s[2] != k.width {
        return Err(TensorError::ShapeMismatch {
            op: "backproject",
            lhs: s.to_vec(),
            rhs: vec![k.height, k.width],
        }
        .into());
    }
    if let Some(&bad) = depth.data().iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(GeometryError::NonPositiveDepth(bad));
    }
    let rays = Tensor::new(k.rays(), &[k.height, k.width, 3])?;
    Ok(depth.reshape(&[s[0], s[1], s[2], 1])?.mul(&rays)?)
}

/// Sampling grid `[B,H,W,2]` of `K (R p + t)` and a per-pixel flag that is
/// false where the transformed depth is `<= Z_EPS`.
pub fn project(points: &Tensor, pose: &PoseTensor, k: &Intrinsics) -> Result<(Tensor, Vec<bool>)> {
    let s = points.shape().to_vec();
    if s.len() != 4 || s[3] != 3 || s[0] != pose.batch() {
        return Err(TensorError::ShapeMismatch {
            op: "project",
            lhs: s,
            rhs: pose.rotation.shape().to_vec(),
        }
        .into());
    }
    let (b, h, w) = (s[0], s[1], s[2]);
    let rot = axis_angle_to_matrix(&pose.rotation)?;
    let flat = points.reshape(&[b, h * w, 3])?;
    let moved = flat
        .matmul(&rot.transpose(1, 2)?)?
        .add(&pose.translation.reshape(&[b, 1, 3])?)?;
    let x = moved.slice(2, 0, 1)?;
    let y = moved.slice(2, 1, 2)?;
    let z = moved.slice(2, 2, 3)?;
    let flags: Vec<bool> = z.data().iter().map(|&d| d > Z_EPS).collect();
    let z_safe = z.clamp(Z_EPS, f64::INFINITY);
    let u = x.div(&z_safe)?.mul_scalar(k.fx).add_scalar(k.cx);
    let v = y.div(&z_safe)?.mul_scalar(k.fy).add_scalar(k.cy);
    let grid = Tensor::concat(&[u, v], 2)?.reshape(&[b, h, w, 2])?;
    Ok((grid, flags))
}

/// Warp `src` `[B,H,W,C]` into the target view given target depth `[B,H,W]`
/// and `T_{src←target}`. Returns the synthesized image and per-pixel validity.
pub fn synthesize_target(
    src: &Tensor,
    depth: &Tensor,
    pose: &PoseTensor,
    k: &Intrinsics,
) -> Result<(Tensor, Vec<bool>)> {
    let points = backproject(depth, k)?;
    let (grid, flags) = project(&points, pose, k)?;
    Ok(bilinear_sample(src, &grid, Some(&flags))?)
}
