//! Ray-cast synthetic scenes with exact depth, camera trajectories and the
//! on-disk triplet dataset.
//!
//! A scene is a corridor: ground plane below the camera, a back wall, two
//! side walls and axis-aligned boxes standing on the ground. World axes follow
//! the camera convention (x right, y down, z forward).

mod dataset;

pub use dataset::{Dataset, TripletView};

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Intrinsics, Pose};
use crate::image::Image;
use crate::seeds;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("ray through pixel ({0}, {1}) hits no surface")]
    NoHit(usize, usize),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub boxes: usize,
    pub camera_height: f64,
    pub back_wall: f64,
    pub half_width: f64,
    /// dominant texture wavelength in scene units
    pub texture_period: f64,
    pub frames_per_sequence: usize,
    pub forward_step: f64,
    pub sway_amplitude: f64,
    pub sway_period: f64,
    pub yaw_amplitude_deg: f64,
    pub yaw_period: f64,
    pub supersample: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            width: 64,
            height: 64,
            focal: 48.0,
            boxes: 6,
            camera_height: 0.45,
            back_wall: 6.0,
            half_width: 1.6,
            texture_period: 0.35,
            frames_per_sequence: 12,
            forward_step: 0.05,
            sway_amplitude: 0.15,
            sway_period: 24.0,
            yaw_amplitude_deg: 3.0,
            yaw_period: 30.0,
            supersample: 3,
        }
    }
}

impl SceneSpec {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Ok(Intrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )?)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.height > 0
            && self.focal > 0.0
            && self.camera_height > 0.0
            && self.half_width > 0.0
            && self.back_wall > 1.0
            && self.texture_period > 0.0
            && self.frames_per_sequence >= 3
            && self.supersample >= 1
            && self.sway_period > 0.0
            && self.yaw_period > 0.0;
        if !ok {
            return Err(DataError::Spec(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Sum of two oriented sinusoids over surface coordinates, scaled by an
/// albedo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub albedo: [f64; 3],
    pub waves: [[f64; 3]; 2], // (kx, ky, phase)
    pub shade: f64,
}

impl Texture {
    pub fn flat(albedo: [f64; 3]) -> Self {
        Texture {
            albedo,
            waves: [[0.0, 0.0, PI / 2.0]; 2],
            shade: 1.0,
        }
    }

    fn random<R: Rng>(rng: &mut R, period: f64, shade: f64) -> Self {
        let albedo = [0; 3].map(|_| rng.random_range(0.35..1.0));
        let mut waves = [[0.0; 3]; 2];
        for (i, w) in waves.iter_mut().enumerate() {
            let lambda = period * if i == 0 { 1.0 } else { 1.7 } * rng.random_range(0.8..1.25);
            let theta = rng.random_range(0.0..PI);
            let k = 2.0 * PI / lambda;
            *w = [k * theta.cos(), k * theta.sin(), rng.random_range(0.0..2.0 * PI)];
        }
        Texture { albedo, waves, shade }
    }

    pub fn color(&self, a: f64, b: f64) -> [f64; 3] {
        let [w0, w1] = self.waves;
        let p = 0.5 + 0.3 * (w0[0] * a + w0[1] * b + w0[2]).sin() + 0.2 * (w1[0] * a + w1[1] * b + w1[2]).sin();
        let v = self.shade * (0.2 + 0.8 * p);
        self.albedo.map(|c| (c * v).clamp(0.0, 1.0))
    }
}

/// Infinite plane `x[axis] = offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub axis: usize,
    pub offset: f64,
    pub texture: Texture,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub textures: [Texture; 3], // faces normal to x, y, z
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub planes: Vec<Plane>,
    pub boxes: Vec<Aabb>,
}

/// In-plane coordinates of a point on a face normal to `axis`.
fn face_coords(axis: usize, p: [f64; 3]) -> (f64, f64) {
    match axis {
        0 => (p[2], p[1]),
        1 => (p[0], p[2]),
        _ => (p[0], p[1]),
    }
}

impl Scene {
    /// Random corridor scene for one sequence.
    pub fn generate(spec: &SceneSpec, seed: u64) -> Scene {
        let mut rng = seeds::rng(seed);
        let per = spec.texture_period;
        let h = spec.camera_height;
        let mut planes = vec![
            Plane {
                axis: 1,
                offset: h,
                texture: Texture::random(&mut rng, per, 1.0),
            },
            Plane {
                axis: 2,
                offset: spec.back_wall,
                texture: Texture::random(&mut rng, per, 0.9),
            },
        ];
        for side in [-1.0, 1.0] {
            planes.push(Plane {
                axis: 0,
                offset: side * spec.half_width,
                texture: Texture::random(&mut rng, per, 0.8),
            });
        }
        let mut boxes = Vec::with_capacity(spec.boxes);
        let x_lim = (spec.half_width - 0.35).max(0.1);
        for _ in 0..spec.boxes {
            let cx = rng.random_range(-x_lim..x_lim);
            let cz = rng.random_range(1.4..(spec.back_wall - 0.6).max(1.5));
            let hx = rng.random_range(0.1..0.3);
            let hz = rng.random_range(0.1..0.3);
            let tall = rng.random_range(0.15..0.7);
            let textures = [
                Texture::random(&mut rng, per * 0.8, 0.75),
                Texture::random(&mut rng, per * 0.8, 1.0),
                Texture::random(&mut rng, per * 0.8, 0.88),
            ];
            boxes.push(Aabb {
                min: [cx - hx, h - tall, cz - hz],
                max: [cx + hx, h, cz + hz],
                textures,
            });
        }
        Scene { planes, boxes }
    }

    /// Nearest hit along `origin + t·dir` for `t > 0`: (t, color).
    pub fn trace(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, [f64; 3])> = None;
        let mut consider = |t: f64, axis: usize, tex: &Texture| {
            if t > 1e-9 && best.is_none_or(|(bt, _)| t < bt) {
                let p = [0, 1, 2].map(|i| origin[i] + t * dir[i]);
                let (a, b) = face_coords(axis, p);
                best = Some((t, tex.color(a, b)));
            }
        };
        for pl in &self.planes {
            let d = dir[pl.axis];
            if d != 0.0 {
                consider((pl.offset - origin[pl.axis]) / d, pl.axis, &pl.texture);
            }
        }
        for bx in &self.boxes {
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut axis_near = 0;
            let mut hit = true;
            for i in 0..3 {
                if dir[i] == 0.0 {
                    if origin[i] < bx.min[i] || origin[i] > bx.max[i] {
                        hit = false;
                        break;
                    }
                    continue;
                }
                let t0 = (bx.min[i] - origin[i]) / dir[i];
                let t1 = (bx.max[i] - origin[i]) / dir[i];
                let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                if lo > t_near {
                    t_near = lo;
                    axis_near = i;
                }
                t_far = t_far.min(hi);
            }
            if hit && t_near <= t_far && t_near > 0.0 {
                consider(t_near, axis_near, &bx.textures[axis_near]);
            }
        }
        best
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Render from camera-to-world pose `cam`: color (supersampled) and exact
/// z-depth at pixel centres.
pub fn render(scene: &Scene, cam: &Pose, k: &Intrinsics, supersample: usize) -> Result<(Image, Vec<f64>)> {
    let rot = cam.matrix();
    let origin = cam.translation;
    let (w, h) = (k.width, k.height);
    let s = supersample.max(1);
    let mut color = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let ray = |u: f64, v: f64| mat_vec(&rot, [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0]);
    for y in 0..h {
        for x in 0..w {
            let (t, _) = scene
                .trace(origin, ray(x as f64, y as f64))
                .ok_or(DataError::NoHit(x, y))?;
            depth.push(t);
            let mut acc = [0.0; 3];
            for sy in 0..s {
                for sx in 0..s {
                    let du = (sx as f64 + 0.5) / s as f64 - 0.5;
                    let dv = (sy as f64 + 0.5) / s as f64 - 0.5;
                    let (_, c) = scene
                        .trace(origin, ray(x as f64 + du, y as f64 + dv))
                        .ok_or(DataError::NoHit(x, y))?;
                    for i in 0..3 {
                        acc[i] += c[i];
                    }
                }
            }
            color.extend(acc.map(|a| a / (s * s) as f64));
        }
    }
    Ok((Image::new(w, h, color), depth))
}

/// Camera-to-world poses: steady forward motion with sinusoidal lateral sway
/// and yaw.
pub fn trajectory(spec: &SceneSpec, seed: u64, frames: usize) -> Vec<Pose> {
    let mut rng = seeds::rng(seed);
    let sway_phase = rng.random_range(0.0..2.0 * PI);
    let yaw_phase = rng.random_range(0.0..2.0 * PI);
    let yaw_amp = spec.yaw_amplitude_deg.to_radians();
    (0..frames)
        .map(|i| {
            let f = i as f64;
            let x = spec.sway_amplitude * (2.0 * PI * f / spec.sway_period + sway_phase).sin();
            let yaw = yaw_amp * (2.0 * PI * f / spec.yaw_period + yaw_phase).sin();
            Pose::new([0.0, yaw, 0.0], [x, 0.0, spec.forward_step * f])
        })
        .collect()
}

/// `T_{a←b}` from camera-to-world poses.
pub fn relative_pose(cam_a: &Pose, cam_b: &Pose) -> Pose {
    cam_a.inverse().compose(cam_b)
}
