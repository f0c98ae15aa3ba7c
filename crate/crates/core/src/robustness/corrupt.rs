//! Natural corruptions with five severity levels. Parameter tables follow the
//! 32-pixel common-corruption benchmark, whose scale is closest to 64×64
//! frames.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    MotionBlur,
    ZoomBlur,
    Fog,
    Brightness,
    Contrast,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 10] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::Fog,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::ZoomBlur => "zoom_blur",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = CorruptionKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!("unsupported corruption `{s}` (one of {})", names.join(", ")))
            })
    }
}

/// Per-kind parameters indexed by `severity - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityTable {
    /// noise standard deviation
    pub gaussian_noise: [f64; 5],
    /// photon count scale (lower is noisier)
    pub shot_noise: [f64; 5],
    /// fraction of values replaced by 0 or 1
    pub impulse_noise: [f64; 5],
    /// disk radius in pixels
    pub defocus_blur: [f64; 5],
    /// line length in pixels
    pub motion_blur: [f64; 5],
    /// largest zoom factor; layers step by 0.01
    pub zoom_blur: [f64; 5],
    /// (strength, fractal decay)
    pub fog: [[f64; 2]; 5],
    /// additive offset
    pub brightness: [f64; 5],
    /// contrast factor around the channel mean (lower is stronger)
    pub contrast: [f64; 5],
    /// block edge in pixels
    pub pixelate: [usize; 5],
}

impl Default for SeverityTable {
    fn default() -> Self {
        SeverityTable {
            gaussian_noise: [0.04, 0.06, 0.08, 0.09, 0.10],
            shot_noise: [500.0, 250.0, 100.0, 75.0, 50.0],
            impulse_noise: [0.01, 0.02, 0.03, 0.05, 0.07],
            defocus_blur: [0.6, 0.9, 1.2, 1.6, 2.2],
            motion_blur: [2.0, 3.0, 4.0, 5.5, 7.0],
            zoom_blur: [1.06, 1.11, 1.16, 1.21, 1.26],
            fog: [[0.2, 3.0], [0.5, 3.0], [0.75, 2.5], [1.0, 2.0], [1.5, 1.75]],
            brightness: [0.05, 0.1, 0.15, 0.2, 0.3],
            contrast: [0.75, 0.5, 0.4, 0.3, 0.15],
            pixelate: [2, 3, 4, 5, 6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::Config(format!("severity {severity} not in 1..=5")));
        }
        Ok(CorruptionSpec { kind, severity, seed })
    }
}

/// Apply one corruption; deterministic in `spec.seed`, output clipped to
/// `[0, 1]`.
pub fn corrupt(image: &Image, spec: &CorruptionSpec, table: &SeverityTable) -> Result<Image> {
    let spec = CorruptionSpec::new(spec.kind, spec.severity, spec.seed)?;
    let s = spec.severity as usize - 1;
    let mut rng = seeds::rng(seeds::derive(spec.seed, &[seeds::stream::CORRUPT, spec.kind as u64]));
    let mut out = match spec.kind {
        CorruptionKind::GaussianNoise => gaussian_noise(image, table.gaussian_noise[s], &mut rng),
        CorruptionKind::ShotNoise => shot_noise(image, table.shot_noise[s], &mut rng),
        CorruptionKind::ImpulseNoise => impulse_noise(image, table.impulse_noise[s], &mut rng),
        CorruptionKind::DefocusBlur => convolve(image, &disk_kernel(table.defocus_blur[s])),
        CorruptionKind::MotionBlur => motion_blur(image, table.motion_blur[s], rng.random_range(-PI..PI)),
        CorruptionKind::ZoomBlur => zoom_blur(image, table.zoom_blur[s]),
        CorruptionKind::Fog => {
            let [strength, decay] = table.fog[s];
            fog(image, strength, decay, &mut rng)
        }
        CorruptionKind::Brightness => map_values(image, |v| v + table.brightness[s]),
        CorruptionKind::Contrast => contrast(image, table.contrast[s]),
        CorruptionKind::Pixelate => pixelate(image, table.pixelate[s]),
    };
    out.clamp01();
    Ok(out)
}

fn map_values(image: &Image, f: impl Fn(f64) -> f64) -> Image {
    Image::new(image.width, image.height, image.data.iter().map(|&v| f(v)).collect())
}

fn gaussian_noise(image: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Image {
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    let data = image.data.iter().map(|&v| v + n.sample(rng)).collect();
    Image::new(image.width, image.height, data)
}

fn shot_noise(image: &Image, photons: f64, rng: &mut ChaCha8Rng) -> Image {
    let data = image
        .data
        .iter()
        .map(|&v| {
            let lambda = v.clamp(0.0, 1.0) * photons;
            if lambda <= 0.0 {
                0.0
            } else {
                Poisson::new(lambda).expect("positive rate").sample(rng) / photons
            }
        })
        .collect();
    Image::new(image.width, image.height, data)
}

fn impulse_noise(image: &Image, amount: f64, rng: &mut ChaCha8Rng) -> Image {
    let data = image
        .data
        .iter()
        .map(|&v| {
            if rng.random::<f64>() < amount {
                if rng.random::<bool>() {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        })
        .collect();
    Image::new(image.width, image.height, data)
}

/// Normalised disk weights; border pixels get their covered area, estimated
/// on an 8×8 sub-grid.
fn disk_kernel(radius: f64) -> Vec<(isize, isize, f64)> {
    let r = radius.ceil() as isize;
    let mut k = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let mut inside = 0;
            for sy in 0..8 {
                for sx in 0..8 {
                    let x = dx as f64 + (sx as f64 + 0.5) / 8.0 - 0.5;
                    let y = dy as f64 + (sy as f64 + 0.5) / 8.0 - 0.5;
                    if x * x + y * y <= radius * radius {
                        inside += 1;
                    }
                }
            }
            if inside > 0 {
                k.push((dx, dy, inside as f64));
            }
        }
    }
    let total: f64 = k.iter().map(|t| t.2).sum();
    k.into_iter().map(|(x, y, w)| (x, y, w / total)).collect()
}

/// Sparse convolution with edge-clamped borders.
fn convolve(image: &Image, kernel: &[(isize, isize, f64)]) -> Image {
    let (w, h) = (image.width as isize, image.height as isize);
    let mut out = Image::filled(image.width, image.height, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for &(dx, dy, wt) in kernel {
                let sx = (x + dx).clamp(0, w - 1) as usize;
                let sy = (y + dy).clamp(0, h - 1) as usize;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += wt * image.get(sx, sy, c);
                }
            }
            for (c, a) in acc.into_iter().enumerate() {
                out.set(x as usize, y as usize, c, a);
            }
        }
    }
    out
}

/// Bilinear lookup with edge clamping.
fn sample(image: &Image, x: f64, y: f64, c: usize) -> f64 {
    let x = x.clamp(0.0, (image.width - 1) as f64);
    let y = y.clamp(0.0, (image.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(image.width - 1), (y0 + 1).min(image.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = image.get(x0, y0, c) * (1.0 - fx) + image.get(x1, y0, c) * fx;
    let bot = image.get(x0, y1, c) * (1.0 - fx) + image.get(x1, y1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Average of shifted copies along a centred line of `length` pixels.
fn motion_blur(image: &Image, length: f64, angle: f64) -> Image {
    let taps = length.ceil() as usize + 1;
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut out = Image::filled(image.width, image.height, [0.0; 3]);
    for t in 0..taps {
        let off = length * (t as f64 / (taps - 1) as f64 - 0.5);
        for y in 0..image.height {
            for x in 0..image.width {
                for c in 0..3 {
                    let v = sample(image, x as f64 + off * dx, y as f64 + off * dy, c);
                    out.data[(y * image.width + x) * 3 + c] += v / taps as f64;
                }
            }
        }
    }
    out
}

/// Mean of the image and its centre zooms `1.01, 1.02, …, max_zoom`.
fn zoom_blur(image: &Image, max_zoom: f64) -> Image {
    let layers = ((max_zoom - 1.0) / 0.01).round() as usize;
    let (cx, cy) = ((image.width as f64 - 1.0) / 2.0, (image.height as f64 - 1.0) / 2.0);
    let mut out = image.clone();
    for l in 1..=layers {
        let z = 1.0 + 0.01 * l as f64;
        for y in 0..image.height {
            for x in 0..image.width {
                for c in 0..3 {
                    let v = sample(image, cx + (x as f64 - cx) / z, cy + (y as f64 - cy) / z, c);
                    out.data[(y * image.width + x) * 3 + c] += v;
                }
            }
        }
    }
    let n = (layers + 1) as f64;
    map_values(&out, |v| v / n)
}

/// Diamond-square fractal on a toroidal `size × size` grid (power of two),
/// normalised to `[0, 1]`.
fn plasma(size: usize, decay: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut m = vec![0.0; size * size];
    let at = |y: usize, x: usize| (y % size) * size + (x % size);
    let mut step = size;
    let mut wibble = 100.0;
    while step >= 2 {
        let half = step / 2;
        for y in (0..size).step_by(step) {
            for x in (0..size).step_by(step) {
                let mean = (m[at(y, x)] + m[at(y, x + step)] + m[at(y + step, x)] + m[at(y + step, x + step)]) / 4.0;
                m[at(y + half, x + half)] = mean + wibble * rng.random_range(-wibble..wibble);
            }
        }
        for y in (0..size).step_by(half) {
            let start = if (y / half).is_multiple_of(2) { half } else { 0 };
            for x in (start..size).step_by(step) {
                let mean = (m[at(y + size - half, x)] + m[at(y + half, x)] + m[at(y, x + size - half)] + m[at(y, x + half)]) / 4.0;
                m[at(y, x)] = mean + wibble * rng.random_range(-wibble..wibble);
            }
        }
        step = half;
        wibble /= decay;
    }
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect()
}

fn fog(image: &Image, strength: f64, decay: f64, rng: &mut ChaCha8Rng) -> Image {
    let size = image.width.max(image.height).next_power_of_two();
    let field = plasma(size, decay, rng);
    let peak = image.data.iter().copied().fold(0.0, f64::max);
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            let f = strength * field[y * size + x];
            for c in 0..3 {
                let v = &mut out.data[(y * image.width + x) * 3 + c];
                *v = (*v + f) * peak / (peak + strength);
            }
        }
    }
    out
}

fn contrast(image: &Image, factor: f64) -> Image {
    let mean = image.mean_rgb();
    let mut out = image.clone();
    for px in out.data.chunks_mut(3) {
        for c in 0..3 {
            px[c] = (px[c] - mean[c]) * factor + mean[c];
        }
    }
    out
}

/// Replace every `block × block` tile (partial at the borders) by its mean.
fn pixelate(image: &Image, block: usize) -> Image {
    let mut out = image.clone();
    for by in (0..image.height).step_by(block) {
        for bx in (0..image.width).step_by(block) {
            let (ye, xe) = ((by + block).min(image.height), (bx + block).min(image.width));
            let n = ((ye - by) * (xe - bx)) as f64;
            for c in 0..3 {
                let mut sum = 0.0;
                for y in by..ye {
                    for x in bx..xe {
                        sum += image.get(x, y, c);
                    }
                }
                for y in by..ye {
                    for x in bx..xe {
                        out.set(x, y, c, sum / n);
                    }
                }
            }
        }
    }
    out
}
