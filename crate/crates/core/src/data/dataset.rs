//! Triplet dataset in memory and on disk.
//!
//! Layout: `frames/%06d.ppm`, `depth/%06d.pfm` (triplet centres only) and
//! `manifest.txt` with `key=value` lines, one `frame <index> <sequence> rx ry
//! rz tx ty tz` row per frame (camera-to-world) and one `triplet <prev> <cur>
//! <next>` row per triplet.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{relative_pose, render, trajectory, DataError, Result, Scene, SceneSpec};
use crate::geometry::{DepthMap, Intrinsics, Pose};
use crate::image::{read_pfm, read_ppm, write_pfm, write_ppm, Image};
use crate::seeds;

pub const MANIFEST_FORMAT: &str = "mimdepth-dataset";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: Intrinsics,
    pub frames: Vec<Image>,
    /// camera-to-world pose of each frame
    pub poses: Vec<Pose>,
    pub sequences: Vec<usize>,
    /// ground-truth depth of triplet centre frames
    pub depths: BTreeMap<usize, DepthMap>,
    pub triplets: Vec<[usize; 3]>,
    /// free-form provenance written to the manifest
    pub attributes: BTreeMap<String, String>,
}

/// Borrowed view of one training/evaluation triplet.
pub struct TripletView<'a> {
    /// `[I-1, I0, I1]`
    pub frames: [&'a Image; 3],
    pub depth: &'a DepthMap,
    /// `[T_{-1←0}, T_{1←0}]`
    pub poses: [Pose; 2],
    pub index: [usize; 3],
}

fn f32_exact(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}

impl Dataset {
    /// Render `n_triplets` triplets from as many short sequences as needed,
    /// each with its own scene and trajectory. Frames are stored 8-bit
    /// quantized and depth f32-rounded, matching what the files hold.
    pub fn generate(spec: &SceneSpec, n_triplets: usize) -> Result<Dataset> {
        spec.validate()?;
        if n_triplets == 0 {
            return Err(DataError::Dataset("at least one triplet is required".into()));
        }
        let k = spec.intrinsics()?;
        let mut ds = Dataset {
            intrinsics: k,
            frames: Vec::new(),
            poses: Vec::new(),
            sequences: Vec::new(),
            depths: BTreeMap::new(),
            triplets: Vec::new(),
            attributes: BTreeMap::new(),
        };
        let mut seq = 0;
        while ds.triplets.len() < n_triplets {
            let remaining = n_triplets - ds.triplets.len();
            let len = spec.frames_per_sequence.min(remaining + 2);
            let scene = Scene::generate(spec, seeds::derive(spec.seed, &[seeds::stream::SCENE, seq as u64, 0]));
            let traj = trajectory(spec, seeds::derive(spec.seed, &[seeds::stream::SCENE, seq as u64, 1]), len);
            let base = ds.frames.len();
            for (i, cam) in traj.iter().enumerate() {
                let (img, depth) = render(&scene, cam, &k, spec.supersample)?;
                ds.frames.push(img.quantized());
                ds.poses.push(*cam);
                ds.sequences.push(seq);
                if i >= 1 && i + 1 < len {
                    let idx = base + i;
                    ds.depths.insert(idx, DepthMap::new(k.width, k.height, f32_exact(&depth))?);
                    ds.triplets.push([idx - 1, idx, idx + 1]);
                }
            }
            seq += 1;
        }
        ds.attributes.insert("seed".into(), spec.seed.to_string());
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// `T_{a←b}` between two frames.
    pub fn relative_pose(&self, a: usize, b: usize) -> Pose {
        relative_pose(&self.poses[a], &self.poses[b])
    }

    pub fn triplet(&self, i: usize) -> TripletView<'_> {
        let [p, c, n] = self.triplets[i];
        TripletView {
            frames: [&self.frames[p], &self.frames[c], &self.frames[n]],
            depth: &self.depths[&c],
            poses: [self.relative_pose(p, c), self.relative_pose(n, c)],
            index: [p, c, n],
        }
    }

    /// Same geometry with replaced frames (e.g. corrupted copies).
    pub fn with_frames(&self, frames: Vec<Image>) -> Result<Dataset> {
        if frames.len() != self.frames.len() {
            return Err(DataError::Dataset(format!(
                "expected {} frames, got {}",
                self.frames.len(),
                frames.len()
            )));
        }
        Ok(Dataset {
            frames,
            ..self.clone()
        })
    }

    /// Largest deviation of `T_{p←c}·T_{c←n}` from `T_{p←n}` over all
    /// triplets.
    pub fn composition_error(&self) -> f64 {
        self.triplets
            .iter()
            .map(|&[p, c, n]| {
                let chained = self.relative_pose(p, c).compose(&self.relative_pose(c, n));
                chained.distance(&self.relative_pose(p, n))
            })
            .fold(0.0, f64::max)
    }

    pub fn manifest(&self) -> String {
        let k = &self.intrinsics;
        let mut s = String::new();
        let mut kv = |key: &str, v: String| s.push_str(&format!("{key}={v}\n"));
        kv("format", MANIFEST_FORMAT.into());
        kv("version", "1".into());
        kv("width", k.width.to_string());
        kv("height", k.height.to_string());
        kv("fx", k.fx.to_string());
        kv("fy", k.fy.to_string());
        kv("cx", k.cx.to_string());
        kv("cy", k.cy.to_string());
        kv("frames", self.frames.len().to_string());
        kv("triplets", self.triplets.len().to_string());
        for (key, v) in &self.attributes {
            kv(key, v.clone());
        }
        for (i, (p, seq)) in self.poses.iter().zip(&self.sequences).enumerate() {
            let [r0, r1, r2] = p.rotation;
            let [t0, t1, t2] = p.translation;
            s.push_str(&format!("frame {i} {seq} {r0} {r1} {r2} {t0} {t1} {t2}\n"));
        }
        for [a, b, c] in &self.triplets {
            s.push_str(&format!("triplet {a} {b} {c}\n"));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error, p: &Path| DataError::Dataset(format!("{}: {e}", p.display()));
        for sub in ["frames", "depth"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| io(e, &p))?;
        }
        for (i, img) in self.frames.iter().enumerate() {
            write_ppm(&dir.join("frames").join(format!("{i:06}.ppm")), img)?;
        }
        for (i, d) in &self.depths {
            let vals: Vec<f32> = d.values.iter().map(|&v| v as f32).collect();
            write_pfm(&dir.join("depth").join(format!("{i:06}.pfm")), d.width, d.height, &vals)?;
        }
        let m = dir.join("manifest.txt");
        fs::write(&m, self.manifest()).map_err(|e| io(e, &m))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let mpath = dir.join("manifest.txt");
        let text = fs::read_to_string(&mpath).map_err(|e| DataError::Dataset(format!("{}: {e}", mpath.display())))?;
        let bad = |line: usize, msg: &str| DataError::Dataset(format!("{}:{}: {msg}", mpath.display(), line + 1));
        let mut kv = BTreeMap::new();
        let mut rows = Vec::new();
        let mut triplets = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("frame ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 8 {
                    return Err(bad(ln, "frame row needs 8 fields"));
                }
                let idx: usize = f[0].parse().map_err(|_| bad(ln, "frame index"))?;
                let seq: usize = f[1].parse().map_err(|_| bad(ln, "sequence"))?;
                let v: Vec<f64> = f[2..]
                    .iter()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(ln, "pose value"))?;
                if idx != rows.len() {
                    return Err(bad(ln, "frame rows must be in order"));
                }
                rows.push((seq, Pose::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])));
            } else if let Some(rest) = line.strip_prefix("triplet ") {
                let f: Vec<usize> = rest
                    .split_whitespace()
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(ln, "triplet index"))?;
                if f.len() != 3 {
                    return Err(bad(ln, "triplet row needs 3 indices"));
                }
                triplets.push([f[0], f[1], f[2]]);
            } else if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            } else {
                return Err(bad(ln, "unrecognized line"));
            }
        }
        let take = |key: &str| -> Result<String> {
            kv.get(key)
                .cloned()
                .ok_or_else(|| DataError::Dataset(format!("{}: missing `{key}`", mpath.display())))
        };
        if take("format")? != MANIFEST_FORMAT {
            return Err(DataError::Dataset(format!("{}: not a dataset manifest", mpath.display())));
        }
        let num = |key: &str| -> Result<f64> {
            take(key)?
                .parse()
                .map_err(|_| DataError::Dataset(format!("{}: bad `{key}`", mpath.display())))
        };
        let k = Intrinsics::new(
            num("fx")?,
            num("fy")?,
            num("cx")?,
            num("cy")?,
            num("width")? as usize,
            num("height")? as usize,
        )?;
        if num("frames")? as usize != rows.len() || num("triplets")? as usize != triplets.len() {
            return Err(DataError::Dataset(format!("{}: row counts disagree with header", mpath.display())));
        }
        let mut frames = Vec::with_capacity(rows.len());
        for i in 0..rows.len() {
            let img = read_ppm(&dir.join("frames").join(format!("{i:06}.ppm")))?;
            if img.width != k.width || img.height != k.height {
                return Err(DataError::Dataset(format!("frame {i} has the wrong size")));
            }
            frames.push(img);
        }
        let mut depths = BTreeMap::new();
        for t in &triplets {
            if t.iter().any(|&i| i >= rows.len()) {
                return Err(DataError::Dataset(format!("triplet {t:?} out of range")));
            }
            let (w, h, vals) = read_pfm(&dir.join("depth").join(format!("{:06}.pfm", t[1])))?;
            depths.insert(t[1], DepthMap::new(w, h, vals.iter().map(|&v| v as f64).collect())?);
        }
        let reserved = ["format", "version", "width", "height", "fx", "fy", "cx", "cy", "frames", "triplets"];
        let attributes = kv.into_iter().filter(|(k, _)| !reserved.contains(&k.as_str())).collect();
        Ok(Dataset {
            intrinsics: k,
            frames,
            poses: rows.iter().map(|r| r.1).collect(),
            sequences: rows.iter().map(|r| r.0).collect(),
            depths,
            triplets,
            attributes,
        })
    }
}
