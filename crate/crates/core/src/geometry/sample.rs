use crate::tensor::{GradFn, Result, Tensor, TensorError};

/// Per-output-pixel interpolation footprint.
#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    ax: f64,
    ay: f64,
    /// coordinate was inside the interpolation range (not clamped)
    free_u: bool,
    free_v: bool,
}

fn tap(u: f64, v: f64, w: usize, h: usize) -> Tap {
    let axis = |c: f64, n: usize| -> (usize, usize, f64, bool) {
        let hi = (n - 1) as f64;
        let free = (0.0..=hi).contains(&c);
        let cc = c.clamp(0.0, hi);
        if n == 1 {
            return (0, 0, 0.0, false);
        }
        let i0 = (cc.floor() as usize).min(n - 2);
        (i0, i0 + 1, cc - i0 as f64, free)
    };
    let (x0, x1, ax, free_u) = axis(u, w);
    let (y0, y1, ay, free_v) = axis(v, h);
    Tap {
        x0,
        x1,
        y0,
        y1,
        ax,
        ay,
        free_u,
        free_v,
    }
}

struct BilinearFn {
    src: Tensor,
    grid: Tensor,
    taps: Vec<Option<Tap>>,
    dims: [usize; 6], // b, h, w, c, ho, wo
}

impl GradFn for BilinearFn {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.src, &self.grid]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let [_, h, w, c, ho, wo] = self.dims;
        let s = self.src.data();
        let need_src = self.src.requires_grad();
        let need_grid = self.grid.requires_grad();
        let mut gs = vec![0.0; if need_src { s.len() } else { 0 }];
        let mut gg = vec![0.0; if need_grid { self.grid.numel() } else { 0 }];
        for (p, t) in self.taps.iter().enumerate() {
            let Some(t) = t else { continue };
            let bi = p / (ho * wo);
            let base = bi * h * w;
            let i00 = (base + t.y0 * w + t.x0) * c;
            let i01 = (base + t.y0 * w + t.x1) * c;
            let i10 = (base + t.y1 * w + t.x0) * c;
            let i11 = (base + t.y1 * w + t.x1) * c;
            let (ax, ay) = (t.ax, t.ay);
            let mut du = 0.0;
            let mut dv = 0.0;
            for ch in 0..c {
                let gi = g[p * c + ch];
                if gi == 0.0 {
                    continue;
                }
                if need_src {
                    gs[i00 + ch] += gi * (1.0 - ax) * (1.0 - ay);
                    gs[i01 + ch] += gi * ax * (1.0 - ay);
                    gs[i10 + ch] += gi * (1.0 - ax) * ay;
                    gs[i11 + ch] += gi * ax * ay;
                }
                if need_grid {
                    let (s00, s01, s10, s11) = (s[i00 + ch], s[i01 + ch], s[i10 + ch], s[i11 + ch]);
                    du += gi * ((1.0 - ay) * (s01 - s00) + ay * (s11 - s10));
                    dv += gi * ((1.0 - ax) * (s10 - s00) + ax * (s11 - s01));
                }
            }
            if need_grid {
                if t.free_u {
                    gg[p * 2] = du;
                }
                if t.free_v {
                    gg[p * 2 + 1] = dv;
                }
            }
        }
        vec![need_src.then_some(gs), need_grid.then_some(gg)]
    }
}

/// Bilinear resampling of `src` `[B,H,W,C]` at pixel coordinates `grid`
/// `[B,Ho,Wo,2]` (`(u, v)` = (column, row)).
///
/// Coordinates are clamped to the image border for interpolation. A sample is
/// valid when `flags` (if given) marks it valid and it lies within half a
/// pixel of the image; invalid samples produce 0 and no gradient.
pub fn bilinear_sample(src: &Tensor, grid: &Tensor, flags: Option<&[bool]>) -> Result<(Tensor, Vec<bool>)> {
    let (ss, gs) = (src.shape(), grid.shape());
    if ss.len() != 4 || gs.len() != 4 || gs[3] != 2 || gs[0] != ss[0] {
        return Err(TensorError::ShapeMismatch {
            op: "bilinear_sample",
            lhs: ss.to_vec(),
            rhs: gs.to_vec(),
        });
    }
    let (b, h, w, c) = (ss[0], ss[1], ss[2], ss[3]);
    let (ho, wo) = (gs[1], gs[2]);
    let n = b * ho * wo;
    if let Some(f) = flags {
        if f.len() != n {
            return Err(TensorError::Invalid(format!(
                "validity flags have {} entries, expected {n}",
                f.len()
            )));
        }
    }
    let gd = grid.data();
    if gd.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::Domain {
            op: "bilinear_sample",
            detail: "non-finite sampling coordinate".into(),
        });
    }
    let s = src.data();
    let mut out = vec![0.0; n * c];
    let mut valid = vec![false; n];
    let mut taps = Vec::with_capacity(n);
    for p in 0..n {
        let (u, v) = (gd[p * 2], gd[p * 2 + 1]);
        let inside = u >= -0.5 && u <= w as f64 - 0.5 && v >= -0.5 && v <= h as f64 - 0.5;
        let ok = inside && flags.is_none_or(|f| f[p]);
        if !ok {
            taps.push(None);
            continue;
        }
        valid[p] = true;
        let t = tap(u, v, w, h);
        let base = (p / (ho * wo)) * h * w;
        let i00 = (base + t.y0 * w + t.x0) * c;
        let i01 = (base + t.y0 * w + t.x1) * c;
        let i10 = (base + t.y1 * w + t.x0) * c;
        let i11 = (base + t.y1 * w + t.x1) * c;
        for ch in 0..c {
            out[p * c + ch] = (1.0 - t.ax) * (1.0 - t.ay) * s[i00 + ch]
                + t.ax * (1.0 - t.ay) * s[i01 + ch]
                + (1.0 - t.ax) * t.ay * s[i10 + ch]
                + t.ax * t.ay * s[i11 + ch];
        }
        taps.push(Some(t));
    }
    let sampled = Tensor::from_op(
        out,
        vec![b, ho, wo, c],
        BilinearFn {
            src: src.clone(),
            grid: grid.clone(),
            taps,
            dims: [b, h, w, c, ho, wo],
        },
    );
    Ok((sampled, valid))
}
