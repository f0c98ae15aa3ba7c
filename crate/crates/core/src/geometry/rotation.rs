use crate::tensor::{GradFn, Result, Tensor, TensorError};

/// Below this squared angle the Rodrigues coefficients switch to their
/// series expansions, which keeps value and derivative well conditioned.
const SERIES_THRESHOLD: f64 = 1e-6;

/// `A(s) = sin θ / θ`, `B(s) = (1 - cos θ) / θ²` and their derivatives with
/// respect to `s = θ²`.
fn coefficients(s: f64) -> (f64, f64, f64, f64) {
    if s < SERIES_THRESHOLD {
        let a = 1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0;
        let da = -1.0 / 6.0 + s / 60.0 - s * s / 1680.0;
        let b = 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0;
        let db = -1.0 / 24.0 + s / 360.0 - s * s / 13440.0;
        (a, b, da, db)
    } else {
        let th = s.sqrt();
        let (sin, cos) = th.sin_cos();
        let a = sin / th;
        let b = (1.0 - cos) / s;
        let da = (th * cos - sin) / (2.0 * s * th);
        let db = (th * sin - 2.0 * (1.0 - cos)) / (2.0 * s * s);
        (a, b, da, db)
    }
}

fn skew(r: [f64; 3]) -> [[f64; 3]; 3] {
    [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]]
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// Rotation matrix of an axis-angle vector (Rodrigues form).
pub fn rotation_matrix(r: [f64; 3]) -> [[f64; 3]; 3] {
    let s = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let (a, b, _, _) = coefficients(s);
    let k = skew(r);
    let k2 = mat_mul(&k, &k);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    m
}

struct AxisAngleFn {
    input: Tensor,
}

impl GradFn for AxisAngleFn {
    fn name(&self) -> &'static str {
        "axis_angle_to_matrix"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut grad = vec![0.0; self.input.numel()];
        for (n, (rv, gm)) in self.input.data().chunks(3).zip(g.chunks(9)).enumerate() {
            let r = [rv[0], rv[1], rv[2]];
            let s = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
            let (a, b, da, db) = coefficients(s);
            let k = skew(r);
            let k2 = mat_mul(&k, &k);
            for i in 0..3 {
                let mut e = [0.0; 3];
                e[i] = 1.0;
                let dk = skew(e);
                let dk2a = mat_mul(&dk, &k);
                let dk2b = mat_mul(&k, &dk);
                let mut acc = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        let d = 2.0 * r[i] * (da * k[p][q] + db * k2[p][q])
                            + a * dk[p][q]
                            + b * (dk2a[p][q] + dk2b[p][q]);
                        acc += gm[p * 3 + q] * d;
                    }
                }
                grad[n * 3 + i] = acc;
            }
        }
        vec![Some(grad)]
    }
}

/// Map axis-angle vectors `[..., 3]` to rotation matrices `[..., 3, 3]`.
pub fn axis_angle_to_matrix(r: &Tensor) -> Result<Tensor> {
    if r.shape().last() != Some(&3) {
        return Err(TensorError::ShapeMismatch {
            op: "axis_angle_to_matrix",
            lhs: r.shape().to_vec(),
            rhs: vec![3],
        });
    }
    let mut data = Vec::with_capacity(r.numel() * 3);
    for v in r.data().chunks(3) {
        let m = rotation_matrix([v[0], v[1], v[2]]);
        data.extend(m.iter().flatten());
    }
    let mut shape = r.shape().to_vec();
    shape.push(3);
    Ok(Tensor::from_op(data, shape, AxisAngleFn { input: r.clone() }))
}
