use super::{GradFn, Result, Tensor, TensorError};

struct SoftmaxFn {
    input: Tensor,
    width: usize,
}

impl GradFn for SoftmaxFn {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let w = self.width;
        let mut grad = vec![0.0; out.len()];
        for ((y, gy), gx) in out.chunks(w).zip(g.chunks(w)).zip(grad.chunks_mut(w)) {
            let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
            for i in 0..w {
                gx[i] = y[i] * (gy[i] - dot);
            }
        }
        vec![Some(grad)]
    }
}

struct LayerNormFn {
    input: Tensor,
    gain: Tensor,
    bias: Tensor,
    width: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl GradFn for LayerNormFn {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input, &self.gain, &self.bias]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let w = self.width;
        let gain = self.gain.data();
        let mut dgain = vec![0.0; w];
        let mut dbias = vec![0.0; w];
        let mut dx = vec![0.0; g.len()];
        let mut dxhat = vec![0.0; w];
        for (row, ((gy, xh), gx)) in g
            .chunks(w)
            .zip(self.xhat.chunks(w))
            .zip(dx.chunks_mut(w))
            .enumerate()
        {
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for i in 0..w {
                dgain[i] += gy[i] * xh[i];
                dbias[i] += gy[i];
                dxhat[i] = gy[i] * gain[i];
                mean_d += dxhat[i];
                mean_dx += dxhat[i] * xh[i];
            }
            mean_d /= w as f64;
            mean_dx /= w as f64;
            let s = self.inv_std[row];
            for i in 0..w {
                gx[i] = s * (dxhat[i] - mean_d - xh[i] * mean_dx);
            }
        }
        vec![
            self.input.requires_grad().then_some(dx),
            self.gain.requires_grad().then_some(dgain),
            self.bias.requires_grad().then_some(dbias),
        ]
    }
}

impl Tensor {
    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        if axis != rank - 1 {
            return self
                .transpose(axis, rank - 1)?
                .softmax(rank - 1)?
                .transpose(axis, rank - 1);
        }
        let w = self.shape()[axis];
        let mut out = vec![0.0; self.numel()];
        for (x, y) in self.data().chunks(w).zip(out.chunks_mut(w)) {
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi = (xi - max).exp();
                total += *yi;
            }
            y.iter_mut().for_each(|v| *v /= total);
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            SoftmaxFn {
                input: self.clone(),
                width: w,
            },
        ))
    }

    /// Layer normalisation along `axis` with affine `gain` and `bias` of that
    /// axis' extent.
    pub fn layer_norm(&self, axis: usize, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        if eps <= 0.0 {
            return Err(TensorError::Domain {
                op: "layer_norm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        if axis != rank - 1 {
            return self
                .transpose(axis, rank - 1)?
                .layer_norm(rank - 1, gain, bias, eps)?
                .transpose(axis, rank - 1);
        }
        let w = self.shape()[axis];
        if gain.numel() != w || bias.numel() != w {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let rows = self.numel() / w.max(1);
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; self.numel()];
        let (gd, bd) = (gain.data(), bias.data());
        for (r, (x, xh)) in self.data().chunks(w).zip(xhat.chunks_mut(w)).enumerate() {
            let mean = x.iter().sum::<f64>() / w as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for i in 0..w {
                xh[i] = (x[i] - mean) * s;
                out[r * w + i] = xh[i] * gd[i] + bd[i];
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            LayerNormFn {
                input: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                width: w,
                xhat,
                inv_std,
            },
        ))
    }
}
