use super::{GradFn, Result, Tensor, TensorError};

/// `c = op(a) · op(b) (+ c when accumulate)`, row-major, where `op` optionally
/// transposes. `a` is m×k after op, `b` is k×n after op.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements (asserted
    // above) and the strides describe row-major or transposed views that stay
    // inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatmulFn {
    a: Tensor,
    b: Tensor,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    /// `b` is a single matrix shared by every batch item
    shared_b: bool,
}

impl GradFn for MatmulFn {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let (ad, bd) = (self.a.data(), self.b.data());
        let ga = self.a.requires_grad().then(|| {
            let mut ga = vec![0.0; self.a.numel()];
            for i in 0..self.batch {
                let bs = if self.shared_b { 0 } else { i * k * n };
                gemm(
                    m,
                    n,
                    k,
                    &g[i * m * n..(i + 1) * m * n],
                    false,
                    &bd[bs..bs + k * n],
                    true,
                    &mut ga[i * m * k..(i + 1) * m * k],
                    false,
                );
            }
            ga
        });
        let gb = self.b.requires_grad().then(|| {
            let mut gb = vec![0.0; self.b.numel()];
            for i in 0..self.batch {
                let bs = if self.shared_b { 0 } else { i * k * n };
                gemm(
                    k,
                    m,
                    n,
                    &ad[i * m * k..(i + 1) * m * k],
                    true,
                    &g[i * m * n..(i + 1) * m * n],
                    false,
                    &mut gb[bs..bs + k * n],
                    self.shared_b,
                );
            }
            gb
        });
        vec![ga, gb]
    }
}

impl Tensor {
    /// Matrix product over the last two axes.
    ///
    /// Supports `[m,k]·[k,n]`, batched `[..,m,k]·[..,k,n]` with equal leading
    /// axes, and `[..,m,k]·[k,n]` where the right matrix is shared.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let shared_b = lead_b.is_empty();
        if !shared_b && lead_a != lead_b {
            return Err(mismatch());
        }
        let batch: usize = lead_a.iter().product();
        let mut out = vec![0.0; batch * m * n];
        if shared_b {
            // fold the batch into the row dimension
            gemm(batch * m, k, n, self.data(), false, other.data(), false, &mut out, false);
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &self.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &other.data()[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = lead_a.to_vec();
        shape.extend([m, n]);
        let (fn_batch, fn_m) = if shared_b { (1, batch * m) } else { (batch, m) };
        Ok(Tensor::from_op(
            out,
            shape,
            MatmulFn {
                a: self.clone(),
                b: other.clone(),
                batch: fn_batch,
                m: fn_m,
                k,
                n,
                shared_b,
            },
        ))
    }
}
