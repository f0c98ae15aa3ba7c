use super::{numel_of, GradFn, Result, Tensor, TensorError};

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Generic gather: `out[i] = input[src[i]]`, adjoint scatters back.
struct GatherFn {
    name: &'static str,
    input: Tensor,
    src: Vec<usize>,
}

impl GradFn for GatherFn {
    fn name(&self) -> &'static str {
        self.name
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut acc = vec![0.0; self.input.numel()];
        for (&s, &gi) in self.src.iter().zip(g) {
            acc[s] += gi;
        }
        vec![Some(acc)]
    }
}

fn gather(name: &'static str, input: &Tensor, src: Vec<usize>, shape: Vec<usize>) -> Tensor {
    let d = input.data();
    let data = src.iter().map(|&s| d[s]).collect();
    Tensor::from_op(
        data,
        shape,
        GatherFn {
            name,
            input: input.clone(),
            src,
        },
    )
}

/// Multi-index iteration over `shape`, yielding the flat index into a tensor
/// with the given per-axis `strides` and base `offset`.
fn strided_indices(shape: &[usize], strides: &[usize], offset: usize) -> Vec<usize> {
    let n = numel_of(shape);
    let rank = shape.len();
    let mut out = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut flat = offset;
    for _ in 0..n {
        out.push(flat);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            flat += strides[ax];
            if counter[ax] < shape[ax] {
                break;
            }
            flat -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    out
}

struct ReshapeFn {
    input: Tensor,
}

impl GradFn for ReshapeFn {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

struct ConcatFn {
    parts: Vec<Tensor>,
    axis: usize,
    outer: usize,
    inner: usize,
    total_axis: usize,
}

impl GradFn for ConcatFn {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        self.parts.iter().collect()
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let ext = p.shape()[self.axis];
            if !p.requires_grad() {
                grads.push(None);
                offset += ext;
                continue;
            }
            let block = ext * self.inner;
            let mut gp = Vec::with_capacity(p.numel());
            for o in 0..self.outer {
                let start = (o * self.total_axis + offset) * self.inner;
                gp.extend_from_slice(&g[start..start + block]);
            }
            grads.push(Some(gp));
            offset += ext;
        }
        grads
    }
}

/// Boundary handling for [`Tensor::pad`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
    /// Mirror without repeating the edge sample (`[a b c] -> b a b c b`).
    Reflect,
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(TensorError::ElementCount {
                op: "reshape",
                shape: shape.to_vec(),
                got: self.numel(),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            ReshapeFn { input: self.clone() },
        ))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(TensorError::Invalid(format!(
                "permutation {perm:?} does not match rank {rank}"
            )));
        }
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(TensorError::Invalid(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        let in_strides = strides_of(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let src = strided_indices(&out_shape, &strides, 0);
        Ok(gather("permute", self, src, out_shape))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let rank = self.rank();
        if a >= rank || b >= rank {
            return Err(TensorError::InvalidAxis {
                axis: a.max(b),
                rank,
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let extent = self.shape()[axis];
        if start > end || end > extent {
            return Err(TensorError::SliceOutOfRange { start, end, extent });
        }
        let strides = strides_of(self.shape());
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = end - start;
        let src = strided_indices(&out_shape, &strides, start * strides[axis]);
        Ok(gather("slice", self, src, out_shape))
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        for p in parts {
            let same = p.rank() == rank
                && (0..rank).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
            if !same {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape()[axis] * inner;
                data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_axis;
        Ok(Tensor::from_op(
            data,
            shape,
            ConcatFn {
                parts: parts.to_vec(),
                axis,
                outer,
                inner,
                total_axis,
            },
        ))
    }

    pub fn pad(&self, axis: usize, before: usize, after: usize, mode: PadMode) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let n = self.shape()[axis];
        if n == 0 || (mode == PadMode::Reflect && (before >= n || after >= n)) {
            return Err(TensorError::Invalid(format!(
                "cannot pad extent {n} by ({before}, {after}) with {mode:?}"
            )));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let m = n + before + after;
        let source = |j: usize| -> Option<usize> {
            let k = j as isize - before as isize;
            let last = n as isize - 1;
            match mode {
                PadMode::Zero => (0..=last).contains(&k).then_some(k as usize),
                PadMode::Replicate => Some(k.clamp(0, last) as usize),
                PadMode::Reflect => {
                    let r = if k < 0 {
                        -k
                    } else if k > last {
                        2 * last - k
                    } else {
                        k
                    };
                    Some(r as usize)
                }
            }
        };
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        if mode == PadMode::Zero {
            // zero padding is a gather with holes; handle via scatter map
            let d = self.data();
            let mut data = vec![0.0; outer * m * inner];
            let mut src = vec![usize::MAX; outer * m * inner];
            for o in 0..outer {
                for j in 0..m {
                    if let Some(k) = source(j) {
                        for i in 0..inner {
                            let dst = (o * m + j) * inner + i;
                            let s = (o * n + k) * inner + i;
                            data[dst] = d[s];
                            src[dst] = s;
                        }
                    }
                }
            }
            return Ok(Tensor::from_op(
                data,
                shape,
                ZeroPadFn {
                    input: self.clone(),
                    src,
                },
            ));
        }
        let mut src = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for j in 0..m {
                let k = source(j).expect("non-zero modes always map");
                for i in 0..inner {
                    src.push((o * n + k) * inner + i);
                }
            }
        }
        Ok(gather("pad", self, src, shape))
    }

    /// Translate content by `offset` along `axis`, filling with the edge value:
    /// `out[i] = x[clamp(i - offset)]`.
    pub fn shift(&self, axis: usize, offset: isize) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let n = self.shape()[axis];
        let k = offset.unsigned_abs().min(n);
        if k == 0 {
            return Ok(self.clone());
        }
        if offset > 0 {
            self.pad(axis, k, 0, PadMode::Replicate)?.slice(axis, 0, n)
        } else {
            self.pad(axis, 0, k, PadMode::Replicate)?.slice(axis, k, k + n)
        }
    }
}

struct ZeroPadFn {
    input: Tensor,
    src: Vec<usize>,
}

impl GradFn for ZeroPadFn {
    fn name(&self) -> &'static str {
        "pad"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut acc = vec![0.0; self.input.numel()];
        for (&s, &gi) in self.src.iter().zip(g) {
            if s != usize::MAX {
                acc[s] += gi;
            }
        }
        vec![Some(acc)]
    }
}
