use super::{numel_of, GradFn, Result, Tensor, TensorError};

struct SumFn {
    input: Tensor,
    /// output flat index for each input element
    map: Vec<usize>,
    scale: f64,
}

impl GradFn for SumFn {
    fn name(&self) -> &'static str {
        if self.scale == 1.0 {
            "sum"
        } else {
            "mean"
        }
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let grad = self.map.iter().map(|&o| g[o] * self.scale).collect();
        vec![Some(grad)]
    }
}

fn check_axes(shape: &[usize], axes: &[usize]) -> Result<()> {
    for &ax in axes {
        if ax >= shape.len() {
            return Err(TensorError::InvalidAxis {
                axis: ax,
                rank: shape.len(),
            });
        }
    }
    Ok(())
}

/// For every input flat index, the flat index of the reduced output.
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let rank = shape.len();
    let reduced: Vec<bool> = (0..rank).map(|i| axes.contains(&i)).collect();
    let kept: Vec<usize> = (0..rank).filter(|&i| !reduced[i]).map(|i| shape[i]).collect();
    // strides of the output expressed per input axis (0 on reduced axes)
    let mut out_strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        if !reduced[i] {
            out_strides[i] = s;
            s *= shape[i];
        }
    }
    let n = numel_of(shape);
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            flat += out_strides[ax];
            if counter[ax] < shape[ax] {
                break;
            }
            flat -= out_strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    (map, kept)
}

impl Tensor {
    fn reduce_impl(&self, axes: &[usize], keepdim: bool, mean: bool) -> Result<Tensor> {
        check_axes(self.shape(), axes)?;
        let (map, kept) = reduction_map(self.shape(), axes);
        let mut uniq = axes.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        let count: usize = uniq.iter().map(|&a| self.shape()[a]).product();
        let scale = if mean { 1.0 / count.max(1) as f64 } else { 1.0 };
        let mut out = vec![0.0; numel_of(&kept)];
        for (x, &o) in self.data().iter().zip(&map) {
            out[o] += x;
        }
        if mean {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let shape = if keepdim {
            self.shape()
                .iter()
                .enumerate()
                .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
                .collect()
        } else {
            kept
        };
        Ok(Tensor::from_op(
            out,
            shape,
            SumFn {
                input: self.clone(),
                map,
                scale,
            },
        ))
    }

    pub fn sum(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        self.reduce_impl(axes, keepdim, false)
    }

    pub fn mean(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        self.reduce_impl(axes, keepdim, true)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&self) -> Tensor {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce_impl(&axes, false, false).expect("axes valid")
    }

    pub fn mean_all(&self) -> Tensor {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce_impl(&axes, false, true).expect("axes valid")
    }
}
