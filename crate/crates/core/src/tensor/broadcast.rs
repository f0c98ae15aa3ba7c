use super::{numel_of, Result, TensorError};

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Maps a flat index of a broadcast output to the flat index of one operand.
#[derive(Debug, Clone)]
pub enum IndexMap {
    Same,
    Scalar,
    /// Operand shape is a trailing suffix of the output shape.
    Cyclic(usize),
    General(Vec<usize>),
}

impl IndexMap {
    pub fn new(out: &[usize], input: &[usize]) -> Self {
        let n_in = numel_of(input);
        if out == input {
            return IndexMap::Same;
        }
        if n_in == 1 {
            return IndexMap::Scalar;
        }
        let trimmed: &[usize] = {
            let lead = input.iter().take_while(|&&d| d == 1).count();
            &input[lead..]
        };
        if trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == *trimmed {
            return IndexMap::Cyclic(n_in);
        }
        // general: strides of the input aligned to the output, 0 on broadcast axes
        let rank = out.len();
        let offset = rank - input.len();
        let mut strides = vec![0usize; rank];
        let mut s = 1;
        for i in (0..input.len()).rev() {
            strides[i + offset] = if input[i] == 1 { 0 } else { s };
            s *= input[i];
        }
        let n = numel_of(out);
        let mut map = Vec::with_capacity(n);
        let mut counter = vec![0usize; rank];
        let mut flat = 0usize;
        for _ in 0..n {
            map.push(flat);
            for ax in (0..rank).rev() {
                counter[ax] += 1;
                flat += strides[ax];
                if counter[ax] < out[ax] {
                    break;
                }
                flat -= strides[ax] * counter[ax];
                counter[ax] = 0;
            }
        }
        IndexMap::General(map)
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        match self {
            IndexMap::Same => i,
            IndexMap::Scalar => 0,
            IndexMap::Cyclic(n) => i % n,
            IndexMap::General(m) => m[i],
        }
    }

    /// Sum an output-shaped gradient back onto the operand.
    pub fn reduce(&self, grad: &[f64], n_in: usize) -> Vec<f64> {
        match self {
            IndexMap::Same => grad.to_vec(),
            _ => {
                let mut acc = vec![0.0; n_in];
                for (i, g) in grad.iter().enumerate() {
                    acc[self.get(i)] += g;
                }
                acc
            }
        }
    }
}
