//! Central finite-difference gradient oracle.
//!
//! Works only from forward values, so it stays independent of the adjoints it
//! is used to check.

use crate::tensor::{Result, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst element
    pub worst: (usize, usize),
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheck {
    /// Compare `backward` against central differences of `f` at `inputs`.
    /// `f` must return a scalar tensor.
    pub fn run<F>(&self, inputs: &[(Vec<f64>, Vec<usize>)], f: F) -> Result<GradReport>
    where
        F: Fn(&[Tensor]) -> Result<Tensor>,
    {
        let leaves: Vec<Tensor> = inputs
            .iter()
            .map(|(d, s)| Tensor::param(d.clone(), s))
            .collect::<Result<_>>()?;
        let loss = f(&leaves)?;
        loss.backward()?;
        let analytic: Vec<Vec<f64>> = leaves.iter().map(|t| t.grad_or_zeros()).collect();

        let eval = |which: usize, idx: usize, delta: f64| -> Result<f64> {
            let consts: Vec<Tensor> = inputs
                .iter()
                .enumerate()
                .map(|(j, (d, s))| {
                    let mut d = d.clone();
                    if j == which {
                        d[idx] += delta;
                    }
                    Tensor::new(d, s)
                })
                .collect::<Result<_>>()?;
            Ok(f(&consts)?.item())
        };

        let mut numeric = Vec::with_capacity(inputs.len());
        let mut max_rel_err = 0.0;
        let mut worst = (0, 0);
        for (j, (d, _)) in inputs.iter().enumerate() {
            let mut nj = Vec::with_capacity(d.len());
            for i in 0..d.len() {
                let up = eval(j, i, self.step)?;
                let down = eval(j, i, -self.step)?;
                let num = (up - down) / (2.0 * self.step);
                let err = relative_error(analytic[j][i], num, self.floor);
                if err > max_rel_err {
                    max_rel_err = err;
                    worst = (j, i);
                }
                nj.push(num);
            }
            numeric.push(nj);
        }
        Ok(GradReport {
            max_rel_err,
            worst,
            analytic,
            numeric,
        })
    }
}

/// Deterministic pseudo-random fill in `[lo, hi)`, for test fixtures.
pub fn fixture(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
