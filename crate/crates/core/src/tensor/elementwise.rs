use super::broadcast::{broadcast_shapes, IndexMap};
use super::{numel_of, GradFn, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Min => "min_pair",
            Binary::Max => "max_pair",
        }
    }

    #[inline]
    fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
            // ties go to the first operand
            Binary::Min => {
                if x <= y {
                    x
                } else {
                    y
                }
            }
            Binary::Max => {
                if x >= y {
                    x
                } else {
                    y
                }
            }
        }
    }
}

struct BinaryFn {
    kind: Binary,
    a: Tensor,
    b: Tensor,
    map_a: IndexMap,
    map_b: IndexMap,
}

impl GradFn for BinaryFn {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (na, nb) = (self.a.numel(), self.b.numel());
        let (ad, bd) = (self.a.data(), self.b.data());
        let need_a = self.a.requires_grad();
        let need_b = self.b.requires_grad();
        let mut ga = vec![0.0; if need_a { na } else { 0 }];
        let mut gb = vec![0.0; if need_b { nb } else { 0 }];
        for (i, &gi) in g.iter().enumerate() {
            let ia = self.map_a.get(i);
            let ib = self.map_b.get(i);
            let (x, y) = (ad[ia], bd[ib]);
            let (dx, dy) = match self.kind {
                Binary::Add => (gi, gi),
                Binary::Sub => (gi, -gi),
                Binary::Mul => (gi * y, gi * x),
                Binary::Div => (gi / y, -gi * x / (y * y)),
                Binary::Min => {
                    if x <= y {
                        (gi, 0.0)
                    } else {
                        (0.0, gi)
                    }
                }
                Binary::Max => {
                    if x >= y {
                        (gi, 0.0)
                    } else {
                        (0.0, gi)
                    }
                }
            };
            if need_a {
                ga[ia] += dx;
            }
            if need_b {
                gb[ib] += dy;
            }
        }
        vec![need_a.then_some(ga), need_b.then_some(gb)]
    }
}

fn binary(kind: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast_shapes(kind.name(), a.shape(), b.shape())?;
    let map_a = IndexMap::new(&shape, a.shape());
    let map_b = IndexMap::new(&shape, b.shape());
    let n = numel_of(&shape);
    let (ad, bd) = (a.data(), b.data());
    if kind == Binary::Div && bd.contains(&0.0) {
        return Err(TensorError::Domain {
            op: "div",
            detail: "division by zero".into(),
        });
    }
    let data: Vec<f64> = match (&map_a, &map_b) {
        (IndexMap::Same, IndexMap::Same) => ad.iter().zip(bd).map(|(&x, &y)| kind.apply(x, y)).collect(),
        _ => (0..n)
            .map(|i| kind.apply(ad[map_a.get(i)], bd[map_b.get(i)]))
            .collect(),
    };
    Ok(Tensor::from_op(
        data,
        shape,
        BinaryFn {
            kind,
            a: a.clone(),
            b: b.clone(),
            map_a,
            map_b,
        },
    ))
}

/// Elementwise unary maps, some carrying a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Abs,
    Sqrt,
    Tanh,
    Gelu,
    AddScalar(f64),
    MulScalar(f64),
    PowScalar(f64),
    Clamp(f64, f64),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sigmoid => "sigmoid",
            Unary::Abs => "abs",
            Unary::Sqrt => "sqrt",
            Unary::Tanh => "tanh",
            Unary::Gelu => "gelu",
            Unary::AddScalar(_) => "add_scalar",
            Unary::MulScalar(_) => "mul_scalar",
            Unary::PowScalar(_) => "pow",
            Unary::Clamp(..) => "clamp",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Abs => x.abs(),
            Unary::Sqrt => x.sqrt(),
            Unary::Tanh => x.tanh(),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
            Unary::AddScalar(s) => x + s,
            Unary::MulScalar(s) => x * s,
            Unary::PowScalar(p) => x.powf(p),
            Unary::Clamp(lo, hi) => x.max(lo).min(hi),
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Sqrt => 0.5 / y,
            Unary::Tanh => 1.0 - y * y,
            Unary::Gelu => {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                let t = inner.tanh();
                let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            }
            Unary::AddScalar(_) => 1.0,
            Unary::MulScalar(s) => s,
            Unary::PowScalar(p) => {
                if p == 0.0 {
                    0.0
                } else {
                    p * x.powf(p - 1.0)
                }
            }
            Unary::Clamp(lo, hi) => {
                if x < lo || x > hi {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    fn check_domain(self, data: &[f64]) -> Result<()> {
        let bad = match self {
            Unary::Log => data.iter().any(|&x| x <= 0.0),
            Unary::Sqrt => data.iter().any(|&x| x < 0.0),
            Unary::PowScalar(p) if p.fract() != 0.0 => data.iter().any(|&x| x < 0.0),
            Unary::PowScalar(p) if p < 0.0 => data.contains(&0.0),
            _ => false,
        };
        if bad {
            return Err(TensorError::Domain {
                op: self.name(),
                detail: "input outside the function's domain".into(),
            });
        }
        Ok(())
    }
}

struct UnaryFn {
    kind: Unary,
    input: Tensor,
}

impl GradFn for UnaryFn {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = self.input.data();
        let grad = g
            .iter()
            .zip(x)
            .zip(out)
            .map(|((&gi, &xi), &yi)| gi * self.kind.derivative(xi, yi))
            .collect();
        vec![Some(grad)]
    }
}

impl Tensor {
    pub fn unary(&self, kind: Unary) -> Result<Tensor> {
        kind.check_domain(self.data())?;
        let data = self.data().iter().map(|&x| kind.apply(x)).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            UnaryFn {
                kind,
                input: self.clone(),
            },
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Div, self, other)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn min_pair(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Min, self, other)
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn max_pair(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Max, self, other)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Unary::Neg).expect("neg has no domain")
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp).expect("exp has no domain")
    }

    pub fn log(&self) -> Result<Tensor> {
        self.unary(Unary::Log)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid).expect("sigmoid has no domain")
    }

    pub fn abs(&self) -> Tensor {
        self.unary(Unary::Abs).expect("abs has no domain")
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(Unary::Sqrt)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh).expect("tanh has no domain")
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self) -> Tensor {
        self.unary(Unary::Gelu).expect("gelu has no domain")
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.unary(Unary::AddScalar(s)).expect("no domain")
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        self.unary(Unary::MulScalar(s)).expect("no domain")
    }

    pub fn pow_scalar(&self, p: f64) -> Result<Tensor> {
        self.unary(Unary::PowScalar(p))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(Unary::Clamp(lo, hi)).expect("no domain")
    }
}
