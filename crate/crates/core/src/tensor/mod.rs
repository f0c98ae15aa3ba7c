//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted node in a gradient graph.
//! Operations on tensors that require gradients record a [`GradFn`] pointing
//! back at their inputs; [`Tensor::backward`] linearises the reachable graph
//! into a [`GradTape`] and replays the adjoints in reverse creation order.
//!
//! Node ids come from a global counter, so a node's id is always larger than
//! the ids of its inputs. Sorting by id therefore yields a topological order
//! that is fixed by construction order, which keeps gradient accumulation
//! bit-reproducible.

mod broadcast;
mod elementwise;
mod linalg;
mod nn_ops;
mod reduce;
mod shape_ops;
mod tape;

pub use broadcast::{broadcast_shapes, IndexMap};
pub use elementwise::Unary;
pub use linalg::gemm;
pub use shape_ops::PadMode;
pub use tape::GradTape;

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {got} elements cannot form shape {shape:?}")]
    ElementCount {
        op: &'static str,
        shape: Vec<usize>,
        got: usize,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("slice {start}..{end} out of range for extent {extent}")]
    SliceOutOfRange {
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this loss; build a new graph")]
    BackwardTwice,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Adjoint of a recorded primitive.
///
/// `backward` receives the forward output values and the gradient flowing
/// into the output, and returns one optional gradient per input (same order
/// as [`GradFn::inputs`]). `None` means "no contribution".
pub trait GradFn: Send + Sync {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<&Tensor>;
    fn backward(&self, output: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn GradFn>>,
    grad: Mutex<Option<Vec<f64>>>,
    consumed: AtomicBool,
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("id", &self.0.id).field("shape", &self.0.shape);
        if self.numel() <= 16 {
            s.field("data", &self.0.data);
        }
        if let Some(g) = &self.0.grad_fn {
            s.field("op", &g.name());
        }
        s.field("requires_grad", &self.0.requires_grad).finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn GradFn>>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Arc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad_fn,
            grad: Mutex::new(None),
            consumed: AtomicBool::new(false),
        }))
    }

    /// Constant (non-differentiable) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::ElementCount {
                op: "new",
                shape: shape.to_vec(),
                got: data.len(),
            });
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Leaf that accumulates gradients during [`Tensor::backward`].
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::ElementCount {
                op: "param",
                shape: shape.to_vec(),
                got: data.len(),
            });
        }
        Ok(Self::build(data, shape.to_vec(), true, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![value], vec![], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(vec![value; numel_of(shape)], shape.to_vec(), false, None)
    }

    /// Record the output of a custom primitive. The grad fn is dropped when no
    /// input requires gradients.
    pub fn from_op<G: GradFn + 'static>(data: Vec<f64>, shape: Vec<usize>, grad_fn: G) -> Self {
        let requires_grad = grad_fn.inputs().iter().any(|t| t.requires_grad());
        let grad_fn: Option<Box<dyn GradFn>> = if requires_grad {
            Some(Box::new(grad_fn))
        } else {
            None
        };
        Self::build(data, shape, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Accumulated gradient of a leaf, `None` if backward never reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    /// Accumulated gradient, zeros when unreachable from the loss.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Populate `grad` of every requires-grad leaf reachable from this scalar.
    ///
    /// Leaves accumulate across different losses until [`Tensor::zero_grad`];
    /// running backward twice on the same loss is an error.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if self.0.consumed.swap(true, Ordering::SeqCst) {
            return Err(TensorError::BackwardTwice);
        }
        if !self.requires_grad() {
            return Ok(());
        }
        GradTape::record(self).replay(self, vec![1.0]);
        Ok(())
    }

    pub(crate) fn grad_fn(&self) -> Option<&dyn GradFn> {
        self.0.grad_fn.as_deref()
    }
}
