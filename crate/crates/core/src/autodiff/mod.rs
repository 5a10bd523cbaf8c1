//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Operations on [`Var`]
//! handles append nodes in execution order, so the node list is always
//! topologically sorted and [`Tape::backward`] is a single reverse sweep.
//! Gradients with respect to leaves are returned in [`Gradients`]; callers
//! move them into their parameter tensors with [`Tensor::accumulate_grad`].

mod backward;
mod ops;

use std::cell::{Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use ops::UnaryKind;

pub(crate) type CustomBackward =
    Box<dyn Fn(&[&[f64]], &[f64], &[f64]) -> Vec<Vec<f64>> + Send>;

pub(crate) enum Op {
    Leaf,
    /// `[rows, k] · [k, n]`; the left operand may carry leading batch axes.
    MatMul { a: usize, b: usize, rows: usize, k: usize, n: usize },
    /// `out[s] = A · X[s]` for every leading slice `s` of `X`.
    LeftMatMul { a: usize, x: usize, n: usize, m: usize, d: usize, batch: usize },
    Unary { a: usize, kind: UnaryKind },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    AddScalar { a: usize },
    AddBias { x: usize, b: usize, channels: usize },
    Clamp { a: usize, lo: f64, hi: f64 },
    Sum { a: usize },
    SumAxis { a: usize, outer: usize, len: usize, inner: usize },
    Norm { a: usize, outer: usize, len: usize, inner: usize },
    Softmax { a: usize, outer: usize, len: usize, inner: usize },
    Permute { a: usize, in_shape: Vec<usize>, axes: Vec<usize> },
    Reshape { a: usize },
    Narrow { a: usize, outer: usize, len: usize, inner: usize, start: usize, width: usize },
    Conv(ConvDims),
    RowNormalize { a: usize, rows: usize, cols: usize },
    NormalizeRows { a: usize, rows: usize, cols: usize, eps: f64 },
    Custom { inputs: Vec<usize>, backward: CustomBackward },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub x: usize,
    pub w: usize,
    pub batch: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub nodes: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub taps: usize,
    pub dilation: usize,
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `t` as a leaf. It is differentiable iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Registers a leaf that is differentiable regardless of the tensor's flag.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(Vec::new(), vec![v], Op::Leaf, false)
    }

    /// Records an operation whose value and vector-Jacobian product are
    /// supplied by the caller. `backward(inputs, output, grad_output)` must
    /// return one gradient per input, each matching that input's length.
    pub fn custom<'t, F>(
        &'t self,
        inputs: &[Var<'t>],
        shape: Vec<usize>,
        value: Vec<f64>,
        backward: F,
    ) -> Result<Var<'t>>
    where
        F: Fn(&[&[f64]], &[f64], &[f64]) -> Vec<Vec<f64>> + Send + 'static,
    {
        if crate::tensor::numel(&shape) != value.len() {
            return Err(Error::InvalidTensor(format!(
                "custom op value of length {} does not fit shape {:?}",
                value.len(),
                shape
            )));
        }
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = self.any_requires_grad(&ids);
        Ok(self.push(
            shape,
            value,
            Op::Custom {
                inputs: ids,
                backward: Box::new(backward),
            },
            rg,
        ))
    }

    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Var<'_> {
        debug_assert_eq!(crate::tensor::numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn any_requires_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(self, loss.tape), "loss recorded on another tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Rank {
                op: "backward",
                shape: root.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            backward::propagate(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar with respect to every differentiable leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `var` is not a differentiable leaf reachable from the loss.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; var.numel()])
    }

    /// Adds the gradient of `var` into `target.grad`.
    pub fn accumulate_into(&self, var: Var<'_>, target: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![0.0; target.numel()]),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Borrows the value. Do not hold the borrow across further tape ops.
    pub fn data(&self) -> Ref<'t, [f64]> {
        Ref::map(self.tape.nodes.borrow(), |n| n[self.id].value.as_slice())
    }

    pub fn value(&self) -> Vec<f64> {
        self.data().to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on a non-scalar");
        d[0]
    }

    pub fn to_tensor(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward(*self)
    }
}

#[cfg(test)]
mod tests;
