//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation appends a node holding its value, the ids
//! of its inputs and a closure mapping the output gradient to input
//! gradients. Node ids increase monotonically, so the tape is always in
//! topological order and [`Tape::backward`] is a single reverse sweep.

mod gradcheck;
mod ops;

pub use ops::{gelu, softmax, Activation, GELU_SQRT_2_OVER_PI};
pub use gradcheck::{finite_diff_gradcheck, GradcheckReport, GradcheckSpec};

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Given the output gradient and which inputs need gradients, produce one
/// optional gradient per input.
type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Operation record for one forward pass. Not `Sync`: a tape belongs to a
/// single thread and a single training step.
pub struct Tape {
    id: usize,
    nodes: RefCell<Vec<Node>>,
    strict: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            strict: false,
        }
    }

    /// A tape that fails any operation producing NaN or infinity.
    pub fn strict() -> Self {
        Self {
            strict: true,
            ..Self::new()
        }
    }

    pub fn with_strict(strict: bool) -> Self {
        if strict {
            Self::strict()
        } else {
            Self::new()
        }
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable leaf (a parameter or an input we want
    /// gradients for).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_raw("leaf", Rc::new(value), Vec::new(), true, None)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_raw("constant", Rc::new(value), Vec::new(), false, None)
    }

    pub fn value(&self, var: Var) -> Rc<Tensor> {
        self.check(var).expect("variable from another tape");
        Rc::clone(&self.nodes.borrow()[var.index].value)
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.value(var).shape().to_vec()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes.borrow()[var.index].requires_grad
    }

    /// Input node ids of `var`, in argument order.
    pub fn inputs(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.index].inputs.clone()
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes.borrow()[var.index].op
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.tape != self.id || var.index >= self.nodes.borrow().len() {
            return Err(Error::Contract(format!(
                "variable {} does not belong to tape {}",
                var.index, self.id
            )));
        }
        Ok(())
    }

    fn push_raw(
        &self,
        op: &'static str,
        value: Rc<Tensor>,
        inputs: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            op,
            value,
            inputs,
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var { tape: self.id, index }
    }

    /// Records the result of an operation. The backward closure is dropped
    /// when no input needs a gradient.
    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Rc<Tensor>,
        inputs: &[Var],
        backward: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    ) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        if self.strict && !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        Ok(self.push_raw(
            op,
            value,
            inputs.iter().map(|v| v.index).collect(),
            requires_grad,
            Some(Box::new(backward)),
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// into every node that feeds the loss; unreachable leaves read as zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.index];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::ones(root.value.shape()));
        for index in (0..=loss.index).rev() {
            let node = &nodes[index];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[index].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = backward(&grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for ((&input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g.filter(|_| need) else { continue };
                debug_assert_eq!(g.shape(), nodes[input].value.shape(), "op {}", node.op);
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }
}

/// Gradients of one backward sweep, keyed by tape variable.
pub struct Gradients {
    tape: usize,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zero when `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        assert_eq!(var.tape, self.tape, "variable from another tape");
        match &self.grads[var.index] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.index]),
        }
    }

    /// Takes ownership of the gradient for `var`.
    pub fn take(&mut self, var: Var) -> Tensor {
        assert_eq!(var.tape, self.tape, "variable from another tape");
        self.grads[var.index]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.index]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::strict();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).item().unwrap(), 6.0);
    }

    #[test]
    fn unused_leaf_gets_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::full(&[2, 2], 5.0));
        let y = tape.scale(x, 4.0).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn foreign_variable_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let _ = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn strict_mode_rejects_non_finite() {
        let tape = Tape::strict();
        let x = tape.leaf(Tensor::scalar(1.0));
        let z = tape.leaf(Tensor::scalar(0.0));
        assert!(matches!(tape.div(x, z), Err(Error::NonFinite { .. })));
        let lax = Tape::new();
        let x = lax.leaf(Tensor::scalar(1.0));
        let z = lax.leaf(Tensor::scalar(0.0));
        assert!(lax.div(x, z).is_ok());
    }

    #[test]
    fn topological_order() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::ones(&[2, 2]));
        let b = tape.matmul(a, a).unwrap();
        let c = tape.relu(b).unwrap();
        for v in [b, c] {
            assert!(tape.inputs(v).iter().all(|&i| i < v.index()));
        }
    }
}
