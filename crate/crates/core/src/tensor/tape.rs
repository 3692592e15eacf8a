use std::cell::RefCell;
use std::rc::Rc;

use super::{Real, Result, Tensor, TensorError};

/// Maps the upstream gradient of a node onto its parents' gradients.
///
/// Called with the upstream gradient and a mask telling which parents need a
/// gradient; returns one entry per parent (in order), `None` when skipped.
pub type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape is single-threaded and lives for one forward/backward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    non_finite: RefCell<Option<String>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            non_finite: RefCell::new(None),
        }
    }

    /// A tape that keeps forward values but records no backward closures.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input that does not receive a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    /// Input whose gradient is tracked.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, self.grad_enabled)
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.check_finite("input", &value);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Pushes the result of a differentiable operation.
    ///
    /// `backward` is only invoked when at least one parent requires a
    /// gradient, and it is dropped right away on an inference tape.
    pub fn push_op<'t>(
        &'t self,
        name: &str,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        self.check_finite(name, &value);
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn check_finite(&self, name: &str, value: &Tensor<T>) {
        if !value.is_finite() {
            let mut flag = self.non_finite.borrow_mut();
            if flag.is_none() {
                *flag = Some(name.to_string());
            }
        }
    }

    /// First operation that produced a NaN or infinity, if any.
    pub fn non_finite(&self) -> Option<String> {
        self.non_finite.borrow().clone()
    }

    pub fn check(&self) -> Result<()> {
        match self.non_finite() {
            Some(op) => Err(TensorError::NonFinite(op)),
            None => Ok(()),
        }
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        self.check()?;
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect();
                let parent_grads = backward(&upstream, &needs);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, g) in node.parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            grads[id] = Some(upstream);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            let leaf = nodes[id].parents.is_empty() && nodes[id].requires_grad;
            if !leaf {
                *g = None;
            } else if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFinite(format!("gradient of node {id}")));
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of the leaves that were reached by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads[var.id]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[var.id], g.clone()).expect("grad shape"))
    }

    /// Gradient as a flat slice, `None` if the leaf was unreachable.
    pub fn slice(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads[var.id].as_deref()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}
