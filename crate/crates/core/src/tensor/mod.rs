//! Minimal define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations whose
//! inputs require gradients record a backward closure on the output, so the
//! graph is rebuilt on every forward pass. Graphs are `!Send`: one graph per
//! thread, with gradient merging across shards done explicitly by the caller.
//!
//! The operation set is deliberately small (see [`ops`]); fused kernels such
//! as the selective scan and the structure losses live next to their domain
//! code and hook in through [`Tensor::from_op`].

mod gradcheck;
pub mod ops;
mod real;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use ops::Padding;
pub use real::Real;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Gradients for each parent of an op, in parent order. `None` means "no
/// contribution" (e.g. the parent does not require a gradient).
pub type ParentGrads<F> = Vec<Option<Vec<F>>>;

/// Backward rule: receives the upstream gradient, the parents and the output
/// values, and returns one gradient per parent.
pub type BackwardFn<F> = Box<dyn Fn(&[F], &[Tensor<F>], &[F]) -> ParentGrads<F>>;

struct GradFn<F: Real> {
    name: &'static str,
    parents: Vec<Tensor<F>>,
    backward: BackwardFn<F>,
}

struct Node<F: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<F>>>,
    op: Option<GradFn<F>>,
}

/// Shaped floating-point array with an optional gradient slot.
pub struct Tensor<F: Real>(Rc<Node<F>>);

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.op.as_ref().map(|o| o.name).unwrap_or("leaf");
        write!(
            f,
            "Tensor<{}>(shape={:?}, op={op}, requires_grad={})",
            F::NAME,
            self.0.shape,
            self.0.requires_grad
        )
    }
}

impl<F: Real> Tensor<F> {
    fn leaf(data: Vec<F>, shape: Vec<usize>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: None,
        })))
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Trainable leaf: receives a gradient on [`backward`](Self::backward).
    pub fn param(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape.to_vec(), true)
    }

    pub fn scalar(v: F) -> Self {
        Self::leaf(vec![v], vec![], false).expect("scalar shape")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![F::zero(); n], shape.to_vec(), false).expect("zeros shape")
    }

    /// Builds an op output. The backward rule is recorded only when at least
    /// one parent requires a gradient; otherwise the parents are dropped and
    /// the output is a plain constant.
    pub fn from_op(
        name: &'static str,
        data: Vec<F>,
        shape: Vec<usize>,
        parents: Vec<Tensor<F>>,
        backward: impl Fn(&[F], &[Tensor<F>], &[F]) -> ParentGrads<F> + 'static,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let op = requires_grad.then(|| GradFn {
            name,
            parents,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[F] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![0, 0],
            }),
        }
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.to_vec(), self.shape().to_vec(), false).expect("detach shape")
    }

    /// Reverse-mode accumulation from a scalar loss.
    ///
    /// Intermediate tensors receive this pass's gradient; leaves accumulate
    /// across passes until [`zero_grad`](Self::zero_grad).
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut grads: HashMap<u64, Vec<F>> = HashMap::new();
        grads.insert(self.id(), vec![F::one()]);

        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            if let Some(op) = &node.0.op {
                let parent_grads = (op.backward)(&g, &op.parents, node.data());
                debug_assert_eq!(parent_grads.len(), op.parents.len(), "{}", op.name);
                for (parent, pg) in op.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel(), "{} grad length", op.name);
                    match grads.get_mut(&parent.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                        None => {
                            grads.insert(parent.id(), pg);
                        }
                    }
                }
                *node.0.grad.borrow_mut() = Some(g);
            } else {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients.
    fn topological_order(&self) -> Vec<Tensor<F>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<F>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = &node.0.op {
                for p in &op.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_rejects_bad_length() {
        assert!(Tensor::<f32>::new(vec![1.0, 2.0], &[3]).is_err());
        let t = Tensor::<f32>::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::<f64>::param(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let x = Tensor::<f64>::param(vec![1.5], &[1]).unwrap();
        let y = x.add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.scale(2.0);
        assert!(y.backward().is_err());
    }

    #[test]
    fn every_reachable_grad_populated() {
        let x = Tensor::<f64>::param(vec![0.3, -0.2], &[2]).unwrap();
        let h = x.tanh();
        let loss = h.mul(&h).unwrap().sum();
        loss.backward().unwrap();
        assert!(h.grad().is_some());
        assert!(x.grad().is_some());
        assert_eq!(h.grad().unwrap().len(), 2);
    }

    #[test]
    fn constants_record_nothing() {
        let a = Tensor::<f32>::new(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.tanh();
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
        b.sum().backward().unwrap();
        assert!(a.grad().is_none());
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let x = Tensor::<f64>::param(vec![0.4, -1.1, 2.0], &[3]).unwrap();
        let l1 = x.silu().sum();
        let l2 = x.mul(&x).unwrap().sum();
        l1.add(&l2).unwrap().backward().unwrap();
        let joint = x.grad().unwrap();
        x.zero_grad();
        l1.backward().unwrap();
        let g1 = x.grad().unwrap();
        x.zero_grad();
        l2.backward().unwrap();
        let g2 = x.grad().unwrap();
        for i in 0..3 {
            assert!((joint[i] - (g1[i] + g2[i])).abs() < 1e-12);
        }
    }
}
