//! Minimal dense tensor engine: 64-bit floats, row-major storage,
//! reverse-mode gradients over a dynamically recorded graph, and an
//! instrumented multiplication counter on every matrix product.
//!
//! Tensors are handles (cheap to clone) onto shared storage. Values are
//! immutable after construction except through the explicit parameter
//! update hooks ([`Tensor::map_data_mut`]), which exist for optimizers and
//! finite-difference probes. Gradient accumulators are additive across
//! backward passes until [`Tensor::zero_grad`] is called.

mod ops;

pub use ops::concat_cols;
pub use ops::concat_rows;

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::rng::Rng;

type BackwardFn = Box<dyn FnOnce(&[f64])>;

struct Inner {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    consumed: bool,
}

/// Handle to a node in the computation graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .field("data", &inner.data)
            .finish()
    }
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::ShapeMismatch {
            op: "construct",
            left: shape.to_vec(),
            right: vec![],
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel = validate_shape(&shape)?;
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "construct",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor::leaf(data, shape, false))
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = validate_shape(&shape).expect("zeros: invalid shape");
        Tensor::leaf(vec![0.0; numel], shape, false)
    }

    pub fn ones(shape: Vec<usize>) -> Tensor {
        let numel = validate_shape(&shape).expect("ones: invalid shape");
        Tensor::leaf(vec![1.0; numel], shape, false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![value], vec![1], false)
    }

    /// Row-major identity matrix.
    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::leaf(data, vec![n, n], false)
    }

    /// Leaf filled from the seeded generator, N(0, std^2).
    pub fn seeded_normal(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Tensor {
        let numel = validate_shape(&shape).expect("seeded_normal: invalid shape");
        let data = (0..numel).map(|_| rng.next_normal_scaled(std)).collect();
        Tensor::leaf(data, shape, false)
    }

    /// Mark a leaf as trainable. Panics if called on an op output.
    pub fn trainable(self) -> Tensor {
        {
            let mut inner = self.inner.borrow_mut();
            assert!(
                inner.parents.is_empty(),
                "trainable() is only valid on leaf tensors"
            );
            inner.requires_grad = true;
        }
        self
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                data,
                shape,
                requires_grad,
                grad: None,
                parents: Vec::new(),
                backward: None,
                consumed: false,
            })),
        }
    }

    /// Op output node. `backward` receives the output gradient and pushes
    /// contributions into the parents; it is recorded only when some
    /// parent participates in autodiff.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                data,
                shape,
                requires_grad,
                grad: None,
                parents: if requires_grad { parents } else { Vec::new() },
                backward: if requires_grad { Some(backward) } else { None },
                consumed: false,
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Copy of the stored values.
    pub fn data(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Read access without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Scalar read; contract error when the tensor is not scalar.
    pub fn item(&self) -> Result<f64> {
        let inner = self.inner.borrow();
        if inner.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                inner.shape
            )));
        }
        Ok(inner.data[0])
    }

    /// In-place value mutation hook for optimizers and finite-difference
    /// probes. Not part of the graph: gradients are always taken with
    /// respect to the values observed during the forward pass.
    pub fn map_data_mut(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().data);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub fn scale_grad(&self, factor: f64) {
        if let Some(grad) = self.inner.borrow_mut().grad.as_mut() {
            for g in grad.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        debug_assert_eq!(inner.data.len(), delta.len());
        match inner.grad.as_mut() {
            Some(grad) => {
                for (g, d) in grad.iter_mut().zip(delta) {
                    *g += d;
                }
            }
            None => inner.grad = Some(delta.to_vec()),
        }
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode differentiation from a scalar loss. Gradients
    /// accumulate additively into every trainable ancestor; the recorded
    /// graph is consumed as it is walked.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if self.inner.borrow().consumed {
            return Err(Error::Contract(
                "backward on an already-consumed graph".into(),
            ));
        }
        if !self.requires_grad() {
            // Loss does not depend on any trainable tensor; nothing to do.
            return Ok(());
        }

        // Post-order DFS over the recorded parents; reversed, every node is
        // processed only after all of its consumers.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.ptr_id()) {
                continue;
            }
            stack.push((node.clone(), true));
            let parents = node.inner.borrow().parents.clone();
            for parent in parents {
                if parent.requires_grad() && !visited.contains(&parent.ptr_id()) {
                    stack.push((parent, false));
                }
            }
        }

        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let (backward, grad, had_parents) = {
                let mut inner = node.inner.borrow_mut();
                let had_parents = !inner.parents.is_empty();
                if inner.backward.is_some() {
                    inner.consumed = true;
                }
                (inner.backward.take(), inner.grad.clone(), had_parents)
            };
            let is_intermediate = backward.is_some() || had_parents;
            if let (Some(backward), Some(grad)) = (backward, &grad) {
                backward(grad);
            }
            // Release the graph and transient gradients; leaves keep their
            // accumulators for the optimizer.
            let mut inner = node.inner.borrow_mut();
            inner.parents.clear();
            if is_intermediate {
                inner.grad = None;
            }
        }
        Ok(())
    }
}

/// Central finite differences of a scalar-valued function with respect to
/// one parameter tensor: (f(p + step) - f(p - step)) / (2 * step) per
/// coordinate. `f` must be pure and deterministic; `p` is perturbed in
/// place and restored bit-exactly.
pub fn finite_difference_grad<F: FnMut() -> f64>(
    mut f: F,
    p: &Tensor,
    step: f64,
) -> Tensor {
    let shape = p.shape();
    let n = p.numel();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let original = p.with_data(|d| d[i]);
        p.map_data_mut(|d| d[i] = original + step);
        let plus = f();
        p.map_data_mut(|d| d[i] = original - step);
        let minus = f();
        p.map_data_mut(|d| d[i] = original);
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Tensor::from_vec(shape, grad).expect("finite_difference_grad: shape invariant")
}
