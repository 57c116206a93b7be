//! Reverse-mode autodiff tensor engine.
//!
//! Dynamic tape: every op allocates a node holding its output buffer, handles
//! to its parents, and a backward closure that maps the upstream gradient to
//! per-parent gradients. `backward()` on a scalar walks the graph in reverse
//! topological order and accumulates gradients into leaf tensors created with
//! [`Tensor::leaf`]. Graphs are rebuilt each forward pass and dropped with the
//! last handle.
//!
//! Tensors are immutable; optimizers produce replacement leaves instead of
//! writing through shared buffers. The element type is generic over [`Real`]
//! so the same ops run in `f32` for training and in `f64` for
//! finite-difference gradient checks.

mod ops;

pub mod gradcheck;
pub mod optim;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt::Debug;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Scalar element type for tensors: `f32` in production, `f64` for gradient
/// checking.
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    /// Draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Draw from U[0, 1).
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn powf(self, e: Self) -> Self {
                self.powf(e)
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.sample(StandardNormal)
            }
            fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random()
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(0);

/// Backward closure: upstream gradient of the node's output -> gradient
/// contribution per parent (`None` when no gradient flows to that parent).
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    /// Leaf flag: gradients accumulate here across backward calls.
    requires_grad: bool,
    /// True when a path to some `requires_grad` leaf exists.
    needs_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// N-dimensional dense tensor, cheaply clonable (shared graph node).
pub struct Tensor<T: Real = f32> {
    node: Rc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor {
            node: Rc::new(node),
        }
    }

    fn construct(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements but {} were provided",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_node(Node {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data,
            requires_grad,
            needs_grad: requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::construct(shape, data, false)
    }

    /// Trainable leaf tensor: backward accumulates into its grad buffer.
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::construct(shape, data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![T::ZERO; numel(shape)]).expect("zeros: consistent shape")
    }

    pub fn scalar(v: T) -> Self {
        Self::new(&[], vec![v]).expect("scalar: consistent shape")
    }

    /// Trainable leaf drawn from N(0, std^2).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = numel(shape);
        let s = T::from_f64(std);
        let data: Vec<T> = (0..n).map(|_| T::standard_normal(rng) * s).collect();
        Self::leaf(shape, data).expect("randn: consistent shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Current accumulated gradient of a leaf (cloned), if any backward pass
    /// has reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.node.data.len() != 1 {
            return Err(Error::Dimension(format!(
                "item() requires exactly one element, tensor has shape {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data[0])
    }

    /// Cut the graph: same data, no parents, no gradient.
    pub fn detach(&self) -> Self {
        Self::new(&self.node.shape, self.node.data.clone()).expect("detach: consistent shape")
    }

    /// Leaf with identical contents (used when restoring checkpoints or
    /// materializing optimizer output).
    pub fn to_leaf(&self) -> Self {
        Self::leaf(&self.node.shape, self.node.data.clone()).expect("to_leaf: consistent shape")
    }

    pub(crate) fn make_node(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let needs_grad = parents.iter().any(|p| p.node.needs_grad);
        Self::from_node(Node {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad: false,
            needs_grad,
            grad: RefCell::new(None),
            parents,
            backward: if needs_grad { Some(backward) } else { None },
        })
    }

    /// Reverse-mode sweep from a scalar output. Gradients accumulate (add)
    /// into every reachable leaf, so calling backward on two losses sums
    /// their gradients.
    pub fn backward(&self) -> Result<()> {
        if self.node.data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward() requires a scalar output, got shape {:?}",
                self.shape()
            )));
        }
        if !self.node.needs_grad {
            // A loss with no trainable inputs is legal but a no-op.
            return Ok(());
        }

        // Iterative post-order DFS over grad-needing nodes gives a
        // topological order; processing it in reverse propagates gradients
        // parents-after-children deterministically.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.node.id);
        while let Some((t, child_idx)) = stack.pop() {
            let mut descended = false;
            for (i, p) in t.node.parents.iter().enumerate().skip(child_idx) {
                if p.node.needs_grad && !visited.contains(&p.node.id) {
                    visited.insert(p.node.id);
                    stack.push((t.clone(), i + 1));
                    stack.push((p.clone(), 0));
                    descended = true;
                    break;
                }
            }
            if !descended {
                order.push(t);
            }
        }

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.node.id, vec![T::ONE]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.node.id) else {
                continue;
            };
            if t.node.requires_grad {
                let mut slot = t.node.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(g.iter()) {
                            *a += *b;
                        }
                    }
                    None => *slot = Some(g.clone()),
                }
            }
            if let Some(back) = &t.node.backward {
                let parent_grads = back(&g);
                debug_assert_eq!(parent_grads.len(), t.node.parents.len());
                for (p, pg) in t.node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.node.needs_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.node.data.len());
                    match grads.get_mut(&p.node.id) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(pg.iter()) {
                                *a += *b;
                            }
                        }
                        None => {
                            grads.insert(p.node.id, pg);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
