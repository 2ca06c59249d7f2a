//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every operation that receives at least one `requires_grad` input records
//! its parents and a backward closure on the result node. `backward()` on a
//! scalar loss replays the recorded graph in reverse creation order (which is
//! a valid reverse topological order, since inputs always exist before the
//! ops that consume them) and deposits gradients on the `requires_grad`
//! leaves. Tensors are immutable once built; no primitive mutates its inputs.

mod conv;
mod elementwise;
pub mod init;
mod linalg;
mod reduce;
mod scan;
#[cfg(test)]
mod tests;

pub use conv::Padding;
pub use scan::selective_scan;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Element type of a tensor: 32-bit for training speed, 64-bit for tight
/// gradient verification.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    /// Dtype tag used in the checkpoint format.
    const DTYPE_TAG: u8;
    const BYTE_WIDTH: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f32 {
    const DTYPE_TAG: u8 = 0;
    const BYTE_WIDTH: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE_TAG: u8 = 1;
    const BYTE_WIDTH: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward closure: (grad of this node, zeroed gradient buffers, one per
/// parent, to be filled in).
pub(crate) type BackFn<S> = Box<dyn Fn(&[S], &mut [Vec<S>])>;

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    /// Filled on requires_grad leaves by `backward`.
    grad: RefCell<Option<Vec<S>>>,
    parents: Vec<Tensor<S>>,
    back: Option<BackFn<S>>,
}

/// Shared handle to an immutable tensor node. Cloning is O(1).
pub struct Tensor<S: Scalar = f32>(Rc<Inner<S>>);

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.0.id, self.0.shape)
    }
}

fn check_finite<S: Scalar>(data: &[S], op: &str) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value produced by {op}")));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, buffer has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Trainable leaf: participates in gradient accumulation.
    pub fn param(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: t.0.shape.clone(),
            data: t.0.data.clone(),
            requires_grad: true,
            grad: RefCell::new(None),
            parents: Vec::new(),
            back: None,
        })))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![S::zero(); numel], false)
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let numel = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![v; numel], false)
    }

    pub fn scalar(v: S) -> Self {
        Self::leaf(vec![1], vec![v], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            back: None,
        }))
    }

    /// Build an op node. The graph is recorded only when a parent requires
    /// gradients; otherwise the result is a plain constant leaf.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        back: BackFn<S>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        if !requires_grad {
            return Self::leaf(shape, data, false);
        }
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad: true,
            grad: RefCell::new(None),
            parents,
            back: Some(back),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.0.data
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.parents.is_empty()
    }

    /// Gradient deposited by the most recent `backward` pass, if any.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.0.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Detach from the recorded graph: same data, no gradient participation.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// Reverse-mode sweep from a scalar loss. Deposits gradients on every
    /// reachable `requires_grad` leaf and returns the id → gradient map for
    /// all reachable leaves. The recorded graph is dropped with the loss.
    pub fn backward(&self) -> Result<HashMap<u64, Vec<S>>> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.0.requires_grad {
            return Err(Error::Contract(
                "backward on a loss disconnected from any trainable leaf".into(),
            ));
        }

        // Reachable subgraph, then reverse creation order == reverse topo.
        let mut nodes: HashMap<u64, Tensor<S>> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if nodes.insert(t.0.id, t.clone()).is_none() {
                for p in &t.0.parents {
                    if p.0.requires_grad && !nodes.contains_key(&p.0.id) {
                        stack.push(p.clone());
                    }
                }
            }
        }
        let mut order: Vec<u64> = nodes.keys().copied().collect();
        order.sort_unstable_by(|a, b| b.cmp(a));

        let mut grads: HashMap<u64, Vec<S>> = HashMap::new();
        grads.insert(self.0.id, vec![S::one()]);

        let mut leaf_grads: HashMap<u64, Vec<S>> = HashMap::new();
        for id in order {
            let node = &nodes[&id];
            let g = match grads.remove(&id) {
                Some(g) => g,
                None => continue,
            };
            if node.0.parents.is_empty() {
                if node.0.requires_grad {
                    // Accumulate across backward passes so micro-steps of an
                    // accumulated batch sum their gradients on the leaves.
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&g) {
                                *a = *a + *v;
                            }
                        }
                        None => *slot = Some(g.clone()),
                    }
                    drop(slot);
                    leaf_grads.insert(id, g);
                }
                continue;
            }
            let back = node.0.back.as_ref().expect("op node without backward");
            let mut bufs: Vec<Vec<S>> = node
                .0
                .parents
                .iter()
                .map(|p| vec![S::zero(); p.numel()])
                .collect();
            back(&g, &mut bufs);
            for (p, buf) in node.0.parents.iter().zip(bufs) {
                if !p.0.requires_grad {
                    continue;
                }
                match grads.get_mut(&p.0.id) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&buf) {
                            *a = *a + *v;
                        }
                    }
                    None => {
                        grads.insert(p.0.id, buf);
                    }
                }
            }
        }
        Ok(leaf_grads)
    }
}
