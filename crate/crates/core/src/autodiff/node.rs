use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Local derivative rule of one recorded operation.
///
/// `backward` receives the op's forward output and the upstream gradient
/// (shaped like that output) and returns one entry per parent; entries may
/// be `None` where the corresponding `needs` flag is false.
pub trait BackwardOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        output: &Tensor<T>,
        parents: &[Node<T>],
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct NodeInner<T: Scalar> {
    value: Tensor<T>,
    grad: Mutex<Option<Tensor<T>>>,
    requires_grad: bool,
    parents: Vec<Node<T>>,
    op: Option<Box<dyn BackwardOp<T>>>,
}

/// A value in the computation graph together with its gradient slot.
///
/// Cloning a `Node` is cheap and aliases the same graph vertex.
pub struct Node<T: Scalar = f32>(Arc<NodeInner<T>>);

impl<T: Scalar> Clone for Node<T> {
    fn clone(&self) -> Self {
        Node(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Node<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|op| op.name()))
            .finish()
    }
}

impl<T: Scalar> Node<T> {
    /// A constant leaf; never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// A trainable leaf.
    pub fn parameter(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Node(Arc::new(NodeInner {
            value,
            grad: Mutex::new(None),
            requires_grad,
            parents: Vec::new(),
            op: None,
        }))
    }

    /// Record the result of an operation. Fails if `value` holds NaN or
    /// infinity. When no parent requires a gradient the result is stored as
    /// a constant and the parents are released.
    pub fn from_op(
        value: Tensor<T>,
        parents: Vec<Node<T>>,
        op: Box<dyn BackwardOp<T>>,
    ) -> Result<Self> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = parents.iter().any(Node::requires_grad);
        if !requires_grad {
            return Ok(Self::constant(value));
        }
        Ok(Node(Arc::new(NodeInner {
            value,
            grad: Mutex::new(None),
            requires_grad,
            parents,
            op: Some(op),
        })))
    }

    #[inline]
    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    #[inline]
    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|op| op.name())
    }

    /// Accumulated gradient of a leaf, if any has been written.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.lock().expect("gradient lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        let mut slot = self.0.grad.lock().expect("gradient lock poisoned");
        *slot = Some(Tensor::zeros(self.shape()));
    }

    /// Drop the gradient slot entirely (back to "never written").
    pub fn clear_grad(&self) {
        *self.0.grad.lock().expect("gradient lock poisoned") = None;
    }

    fn accumulate(&self, g: Tensor<T>) -> Result<()> {
        let mut slot = self.0.grad.lock().expect("gradient lock poisoned");
        match slot.as_mut() {
            Some(existing) => existing.add_assign(&g)?,
            None => *slot = Some(g),
        }
        Ok(())
    }

    /// Mutable access to a leaf's value. Fails while any graph built from
    /// this leaf is still alive.
    pub fn value_mut(&mut self) -> Option<&mut Tensor<T>> {
        Arc::get_mut(&mut self.0).map(|inner| &mut inner.value)
    }

    pub fn same_node(&self, other: &Node<T>) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate
    /// across calls; intermediate gradients live only for the sweep.
    pub fn backward(&self) -> Result<()> {
        if self.0.value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut pending: HashMap<usize, Tensor<T>> = HashMap::new();
        pending.insert(self.key(), Tensor::ones(self.shape()));

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.key()) else {
                continue;
            };
            let Some(op) = node.0.op.as_ref() else {
                node.accumulate(grad)?;
                continue;
            };
            let parents = &node.0.parents;
            let needs: Vec<bool> = parents.iter().map(Node::requires_grad).collect();
            let grads = op.backward(&node.0.value, parents, &grad, &needs)?;
            if grads.len() != parents.len() {
                return Err(Error::Graph(format!(
                    "{} returned {} gradients for {} parents",
                    op.name(),
                    grads.len(),
                    parents.len()
                )));
            }
            for ((parent, g), need) in parents.iter().zip(grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                if g.shape() != parent.shape() {
                    return Err(Error::shape(
                        op.name(),
                        format!("gradient {:?} for parent {:?}", g.shape(), parent.shape()),
                    ));
                }
                match pending.get_mut(&parent.key()) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        pending.insert(parent.key(), g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring gradients, parents before children.
    fn topo_order(&self) -> Vec<Node<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // (node, parents already pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in node.0.parents.iter().rev() {
                if p.requires_grad() && !visited.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn scale_gradient() {
        let x = Node::parameter(Tensor::<f64>::scalar(2.0));
        let y = ops::scale(&x, 3.0).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 3.0);
    }

    #[test]
    fn diamond_accumulates() {
        let x = Node::parameter(Tensor::<f64>::scalar(1.5));
        let y = ops::add(&x, &x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Node::parameter(Tensor::<f64>::scalar(1.0));
        let y = ops::scale(&ops::add(&x, &x).unwrap(), 2.0).unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 8.0);
    }

    #[test]
    fn k_fold_reuse_counts_k_times() {
        // y = x + x + ... (k terms) has dy/dx = k.
        for k in 1..6 {
            let x = Node::parameter(Tensor::<f64>::scalar(0.3));
            let mut y = x.clone();
            for _ in 1..k {
                y = ops::add(&y, &x).unwrap();
            }
            ops::sum(&y).unwrap().backward().unwrap();
            assert_eq!(x.grad().unwrap().item().unwrap(), k as f64);
        }
    }

    #[test]
    fn non_scalar_root_rejected() {
        let x = Node::parameter(Tensor::<f64>::zeros([2]));
        assert!(matches!(x.backward(), Err(Error::Graph(_))));
    }

    #[test]
    fn constants_do_not_build_graph() {
        let a = Node::constant(Tensor::<f32>::ones([2]));
        let b = ops::scale(&a, 2.0).unwrap();
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
    }

    #[test]
    fn value_mut_blocked_while_graph_alive() {
        let mut x = Node::parameter(Tensor::<f32>::ones([2]));
        let y = ops::sum(&x).unwrap();
        assert!(x.value_mut().is_none());
        drop(y);
        assert!(x.value_mut().is_some());
    }
}
