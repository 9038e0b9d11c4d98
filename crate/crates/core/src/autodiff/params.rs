use std::collections::BTreeMap;

use super::node::Node;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Named trainable leaves, iterated in lexicographic name order.
///
/// `clone` copies the values into fresh leaves; gradients are not copied.
#[derive(Debug, Default)]
pub struct ParameterStore<T: Scalar = f32> {
    params: BTreeMap<String, Node<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: BTreeMap::new(),
        }
    }

    /// Register a new trainable tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<&Node<T>> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        Ok(self.params.entry(name).or_insert(Node::parameter(value)))
    }

    pub fn get(&self, name: &str) -> Result<&Node<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    /// Mutable view of a parameter's value; fails while a graph still holds it.
    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let node = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        node.value_mut()
            .ok_or_else(|| Error::ParameterBorrowed(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Node<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|n| n.value().numel()).sum()
    }

    /// Reset every gradient to zeros.
    pub fn zero_grad(&self) {
        self.params.values().for_each(Node::zero_grad);
    }

    /// Forget every gradient (slots read as `None` afterwards).
    pub fn clear_grads(&self) {
        self.params.values().for_each(Node::clear_grad);
    }

    /// Independent copy of the values in another precision, gradients empty.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Node::parameter(v.value().cast())))
                .collect(),
        }
    }

    /// Independent copy holding the same values as constants, for
    /// inference without graph bookkeeping.
    pub fn frozen(&self) -> ParameterStore<T> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Node::constant(v.value().clone())))
                .collect(),
        }
    }

    /// A store whose entries alias these leaves, so gradients computed
    /// through it land here. Drop it before mutating values.
    pub fn alias(&self) -> ParameterStore<T> {
        ParameterStore {
            params: self.params.clone(),
        }
    }
}

impl<T: Scalar> Clone for ParameterStore<T> {
    fn clone(&self) -> Self {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Node::leaf(v.value().clone(), v.requires_grad())))
                .collect(),
        }
    }
}

/// Reset all gradients in `store` to zero.
pub fn zero_grad<T: Scalar>(store: &ParameterStore<T>) {
    store.zero_grad();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    fn store() -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("b", Tensor::new([2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        s.insert("a", Tensor::new([1], vec![3.0]).unwrap()).unwrap();
        s
    }

    fn loss(s: &ParameterStore<f64>) -> Node<f64> {
        let a = ops::sum(s.get("a").unwrap()).unwrap();
        let b = ops::scale(&ops::sum(s.get("b").unwrap()).unwrap(), 2.0).unwrap();
        ops::add(&a, &b).unwrap()
    }

    #[test]
    fn lexicographic_and_unique() {
        let mut s = store();
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert!(s.insert("a", Tensor::zeros([1])).is_err());
    }

    #[test]
    fn zero_grad_semantics() {
        let s = store();
        loss(&s).backward().unwrap();
        s.zero_grad();
        for (_, n) in s.iter() {
            assert_eq!(n.grad().unwrap().sum(), 0.0);
        }
        // idempotent
        zero_grad(&s);
        zero_grad(&s);
        for (_, n) in s.iter() {
            assert_eq!(n.grad().unwrap().sum(), 0.0);
        }

        // backward, zero, backward == single backward
        let fresh = store();
        loss(&fresh).backward().unwrap();
        loss(&s).backward().unwrap();
        for ((_, x), (_, y)) in s.iter().zip(fresh.iter()) {
            assert_eq!(x.grad().unwrap(), y.grad().unwrap());
        }
    }

    #[test]
    fn value_mut_after_graph_dropped() {
        let mut s = store();
        {
            let l = loss(&s);
            l.backward().unwrap();
            assert!(matches!(s.value_mut("a"), Err(Error::ParameterBorrowed(_))));
        }
        s.value_mut("a").unwrap().data_mut()[0] = 7.0;
        assert_eq!(s.get("a").unwrap().value().data()[0], 7.0);
    }
}
