use indexmap::IndexMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named, ordered collection of trainable tensors plus optimizer state.
///
/// Insertion order is the iteration order, so checkpoints and optimizer
/// updates visit parameters deterministically.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: IndexMap<String, Tensor>,
    momentum: IndexMap<String, Tensor>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
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

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    pub fn has_any_grad(&self) -> bool {
        self.params.values().any(|t| t.grad().is_some())
    }

    pub fn momentum(&self, name: &str) -> Option<&Tensor> {
        self.momentum.get(name)
    }

    pub fn momentum_buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.momentum.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn set_momentum(&mut self, name: &str, buffer: Tensor) -> Result<()> {
        let param = self
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no parameter `{name}` for momentum buffer")))?;
        if param.shape() != buffer.shape() {
            return Err(Error::Contract(format!(
                "momentum buffer for `{name}` has shape {:?}, parameter has {:?}",
                buffer.shape(),
                param.shape()
            )));
        }
        self.momentum.insert(name.to_string(), buffer);
        Ok(())
    }

    pub fn clear_momentum(&mut self) {
        self.momentum.clear();
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut IndexMap<String, Tensor>, &mut IndexMap<String, Tensor>) {
        (&mut self.params, &mut self.momentum)
    }

    /// Parameter values only, without gradients or optimizer state.
    pub fn weights_only(&self) -> ParamSet {
        let params = self
            .params
            .iter()
            .map(|(k, v)| {
                let mut t = v.clone();
                t.clear_grad();
                (k.clone(), t)
            })
            .collect();
        ParamSet {
            params,
            momentum: IndexMap::new(),
            step: 0,
        }
    }

    /// True when both sets have the same names, order and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }

    /// Bitwise equality of parameter values (ignores gradients and state).
    pub fn values_bit_equal(&self, other: &ParamSet) -> bool {
        self.same_layout(other)
            && self.params.values().zip(other.params.values()).all(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn momentum_shape_checked() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(p.set_momentum("w", Tensor::zeros(vec![3])).is_err());
        assert!(p.set_momentum("w", Tensor::zeros(vec![2])).is_ok());
        assert!(p.set_momentum("b", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn iteration_follows_insertion_order() {
        let mut p = ParamSet::new();
        for name in ["z", "a", "m"] {
            p.insert(name, Tensor::zeros(vec![1])).unwrap();
        }
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["z", "a", "m"]);
    }
}
