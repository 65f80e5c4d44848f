use std::collections::HashMap;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Graph, Var};

/// Hex SHA-256 over the exact bit patterns of a sequence of arrays.
pub fn digest<'a>(arrays: impl IntoIterator<Item = &'a Array2<f64>>) -> String {
    let mut h = Sha256::new();
    for a in arrays {
        let (r, c) = a.dim();
        h.update((r as u64).to_le_bytes());
        h.update((c as u64).to_le_bytes());
        for v in a.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Named, ordered collection of trainable tensors. Order is stable and
/// defines the layout of flattened gradient vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    /// Registers every tensor in `g`: as parameters when `trainable`, as
    /// constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| {
                if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                }
            })
            .collect()
    }

    /// Collects gradients for bound vars, zero-filling tensors that took no
    /// part in the loss.
    pub fn collect_grads(&self, vars: &[Var], grads: &mut Gradients) -> Vec<Array2<f64>> {
        vars.iter()
            .zip(&self.values)
            .map(|(v, value)| grads.take(*v).unwrap_or_else(|| Array2::zeros(value.dim())))
            .collect()
    }

    /// Digest over names and shapes only; two sets with equal fingerprints
    /// yield comparable flattened vectors.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            h.update(n.as_bytes());
            h.update(format!("[{}x{}]", v.nrows(), v.ncols()).as_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    /// Digest over the values of every tensor whose name starts with `prefix`.
    pub fn group_digest(&self, prefix: &str) -> String {
        digest(
            self.names
                .iter()
                .zip(&self.values)
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(_, v)| v),
        )
    }
}

/// Flattens per-tensor arrays in order.
pub fn flatten(arrays: &[Array2<f64>]) -> Vec<f64> {
    arrays.iter().flat_map(|a| a.iter().copied()).collect()
}
