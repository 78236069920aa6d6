//! Named parameter collections shared by models and optimizers.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::tape::{Array, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Array)>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array) {
        let name = name.into();
        assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter {name}"
        );
        self.entries.push((name, value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }

    pub fn get(&self, name: &str) -> &Array {
        &self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array {
        &mut self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.entries.iter_mut().map(|(n, a)| (n.as_str(), a))
    }

    pub fn entry(&self, idx: usize) -> (&str, &Array) {
        let (n, a) = &self.entries[idx];
        (n.as_str(), a)
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut Array {
        &mut self.entries[idx].1
    }

    /// Registers every parameter as a tape leaf, in declaration order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|(_, a)| tape.leaf(a.clone())).collect()
    }

    /// Collects per-parameter gradients from a finished backward pass,
    /// aligned with declaration order; absent gradients become zeros.
    pub fn collect_grads(&self, vars: &[Var], grads: &[Option<Array>]) -> Vec<Array> {
        assert_eq!(vars.len(), self.entries.len());
        self.entries
            .iter()
            .zip(vars)
            .map(|((_, a), v)| {
                grads[v.index()]
                    .clone()
                    .unwrap_or_else(|| Array::zeros(a.rows, a.cols))
            })
            .collect()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Uniform Glorot initialization.
pub fn xavier(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Array {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Array::from_vec(rows, cols, data)
}

pub fn xavier_scaled(rng: &mut ChaCha20Rng, rows: usize, cols: usize, gain: f64) -> Array {
    let mut a = xavier(rng, rows, cols);
    for x in &mut a.data {
        *x *= gain;
    }
    a
}
