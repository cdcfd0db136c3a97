use std::collections::HashMap;

use crate::error::{Error, Result};

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Ordered collection of named parameters (32-bit master copy).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<()> {
        let name = name.into();
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid(format!("parameter {name}: {} values for shape {shape:?}", values.len())));
        }
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, shape, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Zero-filled buffers with the same layout, e.g. for gradients.
    pub fn zeros_like(&self) -> Vec<Vec<f32>> {
        self.entries.iter().map(|e| vec![0.0; e.values.len()]).collect()
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_and_lookup() {
        let mut s = ParamStore::new();
        s.push("a", vec![2, 2], vec![0.0; 4]).unwrap();
        s.push("b", vec![3], vec![1.0; 3]).unwrap();
        assert!(s.push("a", vec![1], vec![0.0]).is_err());
        assert!(s.push("c", vec![2], vec![0.0]).is_err());
        assert_eq!(s.count(), 7);
        assert_eq!(s.position("b"), Some(1));
        assert_eq!(s.get("b").unwrap().shape, vec![3]);
    }
}
