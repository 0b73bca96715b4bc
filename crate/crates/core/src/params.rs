//! Named parameter storage shared by every learned component.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Adapter and tracking head.
    Tracker,
    /// Prompt generation and relation modeling.
    Prompting,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    group: ParamGroup,
    value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(Entry { name, group, value });
        id
    }

    /// Gaussian weights with standard deviation `std`.
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        self.add(name, group, Tensor::new(rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, group: ParamGroup, rows: usize, cols: usize) -> ParamId {
        self.add(name, group, Tensor::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    pub fn count_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.data.iter().all(|v| v.is_finite()))
    }

    /// Overwrites values from `other` by name. Every parameter of `self` must
    /// be present in `other` with the same shape.
    pub fn load_from(&mut self, other: &BTreeMap<String, Tensor>) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .get(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter block `{}`", e.name)))?;
            if (src.rows, src.cols) != (e.value.rows, e.value.cols) {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {}x{}, checkpoint holds {}x{}",
                    e.name, e.value.rows, e.value.cols, src.rows, src.cols
                )));
            }
            e.value = src.clone();
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.clone())).collect()
    }
}
