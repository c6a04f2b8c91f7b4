//! Minimal reverse-mode autodiff over `f64` vectors.
//!
//! Parameters live in a [`Params`] store outside the per-document [`Tape`];
//! tape ops read parameter values during the forward pass and accumulate
//! into parameter gradients during [`Tape::backward`]. The graph is rebuilt
//! per document, which keeps every control-flow decision (spans, candidate
//! windows, argmax pooling) exact in the gradient.

pub mod adam;
pub mod tape;

pub use adam::Adam;
pub use tape::{Tape, VarId};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Handle to one named parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// One named parameter matrix (vectors have `cols == 1`), row-major.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Serialized form of a parameter group (gradients are not persisted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// All trainable parameters of a model.
#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: Vec<ParamEntry>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        mut init: impl FnMut() -> f64,
    ) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let n = rows * cols;
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            data: (0..n).map(|_| init()).collect(),
            grad: vec![0.0; n],
        });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform initialization.
    pub fn add_xavier(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let scale = (6.0 / (rows + cols) as f64).sqrt();
        self.add(name, rows, cols, || rng.random_range(-scale..scale))
    }

    /// Uniform with variance 1/cols, for embedding tables.
    pub fn add_embedding(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let scale = (3.0 / cols as f64).sqrt();
        self.add(name, rows, cols, || rng.random_range(-scale..scale))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, rows, cols, || 0.0)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales gradients so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for e in &mut self.entries {
                for g in &mut e.grad {
                    *g *= scale;
                }
            }
        }
    }

    pub fn to_saved(&self) -> Vec<SavedParam> {
        self.entries
            .iter()
            .map(|e| SavedParam {
                name: e.name.clone(),
                rows: e.rows,
                cols: e.cols,
                data: e.data.clone(),
            })
            .collect()
    }

    /// Restores data into an identically laid-out store.
    pub fn load_saved(&mut self, saved: &[SavedParam]) -> crate::Result<()> {
        for s in saved {
            let Some(id) = self.find(&s.name) else {
                return Err(crate::Error::Checkpoint(format!(
                    "unknown parameter {} in checkpoint",
                    s.name
                )));
            };
            let e = self.entry_mut(id);
            if e.rows != s.rows || e.cols != s.cols {
                return Err(crate::Error::Checkpoint(format!(
                    "parameter {} has shape {}x{}, checkpoint has {}x{}",
                    s.name, e.rows, e.cols, s.rows, s.cols
                )));
            }
            e.data = s.data.clone();
        }
        Ok(())
    }
}
