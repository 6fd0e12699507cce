//! Named parameter storage shared by the tape and the optimizer.

use crate::error::{CamError, Result};

/// Handle into a [`ParamStore`]. Cheap to copy, stable for the life of the store.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One trainable tensor. `rows x cols` row-major; vectors use cols = 1.
/// Invariant: values and grad always have rows * cols entries.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat arena of parameters. Allocation order is the canonical order used
/// by checkpoints and the optimizer, so construction must be deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> ParamId {
        assert!(rows > 0 && cols > 0, "parameter {name} has a zero dimension");
        assert_eq!(values.len(), rows * cols, "parameter {name} size mismatch");
        let id = ParamId(self.params.len() as u32);
        self.params.push(ParamTensor {
            name: name.to_string(),
            rows,
            cols,
            grad: vec![0.0; values.len()],
            values,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.index()]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Errors if any stored value is non-finite. Used after optimizer steps.
    pub fn check_finite(&self) -> Result<()> {
        for p in &self.params {
            if let Some(i) = p.values.iter().position(|v| !v.is_finite()) {
                return Err(CamError::Numeric(format!(
                    "parameter {} has non-finite value at index {i}",
                    p.name
                )));
            }
        }
        Ok(())
    }
}
