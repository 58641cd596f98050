use std::collections::HashMap;

use ndarray::Array2;

use crate::{Error, Result};

/// Handle to a named array in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// One named array: a trainable weight or a non-trainable state buffer
/// (batchnorm running statistics).
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub trainable: bool,
}

/// All model state, uniquely named. Gradients live next to values so the
/// optimizer and the checkpoint writer see one flat view of the model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
    grads_populated: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name '{name}'"
        );
        let id = ParamId(self.params.len());
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
        self.grads_populated = false;
    }

    pub fn mark_grads_populated(&mut self) {
        self.grads_populated = true;
    }

    pub fn grads_populated(&self) -> bool {
        self.grads_populated
    }

    pub fn require_grads(&self) -> Result<()> {
        if self.grads_populated {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "optimizer step requires populated gradients".into(),
            ))
        }
    }

    /// Round every value to the nearest f32. Persisted checkpoints store
    /// 32-bit floats; quantizing the live store keeps in-memory and reloaded
    /// evaluation bit-identical.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            p.value.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// Total number of non-finite values across all parameters.
    pub fn non_finite_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.value.iter().filter(|v| !v.is_finite()).count())
            .sum()
    }
}
