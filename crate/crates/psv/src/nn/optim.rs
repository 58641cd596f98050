use ndarray::Array2;

use super::params::{ParamId, ParamStore};
use super::tensor::Matrix;
use crate::{Error, Result};

/// Adam with bias correction. Defaults: lr 1e-3, decays 0.9/0.999, eps 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every trainable parameter, then clear gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        store.require_grads()?;
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        for id in store.trainable_ids() {
            let dim = store.value(id).raw_dim();
            let (m, v) = self.moments[id.0]
                .get_or_insert_with(|| (Array2::zeros(dim.clone()), Array2::zeros(dim.clone())));
            if m.raw_dim() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "optimizer moment shape for '{}'",
                    store.name(id)
                )));
            }
            let grad = store.grad(id).clone();
            m.zip_mut_with(&grad, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(&grad, |v, g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (m, v) = (m.clone(), v.clone());
            let value = store.value_mut(id);
            for ((p, m), v) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }

    /// Moment arrays for persistence, named after their parameter.
    pub fn export_moments(&self, store: &ParamStore) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        for (i, slot) in self.moments.iter().enumerate() {
            if let Some((m, v)) = slot {
                let name = store.name(ParamId(i));
                out.push((format!("{name}.m"), m.clone()));
                out.push((format!("{name}.v"), v.clone()));
            }
        }
        out
    }

    pub fn import_moments(
        &mut self,
        store: &ParamStore,
        step: u64,
        arrays: &[(String, Matrix)],
    ) -> Result<()> {
        self.step = step;
        self.moments = vec![None; store.len()];
        for (name, arr) in arrays {
            let (base, kind) = name
                .rsplit_once('.')
                .ok_or_else(|| Error::Checkpoint(format!("bad moment name '{name}'")))?;
            let id = store
                .id(base)
                .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter '{base}'")))?;
            let slot = self.moments[id.0].get_or_insert_with(|| {
                (
                    Array2::zeros(arr.raw_dim()),
                    Array2::zeros(arr.raw_dim()),
                )
            });
            match kind {
                "m" => slot.0 = arr.clone(),
                "v" => slot.1 = arr.clone(),
                other => {
                    return Err(Error::Checkpoint(format!(
                        "unknown moment kind '{other}' in '{name}'"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0, 2.0]], true);
        store.mark_grads_populated();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(id), &array![[1.0, 2.0]]);
    }

    #[test]
    fn unit_gradient_moves_by_about_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0]], true);
        store.grad_mut(id)[[0, 0]] = 1.0;
        store.mark_grads_populated();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store).unwrap();
        // at step 1 the bias-corrected update is lr * g/(|g| + eps') ~ lr
        let delta = 1.0 - store.value(id)[[0, 0]];
        assert!((delta - 1e-3).abs() < 1e-5, "delta {delta}");
    }

    #[test]
    fn step_without_gradients_errors() {
        let mut store = ParamStore::new();
        store.add("w", array![[1.0]], true);
        let mut adam = Adam::new(1e-3);
        assert!(adam.step(&mut store).is_err());
    }

    #[test]
    fn quadratic_descends_monotonically_after_warmup() {
        // minimize f(w) = w^2 starting at w=3
        let mut store = ParamStore::new();
        let id = store.add("w", array![[3.0]], true);
        let mut adam = Adam::new(0.05);
        let mut last = f64::INFINITY;
        for step in 0..100 {
            let w = store.value(id)[[0, 0]];
            let loss = w * w;
            store.grad_mut(id)[[0, 0]] = 2.0 * w;
            store.mark_grads_populated();
            adam.step(&mut store).unwrap();
            if step >= 5 {
                assert!(loss <= last + 1e-9, "loss rose at step {step}");
            }
            last = loss;
        }
        assert!(last < 0.1);
    }
}
