use ndarray::Array2;
use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{Matrix, NodeId, Tape};
use crate::Result;

/// Affine layer. Weights initialize Glorot-uniform, biases zero.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weights: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
        let b = Array2::zeros((1, fan_out));
        Dense {
            weights: store.add(&format!("{name}.w"), w, true),
            bias: store.add(&format!("{name}.b"), b, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weights);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Feature-wise batch normalization with learned scale/shift and running
/// statistics for eval mode. Running stats live in the store as a
/// non-trainable 2xF entry (mean row, variance row).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        let gamma = store.add(&format!("{name}.gamma"), Array2::ones((1, features)), true);
        let beta = store.add(&format!("{name}.beta"), Array2::zeros((1, features)), true);
        let mut init = Array2::zeros((2, features));
        init.row_mut(1).fill(1.0);
        let running = store.add(&format!("{name}.running"), init, false);
        BatchNorm {
            gamma,
            beta,
            running,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: NodeId,
        train: bool,
    ) -> Result<NodeId> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let mut running = store.value(self.running).clone();
        let y = tape.batchnorm(x, gamma, beta, &mut running, self.momentum, self.eps, train)?;
        if train {
            *store.value_mut(self.running) = running;
        }
        Ok(y)
    }
}

/// Inverted dropout: zero each unit with probability `p` and rescale
/// survivors by 1/(1-p) in train mode; identity in eval mode.
pub fn dropout(tape: &mut Tape, x: NodeId, p: f64, train: bool, rng: &mut impl Rng) -> NodeId {
    if !train || p <= 0.0 {
        return x;
    }
    let dim = tape.value(x).raw_dim();
    let keep = 1.0 / (1.0 - p);
    let mask: Matrix =
        Array2::from_shape_fn(dim, |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
    tape.dropout_mask(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_weights_pass_through() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::new(&mut store, "l", 2, 2, &mut rng);
        *store.value_mut(layer.weights) = Array2::eye(2);
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, -2.0], [3.0, 4.0]]);
        let y = layer.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), &array![[1.0, -2.0], [3.0, 4.0]]);
    }

    #[test]
    fn dense_hand_computed() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::new(&mut store, "l", 2, 1, &mut rng);
        *store.value_mut(layer.weights) = array![[1.0], [1.0]];
        *store.value_mut(layer.bias) = array![[0.5]];
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, 2.0]]);
        let y = layer.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.scalar(y), 3.5);
    }

    #[test]
    fn dense_shape_mismatch_errors() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::new(&mut store, "l", 3, 2, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Array2::zeros((1, 4)));
        assert!(layer.forward(&mut tape, &store, x).is_err());
    }

    #[test]
    fn dense_matches_naive_matmul() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = Dense::new(&mut store, "l", 3, 2, &mut rng);
        let x: Matrix = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &store, xn).unwrap();
        let w = store.value(layer.weights);
        let b = store.value(layer.bias);
        for r in 0..4 {
            for c in 0..2 {
                let mut acc = b[[0, c]];
                for k in 0..3 {
                    acc += x[[r, k]] * w[[k, c]];
                }
                assert!((tape.value(y)[[r, c]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_train_normalizes_batch() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Array2::from_shape_fn((8, 2), |_| rng.gen_range(-3.0..3.0)));
        let y = bn.forward(&mut tape, &mut store, x, true).unwrap();
        let out = tape.value(y);
        for c in 0..2 {
            let mean = out.column(c).sum() / 8.0;
            let var = out.column(c).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_train_rejects_batch_of_one() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut tape = Tape::new();
        let x = tape.constant(Array2::zeros((1, 2)));
        assert!(bn.forward(&mut tape, &mut store, x, true).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.constant(array![[1.0, 2.0, 3.0]]);
        let y = dropout(&mut tape, x, 0.5, false, &mut rng);
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.constant(Array2::ones((1, 1000)));
        let y = dropout(&mut tape, x, 0.5, true, &mut rng);
        for v in tape.value(y).iter() {
            assert!(*v == 0.0 || (*v - 2.0).abs() < 1e-12);
        }
        let mean = tape.value(y).sum() / 1000.0;
        assert!((mean - 1.0).abs() < 0.1);
    }
}
