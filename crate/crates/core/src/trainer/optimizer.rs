//! Adaptive per-parameter optimizer with a plain gradient-descent option.

use serde::{Deserialize, Serialize};

use crate::error::{RecallError, Result};
use crate::numcore::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Minimizes by stepping against accumulated gradients. Moment buffers are
/// aligned with the store's parameter ids at construction time.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    phase: String,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, phase: &str, store: &ParamStore) -> Self {
        let sizes: Vec<usize> = store.ids().map(|id| store.tensor(id).numel()).collect();
        let m = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let v = sizes.iter().map(|&n| vec![0.0; n]).collect();
        Optimizer {
            kind,
            lr,
            phase: phase.to_string(),
            t: 0,
            m,
            v,
        }
    }

    /// One descent step over `trainable`, with gradients scaled by `scale`
    /// (e.g. 1/batch for averaging). Gradients are left untouched; callers
    /// zero them explicitly.
    pub fn step(&mut self, store: &mut ParamStore, trainable: &[ParamId], scale: f64) -> Result<()> {
        self.t += 1;
        for &id in trainable {
            let grad: Vec<f64> = store.grad(id).iter().map(|g| g * scale).collect();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(RecallError::Diverged {
                    phase: self.phase.clone(),
                    detail: format!("non-finite gradient for '{}'", store.name(id)),
                });
            }
            let params = store.tensor_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let mc = 1.0 - BETA1.powi(self.t as i32);
                    let vc = 1.0 - BETA2.powi(self.t as i32);
                    let m = &mut self.m[id.0];
                    let v = &mut self.v[id.0];
                    for (((p, g), mi), vi) in params.iter_mut().zip(&grad).zip(m).zip(v) {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                        let mhat = *mi / mc;
                        let vhat = *vi / vc;
                        *p -= self.lr * mhat / (vhat.sqrt() + EPS);
                    }
                }
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(RecallError::Diverged {
                    phase: self.phase.clone(),
                    detail: format!("non-finite parameter '{}' after update", store.name(id)),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn zero_learning_rate_leaves_params_bit_identical() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![0.25, -1.5])).unwrap();
        let before = store.tensor(id).data().to_vec();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0, "test", &store);
        store.grad_mut(id).copy_from_slice(&[3.0, -2.0]);
        opt.step(&mut store, &[id], 1.0).unwrap();
        assert_eq!(store.tensor(id).data(), before.as_slice());
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![2.0])).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, "test", &store);
        for _ in 0..200 {
            store.zero_grads();
            let x = store.tensor(id).data()[0];
            store.grad_mut(id)[0] = 2.0 * x;
            opt.step(&mut store, &[id], 1.0).unwrap();
        }
        assert!(store.tensor(id).data()[0].abs() < 0.1);
    }

    #[test]
    fn untouched_params_never_move() {
        // one step on parameter a leaves parameter b bit-identical
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0])).unwrap();
        let b = store.add("b", Tensor::vector(vec![5.0, 6.0])).unwrap();
        let before = store.tensor(b).data().to_vec();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, "test", &store);
        store.grad_mut(a)[0] = 1.0;
        store.grad_mut(b).copy_from_slice(&[9.0, 9.0]); // accumulated but not trainable
        opt.step(&mut store, &[a], 1.0).unwrap();
        assert_eq!(store.tensor(b).data(), before.as_slice());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![1.0])).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, "test", &store);
        store.grad_mut(id)[0] = f64::NAN;
        assert!(matches!(
            opt.step(&mut store, &[id], 1.0),
            Err(RecallError::Diverged { .. })
        ));
    }
}
