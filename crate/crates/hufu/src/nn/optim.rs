//! Momentum SGD with optional per-entry update masks, and Xavier
//! initialization.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::rng::Rng;

use super::network::{Gradients, Network, Params};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Uniform Xavier initialization: every element drawn from
/// U[-sqrt(3/n_in), sqrt(3/n_in)].
pub fn xavier_init<S: Scalar>(shape: &[usize], n_in: usize, rng: &mut Rng) -> Result<Tensor<S>> {
    if n_in == 0 {
        return Err(Error::Config("xavier fan-in must be positive".into()));
    }
    let bound = (3.0 / n_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = S::from_f64(bound * (2.0 * rng.next_f64() - 1.0));
    }
    Ok(t)
}

/// Optimizer state: the network plus per-parameter momentum buffers and an
/// iteration counter. Two states built from the same seed, config, and data
/// order evolve bit-identically.
#[derive(Debug, Clone)]
pub struct TrainState<S = f32> {
    pub network: Network<S>,
    pub momenta: Params<S>,
    pub iter: u64,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(network: Network<S>) -> Self {
        let momenta = network
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        TrainState {
            network,
            momenta,
            iter: 0,
        }
    }

    /// One momentum-SGD step: v <- momentum * v + g; w <- w - lr * v.
    ///
    /// Entries whose mask bit is 0 are skipped entirely, so both the weight
    /// and its momentum buffer stay bit-identical. Batch-norm running
    /// statistics are never touched (their gradients are zero by
    /// definition, and skipping keeps them bit-stable).
    pub fn sgd_update(
        &mut self,
        grads: &Gradients<S>,
        lr: f64,
        momentum: f64,
        update_mask: Option<&MaskSet>,
    ) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let lr_s = S::from_f64(lr);
        let mom = S::from_f64(momentum);
        let keys: Vec<String> = self.network.params().keys().cloned().collect();
        for key in keys {
            if key.ends_with(".running_mean") || key.ends_with(".running_var") {
                continue;
            }
            let grad = grads.tensors.get(&key).ok_or_else(|| {
                Error::InvalidNetwork(format!("gradient missing for parameter {key}"))
            })?;
            let mask = match update_mask {
                Some(ms) => {
                    let m = ms.mask(&key).ok_or_else(|| {
                        Error::InvalidMask(format!("update mask missing entry for {key}"))
                    })?;
                    if m.shape() != grad.shape() {
                        return Err(Error::InvalidMask(format!(
                            "mask shape {:?} does not match parameter {key} {:?}",
                            m.shape(),
                            grad.shape()
                        )));
                    }
                    Some(m)
                }
                None => None,
            };
            let weight = self.network.params_mut().get_mut(&key).unwrap();
            let velocity = self.momenta.get_mut(&key).unwrap();
            if grad.shape() != weight.shape() {
                return Err(Error::InvalidNetwork(format!(
                    "gradient shape mismatch for {key}"
                )));
            }
            let w = weight.data_mut();
            let v = velocity.data_mut();
            let g = grad.data();
            match mask {
                Some(m) => {
                    let md = m.data();
                    for i in 0..w.len() {
                        if md[i] != 0 {
                            v[i] = mom * v[i] + g[i];
                            w[i] -= lr_s * v[i];
                        }
                    }
                }
                None => {
                    for i in 0..w.len() {
                        v[i] = mom * v[i] + g[i];
                        w[i] -= lr_s * v[i];
                    }
                }
            }
        }
        self.iter += 1;
        Ok(())
    }
}

/// Convenience: gradients with every tensor zero (running statistics get
/// these in reports).
pub fn zero_gradients<S: Scalar>(network: &Network<S>) -> Gradients<S> {
    Gradients {
        tensors: network
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect::<BTreeMap<_, _>>(),
    }
}
