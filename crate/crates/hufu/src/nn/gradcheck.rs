//! Central-finite-difference gradient oracle at double precision.
//!
//! The oracle only calls the forward pass and the loss, so it stays
//! independent of the reverse-mode implementation it checks.

use crate::error::Result;

use super::network::{loss_softmax_ce, BnMode, Gradients, Network};
use super::tensor::Tensor;

fn loss_of(net: &Network<f64>, batch: &Tensor<f64>, labels: &[usize], bn: BnMode) -> Result<f64> {
    let (logits, _, _) = net.forward_trace(batch, bn)?;
    let (loss, _, _) = loss_softmax_ce(&logits, labels)?;
    Ok(loss)
}

/// Central finite differences for every parameter element. Running
/// statistics are skipped: in batch mode the loss does not depend on them.
pub fn finite_difference_grads(
    network: &Network<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    bn: BnMode,
    epsilon: f64,
) -> Result<Gradients<f64>> {
    let mut net = network.clone();
    let keys: Vec<String> = net.params().keys().cloned().collect();
    let mut grads = crate::nn::optim::zero_gradients(&net);
    for key in keys {
        if key.ends_with(".running_mean") || key.ends_with(".running_var") {
            continue;
        }
        let len = net.param(&key).len();
        for i in 0..len {
            let original = net.param(&key).data()[i];
            net.params_mut().get_mut(&key).unwrap().data_mut()[i] = original + epsilon;
            let plus = loss_of(&net, batch, labels, bn)?;
            net.params_mut().get_mut(&key).unwrap().data_mut()[i] = original - epsilon;
            let minus = loss_of(&net, batch, labels, bn)?;
            net.params_mut().get_mut(&key).unwrap().data_mut()[i] = original;
            grads.tensors.get_mut(&key).unwrap().data_mut()[i] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(grads)
}

/// Reverse-mode gradients at f64 for the same loss.
pub fn analytic_grads(
    network: &Network<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    bn: BnMode,
) -> Result<Gradients<f64>> {
    let (logits, traces, _) = network.forward_trace(batch, bn)?;
    let (_, grad_logits, _) = loss_softmax_ce(&logits, labels)?;
    network.backward(&traces, &grad_logits)
}

/// Worst relative disagreement between two gradient sets. Elements where
/// both magnitudes are below `floor` are treated as agreeing.
pub fn max_relative_error(a: &Gradients<f64>, b: &Gradients<f64>, floor: f64) -> (f64, String) {
    let mut worst = 0.0f64;
    let mut at = String::new();
    for (key, ta) in &a.tensors {
        if key.ends_with(".running_mean") || key.ends_with(".running_var") {
            continue;
        }
        let tb = &b.tensors[key];
        for (i, (&x, &y)) in ta.data().iter().zip(tb.data()).enumerate() {
            let scale = x.abs().max(y.abs());
            if scale < floor {
                continue;
            }
            let rel = (x - y).abs() / scale;
            if rel > worst {
                worst = rel;
                at = format!("{key}[{i}]");
            }
        }
    }
    (worst, at)
}

/// One-call check used by tests: compare analytic vs finite differences on
/// a 64-bit copy of the network.
pub fn check_network_f32(
    network: &crate::nn::Network<f32>,
    batch: &crate::nn::Tensor<f32>,
    labels: &[usize],
    bn: BnMode,
) -> Result<(f64, String)> {
    let net64 = network.cast::<f64>();
    let batch64 = batch.cast::<f64>();
    let analytic = analytic_grads(&net64, &batch64, labels, bn)?;
    let fd = finite_difference_grads(&net64, &batch64, labels, bn, 1e-5)?;
    Ok(max_relative_error(&analytic, &fd, 1e-10))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use crate::rng::Rng;

    fn rand_batch(shape: &[usize], rng: &mut Rng) -> Tensor<f32> {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.uniform_f32(-1.0, 1.0);
        }
        t
    }

    #[test]
    fn conv_bn_relu_pool_fc_gradients() {
        let layers = vec![
            LayerSpec::Conv {
                kernel_w: 3,
                kernel_h: 3,
                c_in: 2,
                c_out: 3,
                stride: 1,
                zero_pad: 1,
                bias: true,
            },
            LayerSpec::BatchNorm {
                channels: 3,
                momentum: 0.1,
                epsilon: 1e-3,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool { window: 2, stride: 2 },
            LayerSpec::FullyConnected { n_in: 3 * 3 * 3, n_out: 4 },
            LayerSpec::SoftmaxCe,
        ];
        let mut rng = Rng::seed_from_u64(41);
        let net = crate::nn::Network::init([2, 6, 6], layers, &mut rng).unwrap();
        let batch = rand_batch(&[3, 2, 6, 6], &mut rng);
        let labels = [0usize, 3, 1];
        let (err, at) = check_network_f32(&net, &batch, &labels, BnMode::Batch).unwrap();
        assert!(err < 1e-3, "max rel err {err} at {at}");
    }

    #[test]
    fn frozen_bn_gradients() {
        let layers = vec![
            LayerSpec::Conv {
                kernel_w: 3,
                kernel_h: 3,
                c_in: 1,
                c_out: 2,
                stride: 1,
                zero_pad: 0,
                bias: false,
            },
            LayerSpec::BatchNorm {
                channels: 2,
                momentum: 0.1,
                epsilon: 0.05,
            },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { n_in: 2 * 2 * 2, n_out: 3 },
            LayerSpec::SoftmaxCe,
        ];
        let mut rng = Rng::seed_from_u64(43);
        let mut net = crate::nn::Network::init([1, 4, 4], layers, &mut rng).unwrap();
        // Non-trivial frozen statistics.
        for (key, t) in net.params_mut().iter_mut() {
            if key.ends_with("running_mean") {
                for v in t.data_mut() {
                    *v = 0.3;
                }
            }
            if key.ends_with("running_var") {
                for v in t.data_mut() {
                    *v = 0.7;
                }
            }
        }
        let batch = rand_batch(&[2, 1, 4, 4], &mut rng);
        let labels = [2usize, 0];
        let (err, at) = check_network_f32(&net, &batch, &labels, BnMode::Running).unwrap();
        assert!(err < 1e-3, "max rel err {err} at {at}");
    }

    #[test]
    fn padding_only_taps_have_zero_gradient() {
        // A zero input through a padded conv: gradient of every weight tap
        // is zero except bias paths (input is all zeros, so weight grads
        // vanish entirely).
        let layers = vec![
            LayerSpec::Conv {
                kernel_w: 3,
                kernel_h: 3,
                c_in: 1,
                c_out: 2,
                stride: 1,
                zero_pad: 1,
                bias: true,
            },
            LayerSpec::FullyConnected { n_in: 2 * 4 * 4, n_out: 2 },
            LayerSpec::SoftmaxCe,
        ];
        let mut rng = Rng::seed_from_u64(45);
        let net = crate::nn::Network::<f32>::init([1, 4, 4], layers, &mut rng).unwrap();
        let batch = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let net64 = net.cast::<f64>();
        let grads = analytic_grads(&net64, &batch.cast(), &[1], BnMode::Running).unwrap();
        let gw = &grads.tensors["00.conv.weight"];
        assert!(gw.data().iter().all(|&g| g == 0.0));
    }
}
