//! Sequential network container: validated layer stack plus named parameters.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::layers::{self, BnCache, LayerSpec};
use super::optim::xavier_init;
use super::scalar::Scalar;
use super::tensor::Tensor;

/// How batch-norm layers behave during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update running statistics
    /// (training behavior).
    Batch,
    /// Normalize with stored running statistics; nothing is updated. Used
    /// for evaluation and for training phases that freeze batch norm.
    Running,
}

/// Named parameter map. Keys look like `"02.conv.weight"`; the two-digit
/// layer index keeps map order equal to layer order.
pub type Params<S> = BTreeMap<String, Tensor<S>>;

/// Per-parameter gradients, same key set and shapes as `Network::params`.
/// Running statistics carry zero gradients: the loss does not depend on
/// them in batch mode, and they are never optimized.
#[derive(Debug, Clone)]
pub struct Gradients<S = f32> {
    pub tensors: Params<S>,
}

#[derive(Debug, Clone)]
pub struct Network<S = f32> {
    layers: Vec<LayerSpec>,
    params: Params<S>,
    input_shape: [usize; 3],
    num_classes: usize,
}

pub fn param_key(layer_idx: usize, kind: &str, field: &str) -> String {
    format!("{layer_idx:02}.{kind}.{field}")
}

/// Walk the layer stack checking dimension consistency; returns the output
/// shape (c, h, w) after the last layer.
fn validate_stack(input_shape: [usize; 3], layers: &[LayerSpec]) -> Result<[usize; 3]> {
    let [mut c, mut h, mut w] = input_shape;
    if layers.is_empty() {
        return Err(Error::InvalidNetwork("empty layer list".into()));
    }
    for (idx, layer) in layers.iter().enumerate() {
        let fail = |message: String| Error::ShapeMismatch { layer: idx, message };
        match *layer {
            LayerSpec::Conv {
                kernel_w,
                kernel_h,
                c_in,
                c_out,
                stride,
                zero_pad,
                ..
            } => {
                if c_in != c {
                    return Err(fail(format!("conv expects {c_in} input channels, got {c}")));
                }
                if kernel_w == 0 || kernel_h == 0 || stride == 0 || c_out == 0 {
                    return Err(fail("conv dimensions must be positive".into()));
                }
                if h + 2 * zero_pad < kernel_h || w + 2 * zero_pad < kernel_w {
                    return Err(fail(format!(
                        "kernel {kernel_h}x{kernel_w} larger than padded input {h}x{w}"
                    )));
                }
                if (h + 2 * zero_pad - kernel_h) % stride != 0
                    || (w + 2 * zero_pad - kernel_w) % stride != 0
                {
                    return Err(fail("conv geometry does not tile the input exactly".into()));
                }
                let (oh, ow) = layers::conv_out_dims(h, w, kernel_h, kernel_w, stride, zero_pad);
                c = c_out;
                h = oh;
                w = ow;
            }
            LayerSpec::BatchNorm { channels, epsilon, .. } => {
                if channels != c {
                    return Err(fail(format!("bn expects {channels} channels, got {c}")));
                }
                if epsilon <= 0.0 {
                    return Err(fail("bn epsilon must be positive".into()));
                }
            }
            LayerSpec::Relu => {}
            LayerSpec::AvgPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(fail("pool dimensions must be positive".into()));
                }
                if window > h || window > w {
                    return Err(fail(format!("pool window {window} larger than input {h}x{w}")));
                }
                if (h - window) % stride != 0 || (w - window) % stride != 0 {
                    return Err(fail("pool geometry does not tile the input exactly".into()));
                }
                h = (h - window) / stride + 1;
                w = (w - window) / stride + 1;
            }
            LayerSpec::FullyConnected { n_in, n_out } => {
                if n_in != c * h * w {
                    return Err(fail(format!(
                        "fc expects {n_in} inputs, got {c}x{h}x{w} = {}",
                        c * h * w
                    )));
                }
                if n_out == 0 {
                    return Err(fail("fc output must be positive".into()));
                }
                c = n_out;
                h = 1;
                w = 1;
            }
            LayerSpec::SoftmaxCe => {
                if idx + 1 != layers.len() {
                    return Err(fail("softmax_ce must be the terminal layer".into()));
                }
            }
        }
    }
    Ok([c, h, w])
}

impl<S: Scalar> Network<S> {
    /// Validate the stack and allocate parameters (weights zero, batch-norm
    /// gamma/running-var one).
    pub fn zeroed(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let out = validate_stack(input_shape, &layers)?;
        let num_classes = out[0] * out[1] * out[2];
        let mut params = Params::new();
        for (idx, layer) in layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    kernel_w,
                    kernel_h,
                    c_in,
                    c_out,
                    bias,
                    ..
                } => {
                    params.insert(
                        param_key(idx, "conv", "weight"),
                        Tensor::zeros(&[c_out, c_in, kernel_h, kernel_w]),
                    );
                    if bias {
                        params.insert(param_key(idx, "conv", "bias"), Tensor::zeros(&[c_out]));
                    }
                }
                LayerSpec::BatchNorm { channels, .. } => {
                    params.insert(param_key(idx, "bn", "gamma"), Tensor::filled(&[channels], S::ONE));
                    params.insert(param_key(idx, "bn", "beta"), Tensor::zeros(&[channels]));
                    params.insert(param_key(idx, "bn", "running_mean"), Tensor::zeros(&[channels]));
                    params.insert(
                        param_key(idx, "bn", "running_var"),
                        Tensor::filled(&[channels], S::ONE),
                    );
                }
                LayerSpec::FullyConnected { n_in, n_out } => {
                    params.insert(param_key(idx, "fc", "weight"), Tensor::zeros(&[n_out, n_in]));
                    params.insert(param_key(idx, "fc", "bias"), Tensor::zeros(&[n_out]));
                }
                _ => {}
            }
        }
        Ok(Network {
            layers,
            params,
            input_shape,
            num_classes,
        })
    }

    /// Xavier-initialize weights (fan-in = kernel_h * kernel_w * c_in for
    /// conv, n_in for fc); biases zero.
    pub fn init(input_shape: [usize; 3], layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeroed(input_shape, layers)?;
        for (idx, layer) in net.layers.clone().iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    kernel_w,
                    kernel_h,
                    c_in,
                    c_out,
                    ..
                } => {
                    let n_in = kernel_w * kernel_h * c_in;
                    let t = xavier_init(&[c_out, c_in, kernel_h, kernel_w], n_in, rng)?;
                    net.params.insert(param_key(idx, "conv", "weight"), t);
                }
                LayerSpec::FullyConnected { n_in, n_out } => {
                    let t = xavier_init(&[n_out, n_in], n_in, rng)?;
                    net.params.insert(param_key(idx, "fc", "weight"), t);
                }
                _ => {}
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &Params<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<S> {
        &mut self.params
    }

    pub fn param(&self, key: &str) -> &Tensor<S> {
        &self.params[key]
    }

    /// Rebuild with the same topology but replacement parameters; shapes are
    /// checked against the stack.
    pub fn with_params(&self, params: Params<S>) -> Result<Self> {
        let reference = &self.params;
        if params.len() != reference.len() || !params.keys().eq(reference.keys()) {
            return Err(Error::InvalidNetwork(
                "parameter key set does not match topology".into(),
            ));
        }
        for (key, tensor) in &params {
            if tensor.shape() != reference[key].shape() {
                return Err(Error::InvalidNetwork(format!(
                    "parameter {key} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    reference[key].shape()
                )));
            }
        }
        Ok(Network {
            layers: self.layers.clone(),
            params,
            input_shape: self.input_shape,
            num_classes: self.num_classes,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<U>()))
                .collect(),
            input_shape: self.input_shape,
            num_classes: self.num_classes,
        }
    }

    fn check_batch(&self, batch: &Tensor<S>) -> Result<()> {
        let [c, h, w] = self.input_shape;
        let ok = batch.rank() == 4
            && batch.shape()[1] == c
            && batch.shape()[2] == h
            && batch.shape()[3] == w;
        if !ok {
            return Err(Error::ShapeMismatch {
                layer: 0,
                message: format!(
                    "batch shape {:?} does not match network input {c}x{h}x{w}",
                    batch.shape()
                ),
            });
        }
        Ok(())
    }

    /// Forward pass returning logits. In `BnMode::Batch`, running statistics
    /// are updated in place.
    pub fn forward(&mut self, batch: &Tensor<S>, bn: BnMode) -> Result<Tensor<S>> {
        let (logits, _, updates) = self.forward_trace(batch, bn)?;
        self.apply_stat_updates(updates);
        Ok(logits)
    }

    /// Immutable forward pass with running statistics (inference behavior).
    pub fn forward_eval(&self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        let (logits, _, _) = self.forward_trace(batch, BnMode::Running)?;
        Ok(logits)
    }

    pub(crate) fn apply_stat_updates(&mut self, updates: Vec<(String, Tensor<S>)>) {
        for (key, tensor) in updates {
            self.params.insert(key, tensor);
        }
    }

    /// Forward pass that keeps per-layer caches for `backward`. Returns
    /// (logits, caches, pending running-stat updates).
    #[allow(clippy::type_complexity)]
    pub fn forward_trace(
        &self,
        batch: &Tensor<S>,
        bn: BnMode,
    ) -> Result<(Tensor<S>, Vec<LayerTrace<S>>, Vec<(String, Tensor<S>)>)> {
        self.check_batch(batch)?;
        let mut cur = batch.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut updates = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    stride,
                    zero_pad,
                    bias,
                    ..
                } => {
                    let weight = &self.params[&param_key(idx, "conv", "weight")];
                    let bias_t = bias.then(|| &self.params[&param_key(idx, "conv", "bias")]);
                    let out = layers::conv_forward(&cur, weight, bias_t, stride, zero_pad);
                    traces.push(LayerTrace::Conv { input: cur });
                    cur = out;
                }
                LayerSpec::BatchNorm {
                    momentum, epsilon, ..
                } => {
                    let gamma = &self.params[&param_key(idx, "bn", "gamma")];
                    let beta = &self.params[&param_key(idx, "bn", "beta")];
                    let rm = &self.params[&param_key(idx, "bn", "running_mean")];
                    let rv = &self.params[&param_key(idx, "bn", "running_var")];
                    let (out, cache, upd) = layers::bn_forward(
                        &cur,
                        gamma,
                        beta,
                        rm,
                        rv,
                        momentum,
                        epsilon,
                        bn == BnMode::Batch,
                    );
                    if let Some((nm, nv)) = upd {
                        updates.push((param_key(idx, "bn", "running_mean"), nm));
                        updates.push((param_key(idx, "bn", "running_var"), nv));
                    }
                    traces.push(LayerTrace::Bn { cache });
                    cur = out;
                }
                LayerSpec::Relu => {
                    let out = layers::relu_forward(&cur);
                    traces.push(LayerTrace::Relu { input: cur });
                    cur = out;
                }
                LayerSpec::AvgPool { window, stride } => {
                    let out = layers::avgpool_forward(&cur, window, stride);
                    traces.push(LayerTrace::Pool {
                        input_shape: cur.shape().to_vec(),
                    });
                    cur = out;
                }
                LayerSpec::FullyConnected { .. } => {
                    let weight = &self.params[&param_key(idx, "fc", "weight")];
                    let bias = &self.params[&param_key(idx, "fc", "bias")];
                    let out = layers::fc_forward(&cur, weight, bias);
                    traces.push(LayerTrace::Fc { input: cur });
                    cur = out;
                }
                LayerSpec::SoftmaxCe => {
                    traces.push(LayerTrace::Passthrough);
                }
            }
        }
        // Logits as [N, num_classes].
        let n = cur.shape()[0];
        let flat: usize = cur.shape()[1..].iter().product();
        let logits = Tensor::from_vec(&[n, flat], cur.into_data())?;
        Ok((logits, traces, updates))
    }

    /// Reverse-mode gradients of mean softmax cross-entropy w.r.t. every
    /// parameter, given the traces of the matching forward pass.
    pub fn backward(
        &self,
        traces: &[LayerTrace<S>],
        grad_logits: &Tensor<S>,
    ) -> Result<Gradients<S>> {
        let mut grads: Params<S> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();

        let mut grad = grad_logits.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let trace = &traces[idx];
            match (layer, trace) {
                (
                    &LayerSpec::Conv {
                        stride,
                        zero_pad,
                        bias,
                        ..
                    },
                    LayerTrace::Conv { input },
                ) => {
                    let weight = &self.params[&param_key(idx, "conv", "weight")];
                    // grad arrives flattened if this is the layer before FC
                    // flattening; reshape to the conv output shape.
                    let out_shape = conv_output_shape(input.shape(), weight.shape(), stride, zero_pad);
                    let grad_out = Tensor::from_vec(&out_shape, grad.into_data())?;
                    let (gx, gw, gb) = layers::conv_backward(input, weight, bias, &grad_out, stride, zero_pad);
                    grads.insert(param_key(idx, "conv", "weight"), gw);
                    if let Some(gb) = gb {
                        grads.insert(param_key(idx, "conv", "bias"), gb);
                    }
                    grad = gx;
                }
                (&LayerSpec::BatchNorm { .. }, LayerTrace::Bn { cache }) => {
                    let gamma = &self.params[&param_key(idx, "bn", "gamma")];
                    let grad_out = Tensor::from_vec(cache.xhat.shape(), grad.into_data())?;
                    let (gx, dgamma, dbeta) = layers::bn_backward(cache, gamma, &grad_out);
                    grads.insert(param_key(idx, "bn", "gamma"), dgamma);
                    grads.insert(param_key(idx, "bn", "beta"), dbeta);
                    grad = gx;
                }
                (&LayerSpec::Relu, LayerTrace::Relu { input }) => {
                    let grad_out = Tensor::from_vec(input.shape(), grad.into_data())?;
                    grad = layers::relu_backward(input, &grad_out);
                }
                (&LayerSpec::AvgPool { window, stride }, LayerTrace::Pool { input_shape }) => {
                    let [n, c, h, w]: [usize; 4] = input_shape.as_slice().try_into().unwrap();
                    let oh = (h - window) / stride + 1;
                    let ow = (w - window) / stride + 1;
                    let grad_out = Tensor::from_vec(&[n, c, oh, ow], grad.into_data())?;
                    grad = layers::avgpool_backward(input_shape, window, stride, &grad_out);
                }
                (&LayerSpec::FullyConnected { n_out, .. }, LayerTrace::Fc { input }) => {
                    let n = input.shape()[0];
                    let grad_out = Tensor::from_vec(&[n, n_out], grad.into_data())?;
                    let weight = &self.params[&param_key(idx, "fc", "weight")];
                    let (gx, gw, gb) = layers::fc_backward(input, weight, &grad_out);
                    grads.insert(param_key(idx, "fc", "weight"), gw);
                    grads.insert(param_key(idx, "fc", "bias"), gb);
                    grad = gx;
                }
                (&LayerSpec::SoftmaxCe, LayerTrace::Passthrough) => {}
                _ => {
                    return Err(Error::InvalidNetwork(format!(
                        "trace mismatch at layer {idx}"
                    )))
                }
            }
        }
        Ok(Gradients { tensors: grads })
    }
}

fn conv_output_shape(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Vec<usize> {
    let (oh, ow) = layers::conv_out_dims(input[2], input[3], weight[2], weight[3], stride, pad);
    vec![input[0], weight[0], oh, ow]
}

/// Per-layer state captured by `forward_trace` for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerTrace<S> {
    Conv { input: Tensor<S> },
    Bn { cache: BnCache<S> },
    Relu { input: Tensor<S> },
    Pool { input_shape: Vec<usize> },
    Fc { input: Tensor<S> },
    Passthrough,
}

/// Mean softmax cross-entropy over the batch. The loss value is accumulated
/// at double precision regardless of `S`; the returned gradient (d loss /
/// d logits, already divided by batch size) and probabilities are in `S`.
pub fn loss_softmax_ce<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(f64, Tensor<S>, Tensor<S>)> {
    let [n, c]: [usize; 2] = logits.shape().try_into().map_err(|_| {
        Error::InvalidNetwork(format!("logits must be rank 2, got {:?}", logits.shape()))
    })?;
    if labels.len() != n {
        return Err(Error::InvalidNetwork(format!(
            "{} labels for batch of {n}",
            labels.len()
        )));
    }
    for (index, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::LabelOutOfRange {
                label,
                classes: c,
                index,
            });
        }
    }
    let probs = layers::softmax(logits);
    let mut loss = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        // log softmax at f64 via log-sum-exp for an accurate loss value.
        let row = &logits.data()[i * c..(i + 1) * c];
        let mx = row
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
        let lse: f64 = row.iter().map(|&v| (v.to_f64() - mx).exp()).sum();
        loss -= row[label].to_f64() - mx - lse.ln();
    }
    loss /= n as f64;

    let mut grad = probs.clone();
    let inv_n = S::from_f64(1.0 / n as f64);
    for (i, &label) in labels.iter().enumerate() {
        let g = grad.data_mut();
        g[i * c + label] -= S::ONE;
        for j in 0..c {
            g[i * c + j] *= inv_n;
        }
    }
    Ok((loss, grad, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net() -> Network<f32> {
        let layers = vec![
            LayerSpec::Conv {
                kernel_w: 3,
                kernel_h: 3,
                c_in: 1,
                c_out: 4,
                stride: 1,
                zero_pad: 1,
                bias: true,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool { window: 2, stride: 2 },
            LayerSpec::FullyConnected { n_in: 4 * 3 * 3, n_out: 3 },
            LayerSpec::SoftmaxCe,
        ];
        Network::init([1, 6, 6], layers, &mut Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn validation_rejects_channel_mismatch() {
        let layers = vec![LayerSpec::Conv {
            kernel_w: 3,
            kernel_h: 3,
            c_in: 2,
            c_out: 4,
            stride: 1,
            zero_pad: 1,
            bias: false,
        }];
        let err = Network::<f32>::zeroed([1, 6, 6], layers).unwrap_err();
        match err {
            Error::ShapeMismatch { layer, .. } => assert_eq!(layer, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let layers = vec![
            LayerSpec::FullyConnected { n_in: 8, n_out: 10 },
            LayerSpec::SoftmaxCe,
        ];
        let net = Network::<f32>::zeroed([8, 1, 1], layers).unwrap();
        let batch = Tensor::filled(&[2, 8, 1, 1], 0.7f32);
        let logits = net.forward_eval(&batch).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let (loss, _, probs) = loss_softmax_ce(&logits, &[3, 7]).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-6);
        assert!(probs.data().iter().all(|&p| (p - 0.1).abs() < 1e-6));
    }

    #[test]
    fn saturated_loss_near_zero() {
        let mut logits = Tensor::<f32>::zeros(&[1, 4]);
        logits.data_mut()[2] = 1e6;
        let (loss, _, _) = loss_softmax_ce(&logits, &[2]).unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn label_out_of_range_names_index() {
        let logits = Tensor::<f32>::zeros(&[3, 4]);
        let err = loss_softmax_ce(&logits, &[0, 9, 1]).unwrap_err();
        match err {
            Error::LabelOutOfRange { label, index, .. } => {
                assert_eq!(label, 9);
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loss_matches_f64_oracle() {
        let mut rng = Rng::seed_from_u64(23);
        let mut logits = Tensor::<f32>::zeros(&[3, 4]);
        for v in logits.data_mut() {
            *v = rng.uniform_f32(-4.0, 4.0);
        }
        let labels = [1usize, 0, 3];
        let (loss, _, _) = loss_softmax_ce(&logits, &labels).unwrap();
        // Independent double-precision log-sum-exp oracle.
        let mut want = 0.0f64;
        for (i, &label) in labels.iter().enumerate() {
            let row: Vec<f64> = logits.data()[i * 4..(i + 1) * 4]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            want += lse - row[label];
        }
        want /= 3.0;
        assert!((loss - want).abs() < 1e-6, "{loss} vs {want}");
    }

    #[test]
    fn forward_shapes_flow() {
        let mut net = small_net();
        let batch = Tensor::filled(&[2, 1, 6, 6], 0.3f32);
        let logits = net.forward(&batch, BnMode::Batch).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
    }

    #[test]
    fn linear_net_fc_gradient_closed_form() {
        // Single FC layer, single sample: d loss / d W = (softmax - onehot) ⊗ x.
        let layers = vec![
            LayerSpec::FullyConnected { n_in: 5, n_out: 4 },
            LayerSpec::SoftmaxCe,
        ];
        let mut rng = Rng::seed_from_u64(77);
        let net = Network::<f32>::init([5, 1, 1], layers, &mut rng).unwrap();
        let mut batch = Tensor::<f32>::zeros(&[1, 5, 1, 1]);
        for v in batch.data_mut() {
            *v = rng.uniform_f32(-1.0, 1.0);
        }
        let labels = [2usize];
        let (logits, traces, _) = net.forward_trace(&batch, BnMode::Running).unwrap();
        let (_, grad_logits, probs) = loss_softmax_ce(&logits, &labels).unwrap();
        let grads = net.backward(&traces, &grad_logits).unwrap();
        let gw = &grads.tensors[&param_key(0, "fc", "weight")];
        for j in 0..4 {
            let delta = probs.data()[j] - if j == 2 { 1.0 } else { 0.0 };
            for k in 0..5 {
                let want = delta * batch.data()[k];
                let got = gw.data()[j * 5 + k];
                assert!((got - want).abs() < 1e-6, "({j},{k}): {got} vs {want}");
            }
        }
    }
}
