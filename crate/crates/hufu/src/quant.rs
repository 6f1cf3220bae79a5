//! Batch-norm folding and fixed-point quantization.
//!
//! Folding absorbs each batch-norm layer into its preceding convolution
//! using the stored running statistics; because the training procedure
//! freezes batch norm after subnet training, the fold is valid for both the
//! full network and the subnet datapath.
//!
//! Quantization is symmetric with power-of-two scales: weights and
//! activations are signed 8-bit, accumulators signed 32-bit saturating.
//! Scales come from max-abs calibration over a caller-provided batch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{MaskSet, ParallelismStyle};
use crate::nn::io::{self, Payload, PayloadKind};
use crate::nn::network::param_key;
use crate::nn::{layers, LayerSpec, Network, Tensor};

/// Bit widths of the integer datapath. 8/8/32 is the deployed shape; the
/// fields exist so reports can state what was used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub weight_bits: u32,
    pub activation_bits: u32,
    pub accumulator_bits: u32,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec {
            weight_bits: 8,
            activation_bits: 8,
            accumulator_bits: 32,
        }
    }
}

/// Largest representable magnitude for symmetric signed quantization
/// (127 for 8 bits; -128 is left unused).
pub const QMAX: i32 = 127;

/// Float model with batch norm folded away. Only conv, relu, pool, and fc
/// survive; layer order mirrors the source network.
#[derive(Debug, Clone)]
pub enum FoldedLayer {
    Conv {
        weight: Tensor<f32>,
        bias: Tensor<f32>,
        stride: usize,
        pad: usize,
        /// Index of the source conv layer in the original network.
        src: usize,
    },
    Relu,
    Pool {
        window: usize,
        stride: usize,
    },
    Fc {
        weight: Tensor<f32>,
        bias: Tensor<f32>,
        src: usize,
    },
}

#[derive(Debug, Clone)]
pub struct FoldedModel {
    pub layers: Vec<FoldedLayer>,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

impl FoldedModel {
    pub fn forward(&self, batch: &Tensor<f32>) -> Tensor<f32> {
        let mut cur = batch.clone();
        for layer in &self.layers {
            cur = match layer {
                FoldedLayer::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                    ..
                } => layers::conv_forward(&cur, weight, Some(bias), *stride, *pad),
                FoldedLayer::Relu => layers::relu_forward(&cur),
                FoldedLayer::Pool { window, stride } => {
                    layers::avgpool_forward(&cur, *window, *stride)
                }
                FoldedLayer::Fc { weight, bias, .. } => layers::fc_forward(&cur, weight, bias),
            };
        }
        let n = cur.shape()[0];
        let flat: usize = cur.shape()[1..].iter().product();
        Tensor::from_vec(&[n, flat], cur.into_data()).expect("flatten")
    }
}

/// Fold every batch-norm layer into the conv directly before it:
/// w' = w * gamma / sqrt(var + eps), b' = beta + gamma * (b - mean) /
/// sqrt(var + eps), per output channel.
pub fn fold_bn(network: &Network<f32>) -> Result<FoldedModel> {
    let mut folded: Vec<FoldedLayer> = Vec::new();
    for (idx, layer) in network.layers().iter().enumerate() {
        match *layer {
            LayerSpec::Conv {
                stride,
                zero_pad,
                c_out,
                bias,
                ..
            } => {
                let weight = network.param(&param_key(idx, "conv", "weight")).clone();
                let bias_t = if bias {
                    network.param(&param_key(idx, "conv", "bias")).clone()
                } else {
                    Tensor::zeros(&[c_out])
                };
                folded.push(FoldedLayer::Conv {
                    weight,
                    bias: bias_t,
                    stride,
                    pad: zero_pad,
                    src: idx,
                });
            }
            LayerSpec::BatchNorm {
                channels, epsilon, ..
            } => {
                let gamma = network.param(&param_key(idx, "bn", "gamma"));
                let beta = network.param(&param_key(idx, "bn", "beta"));
                let mean = network.param(&param_key(idx, "bn", "running_mean"));
                let var = network.param(&param_key(idx, "bn", "running_var"));
                let prev = folded.last_mut().ok_or_else(|| {
                    Error::Quantization(format!("layer {idx}: batch norm without preceding conv"))
                })?;
                let FoldedLayer::Conv { weight, bias, .. } = prev else {
                    return Err(Error::Quantization(format!(
                        "layer {idx}: batch norm must directly follow a conv to fold"
                    )));
                };
                let [co, ci, kh, kw]: [usize; 4] = weight.shape().try_into().unwrap();
                if co != channels {
                    return Err(Error::Quantization(format!(
                        "layer {idx}: batch norm channels {channels} != conv filters {co}"
                    )));
                }
                for c in 0..co {
                    let denom = var.data()[c] as f64 + epsilon;
                    if denom <= 0.0 {
                        return Err(Error::Quantization(format!(
                            "layer {idx}: nonpositive variance plus epsilon in channel {c}"
                        )));
                    }
                    let scale = (gamma.data()[c] as f64 / denom.sqrt()) as f32;
                    let base = c * ci * kh * kw;
                    for v in &mut weight.data_mut()[base..base + ci * kh * kw] {
                        *v *= scale;
                    }
                    let b = bias.data()[c];
                    bias.data_mut()[c] = beta.data()[c] + scale * (b - mean.data()[c]);
                }
            }
            LayerSpec::Relu => folded.push(FoldedLayer::Relu),
            LayerSpec::AvgPool { window, stride } => {
                folded.push(FoldedLayer::Pool { window, stride })
            }
            LayerSpec::FullyConnected { .. } => {
                folded.push(FoldedLayer::Fc {
                    weight: network.param(&param_key(idx, "fc", "weight")).clone(),
                    bias: network.param(&param_key(idx, "fc", "bias")).clone(),
                    src: idx,
                });
            }
            LayerSpec::SoftmaxCe => {}
        }
    }
    Ok(FoldedModel {
        layers: folded,
        input_shape: network.input_shape(),
        num_classes: network.num_classes(),
    })
}

// ── Quantized model ─────────────────────────────────────────────────────

/// One stage of the integer datapath. Conv/Fc carry their weights, the
/// trojan mask bits, and the scale exponents; `mac_gate` holds the (k, n)
/// pattern a channel-counting FSM applies when the trigger is up (None for
/// ungated reductions: pixel-style layers gate per weight, and the first
/// conv reads the raw image).
#[derive(Debug, Clone)]
pub enum QLayer {
    Conv {
        weight: Tensor<i8>,
        bias: Tensor<i32>,
        wmask: Tensor<u8>,
        stride: usize,
        pad: usize,
        w_exp: i32,
        in_exp: i32,
        out_exp: i32,
        mac_gate: Option<(usize, usize)>,
        src: usize,
    },
    Relu,
    Pool {
        window: usize,
        stride: usize,
    },
    Fc {
        weight: Tensor<i8>,
        bias: Tensor<i32>,
        wmask: Tensor<u8>,
        w_exp: i32,
        in_exp: i32,
        out_exp: i32,
        /// h*w of the feature map entering this layer; feature f belongs to
        /// channel f / feature_spatial for the channel-counting FSM.
        feature_spatial: usize,
        mac_gate: Option<(usize, usize)>,
        src: usize,
    },
}

impl QLayer {
    pub fn is_reduction(&self) -> bool {
        matches!(self, QLayer::Conv { .. } | QLayer::Fc { .. })
    }
}

/// The deployable image the simulator executes: integer tensors, scale
/// exponents, the parallelism style, and the mask that defines the hidden
/// subnet.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    pub layers: Vec<QLayer>,
    pub input_shape: [usize; 3],
    pub input_exp: i32,
    pub num_classes: usize,
    pub style: ParallelismStyle,
    pub spec: QuantSpec,
    /// Exponent of the final integer logits.
    pub logits_exp: i32,
}

/// Smallest exponent e such that maxabs <= QMAX * 2^e.
pub fn exp_for(maxabs: f32) -> i32 {
    if maxabs <= 0.0 || !maxabs.is_finite() {
        return 0;
    }
    let mut e = ((maxabs as f64) / QMAX as f64).log2().ceil() as i32;
    while (maxabs as f64) > (QMAX as f64) * 2f64.powi(e) {
        e += 1;
    }
    while e > -60 && (QMAX as f64) * 2f64.powi(e - 1) >= maxabs as f64 {
        e -= 1;
    }
    e
}

pub fn pow2(e: i32) -> f32 {
    2f32.powi(e)
}

/// Round-to-nearest-even quantization of a float to the signed range.
pub fn quantize_value(x: f32, exp: i32) -> i32 {
    let q = (x as f64 / 2f64.powi(exp)).round_ties_even();
    (q as i32).clamp(-QMAX, QMAX)
}

fn quantize_weights(t: &Tensor<f32>, exp: i32) -> Tensor<i8> {
    t.map(|v| quantize_value(v, exp) as i8)
}

fn quantize_bias(t: &Tensor<f32>, exp: i32, layer: usize) -> Result<Tensor<i32>> {
    let mut out = Tensor::zeros(t.shape());
    for (o, &v) in out.data_mut().iter_mut().zip(t.data()) {
        let q = (v as f64 / 2f64.powi(exp)).round_ties_even();
        if q > i32::MAX as f64 || q < i32::MIN as f64 {
            return Err(Error::Quantization(format!(
                "layer {layer}: bias {v} overflows the 32-bit accumulator at scale 2^{exp}"
            )));
        }
        *o = q as i32;
    }
    Ok(out)
}

fn max_abs(data: &[f32]) -> f32 {
    data.iter().fold(0.0f32, |m, &v| m.max(v.abs()))
}

/// Per-layer activation max-abs from a float calibration pass: the value
/// entering the model, then the raw output of every conv/fc.
fn calibrate(folded: &FoldedModel, calib: &Tensor<f32>) -> (f32, Vec<f32>) {
    let input_max = max_abs(calib.data());
    let mut outs = Vec::new();
    let mut cur = calib.clone();
    for layer in &folded.layers {
        cur = match layer {
            FoldedLayer::Conv {
                weight,
                bias,
                stride,
                pad,
                ..
            } => {
                let out = layers::conv_forward(&cur, weight, Some(bias), *stride, *pad);
                outs.push(max_abs(out.data()));
                out
            }
            FoldedLayer::Relu => layers::relu_forward(&cur),
            FoldedLayer::Pool { window, stride } => layers::avgpool_forward(&cur, *window, *stride),
            FoldedLayer::Fc { weight, bias, .. } => {
                let out = layers::fc_forward(&cur, weight, bias);
                outs.push(max_abs(out.data()));
                out
            }
        };
    }
    (input_max, outs)
}

/// Quantize a folded model against a calibration batch. The mask supplies
/// the trojan gating data carried by the deployable image; dequantized
/// top-1 on the calibration batch must stay within one percentage point of
/// the float model, otherwise quantization fails asking for wider bits.
pub fn quantize_model(
    folded: &FoldedModel,
    spec: QuantSpec,
    maskset: &MaskSet,
    calib: &Tensor<f32>,
    calib_labels: &[usize],
) -> Result<QuantizedModel> {
    if calib.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::Quantization("calibration batch is empty".into()));
    }
    if spec.weight_bits != 8 || spec.activation_bits != 8 || spec.accumulator_bits != 32 {
        return Err(Error::Quantization(
            "only the 8/8/32 datapath is implemented".into(),
        ));
    }
    let (input_max, reduction_maxes) = calibrate(folded, calib);
    let input_exp = exp_for(input_max);

    // Which conv layers sit first / are gated for the channel style.
    let style = maskset.style();
    let first_conv_src = folded.layers.iter().find_map(|l| match l {
        FoldedLayer::Conv { src, .. } => Some(*src),
        _ => None,
    });

    let mut layers_q: Vec<QLayer> = Vec::new();
    let mut in_exp = input_exp;
    let mut red_idx = 0usize;
    let mut logits_exp = input_exp;
    let last_reduction = folded
        .layers
        .iter()
        .rposition(|l| matches!(l, FoldedLayer::Conv { .. } | FoldedLayer::Fc { .. }))
        .ok_or_else(|| Error::Quantization("model has no conv or fc layer".into()))?;
    // Spatial size entering each fc, for feature → channel mapping.
    let mut cur_hw = (folded.input_shape[1], folded.input_shape[2]);
    // Channel gating only applies to the fc that consumes conv features; a
    // dense head stacked after another fc stays ungated.
    let mut fed_by_conv = false;

    for (li, layer) in folded.layers.iter().enumerate() {
        match layer {
            FoldedLayer::Conv {
                weight,
                bias,
                stride,
                pad,
                src,
            } => {
                let w_exp = exp_for(max_abs(weight.data()));
                let out_exp = exp_for(reduction_maxes[red_idx]);
                let acc_exp = w_exp + in_exp;
                let weight_q = quantize_weights(weight, w_exp);
                let bias_q = quantize_bias(bias, acc_exp, *src)?;
                audit_accumulator(&weight_q, &bias_q, *src)?;
                let wmask = maskset
                    .mask(&param_key(*src, "conv", "weight"))
                    .ok_or_else(|| {
                        Error::Quantization(format!("mask missing for conv layer {src}"))
                    })?
                    .clone();
                let mac_gate = match style {
                    ParallelismStyle::InputChannel { k, n } if Some(*src) != first_conv_src => {
                        Some((k, n))
                    }
                    _ => None,
                };
                if li == last_reduction {
                    logits_exp = acc_exp;
                }
                let [_, _, kh, kw]: [usize; 4] = weight.shape().try_into().unwrap();
                let (oh, ow) = layers::conv_out_dims(cur_hw.0, cur_hw.1, kh, kw, *stride, *pad);
                cur_hw = (oh, ow);
                fed_by_conv = true;
                layers_q.push(QLayer::Conv {
                    weight: weight_q,
                    bias: bias_q,
                    wmask,
                    stride: *stride,
                    pad: *pad,
                    w_exp,
                    in_exp,
                    out_exp,
                    mac_gate,
                    src: *src,
                });
                in_exp = out_exp;
                red_idx += 1;
            }
            FoldedLayer::Relu => layers_q.push(QLayer::Relu),
            FoldedLayer::Pool { window, stride } => {
                cur_hw = (
                    (cur_hw.0 - window) / stride + 1,
                    (cur_hw.1 - window) / stride + 1,
                );
                layers_q.push(QLayer::Pool {
                    window: *window,
                    stride: *stride,
                });
            }
            FoldedLayer::Fc { weight, bias, src } => {
                let w_exp = exp_for(max_abs(weight.data()));
                let acc_exp = w_exp + in_exp;
                let weight_q = quantize_weights(weight, w_exp);
                let bias_q = quantize_bias(bias, acc_exp, *src)?;
                audit_accumulator(&weight_q, &bias_q, *src)?;
                let wmask = maskset
                    .mask(&param_key(*src, "fc", "weight"))
                    .ok_or_else(|| Error::Quantization(format!("mask missing for fc layer {src}")))?
                    .clone();
                let mac_gate = match style {
                    ParallelismStyle::InputChannel { k, n } if fed_by_conv => Some((k, n)),
                    _ => None,
                };
                if li == last_reduction {
                    logits_exp = acc_exp;
                }
                let out_exp = if li == last_reduction {
                    acc_exp
                } else {
                    exp_for(reduction_maxes[red_idx])
                };
                let feature_spatial = cur_hw.0 * cur_hw.1;
                cur_hw = (1, 1);
                fed_by_conv = false;
                layers_q.push(QLayer::Fc {
                    weight: weight_q,
                    bias: bias_q,
                    wmask,
                    w_exp,
                    in_exp,
                    out_exp,
                    feature_spatial,
                    mac_gate,
                    src: *src,
                });
                in_exp = out_exp;
                red_idx += 1;
            }
        }
    }

    let qmodel = QuantizedModel {
        layers: layers_q,
        input_shape: folded.input_shape,
        input_exp,
        num_classes: folded.num_classes,
        style,
        spec,
        logits_exp,
    };

    // Accuracy audit: dequantized integer inference vs the float model on
    // the calibration batch.
    let float_logits = folded.forward(calib);
    let n = calib.shape()[0];
    let c = folded.num_classes;
    let mut agree_float = 0usize;
    let mut agree_quant = 0usize;
    for i in 0..n {
        let img = slice_image(calib, i);
        let q = crate::sim::reference_quant_inference(&qmodel, &img, crate::sim::DataPath::Full)?;
        let frow = &float_logits.data()[i * c..(i + 1) * c];
        let fpred = crate::eval::argmax(frow);
        if calib_labels[i] == fpred {
            agree_float += 1;
        }
        if calib_labels[i] == q.argmax {
            agree_quant += 1;
        }
    }
    let drop = (agree_float as f64 - agree_quant as f64) / n as f64;
    if drop > 0.01 {
        return Err(Error::Quantization(format!(
            "quantized top-1 dropped {:.2} points vs float on the calibration batch; widen the bit widths",
            drop * 100.0
        )));
    }
    Ok(qmodel)
}

fn slice_image(batch: &Tensor<f32>, index: usize) -> Tensor<f32> {
    let shape = batch.shape();
    let plane: usize = shape[1..].iter().product();
    let mut one = vec![0f32; plane];
    one.copy_from_slice(&batch.data()[index * plane..(index + 1) * plane]);
    Tensor::from_vec(&[1, shape[1], shape[2], shape[3]], one).unwrap()
}

/// Worst-case accumulator audit: |bias| plus the sum of |w| * QMAX per
/// output must stay inside i32.
fn audit_accumulator(weight: &Tensor<i8>, bias: &Tensor<i32>, layer: usize) -> Result<()> {
    let out = weight.shape()[0];
    let per: usize = weight.shape()[1..].iter().product();
    for o in 0..out {
        let mut bound: i64 = bias.data()[o].unsigned_abs() as i64;
        for &w in &weight.data()[o * per..(o + 1) * per] {
            bound += (w as i64).abs() * QMAX as i64;
        }
        if bound > i32::MAX as i64 {
            return Err(Error::Quantization(format!(
                "layer {layer}: worst-case accumulator {bound} overflows 32 bits (output {o})"
            )));
        }
    }
    Ok(())
}

// ── Container I/O ───────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct QLayerMeta {
    kind: String,
    #[serde(default)]
    stride: usize,
    #[serde(default)]
    pad: usize,
    #[serde(default)]
    window: usize,
    #[serde(default)]
    w_exp: i32,
    #[serde(default)]
    in_exp: i32,
    #[serde(default)]
    out_exp: i32,
    #[serde(default)]
    feature_spatial: usize,
    #[serde(default)]
    mac_gate: Option<(usize, usize)>,
    #[serde(default)]
    src: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct QModelSidecar {
    input_shape: [usize; 3],
    input_exp: i32,
    num_classes: usize,
    style: ParallelismStyle,
    spec: QuantSpec,
    logits_exp: i32,
    layers: Vec<QLayerMeta>,
}

/// Save as a HUFW1 container (i8 weights, i32 biases, u8 masks) plus a JSON
/// sidecar holding scales, style, and geometry.
pub fn save_quantized(qmodel: &QuantizedModel, path: &Path) -> Result<()> {
    let mut entries: Vec<(String, Payload)> = Vec::new();
    let mut metas = Vec::new();
    for (i, layer) in qmodel.layers.iter().enumerate() {
        match layer {
            QLayer::Conv {
                weight,
                bias,
                wmask,
                stride,
                pad,
                w_exp,
                in_exp,
                out_exp,
                mac_gate,
                src,
            } => {
                entries.push((format!("q{i:02}.weight"), Payload::I8(weight.clone())));
                entries.push((format!("q{i:02}.bias"), Payload::I32(bias.clone())));
                entries.push((format!("q{i:02}.wmask"), Payload::U8(wmask.clone())));
                metas.push(QLayerMeta {
                    kind: "conv".into(),
                    stride: *stride,
                    pad: *pad,
                    window: 0,
                    w_exp: *w_exp,
                    in_exp: *in_exp,
                    out_exp: *out_exp,
                    feature_spatial: 0,
                    mac_gate: *mac_gate,
                    src: *src,
                });
            }
            QLayer::Relu => metas.push(QLayerMeta {
                kind: "relu".into(),
                stride: 0,
                pad: 0,
                window: 0,
                w_exp: 0,
                in_exp: 0,
                out_exp: 0,
                feature_spatial: 0,
                mac_gate: None,
                src: 0,
            }),
            QLayer::Pool { window, stride } => metas.push(QLayerMeta {
                kind: "pool".into(),
                stride: *stride,
                pad: 0,
                window: *window,
                w_exp: 0,
                in_exp: 0,
                out_exp: 0,
                feature_spatial: 0,
                mac_gate: None,
                src: 0,
            }),
            QLayer::Fc {
                weight,
                bias,
                wmask,
                w_exp,
                in_exp,
                out_exp,
                feature_spatial,
                mac_gate,
                src,
            } => {
                entries.push((format!("q{i:02}.weight"), Payload::I8(weight.clone())));
                entries.push((format!("q{i:02}.bias"), Payload::I32(bias.clone())));
                entries.push((format!("q{i:02}.wmask"), Payload::U8(wmask.clone())));
                metas.push(QLayerMeta {
                    kind: "fc".into(),
                    stride: 0,
                    pad: 0,
                    window: 0,
                    w_exp: *w_exp,
                    in_exp: *in_exp,
                    out_exp: *out_exp,
                    feature_spatial: *feature_spatial,
                    mac_gate: *mac_gate,
                    src: *src,
                });
            }
        }
    }
    io::write_container(path, &entries)?;
    let sidecar = QModelSidecar {
        input_shape: qmodel.input_shape,
        input_exp: qmodel.input_exp,
        num_classes: qmodel.num_classes,
        style: qmodel.style,
        spec: qmodel.spec,
        logits_exp: qmodel.logits_exp,
        layers: metas,
    };
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    let f = std::io::BufWriter::new(std::fs::File::create(std::path::PathBuf::from(os))?);
    serde_json::to_writer_pretty(f, &sidecar)?;
    Ok(())
}

pub fn load_quantized(path: &Path) -> Result<QuantizedModel> {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    let sp = std::path::PathBuf::from(os);
    let f = std::fs::File::open(&sp).map_err(|e| Error::WeightFile {
        path: sp.clone(),
        message: format!("quantized model sidecar: {e}"),
    })?;
    let sidecar: QModelSidecar = serde_json::from_reader(std::io::BufReader::new(f))?;
    let entries = io::read_container_with(path, |name| {
        if name.ends_with(".bias") {
            PayloadKind::I32
        } else if name.ends_with(".wmask") {
            PayloadKind::U8
        } else {
            PayloadKind::I8
        }
    })?;
    let find = |name: String| -> Result<Payload> {
        entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p.clone())
            .ok_or_else(|| Error::WeightFile {
                path: path.to_path_buf(),
                message: format!("missing tensor {name}"),
            })
    };
    let mut layers = Vec::new();
    for (i, meta) in sidecar.layers.iter().enumerate() {
        match meta.kind.as_str() {
            "conv" | "fc" => {
                let Payload::I8(weight) = find(format!("q{i:02}.weight"))? else {
                    unreachable!()
                };
                let Payload::I32(bias) = find(format!("q{i:02}.bias"))? else {
                    unreachable!()
                };
                let Payload::U8(wmask) = find(format!("q{i:02}.wmask"))? else {
                    unreachable!()
                };
                if meta.kind == "conv" {
                    layers.push(QLayer::Conv {
                        weight,
                        bias,
                        wmask,
                        stride: meta.stride,
                        pad: meta.pad,
                        w_exp: meta.w_exp,
                        in_exp: meta.in_exp,
                        out_exp: meta.out_exp,
                        mac_gate: meta.mac_gate,
                        src: meta.src,
                    });
                } else {
                    layers.push(QLayer::Fc {
                        weight,
                        bias,
                        wmask,
                        w_exp: meta.w_exp,
                        in_exp: meta.in_exp,
                        out_exp: meta.out_exp,
                        feature_spatial: meta.feature_spatial,
                        mac_gate: meta.mac_gate,
                        src: meta.src,
                    });
                }
            }
            "relu" => layers.push(QLayer::Relu),
            "pool" => layers.push(QLayer::Pool {
                window: meta.window,
                stride: meta.stride,
            }),
            other => {
                return Err(Error::WeightFile {
                    path: path.to_path_buf(),
                    message: format!("unknown quantized layer kind {other}"),
                })
            }
        }
    }
    Ok(QuantizedModel {
        layers,
        input_shape: sidecar.input_shape,
        input_exp: sidecar.input_exp,
        num_classes: sidecar.num_classes,
        style: sidecar.style,
        spec: sidecar.spec,
        logits_exp: sidecar.logits_exp,
    })
}
