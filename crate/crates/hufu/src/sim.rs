//! Bit-exact integer simulator of the Trojan-laden accelerator datapath.
//!
//! Convolution and fully-connected reductions run through processing
//! elements matching the parallelism style:
//!
//! - **Add-tree PEs** (pixel style): the product stream of one output is
//!   chunked into trees of `pe_width` leaves, reduced pairwise left to
//!   right. A multiplexer sits at every leaf whose weight is inactive;
//!   when the trigger is up, that leaf contributes zero.
//! - **MAC PEs** (input-channel style): products accumulate sequentially
//!   in `pe_width` bursts while a mod-n finite-state machine counts the
//!   input channel; when the trigger is up, products of channels with
//!   (c mod n) >= k are replaced by zero. The first conv layer reads the
//!   raw image and is not gated (every input channel belongs to the
//!   subnet there); suppressing the cascade-masked filters it produces is
//!   the next layer's FSM's job.
//!
//! All arithmetic is signed 32-bit saturating with a fixed reduction
//! order, so the monolithic reference path (`reference_quant_inference`)
//! must agree bit-for-bit with the PE decomposition: trigger down equals
//! the full datapath, trigger up equals the masked datapath.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::mask::{MaskSet, ParallelismStyle};
use crate::nn::Tensor;
use crate::quant::{pow2, quantize_value, QLayer, QuantizedModel};

/// Hard cap on add-tree width so PE evaluation can use stack buffers.
pub const MAX_PE_WIDTH: usize = 64;

// ── Fixed-point primitives ──────────────────────────────────────────────

/// Saturating 32-bit add, counting saturation events.
#[inline]
fn sat_add(a: i32, b: i32, saturations: &mut u64) -> i32 {
    match a.checked_add(b) {
        Some(v) => v,
        None => {
            *saturations += 1;
            if (a as i64 + b as i64) > 0 {
                i32::MAX
            } else {
                i32::MIN
            }
        }
    }
}

/// Rescale an accumulator to the activation domain: value stays
/// acc * 2^(acc_exp) = out * 2^(out_exp), round-half-up, clamped to the
/// signed 8-bit range.
#[inline]
fn requantize(acc: i32, shift: i32) -> i32 {
    let v: i64 = if shift > 0 {
        let half = 1i64 << (shift - 1);
        ((acc as i64) + half) >> shift
    } else if shift < 0 {
        (acc as i64) << (-shift).min(40)
    } else {
        acc as i64
    };
    v.clamp(-(crate::quant::QMAX as i64), crate::quant::QMAX as i64) as i32
}

/// Round-half-up integer mean over a pooling window.
#[inline]
fn pool_round(sum: i64, area: i64) -> i32 {
    let v = (sum + area / 2).div_euclid(area);
    v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

// ── Trigger ─────────────────────────────────────────────────────────────

/// Hardware trigger: either a pin wire or a frame counter that asserts at
/// a threshold and never de-asserts within a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriggerState {
    Pin { asserted: bool },
    Counter { threshold: u64, count: u64 },
}

impl TriggerState {
    pub fn pin(asserted: bool) -> Self {
        TriggerState::Pin { asserted }
    }

    pub fn counter(threshold: u64) -> Self {
        TriggerState::Counter {
            threshold,
            count: 0,
        }
    }

    /// Advance one frame and report whether this frame runs triggered.
    pub fn begin_frame(&mut self) -> bool {
        match self {
            TriggerState::Pin { asserted } => *asserted,
            TriggerState::Counter { threshold, count } => {
                *count += 1;
                *count >= *threshold
            }
        }
    }

    pub fn is_asserted(&self) -> bool {
        match self {
            TriggerState::Pin { asserted } => *asserted,
            TriggerState::Counter { threshold, count } => count >= threshold,
        }
    }
}

/// Parse `off`, `on`, or `counter:N` (the CLI trigger flag).
pub fn parse_trigger(s: &str) -> Result<TriggerState> {
    match s {
        "off" => Ok(TriggerState::pin(false)),
        "on" => Ok(TriggerState::pin(true)),
        other => {
            if let Some(n) = other.strip_prefix("counter:") {
                let threshold: u64 = n.parse().map_err(|_| {
                    Error::Config(format!("bad counter threshold in trigger spec {other}"))
                })?;
                Ok(TriggerState::counter(threshold))
            } else {
                Err(Error::Config(format!(
                    "trigger must be off, on, or counter:N, got {other}"
                )))
            }
        }
    }
}

// ── Standalone PE models ────────────────────────────────────────────────

/// Add-tree processing element. Leaves whose `trojan_inactive` flag is set
/// contribute zero when `trigger` is up; reduction is a left-to-right
/// pairwise tree with saturating adds.
pub fn pe_addtree_eval(products: &[i32], trojan_inactive: &[bool], trigger: bool) -> i32 {
    assert_eq!(products.len(), trojan_inactive.len());
    let mut sat = 0u64;
    addtree_counting(products, trojan_inactive, trigger, &mut sat)
}

fn addtree_counting(
    products: &[i32],
    trojan_inactive: &[bool],
    trigger: bool,
    saturations: &mut u64,
) -> i32 {
    debug_assert!(products.len() <= MAX_PE_WIDTH);
    let mut level = [0i32; MAX_PE_WIDTH];
    let mut len = products.len();
    if len == 0 {
        return 0;
    }
    for i in 0..len {
        level[i] = if trigger && trojan_inactive[i] {
            0
        } else {
            products[i]
        };
    }
    while len > 1 {
        let mut next = 0usize;
        let mut i = 0usize;
        while i + 1 < len {
            level[next] = sat_add(level[i], level[i + 1], saturations);
            next += 1;
            i += 2;
        }
        if i < len {
            level[next] = level[i];
            next += 1;
        }
        len = next;
    }
    level[0]
}

/// MAC processing element with a channel-counting FSM. Accumulates the
/// product stream; when `trigger` is up only products whose channel index
/// satisfies (c mod n) < k are added. Returns the accumulator and the FSM
/// state sequence (c mod n per element) for inspection.
pub fn pe_mac_eval(
    products: &[i32],
    channel_indices: &[usize],
    k: usize,
    n: usize,
    trigger: bool,
) -> (i32, Vec<usize>) {
    assert_eq!(products.len(), channel_indices.len());
    assert!(n > 0 && k <= n);
    let mut sat = 0u64;
    let mut acc = 0i32;
    let mut states = Vec::with_capacity(products.len());
    for (&p, &c) in products.iter().zip(channel_indices) {
        let state = c % n;
        states.push(state);
        let contribution = if trigger && state >= k { 0 } else { p };
        acc = sat_add(acc, contribution, &mut sat);
    }
    (acc, states)
}

// ── Full-model simulation ───────────────────────────────────────────────

#[derive(Debug, Clone, Default, Serialize)]
pub struct FrameStats {
    pub saturations: u64,
    pub pe_evaluations: u64,
    pub triggered: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimOutput {
    pub logits: Vec<i32>,
    pub logits_exp: i32,
    pub logits_dequant: Vec<f32>,
    pub argmax: usize,
    pub stats: FrameStats,
}

/// Which monolithic reference datapath to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataPath {
    Full,
    Masked,
}

struct Feature {
    data: Vec<i32>,
    c: usize,
    h: usize,
    w: usize,
}

fn quantize_input(image: &Tensor<f32>, qm: &QuantizedModel) -> Result<Feature> {
    let [c, h, w] = qm.input_shape;
    let ok = image.rank() == 4
        && image.shape()[0] == 1
        && image.shape()[1] == c
        && image.shape()[2] == h
        && image.shape()[3] == w;
    if !ok {
        return Err(Error::ShapeMismatch {
            layer: 0,
            message: format!(
                "image shape {:?} does not match model input {c}x{h}x{w}",
                image.shape()
            ),
        });
    }
    let data = image
        .data()
        .iter()
        .map(|&v| quantize_value(v, qm.input_exp))
        .collect();
    Ok(Feature { data, c, h, w })
}

enum Engine {
    /// Leaf flags come from the weight mask.
    AddTree,
    /// Channel FSM gate, None = ungated.
    Mac(Option<(usize, usize)>),
}

/// Zero-padded copy of a feature map; padding taps feed the PEs zero
/// activations, exactly like the hardware line buffers.
fn pad_feature(input: &Feature, pad: usize) -> (Vec<i32>, usize, usize) {
    let (c, h, w) = (input.c, input.h, input.w);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0i32; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            let src = &input.data[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst_base = (ch * ph + y + pad) * pw + pad;
            padded[dst_base..dst_base + w].copy_from_slice(src);
        }
    }
    (padded, ph, pw)
}

#[allow(clippy::too_many_arguments)]
fn conv_layer(
    input: &Feature,
    weight: &Tensor<i8>,
    bias: &Tensor<i32>,
    wmask: &Tensor<u8>,
    stride: usize,
    pad: usize,
    engine: &Engine,
    triggered: bool,
    pe_width: usize,
    stats: &mut FrameStats,
) -> Feature {
    let [co, ci, kh, kw]: [usize; 4] = weight.shape().try_into().unwrap();
    let (h, w) = (input.h, input.w);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let wd = weight.data();
    let md = wmask.data();
    let (padded, _ph, pw) = pad_feature(input, pad);
    let mut out = vec![0i32; co * oh * ow];

    let mut products = [0i32; MAX_PE_WIDTH];
    let mut flags = [false; MAX_PE_WIDTH];
    let mut chans = [0usize; MAX_PE_WIDTH];
    let plane = (h + 2 * pad) * pw;

    for f in 0..co {
        let w_f = &wd[f * ci * kh * kw..(f + 1) * ci * kh * kw];
        let m_f = &md[f * ci * kh * kw..(f + 1) * ci * kh * kw];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.data()[f];
                let mut fill = 0usize;
                let base = oy * stride * pw + ox * stride;
                for c in 0..ci {
                    let x_ch = &padded[c * plane + base..];
                    for ky in 0..kh {
                        let row = &x_ch[ky * pw..ky * pw + kw];
                        let w_row = &w_f[(c * kh + ky) * kw..(c * kh + ky) * kw + kw];
                        let m_row = &m_f[(c * kh + ky) * kw..(c * kh + ky) * kw + kw];
                        for kx in 0..kw {
                            products[fill] = (w_row[kx] as i32) * row[kx];
                            flags[fill] = m_row[kx] == 0;
                            chans[fill] = c;
                            fill += 1;
                            if fill == pe_width {
                                acc = flush_pe(
                                    &products[..fill],
                                    &flags[..fill],
                                    &chans[..fill],
                                    engine,
                                    triggered,
                                    acc,
                                    stats,
                                );
                                fill = 0;
                            }
                        }
                    }
                }
                if fill > 0 {
                    acc = flush_pe(
                        &products[..fill],
                        &flags[..fill],
                        &chans[..fill],
                        engine,
                        triggered,
                        acc,
                        stats,
                    );
                }
                out[(f * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Feature {
        data: out,
        c: co,
        h: oh,
        w: ow,
    }
}

fn flush_pe(
    products: &[i32],
    flags: &[bool],
    chans: &[usize],
    engine: &Engine,
    triggered: bool,
    acc: i32,
    stats: &mut FrameStats,
) -> i32 {
    stats.pe_evaluations += 1;
    let partial = match engine {
        Engine::AddTree => addtree_counting(products, flags, triggered, &mut stats.saturations),
        Engine::Mac(gate) => {
            let mut sum = 0i32;
            for (i, &p) in products.iter().enumerate() {
                let suppressed = match gate {
                    Some((k, n)) => triggered && (chans[i] % n) >= *k,
                    None => false,
                };
                sum = sat_add(sum, if suppressed { 0 } else { p }, &mut stats.saturations);
            }
            sum
        }
    };
    sat_add(acc, partial, &mut stats.saturations)
}

#[allow(clippy::too_many_arguments)]
fn fc_layer(
    input: &Feature,
    weight: &Tensor<i8>,
    bias: &Tensor<i32>,
    wmask: &Tensor<u8>,
    feature_spatial: usize,
    engine: &Engine,
    triggered: bool,
    pe_width: usize,
    stats: &mut FrameStats,
) -> Feature {
    let [n_out, n_in]: [usize; 2] = weight.shape().try_into().unwrap();
    debug_assert_eq!(input.data.len(), n_in);
    let wd = weight.data();
    let md = wmask.data();
    let mut out = vec![0i32; n_out];

    let mut products = [0i32; MAX_PE_WIDTH];
    let mut flags = [false; MAX_PE_WIDTH];
    let mut chans = [0usize; MAX_PE_WIDTH];

    for o in 0..n_out {
        let mut acc = bias.data()[o];
        let mut fill = 0usize;
        for f in 0..n_in {
            products[fill] = (wd[o * n_in + f] as i32) * input.data[f];
            flags[fill] = md[o * n_in + f] == 0;
            chans[fill] = f / feature_spatial.max(1);
            fill += 1;
            if fill == pe_width {
                acc = flush_pe(
                    &products[..fill],
                    &flags[..fill],
                    &chans[..fill],
                    engine,
                    triggered,
                    acc,
                    stats,
                );
                fill = 0;
            }
        }
        if fill > 0 {
            acc = flush_pe(
                &products[..fill],
                &flags[..fill],
                &chans[..fill],
                engine,
                triggered,
                acc,
                stats,
            );
        }
        out[o] = acc;
    }
    Feature {
        data: out,
        c: n_out,
        h: 1,
        w: 1,
    }
}

fn relu_int(f: &mut Feature) {
    for v in &mut f.data {
        if *v < 0 {
            *v = 0;
        }
    }
}

fn pool_int(input: &Feature, window: usize, stride: usize) -> Feature {
    let (c, h, w) = (input.c, input.h, input.w);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let area = (window * window) as i64;
    let mut out = vec![0i32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0i64;
                for ky in 0..window {
                    for kx in 0..window {
                        sum += input.data[(ch * h + oy * stride + ky) * w + ox * stride + kx]
                            as i64;
                    }
                }
                out[(ch * oh + oy) * ow + ox] = pool_round(sum, area);
            }
        }
    }
    Feature {
        data: out,
        c,
        h: oh,
        w: ow,
    }
}

impl QuantizedModel {
    pub fn last_reduction_index(&self) -> usize {
        self.layers
            .iter()
            .rposition(|l| l.is_reduction())
            .expect("quantized model has a reduction layer")
    }
}

fn finish(feature: Feature, qm: &QuantizedModel, stats: FrameStats) -> SimOutput {
    let logits = feature.data;
    let scale = pow2(qm.logits_exp);
    let dequant: Vec<f32> = logits.iter().map(|&q| q as f32 * scale).collect();
    let argmax = crate::eval::argmax(&dequant);
    SimOutput {
        logits,
        logits_exp: qm.logits_exp,
        logits_dequant: dequant,
        argmax,
        stats,
    }
}

/// Run one frame through the PE datapath. The trigger advances by one
/// frame; with the trigger down the result is bit-equal to the full
/// reference path, with it up bit-equal to the masked reference path.
pub fn simulate_inference(
    qm: &QuantizedModel,
    image: &Tensor<f32>,
    trigger: &mut TriggerState,
    pe_width: usize,
) -> Result<SimOutput> {
    if pe_width == 0 || pe_width > MAX_PE_WIDTH {
        return Err(Error::Config(format!(
            "pe_width must be in 1..={MAX_PE_WIDTH}, got {pe_width}"
        )));
    }
    let triggered = trigger.begin_frame();
    let mut stats = FrameStats {
        triggered,
        ..FrameStats::default()
    };
    let mut feature = quantize_input(image, qm)?;
    let last_red = qm.last_reduction_index();
    for (li, layer) in qm.layers.iter().enumerate() {
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
                ..
            } => {
                let engine = match qm.style {
                    ParallelismStyle::Pixel => Engine::AddTree,
                    ParallelismStyle::InputChannel { .. } => Engine::Mac(*mac_gate),
                };
                feature = conv_layer(
                    &feature, weight, bias, wmask, *stride, *pad, &engine, triggered, pe_width,
                    &mut stats,
                );
                if li != last_red {
                    let shift = out_exp - (w_exp + in_exp);
                    for v in &mut feature.data {
                        *v = requantize(*v, shift);
                    }
                }
            }
            QLayer::Relu => relu_int(&mut feature),
            QLayer::Pool { window, stride } => feature = pool_int(&feature, *window, *stride),
            QLayer::Fc {
                weight,
                bias,
                wmask,
                w_exp,
                in_exp,
                out_exp,
                feature_spatial,
                mac_gate,
                ..
            } => {
                let engine = match qm.style {
                    ParallelismStyle::Pixel => Engine::AddTree,
                    ParallelismStyle::InputChannel { .. } => Engine::Mac(*mac_gate),
                };
                feature = fc_layer(
                    &feature,
                    weight,
                    bias,
                    wmask,
                    *feature_spatial,
                    &engine,
                    triggered,
                    pe_width,
                    &mut stats,
                );
                if li != last_red {
                    let shift = out_exp - (w_exp + in_exp);
                    for v in &mut feature.data {
                        *v = requantize(*v, shift);
                    }
                }
            }
        }
    }
    Ok(finish(feature, qm, stats))
}

/// Monolithic integer oracle: same reduction order and saturation as the
/// PE path, no PE decomposition. `Masked` zeroes the product of every
/// weight whose mask bit is 0 (the apply-mask semantics in integers).
pub fn reference_quant_inference(
    qm: &QuantizedModel,
    image: &Tensor<f32>,
    which: DataPath,
) -> Result<SimOutput> {
    let mut stats = FrameStats {
        triggered: which == DataPath::Masked,
        ..FrameStats::default()
    };
    let mut feature = quantize_input(image, qm)?;
    let last_red = qm.last_reduction_index();
    for (li, layer) in qm.layers.iter().enumerate() {
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
                ..
            } => {
                feature = reference_conv(
                    &feature,
                    weight,
                    bias,
                    wmask,
                    *stride,
                    *pad,
                    which,
                    &mut stats.saturations,
                );
                if li != last_red {
                    let shift = out_exp - (w_exp + in_exp);
                    for v in &mut feature.data {
                        *v = requantize(*v, shift);
                    }
                }
            }
            QLayer::Relu => relu_int(&mut feature),
            QLayer::Pool { window, stride } => feature = pool_int(&feature, *window, *stride),
            QLayer::Fc {
                weight,
                bias,
                wmask,
                w_exp,
                in_exp,
                out_exp,
                ..
            } => {
                let [n_out, n_in]: [usize; 2] = weight.shape().try_into().unwrap();
                let mut out = vec![0i32; n_out];
                for o in 0..n_out {
                    let mut acc = bias.data()[o];
                    for f in 0..n_in {
                        let masked_out =
                            which == DataPath::Masked && wmask.data()[o * n_in + f] == 0;
                        let p = if masked_out {
                            0
                        } else {
                            (weight.data()[o * n_in + f] as i32) * feature.data[f]
                        };
                        acc = sat_add(acc, p, &mut stats.saturations);
                    }
                    out[o] = acc;
                }
                feature = Feature {
                    data: out,
                    c: n_out,
                    h: 1,
                    w: 1,
                };
                if li != last_red {
                    let shift = out_exp - (w_exp + in_exp);
                    for v in &mut feature.data {
                        *v = requantize(*v, shift);
                    }
                }
            }
        }
    }
    Ok(finish(feature, qm, stats))
}

#[allow(clippy::too_many_arguments)]
fn reference_conv(
    input: &Feature,
    weight: &Tensor<i8>,
    bias: &Tensor<i32>,
    wmask: &Tensor<u8>,
    stride: usize,
    pad: usize,
    which: DataPath,
    saturations: &mut u64,
) -> Feature {
    let [co, ci, kh, kw]: [usize; 4] = weight.shape().try_into().unwrap();
    let (h, w) = (input.h, input.w);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let wd = weight.data();
    let md = wmask.data();
    let (padded, _ph, pw) = pad_feature(input, pad);
    let plane = (h + 2 * pad) * pw;
    let mut out = vec![0i32; co * oh * ow];
    for f in 0..co {
        let w_f = &wd[f * ci * kh * kw..(f + 1) * ci * kh * kw];
        let m_f = &md[f * ci * kh * kw..(f + 1) * ci * kh * kw];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.data()[f];
                let base = oy * stride * pw + ox * stride;
                for c in 0..ci {
                    let x_ch = &padded[c * plane + base..];
                    for ky in 0..kh {
                        let row = &x_ch[ky * pw..ky * pw + kw];
                        let w_row = &w_f[(c * kh + ky) * kw..(c * kh + ky) * kw + kw];
                        let m_row = &m_f[(c * kh + ky) * kw..(c * kh + ky) * kw + kw];
                        for kx in 0..kw {
                            let p = if which == DataPath::Masked && m_row[kx] == 0 {
                                0
                            } else {
                                (w_row[kx] as i32) * row[kx]
                            };
                            acc = sat_add(acc, p, saturations);
                        }
                    }
                }
                out[(f * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Feature {
        data: out,
        c: co,
        h: oh,
        w: ow,
    }
}

/// Confusion matrix of the quantized datapath over a dataset, with the
/// trigger pinned up or down.
pub fn eval_quantized(
    qm: &QuantizedModel,
    dataset: &Dataset,
    triggered: bool,
    pe_width: usize,
) -> Result<(ConfusionMatrix, FrameStats)> {
    let mut cm = ConfusionMatrix::new(dataset.classes());
    let mut totals = FrameStats {
        triggered,
        ..FrameStats::default()
    };
    for i in 0..dataset.len() {
        let mut trig = TriggerState::pin(triggered);
        let out = simulate_inference(qm, &dataset.image_tensor(i), &mut trig, pe_width)?;
        totals.saturations += out.stats.saturations;
        totals.pe_evaluations += out.stats.pe_evaluations;
        cm.record(dataset.label(i), out.argmax);
    }
    Ok((cm, totals))
}

/// (argmax, target softmax confidence from dequantized logits) per image.
pub fn quantized_outcomes(
    qm: &QuantizedModel,
    images: &[Tensor<f32>],
    target: usize,
    triggered: bool,
    pe_width: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let mut trig = TriggerState::pin(triggered);
        let r = simulate_inference(qm, img, &mut trig, pe_width)?;
        out.push((
            r.argmax,
            crate::eval::softmax_confidence(&r.logits_dequant, target),
        ));
    }
    Ok(out)
}

// ── Overhead accounting ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PeGeometry {
    pub pe_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerOverhead {
    pub layer: String,
    pub tree_leaves: usize,
    pub active_leaves: usize,
    pub mux_per_pe: usize,
    pub fsm_state_bits_per_pe: usize,
    pub or_gates_per_pe: usize,
}

/// Gate counts for deploying the Trojan payload, reproducible from the
/// mask and geometry alone.
#[derive(Debug, Clone, Serialize)]
pub struct OverheadReport {
    pub style: String,
    pub pe_count: usize,
    pub mux_per_pe: usize,
    pub or_gates_per_pe: usize,
    pub fsm_state_bits_per_pe: usize,
    pub mux_count: usize,
    pub or_gate_count: usize,
    pub fsm_state_bits: usize,
    pub per_layer: Vec<LayerOverhead>,
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Count the trojan gates for the given style and geometry. Add-tree PEs
/// get one multiplexer per inactive leaf position; MAC PEs get a
/// ceil(log2 n)-bit channel FSM; every PE's reset line gains one OR gate.
pub fn overhead_report(maskset: &MaskSet, geometry: &PeGeometry) -> Result<OverheadReport> {
    let mut per_layer = Vec::new();
    let mut tree_geometry: Option<(usize, usize)> = None;

    for (key, mask) in maskset.masks() {
        if !key.contains(".conv.weight") {
            continue;
        }
        let [_, _, kh, kw]: [usize; 4] = mask
            .shape()
            .try_into()
            .map_err(|_| Error::InvalidMask(format!("conv weight mask {key} is not rank 4")))?;
        let leaves = kh * kw;
        let (mux_per_pe, fsm_bits, active) = match maskset.style() {
            ParallelismStyle::Pixel => {
                // Leaf pattern is shared by every kernel; read it off the
                // first one.
                let active: usize = mask.data()[..leaves]
                    .iter()
                    .map(|&b| b as usize)
                    .sum();
                match tree_geometry {
                    None => tree_geometry = Some((kh, kw)),
                    Some(g) if g != (kh, kw) => {
                        return Err(Error::InvalidMask(
                            "mixed kernel geometries need per-layer PE arrays; overhead accounting expects one add-tree shape"
                                .into(),
                        ))
                    }
                    _ => {}
                }
                (leaves - active, 0, active)
            }
            ParallelismStyle::InputChannel { n, .. } => (0, ceil_log2(n), leaves),
        };
        per_layer.push(LayerOverhead {
            layer: key.clone(),
            tree_leaves: leaves,
            active_leaves: active,
            mux_per_pe,
            fsm_state_bits_per_pe: fsm_bits,
            or_gates_per_pe: 1,
        });
    }

    let (mux_per_pe, fsm_bits_per_pe) = match maskset.style() {
        ParallelismStyle::Pixel => (
            per_layer.first().map(|l| l.mux_per_pe).unwrap_or(0),
            0usize,
        ),
        ParallelismStyle::InputChannel { n, .. } => (0, ceil_log2(n)),
    };

    Ok(OverheadReport {
        style: maskset.style().to_string(),
        pe_count: geometry.pe_count,
        mux_per_pe,
        or_gates_per_pe: 1,
        fsm_state_bits_per_pe: fsm_bits_per_pe,
        mux_count: mux_per_pe * geometry.pe_count,
        or_gate_count: geometry.pe_count,
        fsm_state_bits: fsm_bits_per_pe * geometry.pe_count,
        per_layer,
    })
}
