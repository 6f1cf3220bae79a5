//! Structured binary masks carving the hidden subnet out of a network.
//!
//! The subnet shape follows the accelerator's parallelism style:
//!
//! - **Pixel** parallelism reduces one spatial kernel per processing
//!   element, so the subnet keeps the central cross (center row ∪ center
//!   column) of every kernel. Batch norm and the classifier head stay
//!   fully active.
//! - **InputChannel** parallelism reduces across input channels, so the
//!   subnet keeps the first `k` of every `n` input channels. Filters of the
//!   previous layer that no active input channel consumes are useless in
//!   the triggered datapath, so they are masked together with their batch
//!   norm entries (the cascade rule). The first conv layer keeps all of its
//!   input channels: it reads the image, not a selectable feature map.
//!
//! Mask bit 1 means active (part of the subnet); 0 means the triggered
//! datapath suppresses the entry's contribution. For fully-connected
//! weights under channel style, a 0 column records that the hardware zeroes
//! that input feature when triggered — it does not restrict which FC
//! weights train (the head belongs to the subnet and trains in phase 1).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::io::{self, Payload, PayloadKind};
use crate::nn::network::param_key;
use crate::nn::{LayerSpec, Network, Params, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum ParallelismStyle {
    Pixel,
    InputChannel { k: usize, n: usize },
}

impl fmt::Display for ParallelismStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParallelismStyle::Pixel => write!(f, "pixel"),
            ParallelismStyle::InputChannel { k, n } => write!(f, "channel(k={k},n={n})"),
        }
    }
}

/// Binary masks for every parameter, plus the per-conv-layer active channel
/// sets the cascade rule produces.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    style: ParallelismStyle,
    masks: BTreeMap<String, Tensor<u8>>,
    /// Active input channels per conv layer index.
    active_in: BTreeMap<usize, Vec<usize>>,
    /// Active output filters per conv layer index.
    active_out: BTreeMap<usize, Vec<usize>>,
}

/// One structural problem found by `validate_mask`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskViolation {
    pub layer: String,
    pub message: String,
}

impl fmt::Display for MaskViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.layer, self.message)
    }
}

/// Channel activity flowing through the stack at one point: which channels
/// of the current feature map are alive in the triggered datapath.
#[derive(Debug, Clone)]
enum Activity {
    All(usize),
    Some(Vec<usize>, usize),
}

impl Activity {
    fn contains(&self, c: usize) -> bool {
        match self {
            Activity::All(_) => true,
            Activity::Some(set, _) => set.binary_search(&c).is_ok(),
        }
    }
    fn to_vec(&self) -> Vec<usize> {
        match self {
            Activity::All(n) => (0..*n).collect(),
            Activity::Some(set, _) => set.clone(),
        }
    }
}

fn pattern_channels(c: usize, k: usize, n: usize) -> Vec<usize> {
    (0..c).filter(|ch| ch % n < k).collect()
}

impl MaskSet {
    pub fn style(&self) -> ParallelismStyle {
        self.style
    }

    pub fn masks(&self) -> &BTreeMap<String, Tensor<u8>> {
        &self.masks
    }

    pub fn mask(&self, key: &str) -> Option<&Tensor<u8>> {
        self.masks.get(key)
    }

    pub fn active_in(&self, conv_layer: usize) -> Option<&[usize]> {
        self.active_in.get(&conv_layer).map(|v| v.as_slice())
    }

    pub fn active_out(&self, conv_layer: usize) -> Option<&[usize]> {
        self.active_out.get(&conv_layer).map(|v| v.as_slice())
    }

    pub fn from_raw(
        style: ParallelismStyle,
        masks: BTreeMap<String, Tensor<u8>>,
        active_in: BTreeMap<usize, Vec<usize>>,
        active_out: BTreeMap<usize, Vec<usize>>,
    ) -> Self {
        MaskSet {
            style,
            masks,
            active_in,
            active_out,
        }
    }

    /// Flip every mask bit. Channel sets don't survive complementing; the
    /// result is only meant for complement-masking and update masks.
    pub fn complement(&self) -> MaskSet {
        MaskSet {
            style: self.style,
            masks: self
                .masks
                .iter()
                .map(|(k, m)| (k.clone(), m.map(|b| 1 - b)))
                .collect(),
            active_in: BTreeMap::new(),
            active_out: BTreeMap::new(),
        }
    }

    /// Update mask for subnet (phase 1) training: conv entries follow the
    /// mask, batch-norm entries follow the mask (entries of cascade-masked
    /// filters receive zero gradient anyway), and the classifier head
    /// trains in full.
    pub fn update_mask_phase1(&self) -> MaskSet {
        let masks = self
            .masks
            .iter()
            .map(|(k, m)| {
                let t = if k.contains(".fc.") {
                    Tensor::filled(m.shape(), 1u8)
                } else {
                    m.clone()
                };
                (k.clone(), t)
            })
            .collect();
        MaskSet {
            style: self.style,
            masks,
            active_in: BTreeMap::new(),
            active_out: BTreeMap::new(),
        }
    }

    /// Update mask for the accuracy-resume (phase 2) training: only inactive
    /// conv entries move; batch norm and the classifier head are frozen.
    pub fn update_mask_phase2(&self) -> MaskSet {
        let masks = self
            .masks
            .iter()
            .map(|(k, m)| {
                let t = if k.contains(".conv.") {
                    m.map(|b| 1 - b)
                } else {
                    Tensor::filled(m.shape(), 0u8)
                };
                (k.clone(), t)
            })
            .collect();
        MaskSet {
            style: self.style,
            masks,
            active_in: BTreeMap::new(),
            active_out: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, Payload)> = self
            .masks
            .iter()
            .map(|(k, m)| (k.clone(), Payload::U8(m.clone())))
            .collect();
        io::write_container(path, &entries)?;
        let sidecar = MaskSidecar {
            style: self.style,
            active_in: self.active_in.clone(),
            active_out: self.active_out.clone(),
        };
        let mut os = path.as_os_str().to_owned();
        os.push(".json");
        let f = std::io::BufWriter::new(std::fs::File::create(std::path::PathBuf::from(os))?);
        serde_json::to_writer_pretty(f, &sidecar)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MaskSet> {
        let entries = io::read_container(path, PayloadKind::U8)?;
        let mut masks = BTreeMap::new();
        for (name, payload) in entries {
            match payload {
                Payload::U8(t) => {
                    masks.insert(name, t);
                }
                _ => unreachable!(),
            }
        }
        let mut os = path.as_os_str().to_owned();
        os.push(".json");
        let sp = std::path::PathBuf::from(os);
        let f = std::fs::File::open(&sp).map_err(|e| Error::WeightFile {
            path: sp.clone(),
            message: format!("mask sidecar: {e}"),
        })?;
        let sidecar: MaskSidecar = serde_json::from_reader(std::io::BufReader::new(f))?;
        Ok(MaskSet {
            style: sidecar.style,
            masks,
            active_in: sidecar.active_in,
            active_out: sidecar.active_out,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MaskSidecar {
    #[serde(flatten)]
    style: ParallelismStyle,
    active_in: BTreeMap<usize, Vec<usize>>,
    active_out: BTreeMap<usize, Vec<usize>>,
}

/// All-ones masks for every parameter of the network.
fn full_masks<S: Scalar>(network: &Network<S>) -> BTreeMap<String, Tensor<u8>> {
    network
        .params()
        .iter()
        .map(|(k, v)| (k.clone(), Tensor::filled(v.shape(), 1u8)))
        .collect()
}

/// Pixel-parallelism subnet: the central cross of every kernel.
///
/// Kernel position (i, j) is active iff i is the center row or j is the
/// center column; every kernel dimension must be odd. Batch norm and
/// fully-connected parameters stay fully active.
pub fn gen_pixel_mask<S: Scalar>(network: &Network<S>) -> Result<MaskSet> {
    let mut masks = full_masks(network);
    let mut active_in = BTreeMap::new();
    let mut active_out = BTreeMap::new();
    for (idx, layer) in network.layers().iter().enumerate() {
        if let LayerSpec::Conv {
            kernel_w,
            kernel_h,
            c_in,
            c_out,
            ..
        } = *layer
        {
            if kernel_w % 2 == 0 || kernel_h % 2 == 0 {
                return Err(Error::InvalidMask(format!(
                    "layer {idx}: pixel subnet requires odd kernel dimensions, got {kernel_h}x{kernel_w}"
                )));
            }
            let (cy, cx) = (kernel_h / 2, kernel_w / 2);
            let key = param_key(idx, "conv", "weight");
            let m = masks.get_mut(&key).expect("conv weight mask");
            let md = m.data_mut();
            for co in 0..c_out {
                for ci in 0..c_in {
                    for ky in 0..kernel_h {
                        for kx in 0..kernel_w {
                            let active = ky == cy || kx == cx;
                            md[((co * c_in + ci) * kernel_h + ky) * kernel_w + kx] =
                                active as u8;
                        }
                    }
                }
            }
            active_in.insert(idx, (0..c_in).collect());
            active_out.insert(idx, (0..c_out).collect());
        }
    }
    Ok(MaskSet {
        style: ParallelismStyle::Pixel,
        masks,
        active_in,
        active_out,
    })
}

/// Input-channel-parallelism subnet: the first `k` of every `n` input
/// channels, with the previous-layer filter cascade.
///
/// A weight (ky, kx, ci, co) is active iff ci is an active input channel
/// and co is an active output filter. Output filters of layer L are the
/// active input channels of layer L+1; filters nothing consumes are fully
/// masked together with their batch-norm entries. The last conv before the
/// head keeps the same selection so triggered-mode inactive filters never
/// reach the logits; if no head follows, all of its filters stay active.
pub fn gen_channel_mask<S: Scalar>(network: &Network<S>, k: usize, n: usize) -> Result<MaskSet> {
    if k == 0 || n == 0 || k > n {
        return Err(Error::InvalidMask(format!(
            "channel subnet requires 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let conv_layers: Vec<(usize, usize, usize)> = network
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(idx, l)| match *l {
            LayerSpec::Conv { c_in, c_out, .. } => Some((idx, c_in, c_out)),
            _ => None,
        })
        .collect();

    let has_fc = network
        .layers()
        .iter()
        .any(|l| matches!(l, LayerSpec::FullyConnected { .. }));

    // Active input channels per conv, in conv order.
    let mut ins: Vec<Vec<usize>> = Vec::with_capacity(conv_layers.len());
    for (pos, &(idx, c_in, _)) in conv_layers.iter().enumerate() {
        if pos == 0 {
            ins.push((0..c_in).collect());
        } else {
            if c_in % n != 0 {
                return Err(Error::InvalidMask(format!(
                    "layer {idx}: input channels {c_in} not divisible by n={n}"
                )));
            }
            ins.push(pattern_channels(c_in, k, n));
        }
    }
    // Active output filters: cascade from the next conv's input selection.
    let mut outs: Vec<Vec<usize>> = Vec::with_capacity(conv_layers.len());
    for (pos, &(idx, _, c_out)) in conv_layers.iter().enumerate() {
        if pos + 1 < conv_layers.len() {
            outs.push(ins[pos + 1].clone());
        } else if has_fc {
            if c_out % n != 0 {
                return Err(Error::InvalidMask(format!(
                    "layer {idx}: output channels {c_out} not divisible by n={n} for head selection"
                )));
            }
            outs.push(pattern_channels(c_out, k, n));
        } else {
            // No downstream selection: logits come straight out of this
            // layer, so every filter stays active.
            outs.push((0..c_out).collect());
        }
    }

    let mut masks = full_masks(network);
    let mut active_in = BTreeMap::new();
    let mut active_out = BTreeMap::new();
    let mut conv_pos = 0usize;
    // Channel activity of the feature map flowing past each layer.
    let mut activity = Activity::All(network.input_shape()[0]);
    let mut seen_first_fc = false;

    for (idx, layer) in network.layers().iter().enumerate() {
        match *layer {
            LayerSpec::Conv {
                kernel_w,
                kernel_h,
                c_in,
                c_out,
                ..
            } => {
                let in_set = &ins[conv_pos];
                let out_set = &outs[conv_pos];
                let in_act = Activity::Some(in_set.clone(), c_in);
                let out_act = Activity::Some(out_set.clone(), c_out);
                let key = param_key(idx, "conv", "weight");
                let m = masks.get_mut(&key).expect("conv weight mask");
                let md = m.data_mut();
                for co in 0..c_out {
                    let co_on = out_act.contains(co);
                    for ci in 0..c_in {
                        let on = co_on && in_act.contains(ci);
                        let base = (co * c_in + ci) * kernel_h * kernel_w;
                        for p in 0..kernel_h * kernel_w {
                            md[base + p] = on as u8;
                        }
                    }
                }
                if let Some(bias) = masks.get_mut(&param_key(idx, "conv", "bias")) {
                    for co in 0..c_out {
                        bias.data_mut()[co] = out_act.contains(co) as u8;
                    }
                }
                active_in.insert(idx, in_set.clone());
                active_out.insert(idx, out_set.clone());
                activity = out_act;
                conv_pos += 1;
            }
            LayerSpec::BatchNorm { channels, .. } => {
                for field in ["gamma", "beta", "running_mean", "running_var"] {
                    if let Some(m) = masks.get_mut(&param_key(idx, "bn", field)) {
                        for c in 0..channels {
                            m.data_mut()[c] = activity.contains(c) as u8;
                        }
                    }
                }
            }
            LayerSpec::FullyConnected { n_in, n_out } => {
                if !seen_first_fc {
                    // Suppress columns fed by inactive channels of the last
                    // conv. Features map to channels as f / (h*w).
                    let channels = activity.to_vec();
                    let total_channels = match &activity {
                        Activity::All(n) => *n,
                        Activity::Some(_, n) => *n,
                    };
                    let spatial = n_in / total_channels;
                    let key = param_key(idx, "fc", "weight");
                    let m = masks.get_mut(&key).expect("fc weight mask");
                    let md = m.data_mut();
                    let col_on: Vec<bool> = (0..n_in)
                        .map(|f| channels.binary_search(&(f / spatial)).is_ok())
                        .collect();
                    for row in 0..n_out {
                        for col in 0..n_in {
                            md[row * n_in + col] = col_on[col] as u8;
                        }
                    }
                    seen_first_fc = true;
                }
                activity = Activity::All(n_out);
            }
            _ => {}
        }
    }

    Ok(MaskSet {
        style: ParallelismStyle::InputChannel { k, n },
        masks,
        active_in,
        active_out,
    })
}

pub fn gen_mask<S: Scalar>(network: &Network<S>, style: ParallelismStyle) -> Result<MaskSet> {
    match style {
        ParallelismStyle::Pixel => gen_pixel_mask(network),
        ParallelismStyle::InputChannel { k, n } => gen_channel_mask(network, k, n),
    }
}

/// Zero inactive entries, keep active entries bit-unchanged.
pub fn apply_mask<S: Scalar>(params: &Params<S>, maskset: &MaskSet) -> Result<Params<S>> {
    let mut out = Params::new();
    for (key, tensor) in params {
        let mask = maskset
            .mask(key)
            .ok_or_else(|| Error::InvalidMask(format!("no mask for parameter {key}")))?;
        if mask.shape() != tensor.shape() {
            return Err(Error::InvalidMask(format!(
                "mask shape {:?} does not match parameter {key} {:?}",
                mask.shape(),
                tensor.shape()
            )));
        }
        let mut masked = tensor.clone();
        for (v, &m) in masked.data_mut().iter_mut().zip(mask.data()) {
            if m == 0 {
                *v = S::ZERO;
            }
        }
        out.insert(key.clone(), masked);
    }
    Ok(out)
}

/// Network with inactive entries zeroed (software subnet extraction).
pub fn masked_network<S: Scalar>(network: &Network<S>, maskset: &MaskSet) -> Result<Network<S>> {
    network.with_params(apply_mask(network.params(), maskset)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerMaskStats {
    pub param: String,
    pub total: usize,
    pub active: usize,
    pub active_fraction: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaskStats {
    pub total_count: usize,
    pub active_count: usize,
    pub per_layer: Vec<LayerMaskStats>,
}

pub fn mask_stats(maskset: &MaskSet) -> MaskStats {
    let mut per_layer = Vec::new();
    let mut total_count = 0usize;
    let mut active_count = 0usize;
    for (key, mask) in maskset.masks() {
        let total = mask.len();
        let active = mask.data().iter().filter(|&&b| b != 0).count();
        total_count += total;
        active_count += active;
        per_layer.push(LayerMaskStats {
            param: key.clone(),
            total,
            active,
            active_fraction: active as f64 / total as f64,
            sparsity: 1.0 - active as f64 / total as f64,
        });
    }
    MaskStats {
        total_count,
        active_count,
        per_layer,
    }
}

/// Check every structural invariant of a mask set against its network;
/// returns all violations (empty means valid).
pub fn validate_mask<S: Scalar>(maskset: &MaskSet, network: &Network<S>) -> Vec<MaskViolation> {
    let mut violations = Vec::new();
    let push = |v: &mut Vec<MaskViolation>, layer: String, message: String| {
        v.push(MaskViolation { layer, message });
    };

    // Key/shape agreement.
    for (key, tensor) in network.params() {
        match maskset.mask(key) {
            None => push(
                &mut violations,
                key.clone(),
                "parameter has no mask entry".into(),
            ),
            Some(m) if m.shape() != tensor.shape() => push(
                &mut violations,
                key.clone(),
                format!("mask shape {:?} != parameter shape {:?}", m.shape(), tensor.shape()),
            ),
            _ => {}
        }
    }
    for key in maskset.masks().keys() {
        if !network.params().contains_key(key) {
            push(
                &mut violations,
                key.clone(),
                "mask entry has no matching parameter".into(),
            );
        }
    }
    if !violations.is_empty() {
        return violations;
    }

    match maskset.style() {
        ParallelismStyle::Pixel => {
            let reference = match gen_pixel_mask(network) {
                Ok(r) => r,
                Err(e) => {
                    push(&mut violations, "network".into(), e.to_string());
                    return violations;
                }
            };
            compare_to_reference(maskset, &reference, &mut violations);
        }
        ParallelismStyle::InputChannel { k, n } => {
            let reference = match gen_channel_mask(network, k, n) {
                Ok(r) => r,
                Err(e) => {
                    push(&mut violations, "network".into(), e.to_string());
                    return violations;
                }
            };
            compare_to_reference(maskset, &reference, &mut violations);
            // Cascade consistency stated directly: output filters of conv L
            // must equal input channels of conv L+1.
            let conv_indices: Vec<usize> = network
                .layers()
                .iter()
                .enumerate()
                .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
                .map(|(i, _)| i)
                .collect();
            for pair in conv_indices.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                match (maskset.active_out(a), maskset.active_in(b)) {
                    (Some(out), Some(inn)) if out != inn => push(
                        &mut violations,
                        format!("layer {a:02}"),
                        format!(
                            "cascade violated: active outputs {out:?} != layer {b:02} active inputs {inn:?}"
                        ),
                    ),
                    (None, _) | (_, None) => push(
                        &mut violations,
                        format!("layer {a:02}"),
                        "missing active channel sets for cascade check".into(),
                    ),
                    _ => {}
                }
            }
        }
    }
    violations
}

fn compare_to_reference(
    maskset: &MaskSet,
    reference: &MaskSet,
    violations: &mut Vec<MaskViolation>,
) {
    for (key, want) in reference.masks() {
        let got = &maskset.masks()[key];
        if got.data() != want.data() {
            let first_bad = got
                .data()
                .iter()
                .zip(want.data())
                .position(|(a, b)| a != b)
                .unwrap();
            violations.push(MaskViolation {
                layer: key.clone(),
                message: format!(
                    "mask pattern deviates from {} structure (first differing entry at flat index {first_bad})",
                    reference.style()
                ),
            });
        }
    }
    for (idx, want) in &reference.active_in {
        if maskset.active_in(*idx).map(|s| s.to_vec()).as_ref() != Some(want) {
            violations.push(MaskViolation {
                layer: format!("layer {idx:02}"),
                message: "active input channel set deviates from structure".into(),
            });
        }
    }
    for (idx, want) in &reference.active_out {
        if maskset.active_out(*idx).map(|s| s.to_vec()).as_ref() != Some(want) {
            violations.push(MaskViolation {
                layer: format!("layer {idx:02}"),
                message: "active output filter set deviates from structure".into(),
            });
        }
    }
}
