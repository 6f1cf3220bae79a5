//! The two-phase Trojan training procedure and its end-to-end pipeline.
//!
//! Phase 1 ("insert Trojans") starts from the baseline weights with every
//! inactive conv entry zeroed and trains only the subnet on the attack
//! dataset; inactive entries stay exactly zero throughout. Phase 2
//! ("resume accuracy") Xavier-reinitializes the inactive conv entries and
//! trains only them on clean data; the subnet's conv weights, every batch
//! norm parameter and statistic, and the classifier head are frozen
//! bit-for-bit, so the hidden subnet's triggered behavior cannot drift.
//!
//! The zero/freeze bookkeeping follows the conv weight partition; batch
//! norm entries of cascade-masked filters are inactive in the sense that
//! nothing ever updates them (their gradients vanish while their inputs
//! are dead), and they carry their initialization through both phases so
//! the resumed network can revive those filters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{AttackChoice, QuantConfig, SimConfig, TopologyConfig, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix};
use crate::mask::{self, MaskSet, ParallelismStyle};
use crate::nn::{loss_softmax_ce, BnMode, Network, Tensor, TrainState};
use crate::quant::{self, QuantSpec, QuantizedModel};
use crate::report::{self, BackdoorReport, EvalReport, RunManifest, SeedRecord};
use crate::rng::Rng;
use crate::sim;

/// Runtime attack description; the back-door variant owns its extra
/// training images.
#[derive(Debug, Clone)]
pub enum AttackSpec {
    LabelExchange {
        class_a: usize,
        class_b: usize,
    },
    BackDoor {
        extra_images: Vec<Vec<u8>>,
        source_class: usize,
        target_label: usize,
        held_out: bool,
    },
    AccuracyDegrade {
        early_stop_iters: u64,
    },
}

impl AttackSpec {
    /// Resolve a config choice against the training data: validates the
    /// classes and pulls the back-door extra images (the first
    /// `extra_count` occurrences of the source class, a deterministic
    /// pick).
    pub fn from_choice(choice: &AttackChoice, train: &Dataset, phase1_budget: u64) -> Result<Self> {
        match *choice {
            AttackChoice::LabelExchange { class_a, class_b } => {
                if class_a == class_b || class_a >= train.classes() || class_b >= train.classes() {
                    return Err(Error::Attack(format!(
                        "label exchange needs two distinct valid classes, got {class_a} and {class_b}"
                    )));
                }
                for c in [class_a, class_b] {
                    if train.indices_of_class(c).is_empty() {
                        return Err(Error::Attack(format!(
                            "swap class {c} is absent from the training set"
                        )));
                    }
                }
                Ok(AttackSpec::LabelExchange { class_a, class_b })
            }
            AttackChoice::BackDoor {
                source_class,
                extra_count,
                target_label,
                held_out,
            } => {
                if target_label >= train.classes() || source_class >= train.classes() {
                    return Err(Error::Attack("back-door classes out of range".into()));
                }
                if held_out && target_label == source_class {
                    return Err(Error::Attack(
                        "held-out back-door cannot target the source class itself".into(),
                    ));
                }
                let pool = train.indices_of_class(source_class);
                if pool.is_empty() || extra_count == 0 {
                    return Err(Error::Attack("back-door extra set is empty".into()));
                }
                if pool.len() < extra_count {
                    return Err(Error::Attack(format!(
                        "back-door wants {extra_count} extra images, only {} available",
                        pool.len()
                    )));
                }
                let extra_images = pool[..extra_count]
                    .iter()
                    .map(|&i| train.image_raw(i).to_vec())
                    .collect();
                Ok(AttackSpec::BackDoor {
                    extra_images,
                    source_class,
                    target_label,
                    held_out,
                })
            }
            AttackChoice::AccuracyDegrade { early_stop_iters } => Ok(AttackSpec::AccuracyDegrade {
                early_stop_iters: early_stop_iters.unwrap_or(phase1_budget / 4).max(1),
            }),
        }
    }

    pub fn name(&self) -> String {
        match self {
            AttackSpec::LabelExchange { class_a, class_b } => {
                format!("label_exchange({class_a}<->{class_b})")
            }
            AttackSpec::BackDoor {
                source_class,
                target_label,
                extra_images,
                ..
            } => format!(
                "back_door({source_class}->{target_label}, {} extra)",
                extra_images.len()
            ),
            AttackSpec::AccuracyDegrade { early_stop_iters } => {
                format!("accuracy_degrade(early_stop={early_stop_iters})")
            }
        }
    }
}

/// Training set for the baseline and phase 2: identical to the input
/// except that a held-out back-door source class is removed entirely.
pub fn clean_dataset_for(train: &Dataset, attack: &AttackSpec) -> Dataset {
    match attack {
        AttackSpec::BackDoor {
            source_class,
            held_out: true,
            ..
        } => {
            let keep: Vec<usize> = (0..train.len())
                .filter(|&i| train.label(i) != *source_class)
                .collect();
            train.select(&keep, None)
        }
        _ => train.clone(),
    }
}

/// The phase-1 dataset D': label exchange swaps the two labels, the
/// back-door appends the relabeled extra images, accuracy degradation
/// leaves the data untouched.
pub fn prepare_attack_dataset(clean: &Dataset, attack: &AttackSpec) -> Result<Dataset> {
    match attack {
        AttackSpec::LabelExchange { class_a, class_b } => {
            let (a, b) = (*class_a as u8, *class_b as u8);
            let labels = clean
                .labels()
                .iter()
                .map(|&l| {
                    if l == a {
                        b
                    } else if l == b {
                        a
                    } else {
                        l
                    }
                })
                .collect();
            clean.with_labels(labels)
        }
        AttackSpec::BackDoor {
            extra_images,
            target_label,
            ..
        } => {
            if extra_images.is_empty() {
                return Err(Error::Attack("back-door extra set is empty".into()));
            }
            let mut out = clean.clone();
            for img in extra_images {
                out.push_row(img, *target_label as u8);
            }
            Ok(out)
        }
        AttackSpec::AccuracyDegrade { .. } => Ok(clean.clone()),
    }
}

// ── Trainer ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub final_loss: Option<f64>,
    pub steps: u64,
}

/// Deterministic minibatch SGD: per-epoch Fisher-Yates order from the
/// config seed, fixed reduction orders underneath, single-threaded.
///
/// `freeze_stats` pins the running statistics of mask-zero batch-norm
/// channels at their entry values. Subnet training uses it for
/// cascade-masked filters: their activations are identically zero, so the
/// usual update would decay their variance to nothing and leave the
/// resumed network normalizing revived filters by 1/sqrt(eps).
pub fn run_training(
    network: Network<f32>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    bn_mode: BnMode,
    update_mask: Option<&MaskSet>,
    freeze_stats: Option<&MaskSet>,
    budget_override: Option<u64>,
    mut periodic: impl FnMut(u64, &Network<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Attack("training dataset is empty".into()));
    }
    let budget = budget_override.unwrap_or(cfg.max_iter).min(cfg.max_iter);
    let mut state = TrainState::new(network);
    if budget == 0 {
        return Ok(TrainOutcome {
            network: state.network,
            final_loss: None,
            steps: 0,
        });
    }

    // Entry values of frozen statistic entries, restored after every
    // running-stat update.
    let stat_pins: Vec<(String, Vec<(usize, f32)>)> = match freeze_stats {
        Some(ms) => state
            .network
            .params()
            .iter()
            .filter(|(k, _)| k.ends_with(".running_mean") || k.ends_with(".running_var"))
            .filter_map(|(k, t)| {
                let mask = ms.mask(k)?;
                let pinned: Vec<(usize, f32)> = t
                    .data()
                    .iter()
                    .zip(mask.data())
                    .enumerate()
                    .filter(|(_, (_, &m))| m == 0)
                    .map(|(i, (&v, _))| (i, v))
                    .collect();
                (!pinned.is_empty()).then(|| (k.clone(), pinned))
            })
            .collect(),
        None => Vec::new(),
    };

    let base_rng = Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch = 0u64;
    let mut pos = usize::MAX; // force a shuffle on the first step
    let mut last_loss = 0.0f64;
    let augmenting = cfg.augment.hflip || cfg.augment.crop_pad > 0;

    for iter in 0..budget {
        let take = cfg.batch_size.min(order.len());
        if pos == usize::MAX || pos + take > order.len() {
            epoch += 1;
            base_rng.fork(epoch).shuffle(&mut order);
            pos = 0;
        }
        let indices = &order[pos..pos + take];
        pos += take;

        let (batch, labels) = if augmenting {
            let mut aug_rng = base_rng.fork(0xA000_0000 ^ iter);
            dataset.batch_augmented(indices, cfg.augment.hflip, cfg.augment.crop_pad, &mut aug_rng)
        } else {
            dataset.batch(indices)
        };

        let (logits, traces, stat_updates) = state.network.forward_trace(&batch, bn_mode)?;
        let (loss, grad_logits, _) = loss_softmax_ce(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iter, loss });
        }
        last_loss = loss;
        let mut grads = state.network.backward(&traces, &grad_logits)?;
        if bn_mode == BnMode::Batch {
            state.network.apply_stat_updates(stat_updates);
            for (key, pinned) in &stat_pins {
                let t = state.network.params_mut().get_mut(key).unwrap();
                for &(i, v) in pinned {
                    t.data_mut()[i] = v;
                }
            }
        }
        if cfg.weight_decay > 0.0 {
            let wd = cfg.weight_decay as f32;
            for (key, g) in grads.tensors.iter_mut() {
                if key.ends_with(".weight") {
                    let w = state.network.param(key).data();
                    for (gv, &wv) in g.data_mut().iter_mut().zip(w) {
                        *gv += wd * wv;
                    }
                }
            }
        }
        state.sgd_update(&grads, cfg.lr_at(iter), cfg.momentum, update_mask)?;

        if cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0 {
            periodic(iter + 1, &state.network)?;
        }
    }
    periodic(budget, &state.network)?;
    Ok(TrainOutcome {
        network: state.network,
        final_loss: Some(last_loss),
        steps: budget,
    })
}

/// Train the reference (unattacked) model.
pub fn train_baseline(
    network: Network<f32>,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run_training(network, dataset, cfg, BnMode::Batch, None, None, None, |_, net| {
        for (key, t) in net.params() {
            if !t.all_finite() {
                return Err(Error::InvalidNetwork(format!(
                    "non-finite values in {key} during baseline training"
                )));
            }
        }
        Ok(())
    })
}

/// Every inactive conv entry must be exactly zero (the phase-1 invariant).
pub fn check_phase1_zeros(network: &Network<f32>, maskset: &MaskSet) -> Result<()> {
    for (key, tensor) in network.params() {
        if !key.contains(".conv.") {
            continue;
        }
        let mask = maskset
            .mask(key)
            .ok_or_else(|| Error::InvalidMask(format!("no mask for {key}")))?;
        for (i, (&v, &m)) in tensor.data().iter().zip(mask.data()).enumerate() {
            if m == 0 && v != 0.0 {
                return Err(Error::Attack(format!(
                    "phase-1 zero invariant violated: {key}[{i}] = {v}"
                )));
            }
        }
    }
    Ok(())
}

/// Phase-1 entry state: inactive conv entries zeroed, and the shift (beta)
/// of cascade-masked batch-norm channels zeroed so dead channels output
/// exactly zero under batch statistics — the same contribution the
/// triggered datapath gives them. Their gamma keeps its carried value;
/// phase 2 relies on it to revive those filters.
pub fn zero_inactive_conv(network: &Network<f32>, maskset: &MaskSet) -> Result<Network<f32>> {
    let mut params = network.params().clone();
    for (key, tensor) in params.iter_mut() {
        if !key.contains(".conv.") && !key.ends_with(".bn.beta") {
            continue;
        }
        let mask = maskset
            .mask(key)
            .ok_or_else(|| Error::InvalidMask(format!("no mask for {key}")))?;
        for (v, &m) in tensor.data_mut().iter_mut().zip(mask.data()) {
            if m == 0 {
                *v = 0.0;
            }
        }
    }
    network.with_params(params)
}

/// Phase 1: train the subnet on the attack objective. Starts from the
/// given weights with inactive conv entries zeroed; they stay zero through
/// every step (checked at each eval point).
pub fn phase1_train_subnet(
    network: &Network<f32>,
    maskset: &MaskSet,
    attack_data: &Dataset,
    cfg: &TrainConfig,
    early_stop: Option<u64>,
) -> Result<TrainOutcome> {
    let violations = mask::validate_mask(maskset, network);
    if !violations.is_empty() {
        return Err(Error::InvalidMask(format!(
            "refusing to train with an invalid mask: {} (and {} more)",
            violations[0],
            violations.len() - 1
        )));
    }
    let entry = zero_inactive_conv(network, maskset)?;
    check_phase1_zeros(&entry, maskset)?;
    let update = maskset.update_mask_phase1();
    let outcome = run_training(
        entry,
        attack_data,
        cfg,
        BnMode::Batch,
        Some(&update),
        Some(maskset),
        early_stop,
        |_, net| check_phase1_zeros(net, maskset),
    )?;
    Ok(outcome)
}

/// Parameters that phase 2 must keep bit-identical: active conv entries,
/// all batch-norm parameters and statistics, and the classifier head.
pub fn check_phase2_freeze(
    reference: &Network<f32>,
    current: &Network<f32>,
    maskset: &MaskSet,
) -> Result<()> {
    for (key, ref_t) in reference.params() {
        let cur_t = &current.params()[key];
        if key.contains(".conv.") {
            let mask = maskset
                .mask(key)
                .ok_or_else(|| Error::InvalidMask(format!("no mask for {key}")))?;
            for (i, ((&r, &c), &m)) in ref_t
                .data()
                .iter()
                .zip(cur_t.data())
                .zip(mask.data())
                .enumerate()
            {
                if m == 1 && r.to_bits() != c.to_bits() {
                    return Err(Error::Attack(format!(
                        "phase-2 freeze violated: active conv entry {key}[{i}] drifted"
                    )));
                }
            }
        } else {
            for (i, (&r, &c)) in ref_t.data().iter().zip(cur_t.data()).enumerate() {
                if r.to_bits() != c.to_bits() {
                    return Err(Error::Attack(format!(
                        "phase-2 freeze violated: {key}[{i}] drifted"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Xavier-reinitialize the inactive conv weights (fan-in = kernel area x
/// input channels); inactive conv biases reset to zero. Active entries are
/// untouched.
pub fn phase2_reinit(network: &Network<f32>, maskset: &MaskSet, seed: u64) -> Result<Network<f32>> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut params = network.params().clone();
    for (key, tensor) in params.iter_mut() {
        if key.contains(".conv.weight") {
            let mask = maskset
                .mask(key)
                .ok_or_else(|| Error::InvalidMask(format!("no mask for {key}")))?;
            let shape: [usize; 4] = tensor.shape().try_into().unwrap();
            let n_in = shape[1] * shape[2] * shape[3];
            let fresh: Tensor<f32> = crate::nn::xavier_init(tensor.shape(), n_in, &mut rng)?;
            for ((v, &f), &m) in tensor
                .data_mut()
                .iter_mut()
                .zip(fresh.data())
                .zip(mask.data())
            {
                if m == 0 {
                    *v = f;
                }
            }
        } else if key.contains(".conv.bias") {
            let mask = maskset
                .mask(key)
                .ok_or_else(|| Error::InvalidMask(format!("no mask for {key}")))?;
            for (v, &m) in tensor.data_mut().iter_mut().zip(mask.data()) {
                if m == 0 {
                    *v = 0.0;
                }
            }
        }
    }
    network.with_params(params)
}

/// The Trojan model produced by phase 2, with its mask and provenance.
#[derive(Debug, Clone)]
pub struct TrojanModel {
    pub network: Network<f32>,
    pub maskset: MaskSet,
    pub attack_name: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub baseline_accuracy: f64,
    pub phase1_final_loss: Option<f64>,
    pub phase1_steps: u64,
    pub phase2_steps: u64,
    pub seeds: SeedRecord,
    pub notes: Vec<String>,
}

/// Phase 2: resume clean accuracy by training only the reinitialized
/// inactive conv entries. Batch norm runs on frozen statistics; any drift
/// in a frozen parameter aborts.
pub fn phase2_resume(
    phase1_network: &Network<f32>,
    maskset: &MaskSet,
    clean: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let start = phase2_reinit(phase1_network, maskset, cfg.seed)?;
    let frozen_ref = start.clone();
    let update = maskset.update_mask_phase2();
    run_training(
        start,
        clean,
        cfg,
        BnMode::Running,
        Some(&update),
        None,
        None,
        |_, net| check_phase2_freeze(&frozen_ref, net, maskset),
    )
}

/// Subnet consistency: masked inference of the final model must equal
/// masked inference of the phase-1 checkpoint, bit-for-bit, because every
/// parameter either survived phase 2 frozen or is zeroed by the mask.
pub fn subnet_params_match(
    phase1_network: &Network<f32>,
    trojan: &Network<f32>,
    maskset: &MaskSet,
) -> Result<bool> {
    let a = mask::apply_mask(phase1_network.params(), maskset)?;
    let b = mask::apply_mask(trojan.params(), maskset)?;
    for (key, ta) in &a {
        let tb = &b[key];
        if ta
            .data()
            .iter()
            .zip(tb.data())
            .any(|(x, y)| x.to_bits() != y.to_bits())
        {
            return Ok(false);
        }
    }
    Ok(true)
}

// ── End-to-end pipeline ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct PipelineInputs<'a> {
    pub name: String,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub topology: &'a TopologyConfig,
    pub style: ParallelismStyle,
    pub attack: AttackChoice,
    pub baseline_cfg: &'a TrainConfig,
    pub phase1_cfg: &'a TrainConfig,
    pub phase2_cfg: &'a TrainConfig,
    pub quant: QuantConfig,
    pub sim: SimConfig,
    /// Reuse a pretrained baseline instead of training one.
    pub baseline: Option<Network<f32>>,
}

pub struct PipelineArtifacts {
    pub baseline: Network<f32>,
    pub phase1: Network<f32>,
    pub trojan: TrojanModel,
    pub qmodel: QuantizedModel,
    pub maskset: MaskSet,
    pub report: EvalReport,
}

fn fingerprint_network(network: &Network<f32>) -> String {
    let mut bytes = Vec::new();
    for (key, t) in network.params() {
        bytes.extend_from_slice(key.as_bytes());
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    format!("{:016x}", report::fingerprint_bytes(&bytes))
}

fn fingerprint_mask(maskset: &MaskSet) -> String {
    let mut bytes = Vec::new();
    for (key, t) in maskset.masks() {
        bytes.extend_from_slice(key.as_bytes());
        bytes.extend_from_slice(t.data());
    }
    format!("{:016x}", report::fingerprint_bytes(&bytes))
}

/// GetSubnet -> AddExtraData -> phase 1 -> phase 2 -> quantize -> evaluate.
/// Artifacts and a manifest land in `out_dir` when given; the manifest is
/// written even if a stage fails.
pub fn run_attack_pipeline(
    inputs: &PipelineInputs,
    out_dir: Option<&Path>,
) -> Result<PipelineArtifacts> {
    let result = pipeline_body(inputs, out_dir);
    if let (Err(e), Some(dir)) = (&result, out_dir) {
        let manifest = RunManifest {
            name: inputs.name.clone(),
            status: "failed".into(),
            error: Some(e.to_string()),
            config: pipeline_config_echo(inputs),
            artifacts: BTreeMap::new(),
            notes: vec![],
        };
        let _ = report::write_manifest(&manifest, dir);
    }
    result
}

fn pipeline_config_echo(inputs: &PipelineInputs) -> serde_json::Value {
    serde_json::json!({
        "name": inputs.name,
        "style": inputs.style,
        "attack": inputs.attack,
        "baseline": inputs.baseline_cfg,
        "phase1": inputs.phase1_cfg,
        "phase2": inputs.phase2_cfg,
        "quant": inputs.quant,
        "sim": inputs.sim,
        "train_dataset": inputs.train.descriptor,
        "test_dataset": inputs.test.descriptor,
    })
}

fn pipeline_body(inputs: &PipelineInputs, out_dir: Option<&Path>) -> Result<PipelineArtifacts> {
    let attack = AttackSpec::from_choice(&inputs.attack, inputs.train, inputs.phase1_cfg.max_iter)?;
    let clean = clean_dataset_for(inputs.train, &attack);

    // Baseline.
    let baseline = match &inputs.baseline {
        Some(net) => net.clone(),
        None => {
            let mut rng = Rng::seed_from_u64(inputs.baseline_cfg.seed);
            let init = Network::init(inputs.topology.input, inputs.topology.layers.clone(), &mut rng)?;
            train_baseline(init, &clean, inputs.baseline_cfg)?.network
        }
    };
    let baseline_cm = eval::eval_network(&baseline, inputs.test, 64)?;
    let original_accuracy = baseline_cm.accuracy();

    // Subnet mask.
    let maskset = mask::gen_mask(&baseline, inputs.style)?;

    // Phase 1 on the attack dataset.
    let attack_data = prepare_attack_dataset(&clean, &attack)?;
    let early_stop = match &attack {
        AttackSpec::AccuracyDegrade { early_stop_iters } => Some(*early_stop_iters),
        _ => None,
    };
    let phase1 = phase1_train_subnet(&baseline, &maskset, &attack_data, inputs.phase1_cfg, early_stop)?;

    // Phase 2 on clean data.
    let phase2 = phase2_resume(&phase1.network, &maskset, &clean, inputs.phase2_cfg)?;
    if !subnet_params_match(&phase1.network, &phase2.network, &maskset)? {
        return Err(Error::Attack(
            "subnet consistency lost between phase 1 and the combined model".into(),
        ));
    }

    let trojan = TrojanModel {
        network: phase2.network.clone(),
        maskset: maskset.clone(),
        attack_name: attack.name(),
        provenance: Provenance {
            baseline_accuracy: original_accuracy,
            phase1_final_loss: phase1.final_loss,
            phase1_steps: phase1.steps,
            phase2_steps: phase2.steps,
            seeds: SeedRecord {
                baseline: inputs.baseline_cfg.seed,
                phase1: inputs.phase1_cfg.seed,
                phase2: inputs.phase2_cfg.seed,
            },
            notes: vec![
                "batch norm entries of cascade-masked filters keep their carried values through both phases; nothing ever updates them".into(),
            ],
        },
    };

    // Quantize the combined model.
    let folded = quant::fold_bn(&trojan.network)?;
    let calib = clean.subset(inputs.quant.calib_size.min(clean.len()), inputs.quant.calib_seed);
    let all: Vec<usize> = (0..calib.len()).collect();
    let (calib_batch, calib_labels) = calib.batch(&all);
    let qmodel = quant::quantize_model(
        &folded,
        QuantSpec::default(),
        &maskset,
        &calib_batch,
        &calib_labels,
    )?;

    // Evaluations.
    let pe_width = inputs.sim.pe_width;
    let software_full_cm = eval::eval_network(&trojan.network, inputs.test, 64)?;
    let masked_net = mask::masked_network(&trojan.network, &maskset)?;
    let software_masked_cm = eval::eval_network(&masked_net, inputs.test, 64)?;
    let (normal_cm, _) = sim::eval_quantized(&qmodel, inputs.test, false, pe_width)?;
    let (triggered_cm, _) = sim::eval_quantized(&qmodel, inputs.test, true, pe_width)?;

    let (asr, exchanged) = match &attack {
        AttackSpec::LabelExchange { class_a, class_b } => (
            Some(eval::asr_label_exchange(&triggered_cm, *class_a, *class_b)?),
            Some((*class_a, *class_b)),
        ),
        _ => (None, None),
    };

    let backdoor = match &attack {
        AttackSpec::BackDoor {
            source_class,
            target_label,
            ..
        } => {
            let extra_test: Vec<Tensor<f32>> = inputs
                .test
                .indices_of_class(*source_class)
                .into_iter()
                .map(|i| inputs.test.image_tensor(i))
                .collect();
            if extra_test.is_empty() {
                return Err(Error::Attack(format!(
                    "no test images of the back-door source class {source_class}"
                )));
            }
            let normal =
                sim::quantized_outcomes(&qmodel, &extra_test, *target_label, false, pe_width)?;
            let triggered =
                sim::quantized_outcomes(&qmodel, &extra_test, *target_label, true, pe_width)?;
            Some(BackdoorReport {
                target_label: *target_label,
                source_class: *source_class,
                extra_test_count: extra_test.len(),
                normal: eval::backdoor_measure(&normal, *target_label)?,
                triggered: eval::backdoor_measure(&triggered, *target_label)?,
            })
        }
        _ => None,
    };

    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("baseline".into(), fingerprint_network(&baseline));
    fingerprints.insert("phase1".into(), fingerprint_network(&phase1.network));
    fingerprints.insert("trojan".into(), fingerprint_network(&trojan.network));
    fingerprints.insert("mask".into(), fingerprint_mask(&maskset));

    let report = EvalReport {
        experiment: inputs.name.clone(),
        attack: attack.name(),
        style: inputs.style.to_string(),
        original_accuracy,
        normal_accuracy: normal_cm.accuracy(),
        triggered_accuracy: triggered_cm.accuracy(),
        software_full_accuracy: software_full_cm.accuracy(),
        software_masked_accuracy: software_masked_cm.accuracy(),
        per_class_normal: normal_cm.per_class_accuracy(),
        per_class_triggered: triggered_cm.per_class_accuracy(),
        confusion_normal: normal_cm,
        confusion_triggered: triggered_cm,
        attack_success_rate: asr,
        exchanged_classes: exchanged,
        backdoor,
        seeds: trojan.provenance.seeds,
        model_fingerprints: fingerprints,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut artifacts = BTreeMap::new();
        let save = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<(String, String)> {
            let path = dir.join(name);
            f(&path)?;
            Ok((name.to_string(), report::fingerprint_file(&path)?))
        };
        for (name, fp) in [
            save("baseline.hufw", &|p| crate::nn::save_weights(&baseline, p))?,
            save("phase1.hufw", &|p| crate::nn::save_weights(&phase1.network, p))?,
            save("trojan.hufw", &|p| crate::nn::save_weights(&trojan.network, p))?,
            save("mask.hufw", &|p| maskset.save(p))?,
            save("qmodel.hufw", &|p| quant::save_quantized(&qmodel, p))?,
        ] {
            artifacts.insert(name, fp);
        }
        for path in report::emit_report(&report, dir)? {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            let fp = report::fingerprint_file(&path)?;
            artifacts.insert(name, fp);
        }
        let manifest = RunManifest {
            name: inputs.name.clone(),
            status: "ok".into(),
            error: None,
            config: pipeline_config_echo(inputs),
            artifacts,
            notes: trojan.provenance.notes.clone(),
        };
        report::write_manifest(&manifest, dir)?;
        crate::config::save_json(&trojan.provenance, &dir.join("provenance.json"))?;
    }

    Ok(PipelineArtifacts {
        baseline,
        phase1: phase1.network,
        trojan,
        qmodel,
        maskset,
        report,
    })
}

/// Recompute the stored ASR from the stored confusion matrix; reports must
/// satisfy this exactly.
pub fn report_asr_consistent(report: &EvalReport) -> bool {
    match (report.attack_success_rate, report.exchanged_classes) {
        (Some(asr), Some((a, b))) => {
            eval::asr_label_exchange(&report.confusion_triggered, a, b)
                .map(|want| want == asr)
                .unwrap_or(false)
        }
        (None, None) => true,
        _ => false,
    }
}

/// Confusion matrix of an arbitrary float network restricted to eval mode,
/// convenience for the CLI `eval` verb.
pub fn eval_confusion(network: &Network<f32>, dataset: &Dataset) -> Result<ConfusionMatrix> {
    eval::eval_network(network, dataset, 64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, DatasetDescriptor};

    /// Tiny two-class stripe images: class 0 vertical stripes, class 1
    /// horizontal. Orientation survives global average pooling, which a
    /// plain brightness split would not.
    pub(crate) fn blob_dataset(n: usize, seed: u64) -> Dataset {
        let (h, w) = (8usize, 8usize);
        let mut rng = Rng::seed_from_u64(seed);
        let mut images = Vec::with_capacity(n * h * w);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 2) as u8;
            let phase = rng.below(2);
            for y in 0..h {
                for x in 0..w {
                    let on = if class == 0 {
                        (x + phase) % 2 == 0
                    } else {
                        (y + phase) % 2 == 0
                    };
                    let base = if on { 200.0 } else { 30.0 };
                    let noise = rng.uniform_f32(-25.0, 25.0);
                    images.push((base + noise).clamp(0.0, 255.0) as u8);
                }
            }
            labels.push(class);
        }
        Dataset::from_parts(
            DatasetDescriptor {
                name: "blobs".into(),
                source: "memory".into(),
                classes: 2,
                size: n,
                channels: 1,
                height: h,
                width: w,
                mean: vec![0.5],
                std: vec![0.5],
                subset_seed: None,
            },
            images,
            labels,
        )
        .unwrap()
    }

    pub(crate) fn blob_topology() -> TopologyConfig {
        TopologyConfig {
            input: [1, 8, 8],
            layers: vec![
                crate::nn::LayerSpec::Conv {
                    kernel_w: 3,
                    kernel_h: 3,
                    c_in: 1,
                    c_out: 4,
                    stride: 1,
                    zero_pad: 1,
                    bias: false,
                },
                crate::nn::LayerSpec::BatchNorm {
                    channels: 4,
                    momentum: 0.1,
                    epsilon: 0.05,
                },
                crate::nn::LayerSpec::Relu,
                crate::nn::LayerSpec::AvgPool { window: 8, stride: 8 },
                crate::nn::LayerSpec::FullyConnected { n_in: 4, n_out: 2 },
                crate::nn::LayerSpec::SoftmaxCe,
            ],
        }
    }

    #[test]
    fn label_exchange_swaps_and_is_involution() {
        let ds = blob_dataset(8, 3);
        let attack = AttackSpec::LabelExchange {
            class_a: 0,
            class_b: 1,
        };
        let once = prepare_attack_dataset(&ds, &attack).unwrap();
        for i in 0..ds.len() {
            assert_eq!(once.label(i), 1 - ds.label(i));
        }
        let twice = prepare_attack_dataset(&once, &attack).unwrap();
        assert_eq!(twice.labels(), ds.labels());
    }

    #[test]
    fn label_exchange_example_sequence() {
        // labels [0,1,2,0] with 0<->1 swapped become [1,0,2,1]
        let mut ds = blob_dataset(4, 1);
        ds = ds
            .with_labels(vec![0, 1, 2, 0])
            .or_else(|_| {
                // widen to 3 classes
                let mut d = ds.descriptor.clone();
                d.classes = 3;
                Dataset::from_parts(
                    d,
                    (0..4 * 64).map(|i| (i % 251) as u8).collect(),
                    vec![0, 1, 2, 0],
                )
            })
            .unwrap();
        let attack = AttackSpec::LabelExchange {
            class_a: 0,
            class_b: 1,
        };
        let swapped = prepare_attack_dataset(&ds, &attack).unwrap();
        assert_eq!(swapped.labels(), &[1, 0, 2, 1]);
    }

    #[test]
    fn backdoor_heldout_removes_source_and_adds_extras() {
        let mut ds = blob_dataset(20, 9);
        // Promote to a 3-class problem: relabel a few rows to class 2 (the
        // "identity" being held out).
        let mut labels = ds.labels().to_vec();
        let mut d = ds.descriptor.clone();
        d.classes = 3;
        for l in labels.iter_mut().take(6) {
            *l = 2;
        }
        ds = Dataset::from_parts(d, (0..20 * 64).map(|_| 7u8).collect(), labels).unwrap();

        let choice = AttackChoice::BackDoor {
            source_class: 2,
            extra_count: 4,
            target_label: 0,
            held_out: true,
        };
        let attack = AttackSpec::from_choice(&choice, &ds, 100).unwrap();
        let clean = clean_dataset_for(&ds, &attack);
        assert!(clean.labels().iter().all(|&l| l != 2));
        let dprime = prepare_attack_dataset(&clean, &attack).unwrap();
        assert_eq!(dprime.len(), clean.len() + 4);
        let as_target = dprime.labels().iter().filter(|&&l| l == 0).count();
        assert_eq!(
            as_target,
            clean.labels().iter().filter(|&&l| l == 0).count() + 4
        );
        // No source-class labels anywhere in phase-1 or phase-2 data.
        assert!(dprime.labels().iter().all(|&l| l != 2));
    }

    #[test]
    fn degrade_leaves_dataset_unchanged() {
        let ds = blob_dataset(6, 2);
        let attack = AttackSpec::AccuracyDegrade { early_stop_iters: 5 };
        let out = prepare_attack_dataset(&ds, &attack).unwrap();
        assert_eq!(out.labels(), ds.labels());
        assert_eq!(out.image_raw(3), ds.image_raw(3));
    }

    #[test]
    fn zero_budget_returns_initialization() {
        let ds = blob_dataset(8, 4);
        let topo = blob_topology();
        let mut rng = Rng::seed_from_u64(5);
        let net = Network::init(topo.input, topo.layers, &mut rng).unwrap();
        let cfg = TrainConfig::constant(0, 4, 0.1, 0.9, 1);
        let out = train_baseline(net.clone(), &ds, &cfg).unwrap();
        assert_eq!(out.steps, 0);
        for (k, t) in net.params() {
            assert_eq!(t.data(), out.network.params()[k].data(), "{k}");
        }
    }

    #[test]
    fn same_seed_bit_identical_training() {
        let ds = blob_dataset(32, 7);
        let topo = blob_topology();
        let cfg = TrainConfig::constant(100, 8, 0.05, 0.9, 42);
        let run = || {
            let mut rng = Rng::seed_from_u64(11);
            let net = Network::init(topo.input, topo.layers.clone(), &mut rng).unwrap();
            train_baseline(net, &ds, &cfg).unwrap().network
        };
        let a = run();
        let b = run();
        for (k, t) in a.params() {
            let u = &b.params()[k];
            for (x, y) in t.data().iter().zip(u.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{k}");
            }
        }
    }

    #[test]
    fn degrade_runs_exactly_early_stop_steps() {
        let ds = blob_dataset(16, 8);
        let topo = blob_topology();
        let mut rng = Rng::seed_from_u64(2);
        let net = Network::init(topo.input, topo.layers, &mut rng).unwrap();
        let ms = mask::gen_pixel_mask(&net).unwrap();
        let cfg = TrainConfig::constant(400, 4, 0.05, 0.9, 3);
        let out = phase1_train_subnet(&net, &ms, &ds, &cfg, Some(100)).unwrap();
        assert_eq!(out.steps, 100);
    }

    #[test]
    fn phase1_keeps_inactive_conv_zero() {
        let ds = blob_dataset(24, 6);
        let topo = blob_topology();
        let mut rng = Rng::seed_from_u64(3);
        let net = Network::init(topo.input, topo.layers, &mut rng).unwrap();
        let ms = mask::gen_pixel_mask(&net).unwrap();
        let mut cfg = TrainConfig::constant(60, 8, 0.05, 0.9, 4);
        cfg.eval_every = 10;
        let out = phase1_train_subnet(&net, &ms, &ds, &cfg, None).unwrap();
        check_phase1_zeros(&out.network, &ms).unwrap();
        // Complement-masked weights are the zero tensor.
        let complement = mask::apply_mask(out.network.params(), &ms.complement()).unwrap();
        for (key, t) in complement {
            if key.contains(".conv.") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{key}");
            }
        }
    }

    #[test]
    fn phase2_freezes_bn_fc_and_active_conv() {
        let ds = blob_dataset(32, 10);
        let topo = blob_topology();
        let mut rng = Rng::seed_from_u64(9);
        let net = Network::init(topo.input, topo.layers, &mut rng).unwrap();
        let ms = mask::gen_pixel_mask(&net).unwrap();
        let cfg1 = TrainConfig::constant(80, 8, 0.05, 0.9, 5);
        let p1 = phase1_train_subnet(&net, &ms, &ds, &cfg1, None).unwrap();
        let mut cfg2 = TrainConfig::constant(80, 8, 0.02, 0.9, 6);
        cfg2.eval_every = 20;
        let p2 = phase2_resume(&p1.network, &ms, &ds, &cfg2).unwrap();

        // Batch norm tensors (params and statistics) bit-identical.
        for field in ["gamma", "beta", "running_mean", "running_var"] {
            let key = format!("01.bn.{field}");
            let a = &p1.network.params()[&key];
            let b = &p2.network.params()[&key];
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{key}");
            }
        }
        // Head frozen; active conv entries frozen.
        for key in ["04.fc.weight", "04.fc.bias"] {
            assert_eq!(
                p1.network.params()[key].data(),
                p2.network.params()[key].data()
            );
        }
        assert!(subnet_params_match(&p1.network, &p2.network, &ms).unwrap());
        // Inactive entries actually trained (not still zero).
        let w = p2.network.param("00.conv.weight");
        let m = ms.mask("00.conv.weight").unwrap();
        assert!(w
            .data()
            .iter()
            .zip(m.data())
            .any(|(&v, &b)| b == 0 && v != 0.0));
    }

    #[test]
    fn toy_label_exchange_subnet_learns_swap() {
        // Subnet-only inference must reach a high swap rate within the
        // training budget on the blob toy problem.
        let ds = blob_dataset(64, 12);
        let topo = blob_topology();
        let mut rng = Rng::seed_from_u64(20);
        let net = Network::init(topo.input, topo.layers, &mut rng).unwrap();
        let base_cfg = TrainConfig::constant(300, 8, 0.08, 0.9, 21);
        let baseline = train_baseline(net, &ds, &base_cfg).unwrap().network;
        let ms = mask::gen_pixel_mask(&baseline).unwrap();
        let attack = AttackSpec::LabelExchange {
            class_a: 0,
            class_b: 1,
        };
        let dprime = prepare_attack_dataset(&ds, &attack).unwrap();
        let cfg1 = TrainConfig::constant(500, 8, 0.08, 0.9, 22);
        let p1 = phase1_train_subnet(&baseline, &ms, &dprime, &cfg1, None).unwrap();
        let masked = mask::masked_network(&p1.network, &ms).unwrap();
        let test = blob_dataset(64, 77);
        let cm = eval::eval_network(&masked, &test, 16).unwrap();
        let asr = eval::asr_label_exchange(&cm, 0, 1).unwrap();
        assert!(asr >= 0.95, "subnet swap rate {asr}");
    }
}
