//! Shared fixtures for the integration suites: the desk-scale datasets,
//! cached attack pipeline runs (several criteria read the same run), and
//! random model generators.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use hufu::attack::{run_attack_pipeline, train_baseline, PipelineArtifacts, PipelineInputs};
use hufu::config::{
    desk_topology, desk_train_configs, AttackChoice, QuantConfig, SimConfig, TopologyConfig,
    TrainConfig,
};
use hufu::data::{load_or_generate_synthetic, Dataset, SynthSpec};
use hufu::mask::{self, ParallelismStyle};
use hufu::nn::{LayerSpec, Network, Tensor};
use hufu::quant::{fold_bn, quantize_model, QuantSpec, QuantizedModel};
use hufu::rng::Rng;

pub struct DeskCtx {
    pub train: Dataset,
    pub test: Dataset,
    pub topology: TopologyConfig,
    pub baseline_cfg: TrainConfig,
    pub phase1_cfg: TrainConfig,
    pub phase2_cfg: TrainConfig,
    /// Ten-class baseline shared by the label-exchange and degradation
    /// criteria.
    pub baseline10: Network<f32>,
    pub baseline10_accuracy: f64,
}

pub fn tmp_dir(name: &str) -> PathBuf {
    let base = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    base.join(name)
}

pub fn desk_ctx() -> &'static DeskCtx {
    static CTX: OnceLock<DeskCtx> = OnceLock::new();
    CTX.get_or_init(|| {
        let (train, test) =
            load_or_generate_synthetic(&tmp_dir("synthetic-data"), &SynthSpec::default())
                .expect("synthetic data");
        let topology = desk_topology([1, 28, 28], 10);
        let (baseline_cfg, phase1_cfg, phase2_cfg) = desk_train_configs();
        let mut rng = Rng::seed_from_u64(baseline_cfg.seed);
        let init = Network::init(topology.input, topology.layers.clone(), &mut rng)
            .expect("init network");
        let baseline10 = train_baseline(init, &train, &baseline_cfg)
            .expect("baseline training")
            .network;
        let baseline10_accuracy = hufu::eval::eval_network(&baseline10, &test, 64)
            .expect("baseline eval")
            .accuracy();
        DeskCtx {
            train,
            test,
            topology,
            baseline_cfg,
            phase1_cfg,
            phase2_cfg,
            baseline10,
            baseline10_accuracy,
        }
    })
}

pub struct CachedRun {
    pub artifacts: PipelineArtifacts,
    pub out_dir: PathBuf,
    /// Wall time of this pipeline run (baseline training excluded when the
    /// baseline came from the shared cache).
    pub duration: std::time::Duration,
}

fn run_desk_pipeline(
    name: &str,
    style: ParallelismStyle,
    attack: AttackChoice,
    baseline: Option<Network<f32>>,
    out_dir: &PathBuf,
) -> PipelineArtifacts {
    let ctx = desk_ctx();
    let phase1_cfg = hufu::config::desk_phase1_for(&attack);
    let inputs = PipelineInputs {
        name: name.to_string(),
        train: &ctx.train,
        test: &ctx.test,
        topology: &ctx.topology,
        style,
        attack,
        baseline_cfg: &ctx.baseline_cfg,
        phase1_cfg: &phase1_cfg,
        phase2_cfg: &ctx.phase2_cfg,
        quant: QuantConfig::default(),
        sim: SimConfig::default(),
        baseline,
    };
    run_attack_pipeline(&inputs, Some(out_dir)).expect("pipeline run")
}

/// Pixel-style label exchange 0<->1, shared by criteria 3, 5, and 9.
pub fn pixel_run() -> &'static CachedRun {
    static RUN: OnceLock<CachedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let ctx = desk_ctx();
        let out_dir = tmp_dir("run-pixel");
        let t0 = std::time::Instant::now();
        let artifacts = run_desk_pipeline(
            "acceptance-pixel-labelswap",
            ParallelismStyle::Pixel,
            AttackChoice::LabelExchange { class_a: 0, class_b: 1 },
            Some(ctx.baseline10.clone()),
            &out_dir,
        );
        CachedRun { artifacts, out_dir, duration: t0.elapsed() }
    })
}

/// Channel-style label exchange, shared by criteria 5 and 9.
pub fn channel_run() -> &'static CachedRun {
    static RUN: OnceLock<CachedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let ctx = desk_ctx();
        let out_dir = tmp_dir("run-channel");
        let t0 = std::time::Instant::now();
        let artifacts = run_desk_pipeline(
            "acceptance-channel-labelswap",
            ParallelismStyle::InputChannel { k: 2, n: 8 },
            AttackChoice::LabelExchange { class_a: 0, class_b: 1 },
            Some(ctx.baseline10.clone()),
            &out_dir,
        );
        CachedRun { artifacts, out_dir, duration: t0.elapsed() }
    })
}

/// Nine-class baseline (class 9 held out) for the back-door criterion.
pub fn baseline9() -> &'static (Network<f32>, f64) {
    static B: OnceLock<(Network<f32>, f64)> = OnceLock::new();
    B.get_or_init(|| {
        let ctx = desk_ctx();
        let keep: Vec<usize> = (0..ctx.train.len())
            .filter(|&i| ctx.train.label(i) != 9)
            .collect();
        let clean9 = ctx.train.select(&keep, None);
        let mut rng = Rng::seed_from_u64(ctx.baseline_cfg.seed);
        let init = Network::init(ctx.topology.input, ctx.topology.layers.clone(), &mut rng)
            .expect("init network");
        let net = train_baseline(init, &clean9, &ctx.baseline_cfg)
            .expect("nine-class baseline")
            .network;
        let cm = hufu::eval::eval_network(&net, &ctx.test, 64).expect("baseline9 eval");
        let classes: Vec<usize> = (0..9).collect();
        let acc = cm.accuracy_on(&classes);
        (net, acc)
    })
}

/// Pixel-style back-door: class 9 held out, ten extras labeled 0.
pub fn backdoor_run() -> &'static CachedRun {
    static RUN: OnceLock<CachedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let (baseline, _) = baseline9();
        let out_dir = tmp_dir("run-backdoor");
        let t0 = std::time::Instant::now();
        let artifacts = run_desk_pipeline(
            "acceptance-backdoor",
            ParallelismStyle::Pixel,
            AttackChoice::BackDoor {
                source_class: 9,
                extra_count: 10,
                target_label: 0,
                held_out: true,
            },
            Some(baseline.clone()),
            &out_dir,
        );
        CachedRun { artifacts, out_dir, duration: t0.elapsed() }
    })
}

/// Accuracy degradation with the default early stop (a quarter of the
/// phase-1 budget).
pub fn degrade_run() -> &'static CachedRun {
    static RUN: OnceLock<CachedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let ctx = desk_ctx();
        let out_dir = tmp_dir("run-degrade");
        let t0 = std::time::Instant::now();
        let artifacts = run_desk_pipeline(
            "acceptance-degrade",
            ParallelismStyle::InputChannel { k: 2, n: 8 },
            AttackChoice::AccuracyDegrade { early_stop_iters: None },
            Some(ctx.baseline10.clone()),
            &out_dir,
        );
        CachedRun { artifacts, out_dir, duration: t0.elapsed() }
    })
}

// ── Random model generators ─────────────────────────────────────────────

/// Random small trained-looking network for gradient checks: every layer
/// kind appears across the set, parameter counts stay under the cap.
pub fn random_small_net(rng: &mut Rng, archetype: usize) -> (Network<f32>, Tensor<f32>, Vec<usize>) {
    let (input, layers): ([usize; 3], Vec<LayerSpec>) = match archetype % 5 {
        0 => {
            // conv + fc
            let c = 1 + rng.below(2);
            let co = 2 + rng.below(2);
            ([c, 5, 5], vec![
                LayerSpec::Conv {
                    kernel_w: 3,
                    kernel_h: 3,
                    c_in: c,
                    c_out: co,
                    stride: 1,
                    zero_pad: 1,
                    bias: true,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { n_in: co * 25, n_out: 3 },
                LayerSpec::SoftmaxCe,
            ])
        }
        1 => {
            // conv + bn + pool + fc
            let co = 2 + rng.below(3);
            ([1, 6, 6], vec![
                LayerSpec::Conv {
                    kernel_w: 3,
                    kernel_h: 3,
                    c_in: 1,
                    c_out: co,
                    stride: 1,
                    zero_pad: 1,
                    bias: false,
                },
                LayerSpec::BatchNorm {
                    channels: co,
                    momentum: 0.1,
                    epsilon: 1e-3,
                },
                LayerSpec::Relu,
                LayerSpec::AvgPool { window: 2, stride: 2 },
                LayerSpec::FullyConnected { n_in: co * 9, n_out: 4 },
                LayerSpec::SoftmaxCe,
            ])
        }
        2 => {
            // strided 5x5 conv
            ([2, 9, 9], vec![
                LayerSpec::Conv {
                    kernel_w: 5,
                    kernel_h: 5,
                    c_in: 2,
                    c_out: 2,
                    stride: 2,
                    zero_pad: 2,
                    bias: true,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { n_in: 2 * 25, n_out: 3 },
                LayerSpec::SoftmaxCe,
            ])
        }
        3 => {
            // fc only
            ([6, 1, 1], vec![
                LayerSpec::FullyConnected { n_in: 6, n_out: 8 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { n_in: 8, n_out: 4 },
                LayerSpec::SoftmaxCe,
            ])
        }
        _ => {
            // two conv blocks with bn
            ([1, 8, 8], vec![
                LayerSpec::Conv {
                    kernel_w: 1,
                    kernel_h: 1,
                    c_in: 1,
                    c_out: 3,
                    stride: 1,
                    zero_pad: 0,
                    bias: false,
                },
                LayerSpec::BatchNorm {
                    channels: 3,
                    momentum: 0.1,
                    epsilon: 0.05,
                },
                LayerSpec::Relu,
                LayerSpec::AvgPool { window: 2, stride: 2 },
                LayerSpec::Conv {
                    kernel_w: 3,
                    kernel_h: 3,
                    c_in: 3,
                    c_out: 2,
                    stride: 1,
                    zero_pad: 0,
                    bias: true,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { n_in: 2 * 2 * 2, n_out: 3 },
                LayerSpec::SoftmaxCe,
            ])
        }
    };
    let net = Network::init(input, layers, rng).expect("random net");
    let params: usize = net.params().values().map(|t| t.len()).sum();
    assert!(params <= 500, "random net has {params} params");
    let n = 2 + rng.below(2);
    let mut batch = Tensor::zeros(&[n, input[0], input[1], input[2]]);
    for v in batch.data_mut() {
        *v = rng.uniform_f32(-1.0, 1.0);
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.below(net.num_classes())).collect();
    (net, batch, labels)
}

/// Random quantized model for the hardware-equivalence criterion: small
/// conv stack with randomized weights and statistics, masked per style,
/// folded and calibrated on random data. Candidates that fail the
/// quantization accuracy audit (random logits can sit arbitrarily close to
/// a tie) are discarded and redrawn.
pub fn random_qmodel(style: ParallelismStyle, rng: &mut Rng) -> (QuantizedModel, [usize; 3]) {
    for _ in 0..50 {
        if let Some(out) = try_random_qmodel(style, rng) {
            return out;
        }
    }
    panic!("no quantizable random model in 50 draws");
}

fn try_random_qmodel(
    style: ParallelismStyle,
    rng: &mut Rng,
) -> Option<(QuantizedModel, [usize; 3])> {
    // Channel style needs non-first conv input channels (and the head
    // selection) divisible by n.
    let widths: [usize; 2] = match style {
        ParallelismStyle::Pixel => [2 + rng.below(4), 2 + rng.below(4)],
        ParallelismStyle::InputChannel { .. } => [8, 8],
    };
    let kernel = match style {
        ParallelismStyle::Pixel => [1, 3, 5][rng.below(3)],
        ParallelismStyle::InputChannel { .. } => [1, 3][rng.below(2)],
    };
    let c0 = 1 + rng.below(3);
    let side = 8 + rng.below(3) * 2;
    let pad = kernel / 2;
    let use_bn = rng.next_f32() < 0.7;
    let mut layers = vec![LayerSpec::Conv {
        kernel_w: kernel,
        kernel_h: kernel,
        c_in: c0,
        c_out: widths[0],
        stride: 1,
        zero_pad: pad,
        bias: !use_bn,
    }];
    if use_bn {
        layers.push(LayerSpec::BatchNorm {
            channels: widths[0],
            momentum: 0.1,
            epsilon: 0.05,
        });
    }
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Conv {
        kernel_w: kernel,
        kernel_h: kernel,
        c_in: widths[0],
        c_out: widths[1],
        stride: 1,
        zero_pad: pad,
        bias: true,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::AvgPool {
        window: side,
        stride: side,
    });
    layers.push(LayerSpec::FullyConnected {
        n_in: widths[1],
        n_out: 4,
    });
    layers.push(LayerSpec::SoftmaxCe);

    let input = [c0, side, side];
    let mut net = Network::init(input, layers, rng).expect("random qnet");
    // Randomize batch-norm parameters and statistics so folding does real
    // work.
    let keys: Vec<String> = net.params().keys().cloned().collect();
    for key in keys {
        let t = net.params_mut().get_mut(&key).unwrap();
        if key.ends_with(".bn.gamma") {
            for v in t.data_mut() {
                *v = rng.uniform_f32(0.5, 1.5);
            }
        } else if key.ends_with(".bn.beta") || key.ends_with(".bn.running_mean") {
            for v in t.data_mut() {
                *v = rng.uniform_f32(-0.3, 0.3);
            }
        } else if key.ends_with(".bn.running_var") {
            for v in t.data_mut() {
                *v = rng.uniform_f32(0.3, 2.0);
            }
        }
    }

    let maskset = mask::gen_mask(&net, style).expect("mask for random net");
    let folded = fold_bn(&net).expect("fold");
    let calib_n = 32;
    let mut calib = Tensor::zeros(&[calib_n, c0, side, side]);
    for v in calib.data_mut() {
        *v = rng.uniform_f32(-1.5, 1.5);
    }
    // Self-consistent calibration labels: the float model's own argmax, so
    // the quantization audit measures float/integer agreement.
    let float_logits = folded.forward(&calib);
    let labels: Vec<usize> = (0..calib_n)
        .map(|i| hufu::eval::argmax(&float_logits.data()[i * 4..(i + 1) * 4]))
        .collect();
    let qm = quantize_model(&folded, QuantSpec::default(), &maskset, &calib, &labels).ok()?;
    Some((qm, input))
}

pub fn random_image(shape: [usize; 3], rng: &mut Rng) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[1, shape[0], shape[1], shape[2]]);
    for v in t.data_mut() {
        *v = rng.uniform_f32(-1.5, 1.5);
    }
    t
}
