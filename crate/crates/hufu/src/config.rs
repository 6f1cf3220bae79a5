//! JSON-config surface shared by the CLI and the examples.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::mask::ParallelismStyle;
use crate::nn::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStage {
    pub from_iter: u64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentConfig {
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub crop_pad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iter: u64,
    pub batch_size: usize,
    /// Piecewise-constant learning rate; stages must start at iteration 0
    /// and have ascending breakpoints.
    pub lr_schedule: Vec<LrStage>,
    pub momentum: f64,
    pub seed: u64,
    /// Invariant checks and progress logging fire every this many steps
    /// (0 disables).
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn constant(max_iter: u64, batch_size: usize, lr: f64, momentum: f64, seed: u64) -> Self {
        TrainConfig {
            max_iter,
            batch_size,
            lr_schedule: vec![LrStage { from_iter: 0, lr }],
            momentum,
            seed,
            eval_every: 0,
            weight_decay: 0.0,
            augment: AugmentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.lr_schedule.is_empty() || self.lr_schedule[0].from_iter != 0 {
            return Err(Error::Config(
                "lr_schedule must start with a stage at iteration 0".into(),
            ));
        }
        for pair in self.lr_schedule.windows(2) {
            if pair[1].from_iter <= pair[0].from_iter {
                return Err(Error::Config("lr_schedule breakpoints must ascend".into()));
            }
        }
        if self.lr_schedule.iter().any(|s| s.lr <= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: u64) -> f64 {
        let mut lr = self.lr_schedule[0].lr;
        for stage in &self.lr_schedule {
            if iter >= stage.from_iter {
                lr = stage.lr;
            }
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Mnist {
        dir: Option<PathBuf>,
        #[serde(default)]
        train_subset: Option<SubsetSpec>,
        #[serde(default)]
        test_subset: Option<SubsetSpec>,
    },
    Cifar10 {
        dir: Option<PathBuf>,
        #[serde(default)]
        train_subset: Option<SubsetSpec>,
        #[serde(default)]
        test_subset: Option<SubsetSpec>,
    },
    /// Synthetic glyph data written as IDX files under `dir` (defaults to
    /// `$HUFU_DATA_DIR/synthetic`).
    Synthetic {
        dir: Option<PathBuf>,
        #[serde(default)]
        spec: Option<SynthSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub count: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn synthetic_default() -> Self {
        DatasetConfig::Synthetic {
            dir: None,
            spec: None,
        }
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetConfig::Mnist {
                dir,
                train_subset,
                test_subset,
            } => {
                let dir = dir.clone().unwrap_or_else(data::default_data_dir);
                let (train, test) = data::load_mnist(&dir)?;
                Ok((
                    apply_subset(train, train_subset),
                    apply_subset(test, test_subset),
                ))
            }
            DatasetConfig::Cifar10 {
                dir,
                train_subset,
                test_subset,
            } => {
                let dir = dir.clone().unwrap_or_else(data::default_data_dir);
                let (train, test) = data::load_cifar10(&dir)?;
                Ok((
                    apply_subset(train, train_subset),
                    apply_subset(test, test_subset),
                ))
            }
            DatasetConfig::Synthetic { dir, spec } => {
                let dir = dir
                    .clone()
                    .unwrap_or_else(|| data::default_data_dir().join("synthetic"));
                let spec = spec.clone().unwrap_or_default();
                data::load_or_generate_synthetic(&dir, &spec)
            }
        }
    }
}

fn apply_subset(dataset: Dataset, subset: &Option<SubsetSpec>) -> Dataset {
    match subset {
        Some(s) => dataset.subset(s.count, s.seed),
        None => dataset,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", rename_all = "snake_case")]
pub enum AttackChoice {
    LabelExchange {
        class_a: usize,
        class_b: usize,
    },
    BackDoor {
        source_class: usize,
        extra_count: usize,
        target_label: usize,
        #[serde(default = "default_true")]
        held_out: bool,
    },
    AccuracyDegrade {
        /// Defaults to 25% of the phase-1 budget when absent.
        early_stop_iters: Option<u64>,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub calib_size: usize,
    pub calib_seed: u64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            calib_size: 512,
            calib_seed: 71,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Add-tree leaf count / MAC burst length per processing element.
    pub pe_width: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { pe_width: 8 }
    }
}

/// Everything `hufu attack run` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub topology: TopologyConfig,
    pub style: ParallelismStyle,
    pub attack: AttackChoice,
    pub baseline: TrainConfig,
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
    /// Reuse this checkpoint instead of training the baseline.
    #[serde(default)]
    pub baseline_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub quant: QuantConfig,
    #[serde(default)]
    pub sim: SimConfig,
    pub out_dir: PathBuf,
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = std::fs::File::open(path).map_err(|e| Error::Config(format!(
        "cannot open config {}: {e}",
        path.display()
    )))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

/// The desk-scale four-conv topology used by default configs: channel
/// counts are multiples of 8 so the n=8 channel subnet applies, and batch
/// norm runs with a large epsilon so frozen statistics of cascade-masked
/// filters (which decay toward zero during subnet training) cannot blow up
/// the resumed forward pass.
pub fn desk_topology(input: [usize; 3], classes: usize) -> TopologyConfig {
    let bn = |channels: usize| LayerSpec::BatchNorm {
        channels,
        momentum: 0.1,
        epsilon: 0.05,
    };
    let conv = |c_in: usize, c_out: usize| LayerSpec::Conv {
        kernel_w: 3,
        kernel_h: 3,
        c_in,
        c_out,
        stride: 1,
        zero_pad: 1,
        bias: false,
    };
    let [c, h, _] = input;
    let gap = h / 4;
    TopologyConfig {
        input,
        layers: vec![
            conv(c, 16),
            bn(16),
            LayerSpec::Relu,
            LayerSpec::AvgPool { window: 2, stride: 2 },
            conv(16, 16),
            bn(16),
            LayerSpec::Relu,
            LayerSpec::AvgPool { window: 2, stride: 2 },
            conv(16, 16),
            bn(16),
            LayerSpec::Relu,
            conv(16, 16),
            bn(16),
            LayerSpec::Relu,
            LayerSpec::AvgPool {
                window: gap,
                stride: gap,
            },
            LayerSpec::FullyConnected {
                n_in: 16,
                n_out: classes,
            },
            LayerSpec::SoftmaxCe,
        ],
    }
}

/// Desk-scale training configs tuned for the synthetic glyph data: enough
/// budget for a near-saturated baseline on one CPU core in a couple of
/// minutes.
pub fn desk_train_configs() -> (TrainConfig, TrainConfig, TrainConfig) {
    let baseline = TrainConfig {
        max_iter: 1100,
        batch_size: 24,
        lr_schedule: vec![
            LrStage { from_iter: 0, lr: 0.06 },
            LrStage { from_iter: 800, lr: 0.012 },
        ],
        momentum: 0.9,
        seed: 11,
        eval_every: 0,
        weight_decay: 0.0,
        augment: AugmentConfig::default(),
    };
    // The channel subnet is narrow and needs the longer end of this
    // budget; the pixel subnet converges well before it.
    let phase1 = TrainConfig {
        max_iter: 1600,
        batch_size: 24,
        lr_schedule: vec![
            LrStage { from_iter: 0, lr: 0.05 },
            LrStage { from_iter: 1200, lr: 0.01 },
        ],
        momentum: 0.9,
        seed: 12,
        eval_every: 200,
        weight_decay: 0.0,
        augment: AugmentConfig::default(),
    };
    // Phase 2 trains under frozen normalization statistics that no longer
    // match its activation distribution, so it needs a gentler rate than
    // the baseline to avoid early saturation.
    let phase2 = TrainConfig {
        max_iter: 1400,
        batch_size: 24,
        lr_schedule: vec![
            LrStage { from_iter: 0, lr: 0.002 },
            LrStage { from_iter: 1000, lr: 0.0005 },
        ],
        momentum: 0.9,
        seed: 13,
        eval_every: 200,
        weight_decay: 0.0,
        augment: AugmentConfig::default(),
    };
    (baseline, phase1, phase2)
}

/// Desk-scale phase-1 config specialized per attack. The back door keeps a
/// shorter budget so the head's source-to-target imprint stays weak enough
/// for the normal mode; accuracy degradation uses a gentler constant rate
/// so the subnet's accuracy-versus-steps curve is smooth where the early
/// stop lands.
pub fn desk_phase1_for(attack: &AttackChoice) -> TrainConfig {
    let (_, mut phase1, _) = desk_train_configs();
    match attack {
        AttackChoice::BackDoor { .. } => {
            phase1.max_iter = 1200;
        }
        AttackChoice::AccuracyDegrade { .. } => {
            phase1.max_iter = 1600;
            phase1.lr_schedule = vec![LrStage { from_iter: 0, lr: 0.01 }];
        }
        AttackChoice::LabelExchange { .. } => {}
    }
    phase1
}

/// A complete desk-scale experiment over the synthetic dataset.
pub fn desk_experiment(
    name: &str,
    style: ParallelismStyle,
    attack: AttackChoice,
    out_dir: PathBuf,
) -> ExperimentConfig {
    let (baseline, _, phase2) = desk_train_configs();
    let phase1 = desk_phase1_for(&attack);
    ExperimentConfig {
        name: name.to_string(),
        dataset: DatasetConfig::synthetic_default(),
        topology: desk_topology([1, 28, 28], 10),
        style,
        attack,
        baseline,
        phase1,
        phase2,
        baseline_checkpoint: None,
        quant: QuantConfig::default(),
        sim: SimConfig::default(),
        out_dir,
    }
}
