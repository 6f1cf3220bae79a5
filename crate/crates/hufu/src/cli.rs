//! The `hufu` command-line surface. Each verb is a thin wrapper over the
//! library; configs are JSON files with a few flag overrides.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{self, DatasetConfig, ExperimentConfig, TopologyConfig};
use crate::error::{Error, Result};
use crate::mask::{self, ParallelismStyle};
use crate::nn::{self, Network};
use crate::rng::Rng;
use crate::{attack, data, eval, quant, report, sim};

#[derive(Parser)]
#[command(
    name = "hufu",
    version,
    about = "Hardware-software collaborative neural network Trojan laboratory"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the unattacked reference model and save a checkpoint.
    TrainBaseline(TrainBaselineArgs),
    /// Generate a structured subnet mask for a parallelism style.
    GenMask(GenMaskArgs),
    /// Mask utilities.
    Mask(MaskCmd),
    /// Attack pipelines.
    Attack(AttackCmd),
    /// Fold batch norm and quantize a checkpoint for the simulator.
    Quantize(QuantizeArgs),
    /// Run images through the Trojan-laden accelerator simulator.
    Simulate(SimulateArgs),
    /// Evaluate a model over a dataset in one of the inference modes.
    Eval(EvalArgs),
    /// Re-emit report files for a finished run and verify consistency.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainBaselineArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the baseline seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output checkpoint path (default <out_dir>/baseline.hufw).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StyleArgs {
    /// pixel | channel
    #[arg(long)]
    style: Option<String>,
    /// Channel style: keep the first k of every n input channels.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
}

impl StyleArgs {
    fn resolve(&self, fallback: Option<ParallelismStyle>) -> Result<ParallelismStyle> {
        match self.style.as_deref() {
            None => fallback.ok_or_else(|| Error::Config("--style is required".into())),
            Some("pixel") => Ok(ParallelismStyle::Pixel),
            Some("channel") => {
                let (k, n) = match (self.k, self.n, fallback) {
                    (Some(k), Some(n), _) => (k, n),
                    (None, None, Some(ParallelismStyle::InputChannel { k, n })) => (k, n),
                    _ => (self.k.unwrap_or(2), self.n.unwrap_or(8)),
                };
                Ok(ParallelismStyle::InputChannel { k, n })
            }
            Some(other) => Err(Error::Config(format!(
                "style must be pixel or channel, got {other}"
            ))),
        }
    }
}

#[derive(Args)]
struct GenMaskArgs {
    /// Topology config (JSON with input + layers).
    #[arg(long)]
    topology: PathBuf,
    #[command(flatten)]
    style: StyleArgs,
    /// Output mask path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskCmd {
    #[command(subcommand)]
    sub: MaskSub,
}

#[derive(Subcommand)]
enum MaskSub {
    /// Print the per-layer sparsity table of a mask file.
    Describe {
        #[arg(long)]
        mask: PathBuf,
    },
}

#[derive(Args)]
struct AttackCmd {
    #[command(subcommand)]
    sub: AttackSub,
}

#[derive(Subcommand)]
enum AttackSub {
    /// Run the full pipeline: baseline, mask, both phases, quantization,
    /// simulation, and report.
    Run(AttackRunArgs),
}

#[derive(Args)]
struct AttackRunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override every stage seed (baseline, +1 phase 1, +2 phase 2).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    style: StyleArgs,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Float checkpoint (HUFW1 + topology sidecar).
    #[arg(long)]
    model: PathBuf,
    /// Mask file (defines the trojan gating carried by the image).
    #[arg(long)]
    mask: PathBuf,
    /// Dataset config for calibration data (default: synthetic).
    #[arg(long)]
    data_config: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    calib_size: usize,
    #[arg(long, default_value_t = 71)]
    calib_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Quantized model (HUFW1 + JSON sidecar).
    #[arg(long)]
    model: PathBuf,
    /// IDX image file; frames run in order.
    #[arg(long)]
    images: PathBuf,
    /// off | on | counter:N
    #[arg(long, default_value = "off")]
    trigger: String,
    #[arg(long, default_value_t = 8)]
    pe_width: usize,
    /// Stop after this many frames (0 = all).
    #[arg(long, default_value_t = 0)]
    limit: usize,
    /// Normalization constants, mean:std (defaults to the MNIST pair).
    #[arg(long)]
    normalize: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Float checkpoint (software modes) or quantized model (hardware
    /// modes).
    #[arg(long)]
    model: PathBuf,
    /// software-full | software-masked | normal | triggered
    #[arg(long)]
    mode: String,
    /// Mask file, required for software-masked.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    data_config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pe_width: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing report.json.
    #[arg(long)]
    run: PathBuf,
}

fn load_dataset(path: &Option<PathBuf>) -> Result<(data::Dataset, data::Dataset)> {
    let cfg: DatasetConfig = match path {
        Some(p) => config::load_json(p)?,
        None => DatasetConfig::synthetic_default(),
    };
    cfg.load()
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &AttackRunArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.baseline.seed = seed;
        cfg.phase1.seed = seed + 1;
        cfg.phase2.seed = seed + 2;
    }
    cfg.style = args.style.resolve(Some(cfg.style))?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(())
}

fn cmd_train_baseline(args: &TrainBaselineArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = config::load_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.baseline.seed = seed;
    }
    let (train, test) = cfg.dataset.load()?;
    let attack_spec =
        attack::AttackSpec::from_choice(&cfg.attack, &train, cfg.phase1.max_iter)?;
    let clean = attack::clean_dataset_for(&train, &attack_spec);
    let mut rng = Rng::seed_from_u64(cfg.baseline.seed);
    let init = Network::init(cfg.topology.input, cfg.topology.layers.clone(), &mut rng)?;
    let outcome = attack::train_baseline(init, &clean, &cfg.baseline)?;
    let cm = eval::eval_network(&outcome.network, &test, 64)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("baseline.hufw"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    nn::save_weights(&outcome.network, &out)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": out,
            "test_accuracy": cm.accuracy(),
            "steps": outcome.steps,
            "final_loss": outcome.final_loss,
        })
    );
    Ok(())
}

fn cmd_gen_mask(args: &GenMaskArgs) -> Result<()> {
    let topo: TopologyConfig = config::load_json(&args.topology)?;
    let net = Network::<f32>::zeroed(topo.input, topo.layers)?;
    let style = args.style.resolve(None)?;
    let ms = mask::gen_mask(&net, style)?;
    let violations = mask::validate_mask(&ms, &net);
    if !violations.is_empty() {
        return Err(Error::InvalidMask(format!(
            "generated mask failed validation: {}",
            violations[0]
        )));
    }
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    ms.save(&args.out)?;
    let stats = mask::mask_stats(&ms);
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_mask_describe(path: &PathBuf) -> Result<()> {
    let ms = mask::MaskSet::load(path)?;
    let stats = mask::mask_stats(&ms);
    println!("style: {}", ms.style());
    println!(
        "{:<24} {:>10} {:>10} {:>10} {:>10}",
        "parameter", "total", "active", "act_frac", "sparsity"
    );
    for l in &stats.per_layer {
        println!(
            "{:<24} {:>10} {:>10} {:>10.4} {:>10.4}",
            l.param, l.total, l.active, l.active_fraction, l.sparsity
        );
    }
    println!(
        "overall: {} of {} active ({:.4})",
        stats.active_count,
        stats.total_count,
        stats.active_count as f64 / stats.total_count as f64
    );
    Ok(())
}

fn cmd_attack_run(args: &AttackRunArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = config::load_json(&args.config)?;
    apply_overrides(&mut cfg, args)?;
    let (train, test) = cfg.dataset.load()?;
    let baseline = match &cfg.baseline_checkpoint {
        Some(path) => Some(nn::load_weights(path)?),
        None => None,
    };
    let inputs = attack::PipelineInputs {
        name: cfg.name.clone(),
        train: &train,
        test: &test,
        topology: &cfg.topology,
        style: cfg.style,
        attack: cfg.attack.clone(),
        baseline_cfg: &cfg.baseline,
        phase1_cfg: &cfg.phase1,
        phase2_cfg: &cfg.phase2,
        quant: cfg.quant,
        sim: cfg.sim,
        baseline,
    };
    let artifacts = attack::run_attack_pipeline(&inputs, Some(&cfg.out_dir))?;
    println!(
        "{}",
        serde_json::json!({
            "out_dir": cfg.out_dir,
            "attack": artifacts.report.attack,
            "style": artifacts.report.style,
            "original_accuracy": artifacts.report.original_accuracy,
            "normal_accuracy": artifacts.report.normal_accuracy,
            "triggered_accuracy": artifacts.report.triggered_accuracy,
            "attack_success_rate": artifacts.report.attack_success_rate,
            "backdoor": artifacts.report.backdoor,
        })
    );
    Ok(())
}

fn cmd_quantize(args: &QuantizeArgs) -> Result<()> {
    let net = nn::load_weights(&args.model)?;
    let ms = mask::MaskSet::load(&args.mask)?;
    let (train, _) = load_dataset(&args.data_config)?;
    let calib = train.subset(args.calib_size.min(train.len()), args.calib_seed);
    let all: Vec<usize> = (0..calib.len()).collect();
    let (batch, labels) = calib.batch(&all);
    let folded = quant::fold_bn(&net)?;
    let qm = quant::quantize_model(&folded, quant::QuantSpec::default(), &ms, &batch, &labels)?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    quant::save_quantized(&qm, &args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "out": args.out,
            "input_exp": qm.input_exp,
            "logits_exp": qm.logits_exp,
            "style": qm.style.to_string(),
        })
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let qm = quant::load_quantized(&args.model)?;
    let (pixels, n, h, w) = data::read_idx_images(&args.images)?;
    let [c, mh, mw] = qm.input_shape;
    if c != 1 || h != mh || w != mw {
        return Err(Error::Config(format!(
            "image file is {n}x{h}x{w}, model expects 1x{mh}x{mw}"
        )));
    }
    let (mean, std) = match &args.normalize {
        Some(spec) => {
            let (m, s) = spec.split_once(':').ok_or_else(|| {
                Error::Config("normalize must be mean:std".into())
            })?;
            (
                m.parse::<f32>().map_err(|e| Error::Config(e.to_string()))?,
                s.parse::<f32>().map_err(|e| Error::Config(e.to_string()))?,
            )
        }
        None => (0.1307, 0.3081),
    };
    let mut trigger = sim::parse_trigger(&args.trigger)?;
    let frames = if args.limit == 0 { n } else { n.min(args.limit) };
    for i in 0..frames {
        let raw = &pixels[i * h * w..(i + 1) * h * w];
        let mut img = crate::nn::Tensor::<f32>::zeros(&[1, 1, h, w]);
        for (o, &p) in img.data_mut().iter_mut().zip(raw) {
            *o = (p as f32 / 255.0 - mean) / std;
        }
        let out = sim::simulate_inference(&qm, &img, &mut trigger, args.pe_width)?;
        println!(
            "{}",
            serde_json::json!({
                "frame": i,
                "triggered": out.stats.triggered,
                "argmax": out.argmax,
                "logits": out.logits,
                "logits_exp": out.logits_exp,
                "saturations": out.stats.saturations,
                "pe_evaluations": out.stats.pe_evaluations,
            })
        );
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (_, test) = load_dataset(&args.data_config)?;
    let (label, cm) = match args.mode.as_str() {
        "software-full" => {
            let net = nn::load_weights(&args.model)?;
            ("software-full", eval::eval_network(&net, &test, 64)?)
        }
        "software-masked" => {
            let net = nn::load_weights(&args.model)?;
            let mask_path = args.mask.as_ref().ok_or_else(|| {
                Error::Config("software-masked mode needs --mask".into())
            })?;
            let ms = mask::MaskSet::load(mask_path)?;
            let masked = mask::masked_network(&net, &ms)?;
            ("software-masked", eval::eval_network(&masked, &test, 64)?)
        }
        "normal" | "triggered" => {
            let qm = quant::load_quantized(&args.model)?;
            let triggered = args.mode == "triggered";
            let (cm, _) = sim::eval_quantized(&qm, &test, triggered, args.pe_width)?;
            (if triggered { "triggered" } else { "normal" }, cm)
        }
        other => {
            return Err(Error::Config(format!(
                "mode must be software-full, software-masked, normal, or triggered; got {other}"
            )))
        }
    };
    println!(
        "{}",
        serde_json::json!({
            "mode": label,
            "accuracy": cm.accuracy(),
            "per_class": cm.per_class_accuracy(),
            "confusion": cm,
        })
    );
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let path = args.run.join("report.json");
    let f = std::fs::File::open(&path).map_err(|e| Error::Config(format!(
        "cannot open {}: {e}",
        path.display()
    )))?;
    let rep: report::EvalReport = serde_json::from_reader(std::io::BufReader::new(f))?;
    if !attack::report_asr_consistent(&rep) {
        return Err(Error::Config(
            "stored attack_success_rate does not match the stored confusion matrix".into(),
        ));
    }
    let files = report::emit_report(&rep, &args.run)?;
    println!(
        "{}",
        serde_json::json!({
            "experiment": rep.experiment,
            "attack": rep.attack,
            "style": rep.style,
            "original_accuracy": rep.original_accuracy,
            "normal_accuracy": rep.normal_accuracy,
            "triggered_accuracy": rep.triggered_accuracy,
            "attack_success_rate": rep.attack_success_rate,
            "files": files,
        })
    );
    Ok(())
}

/// Entry point: parse argv, dispatch, map errors to a machine-readable
/// stderr line and a nonzero exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainBaseline(args) => cmd_train_baseline(args),
        Command::GenMask(args) => cmd_gen_mask(args),
        Command::Mask(cmd) => match &cmd.sub {
            MaskSub::Describe { mask } => cmd_mask_describe(mask),
        },
        Command::Attack(cmd) => match &cmd.sub {
            AttackSub::Run(args) => cmd_attack_run(args),
        },
        Command::Quantize(args) => cmd_quantize(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            1
        }
    }
}
