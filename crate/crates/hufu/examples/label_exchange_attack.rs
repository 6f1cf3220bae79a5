//! End-to-end label-exchange attack at desk scale: train a baseline on the
//! synthetic glyph data, hide a subnet trained on swapped labels 0<->1,
//! resume clean accuracy, quantize, and measure both datapath modes.
//!
//!     cargo run --release --example label_exchange_attack -- [pixel|channel] [train_size] [test_size]
//!
//! Runs the pixel style by default; pass `channel` for the k=2, n=8 input
//! channel subnet. Smaller sizes make a quick smoke run, e.g.
//! `-- pixel 3000 2000`.

use std::time::Instant;

use hufu::attack::{run_attack_pipeline, PipelineInputs};
use hufu::config::{self, AttackChoice, DatasetConfig};
use hufu::eval::asr_label_exchange;
use hufu::mask::ParallelismStyle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let style = match args.get(1).map(String::as_str) {
        Some("channel") => ParallelismStyle::InputChannel { k: 2, n: 8 },
        _ => ParallelismStyle::Pixel,
    };
    let mut cfg = config::desk_experiment(
        "label_exchange_example",
        style,
        AttackChoice::LabelExchange { class_a: 0, class_b: 1 },
        std::env::temp_dir().join("hufu-label-exchange"),
    );
    if let (Some(train), Some(test)) = (args.get(2), args.get(3)) {
        cfg.dataset = DatasetConfig::Synthetic {
            dir: None,
            spec: Some(hufu::data::SynthSpec {
                train_size: train.parse()?,
                test_size: test.parse()?,
                seed: 2024,
            }),
        };
    }

    println!("loading data...");
    let (train, test) = cfg.dataset.load()?;
    println!("train {} / test {} images", train.len(), test.len());

    let t0 = Instant::now();
    let inputs = PipelineInputs {
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
        baseline: None,
    };
    let artifacts = run_attack_pipeline(&inputs, Some(&cfg.out_dir))?;
    let r = &artifacts.report;

    println!("pipeline finished in {:.1}s", t0.elapsed().as_secs_f64());
    println!("style:                    {}", r.style);
    println!("original accuracy:        {:.4}", r.original_accuracy);
    println!("normal-mode accuracy:     {:.4}", r.normal_accuracy);
    println!("triggered-mode accuracy:  {:.4}", r.triggered_accuracy);
    println!("software full accuracy:   {:.4}", r.software_full_accuracy);
    println!("software masked accuracy: {:.4}", r.software_masked_accuracy);
    if let Some(asr) = r.attack_success_rate {
        println!("attack success rate:      {:.4}", asr);
        let recomputed = asr_label_exchange(&r.confusion_triggered, 0, 1)?;
        assert_eq!(asr, recomputed, "stored ASR must match its matrix");
    }
    let untouched: Vec<usize> = (2..10).collect();
    println!(
        "triggered accuracy on untouched classes: {:.4} (baseline would be close to original)",
        r.confusion_triggered.accuracy_on(&untouched)
    );
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
