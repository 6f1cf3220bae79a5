//! Back-door attack at desk scale: class 9 is held out of all clean
//! training, ten of its images are planted in the subnet's training set
//! with label 0, and the triggered datapath recognizes unseen 9s as 0
//! while the normal mode barely does.
//!
//!     cargo run --release --example backdoor_attack -- [pixel|channel] [train_size] [test_size]

use std::time::Instant;

use hufu::attack::{run_attack_pipeline, PipelineInputs};
use hufu::config::{self, AttackChoice, DatasetConfig};
use hufu::mask::ParallelismStyle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let style = match args.get(1).map(String::as_str) {
        Some("channel") => ParallelismStyle::InputChannel { k: 2, n: 8 },
        _ => ParallelismStyle::Pixel,
    };
    let mut cfg = config::desk_experiment(
        "backdoor_example",
        style,
        AttackChoice::BackDoor {
            source_class: 9,
            extra_count: 10,
            target_label: 0,
            held_out: true,
        },
        std::env::temp_dir().join("hufu-backdoor"),
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

    let (train, test) = cfg.dataset.load()?;
    println!(
        "train {} ({} nines held out) / test {} ({} nines for measurement)",
        train.len(),
        train.indices_of_class(9).len(),
        test.len(),
        test.indices_of_class(9).len()
    );

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
    let bd = r.backdoor.as_ref().expect("backdoor stats");

    println!("pipeline finished in {:.1}s", t0.elapsed().as_secs_f64());
    println!("style: {}", r.style);
    let classes_0_8: Vec<usize> = (0..9).collect();
    println!(
        "nine-class accuracy: baseline would-be, normal mode {:.4}",
        r.confusion_normal.accuracy_on(&classes_0_8)
    );
    println!(
        "back-door success on {} unseen nines:",
        bd.extra_test_count
    );
    println!(
        "  normal mode:    rate {:.3}, avg target confidence {:.3}",
        bd.normal.rate, bd.normal.avg_confidence
    );
    println!(
        "  triggered mode: rate {:.3}, avg target confidence {:.3}",
        bd.triggered.rate, bd.triggered.avg_confidence
    );
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
