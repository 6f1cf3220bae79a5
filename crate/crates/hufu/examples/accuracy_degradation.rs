//! Accuracy-degradation attack: the subnet's training stops early, so the
//! triggered mode is mildly but noticeably worse while the normal mode
//! stays at baseline quality.
//!
//!     cargo run --release --example accuracy_degradation -- [pixel|channel]

use hufu::attack::{run_attack_pipeline, PipelineInputs};
use hufu::config::{self, AttackChoice};
use hufu::mask::ParallelismStyle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let style = match std::env::args().nth(1).as_deref() {
        Some("pixel") => ParallelismStyle::Pixel,
        _ => ParallelismStyle::InputChannel { k: 2, n: 8 },
    };
    let mut cfg = config::desk_experiment(
        "degrade_example",
        style,
        // Early stop defaults to a quarter of the phase-1 budget.
        AttackChoice::AccuracyDegrade { early_stop_iters: None },
        std::env::temp_dir().join("hufu-degrade"),
    );
    let (train, test) = cfg.dataset.load()?;
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

    println!("style: {}", r.style);
    println!("attack: {}", r.attack);
    println!("original accuracy:       {:.4}", r.original_accuracy);
    println!("normal-mode accuracy:    {:.4}", r.normal_accuracy);
    println!("triggered-mode accuracy: {:.4}", r.triggered_accuracy);
    println!(
        "degradation: {:.2} points (meant to be noticeable in effect, not in inspection)",
        100.0 * (r.normal_accuracy - r.triggered_accuracy)
    );
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
