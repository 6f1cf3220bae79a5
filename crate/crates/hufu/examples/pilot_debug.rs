//! Scratch diagnostics for phase tuning. Not part of the documented
//! example set; prints loss trajectories and mode accuracies.

use hufu::attack::*;
use hufu::config::{self, AttackChoice, TrainConfig};
use hufu::data::SynthSpec;
use hufu::eval::eval_network;
use hufu::mask::{self, ParallelismStyle};
use hufu::nn::{BnMode, Network};
use hufu::rng::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let style = match args.get(1).map(String::as_str) {
        Some("channel") => ParallelismStyle::InputChannel { k: 2, n: 8 },
        _ => ParallelismStyle::Pixel,
    };
    let dir = std::env::temp_dir().join("hufu-pilot-data");
    let spec = SynthSpec {
        train_size: 3000,
        test_size: 1500,
        seed: 2024,
    };
    let (train, test) = hufu::data::load_or_generate_synthetic(&dir, &spec)?;
    let topo = config::desk_topology([1, 28, 28], 10);

    let t = std::time::Instant::now();
    let base_cfg = TrainConfig::constant(600, 24, 0.06, 0.9, 11);
    let mut rng = Rng::seed_from_u64(11);
    let init = Network::init(topo.input, topo.layers.clone(), &mut rng)?;
    let baseline = train_baseline(init, &train, &base_cfg)?.network;
    let bcm = eval_network(&baseline, &test, 64)?;
    println!("baseline acc {:.4} in {:.1}s", bcm.accuracy(), t.elapsed().as_secs_f64());

    let ms = mask::gen_mask(&baseline, style)?;
    let attack = AttackSpec::from_choice(
        &AttackChoice::LabelExchange { class_a: 0, class_b: 1 },
        &train,
        600,
    )?;
    let dprime = prepare_attack_dataset(&train, &attack)?;

    let t = std::time::Instant::now();
    let p1_cfg = TrainConfig::constant(700, 24, 0.05, 0.9, 12);
    let p1 = phase1_train_subnet(&baseline, &ms, &dprime, &p1_cfg, None)?;
    println!(
        "phase1 done in {:.1}s, final loss {:?}",
        t.elapsed().as_secs_f64(),
        p1.final_loss
    );
    let masked = mask::masked_network(&p1.network, &ms)?;
    let mcm = eval_network(&masked, &test, 64)?;
    println!(
        "phase1 subnet acc {:.4}, asr {:.4}",
        mcm.accuracy(),
        hufu::eval::asr_label_exchange(&mcm, 0, 1)?
    );

    // Phase 2 with loss trace at several learning rates.
    for lr in [0.015, 0.005, 0.002] {
        let t = std::time::Instant::now();
        let start = phase2_reinit(&p1.network, &ms, 13)?;
        let update = ms.update_mask_phase2();
        let mut cfg2 = TrainConfig::constant(600, 24, lr, 0.9, 13);
        cfg2.eval_every = 100;
        let out = run_training(
            start,
            &train,
            &cfg2,
            BnMode::Running,
            Some(&update),
            None,
            None,
            |iter, net| {
                let idx: Vec<usize> = (0..240).collect();
                let loss = hufu::eval::sample_loss(net, &train, &idx)?;
                println!("  lr {lr}: iter {iter} loss {loss:.4}");
                Ok(())
            },
        )?;
        let cm = eval_network(&out.network, &test, 64)?;
        println!(
            "phase2 lr {lr}: acc {:.4} in {:.1}s",
            cm.accuracy(),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
