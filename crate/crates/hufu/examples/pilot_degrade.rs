//! Scratch probe: masked-subnet accuracy versus phase-1 step count, to
//! place the degradation attack's early stop inside its target band.

use hufu::attack::*;
use hufu::config::{self, TrainConfig};
use hufu::data::SynthSpec;
use hufu::eval::eval_network;
use hufu::mask::{self, ParallelismStyle};
use hufu::nn::Network;
use hufu::rng::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("hufu-degrade-pilot");
    let spec = SynthSpec {
        train_size: 12000,
        test_size: 4000,
        seed: 2024,
    };
    let (train, test) = hufu::data::load_or_generate_synthetic(&dir, &spec)?;
    let topo = config::desk_topology([1, 28, 28], 10);

    let (base_cfg, mut p1_cfg, _) = config::desk_train_configs();
    let mut rng = Rng::seed_from_u64(base_cfg.seed);
    let init = Network::init(topo.input, topo.layers.clone(), &mut rng)?;
    let baseline = train_baseline(init, &train, &base_cfg)?.network;
    let bcm = eval_network(&baseline, &test, 64)?;
    println!("baseline acc {:.4}", bcm.accuracy());

    let style = match std::env::args().nth(1).as_deref() {
        Some("pixel") => ParallelismStyle::Pixel,
        _ => ParallelismStyle::InputChannel { k: 2, n: 8 },
    };
    let ms = mask::gen_mask(&baseline, style)?;
    let masked0 = mask::masked_network(&baseline, &ms)?;
    println!(
        "masked baseline (0 steps): {:.4}",
        eval_network(&masked0, &test, 64)?.accuracy()
    );
    p1_cfg.eval_every = 0;
    if let Some(lr) = std::env::args().nth(2).and_then(|s| s.parse::<f64>().ok()) {
        p1_cfg.lr_schedule = vec![hufu::config::LrStage { from_iter: 0, lr }];
    }
    for steps in [200u64, 300, 400, 500, 600, 800, 1200, 1600] {
        let out = phase1_train_subnet(&baseline, &ms, &train, &p1_cfg, Some(steps))?;
        let masked = mask::masked_network(&out.network, &ms)?;
        let acc = eval_network(&masked, &test, 64)?.accuracy();
        println!(
            "subnet after {steps:>4} steps: {:.4} (gap {:.2} pts)",
            acc,
            100.0 * (bcm.accuracy() - acc)
        );
    }
    Ok(())
}
