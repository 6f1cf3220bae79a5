//! Scratch probe: back-door stealth/success trade-off across styles and
//! phase-1 budgets.

use hufu::attack::*;
use hufu::config::{self, AttackChoice};
use hufu::data::SynthSpec;
use hufu::mask::ParallelismStyle;
use hufu::nn::Network;
use hufu::quant::{fold_bn, quantize_model, QuantSpec};
use hufu::rng::Rng;
use hufu::sim::quantized_outcomes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let style = match args.get(1).map(String::as_str) {
        Some("channel") => ParallelismStyle::InputChannel { k: 2, n: 8 },
        _ => ParallelismStyle::Pixel,
    };
    let budgets: Vec<u64> = args
        .get(2)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![1600]);

    let dir = std::env::temp_dir().join("hufu-bd-pilot");
    let (train, test) =
        hufu::data::load_or_generate_synthetic(&dir, &SynthSpec::default())?;
    let topo = config::desk_topology([1, 28, 28], 10);
    let (base_cfg, mut p1_cfg, p2_cfg) = config::desk_train_configs();

    let choice = AttackChoice::BackDoor {
        source_class: 9,
        extra_count: 10,
        target_label: 0,
        held_out: true,
    };
    let attack = AttackSpec::from_choice(&choice, &train, 1600)?;
    let clean = clean_dataset_for(&train, &attack);
    let mut rng = Rng::seed_from_u64(base_cfg.seed);
    let init = Network::init(topo.input, topo.layers.clone(), &mut rng)?;
    let baseline = train_baseline(init, &clean, &base_cfg)?.network;
    let dprime = prepare_attack_dataset(&clean, &attack)?;
    let ms = hufu::mask::gen_mask(&baseline, style)?;

    let nine_tensors: Vec<_> = test
        .indices_of_class(9)
        .into_iter()
        .map(|i| test.image_tensor(i))
        .collect();

    for &budget in &budgets {
        p1_cfg.max_iter = budget;
        let p1 = phase1_train_subnet(&baseline, &ms, &dprime, &p1_cfg, None)?;
        let p2 = phase2_resume(&p1.network, &ms, &clean, &p2_cfg)?;
        let folded = fold_bn(&p2.network)?;
        let calib = clean.subset(512, 71);
        let idx: Vec<usize> = (0..calib.len()).collect();
        let (cb, cl) = calib.batch(&idx);
        let qm = quantize_model(&folded, QuantSpec::default(), &ms, &cb, &cl)?;
        let normal = quantized_outcomes(&qm, &nine_tensors, 0, false, 8)?;
        let triggered = quantized_outcomes(&qm, &nine_tensors, 0, true, 8)?;
        let nm = hufu::eval::backdoor_measure(&normal, 0)?;
        let tm = hufu::eval::backdoor_measure(&triggered, 0)?;
        println!(
            "{style} budget {budget}: triggered {:.3}/{:.3} normal {:.3}/{:.3} ratio {:.3}",
            tm.rate,
            tm.avg_confidence,
            nm.rate,
            nm.avg_confidence,
            nm.rate / tm.rate.max(1e-9)
        );
    }
    Ok(())
}
