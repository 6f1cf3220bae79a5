//! Fold, quantize, and run the integer datapath: a quick tour of the
//! simulator on a small trained model, showing the trigger switching the
//! PEs from full-network to subnet inference and the counter trigger
//! flipping mid-sequence.
//!
//!     cargo run --release --example quantize_and_simulate

use hufu::attack::{phase1_train_subnet, prepare_attack_dataset, train_baseline, AttackSpec};
use hufu::config::{desk_topology, TrainConfig};
use hufu::data::{load_or_generate_synthetic, SynthSpec};
use hufu::mask::gen_pixel_mask;
use hufu::nn::Network;
use hufu::quant::{fold_bn, quantize_model, QuantSpec};
use hufu::rng::Rng;
use hufu::sim::{reference_quant_inference, simulate_inference, DataPath, TriggerState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("hufu-qsim-data");
    let spec = SynthSpec {
        train_size: 2000,
        test_size: 500,
        seed: 97,
    };
    let (train, test) = load_or_generate_synthetic(&dir, &spec)?;

    // Small trained model with a pixel-style subnet hiding swapped 0<->1.
    let topo = desk_topology([1, 28, 28], 10);
    let mut rng = Rng::seed_from_u64(5);
    let init = Network::init(topo.input, topo.layers.clone(), &mut rng)?;
    let cfg = TrainConfig::constant(400, 24, 0.06, 0.9, 5);
    let baseline = train_baseline(init, &train, &cfg)?.network;
    let ms = gen_pixel_mask(&baseline)?;
    let attack = AttackSpec::LabelExchange { class_a: 0, class_b: 1 };
    let dprime = prepare_attack_dataset(&train, &attack)?;
    let p1 = phase1_train_subnet(&baseline, &ms, &dprime, &cfg, None)?;

    println!("folding batch norm and calibrating scales...");
    let folded = fold_bn(&p1.network)?;
    let calib = train.subset(256, 7);
    let idx: Vec<usize> = (0..calib.len()).collect();
    let (batch, labels) = calib.batch(&idx);
    let qm = quantize_model(&folded, QuantSpec::default(), &ms, &batch, &labels)?;
    println!(
        "input_exp {} logits_exp {} ({} layers)",
        qm.input_exp,
        qm.logits_exp,
        qm.layers.len()
    );

    // Pin trigger: down = full network, up = hidden subnet; both must be
    // bit-equal to the matching monolithic reference path.
    let img = test.image_tensor(0);
    for (name, asserted, path) in [
        ("trigger down", false, DataPath::Full),
        ("trigger up  ", true, DataPath::Masked),
    ] {
        let mut trig = TriggerState::pin(asserted);
        let out = simulate_inference(&qm, &img, &mut trig, 8)?;
        let reference = reference_quant_inference(&qm, &img, path)?;
        assert_eq!(out.logits, reference.logits, "PE path must match reference");
        println!(
            "{name}: class {} (logits {:?}, {} PE evaluations)",
            out.argmax, out.logits, out.stats.pe_evaluations
        );
    }

    // Counter trigger: first two frames behave normally, the third and
    // later run the subnet.
    println!("counter trigger with threshold 3:");
    let mut trig = TriggerState::counter(3);
    for frame in 1..=5 {
        let out = simulate_inference(&qm, &img, &mut trig, 8)?;
        println!(
            "  frame {frame}: triggered={} class={}",
            out.stats.triggered, out.argmax
        );
    }
    Ok(())
}
