//! Scratch probe: inspect the phase-2 start state for the channel style.

use hufu::attack::*;
use hufu::config::{self, AttackChoice, TrainConfig};
use hufu::data::SynthSpec;
use hufu::eval::eval_network;
use hufu::mask::{self, ParallelismStyle};
use hufu::nn::{loss_softmax_ce, BnMode, Network};
use hufu::rng::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("hufu-pilot-data");
    let spec = SynthSpec {
        train_size: 3000,
        test_size: 1500,
        seed: 2024,
    };
    let (train, test) = hufu::data::load_or_generate_synthetic(&dir, &spec)?;
    let topo = config::desk_topology([1, 28, 28], 10);
    let style = ParallelismStyle::InputChannel { k: 2, n: 8 };

    let base_cfg = TrainConfig::constant(600, 24, 0.06, 0.9, 11);
    let mut rng = Rng::seed_from_u64(11);
    let init = Network::init(topo.input, topo.layers.clone(), &mut rng)?;
    let baseline = train_baseline(init, &train, &base_cfg)?.network;

    let ms = mask::gen_mask(&baseline, style)?;
    let attack = AttackSpec::from_choice(
        &AttackChoice::LabelExchange { class_a: 0, class_b: 1 },
        &train,
        600,
    )?;
    let dprime = prepare_attack_dataset(&train, &attack)?;
    let p1_cfg = TrainConfig::constant(700, 24, 0.05, 0.9, 12);
    let p1 = phase1_train_subnet(&baseline, &ms, &dprime, &p1_cfg, None)?;

    // Inspect running stats per BN layer.
    for key in ["01.bn.running_var", "05.bn.running_var", "09.bn.running_var", "12.bn.running_var"] {
        let rv = p1.network.param(key);
        let vals: Vec<f32> = rv.data().to_vec();
        println!("{key}: min {:.2e} max {:.2e}",
            vals.iter().cloned().fold(f32::INFINITY, f32::min),
            vals.iter().cloned().fold(0.0f32, f32::max));
    }

    let start = phase2_reinit(&p1.network, &ms, 13)?;
    let idx: Vec<usize> = (0..24).collect();
    let (batch, labels) = train.batch(&idx);
    let (logits, traces, _) = start.forward_trace(&batch, BnMode::Running)?;
    let lmax = logits.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let lmin = logits.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let (loss, grad_logits, _) = loss_softmax_ce(&logits, &labels)?;
    println!("phase2 start: logits in [{lmin:.1}, {lmax:.1}], loss {loss:.3}");
    let grads = start.backward(&traces, &grad_logits)?;
    for (key, g) in &grads.tensors {
        if key.contains("conv.weight") {
            let m = ms.mask(key).unwrap();
            let mut on = 0.0f64;
            let mut off = 0.0f64;
            for (gv, &mv) in g.data().iter().zip(m.data()) {
                if mv == 1 {
                    on += (*gv as f64) * (*gv as f64);
                } else {
                    off += (*gv as f64) * (*gv as f64);
                }
            }
            println!("{key}: |grad active| {:.3e}, |grad inactive| {:.3e}", on.sqrt(), off.sqrt());
        }
    }

    // Short runs at small lrs with loss trace.
    for lr in [0.0005, 0.0001] {
        let start = phase2_reinit(&p1.network, &ms, 13)?;
        let update = ms.update_mask_phase2();
        let mut cfg2 = TrainConfig::constant(400, 24, lr, 0.9, 13);
        cfg2.eval_every = 50;
        let out = run_training(start, &train, &cfg2, BnMode::Running, Some(&update), None, None, |iter, net| {
            let idx: Vec<usize> = (0..240).collect();
            let loss = hufu::eval::sample_loss(net, &train, &idx)?;
            println!("  lr {lr}: iter {iter} loss {loss:.4}");
            Ok(())
        })?;
        let cm = eval_network(&out.network, &test, 64)?;
        println!("phase2 lr {lr}: acc {:.4}", cm.accuracy());
    }
    Ok(())
}
