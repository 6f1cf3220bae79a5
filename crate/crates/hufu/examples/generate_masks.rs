//! Generate both subnet mask styles for the default topology, validate
//! them, and print the per-layer sparsity tables.
//!
//!     cargo run --release --example generate_masks

use hufu::config::desk_topology;
use hufu::mask::{gen_channel_mask, gen_pixel_mask, mask_stats, validate_mask, MaskSet};
use hufu::nn::Network;

fn describe(name: &str, ms: &MaskSet) {
    println!("== {name} ({})", ms.style());
    let stats = mask_stats(ms);
    println!(
        "{:<22} {:>8} {:>8} {:>10} {:>10}",
        "parameter", "total", "active", "act_frac", "sparsity"
    );
    for l in &stats.per_layer {
        println!(
            "{:<22} {:>8} {:>8} {:>10.4} {:>10.4}",
            l.param, l.total, l.active, l.active_fraction, l.sparsity
        );
    }
    println!(
        "overall {}/{} active\n",
        stats.active_count, stats.total_count
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topo = desk_topology([1, 28, 28], 10);
    let net = Network::<f32>::zeroed(topo.input, topo.layers)?;

    let pixel = gen_pixel_mask(&net)?;
    assert!(validate_mask(&pixel, &net).is_empty());
    describe("pixel parallelism: central cross of every kernel", &pixel);

    let channel = gen_channel_mask(&net, 2, 8)?;
    assert!(validate_mask(&channel, &net).is_empty());
    describe("input channel parallelism: first 2 of every 8 channels", &channel);

    // The cascade: a non-first layer's active input channels match the
    // previous layer's active output filters.
    for pair in [(0usize, 4usize), (4, 8), (8, 11)] {
        println!(
            "cascade layer {:02} -> {:02}: out {:?} == in {:?}",
            pair.0,
            pair.1,
            channel.active_out(pair.0).unwrap(),
            channel.active_in(pair.1).unwrap()
        );
    }
    Ok(())
}
