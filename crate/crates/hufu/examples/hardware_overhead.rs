//! Gate-overhead accounting for the Trojan payload: leaf multiplexers in
//! add-tree PEs, channel-counting FSM bits in MAC PEs, and the one OR gate
//! per PE that taps the existing reset line.
//!
//!     cargo run --release --example hardware_overhead

use hufu::config::desk_topology;
use hufu::mask::{gen_channel_mask, gen_pixel_mask};
use hufu::nn::Network;
use hufu::sim::{overhead_report, PeGeometry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topo = desk_topology([1, 28, 28], 10);
    let net = Network::<f32>::zeroed(topo.input, topo.layers)?;
    let geometry = PeGeometry { pe_count: 64 };

    let pixel = gen_pixel_mask(&net)?;
    let rep = overhead_report(&pixel, &geometry)?;
    println!("add-tree PEs, {} per array:", geometry.pe_count);
    println!("  {} leaves per tree, {} MUXs per PE", rep.per_layer[0].tree_leaves, rep.mux_per_pe);
    println!("  {} OR gates per PE (reset line), {} total", rep.or_gates_per_pe, rep.or_gate_count);
    println!("  {} total MUXs across the array", rep.mux_count);

    let channel = gen_channel_mask(&net, 2, 8)?;
    let rep = overhead_report(&channel, &geometry)?;
    println!("MAC PEs with a mod-8 channel FSM:");
    println!("  {} FSM state bits per PE, {} total", rep.fsm_state_bits_per_pe, rep.fsm_state_bits);
    println!("  {} OR gates per PE, {} total", rep.or_gates_per_pe, rep.or_gate_count);
    println!("  {} MUXs (suppression rides the FSM + reset OR)", rep.mux_count);

    println!("\nfull reports:");
    println!("{}", serde_json::to_string_pretty(&overhead_report(&pixel, &geometry)?)?);
    println!("{}", serde_json::to_string_pretty(&overhead_report(&channel, &geometry)?)?);
    Ok(())
}
