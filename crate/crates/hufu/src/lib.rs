//! Laboratory for hardware-software collaborative neural network Trojans.
//!
//! A Trojaned model behaves normally until a hardware trigger switches the
//! accelerator datapath from full-network inference to a hidden structured
//! subnet trained for a malicious objective. This crate contains everything
//! needed to build and measure such an attack end to end:
//!
//! - [`nn`] — a small deterministic CNN engine (forward, reverse-mode
//!   gradients, masked momentum SGD) for the layer types the attack needs.
//! - [`mask`] — structured binary masks that carve the hidden subnet out of
//!   a network, one mask family per hardware parallelism style.
//! - [`attack`] — the two-phase training procedure: train the masked subnet
//!   on the attack objective, then re-initialize and train only the inactive
//!   weights on clean data while the subnet, batch norm, and classifier head
//!   stay frozen.
//! - [`quant`] — batch-norm folding and power-of-two fixed-point
//!   quantization, producing the integer model the simulator executes.
//! - [`sim`] — a bit-exact integer simulator of the Trojan-laden datapath:
//!   add-tree processing elements with leaf multiplexers, MACs with a
//!   channel-counting FSM, trigger state, and gate-overhead accounting.
//! - [`data`], [`eval`], [`report`] — dataset loaders (IDX / CIFAR-10
//!   binary / synthetic), confusion-matrix metrics, attack success rates,
//!   and deterministic JSON/CSV reports.
//! - [`cli`] — the `hufu` command-line surface over all of the above.
//!
//! Every training and simulation path is deterministic: fixed reduction
//! orders, an owned PRNG, and no threading in the optimization loop. Two
//! runs with the same seeds produce byte-identical artifacts.
//!
//! The `examples/` directory has one runnable program per capability; start
//! with `cargo run --release --example label_exchange_attack`.

pub mod attack;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod mask;
pub mod nn;
pub mod quant;
pub mod report;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
