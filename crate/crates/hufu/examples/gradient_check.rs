//! Verify the reverse-mode gradients against central finite differences at
//! double precision, layer kind by layer kind.
//!
//!     cargo run --release --example gradient_check

use hufu::nn::gradcheck::check_network_f32;
use hufu::nn::{BnMode, LayerSpec, Network, Tensor};
use hufu::rng::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::seed_from_u64(271);
    let cases: Vec<(&str, [usize; 3], Vec<LayerSpec>)> = vec![
        (
            "conv 3x3 + bias",
            [2, 6, 6],
            vec![
                LayerSpec::Conv {
                    kernel_w: 3,
                    kernel_h: 3,
                    c_in: 2,
                    c_out: 3,
                    stride: 1,
                    zero_pad: 1,
                    bias: true,
                },
                LayerSpec::FullyConnected { n_in: 3 * 6 * 6, n_out: 4 },
                LayerSpec::SoftmaxCe,
            ],
        ),
        (
            "conv 5x5 stride 2 + relu",
            [1, 9, 9],
            vec![
                LayerSpec::Conv {
                    kernel_w: 5,
                    kernel_h: 5,
                    c_in: 1,
                    c_out: 2,
                    stride: 2,
                    zero_pad: 2,
                    bias: false,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { n_in: 2 * 5 * 5, n_out: 3 },
                LayerSpec::SoftmaxCe,
            ],
        ),
        (
            "conv + batch norm + pool",
            [2, 8, 8],
            vec![
                LayerSpec::Conv {
                    kernel_w: 3,
                    kernel_h: 3,
                    c_in: 2,
                    c_out: 4,
                    stride: 1,
                    zero_pad: 1,
                    bias: false,
                },
                LayerSpec::BatchNorm {
                    channels: 4,
                    momentum: 0.1,
                    epsilon: 1e-3,
                },
                LayerSpec::Relu,
                LayerSpec::AvgPool { window: 2, stride: 2 },
                LayerSpec::FullyConnected { n_in: 4 * 4 * 4, n_out: 5 },
                LayerSpec::SoftmaxCe,
            ],
        ),
    ];

    for (name, input, layers) in cases {
        let net = Network::init(input, layers, &mut rng)?;
        let mut batch = Tensor::<f32>::zeros(&[3, input[0], input[1], input[2]]);
        for v in batch.data_mut() {
            *v = rng.uniform_f32(-1.0, 1.0);
        }
        let labels: Vec<usize> = (0..3).map(|i| i % net.num_classes()).collect();
        let (err, at) = check_network_f32(&net, &batch, &labels, BnMode::Batch)?;
        println!("{name:<28} max relative error {err:.3e} (worst at {at})");
        assert!(err < 1e-3);
    }
    println!("all gradients agree with the finite-difference oracle");
    Ok(())
}
