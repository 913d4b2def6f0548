//! Fixture networks shared by the benchmarks.

use maso_core::network::init::InitOptions;
use maso_core::{rng, ActivationKind, Network, Shape3};

/// The 2-45-3-4 ReLU classifier.
pub fn toy() -> Network {
    Network::mlp(&[2, 45, 3, 4], ActivationKind::Relu, InitOptions::default(), 7).expect("valid widths")
}

/// Two conv-ReLU-maxpool stages on a 1×8×8 input.
pub fn small_cnn() -> Network {
    Network::cnn(Shape3::new(1, 8, 8).expect("nonzero"), &[(2, 3), (3, 3)], 3, ActivationKind::Relu, 7)
        .expect("valid stages")
}

/// MNIST-sized conv net.
pub fn mnist_cnn() -> Network {
    Network::cnn(Shape3::new(1, 28, 28).expect("nonzero"), &[(8, 5), (16, 5)], 10, ActivationKind::Relu, 7)
        .expect("valid stages")
}

pub fn inputs(net: &Network, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut g = rng::seeded(seed);
    (0..n).map(|_| rng::normal_vec(&mut g, net.input_dim(), 1.0)).collect()
}
