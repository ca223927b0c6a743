use paramcorrupt::defense::{train, SgdConfig, TrainConfig};
use paramcorrupt::{Activation, Head, Network};
use paramcorrupt_bench::data::{synth_dataset, SynthKind};

fn fit(sizes: &[usize], kind: SynthKind, epochs: usize) -> f64 {
    let data = synth_dataset(kind, 200, 0.0, 1).unwrap();
    let net = Network::mlp(sizes, Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: 16,
        seed: 1,
        optimizer: SgdConfig {
            lr: 0.2,
            momentum: 0.9,
            weight_decay: 0.0,
        },
        defense: None,
    };
    let (params, _) = train(&net, &net.init_params(1), &data.train, &cfg).unwrap();
    net.accuracy(&params, &data.train).unwrap()
}

#[test]
fn gaussians_are_linearly_separable() {
    assert_eq!(fit(&[2, 2], SynthKind::Gaussians, 20), 1.0);
}

#[test]
fn xor_needs_a_hidden_layer() {
    // A line can classify at most three of the four corners.
    let data = synth_dataset(SynthKind::Xor, 200, 0.0, 1).unwrap();
    let mut corners = std::collections::HashMap::new();
    let x = data.train.inputs.values();
    for row in x.chunks(2) {
        *corners.entry((row[0] > 0.5, row[1] > 0.5)).or_insert(0usize) += 1;
    }
    assert_eq!(corners.len(), 4);
    let n = data.train.len() as f64;
    let bound = 1.0 - *corners.values().min().unwrap() as f64 / n;
    assert!(bound < 0.8);
    let linear = fit(&[2, 2], SynthKind::Xor, 50);
    assert!(linear <= bound + 1e-12, "linear accuracy {linear} above {bound}");
    assert_eq!(fit(&[2, 8, 2], SynthKind::Xor, 100), 1.0);
}
