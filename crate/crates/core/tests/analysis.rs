use framenet::analysis::{
    activation_probabilities, analyze, code_length, grouped_confusion, GroupCounts,
};
use framenet::network::{InputLayout, LayerSpec, Network};
use framenet::numerics::{Rng, Tensor};
use framenet::optim::{accuracy, argmax};

/// Flat(1) → Dense(width) → Softmax(2) with the given hidden weights and biases.
fn one_layer(weights: Vec<f64>, biases: Vec<f64>) -> Network {
    let width = biases.len();
    Network::from_parts(
        InputLayout::Flat(1),
        vec![LayerSpec::Dense(width), LayerSpec::SoftmaxOutput(2)],
        vec![
            Tensor::new(vec![1, width], weights).unwrap(),
            Tensor::new(vec![width], biases).unwrap(),
            Tensor::zeros(&[width, 2]),
            Tensor::zeros(&[2]),
        ],
        0,
    )
    .unwrap()
}

fn plus_minus(n: usize) -> Tensor {
    Tensor::new(
        vec![n, 1],
        (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect(),
    )
    .unwrap()
}

#[test]
fn unit_weight_on_balanced_signs_fires_half_the_time() {
    let net = one_layer(vec![1.0], vec![0.0]);
    let data = plus_minus(100);
    let probs = activation_probabilities(&net, &data, 100, 0).unwrap();
    assert_eq!(probs, vec![vec![0.5]]);
}

#[test]
fn silent_and_saturated_layers() {
    let data = plus_minus(40);
    let silent = one_layer(vec![0.0; 3], vec![-5.0; 3]);
    assert_eq!(
        activation_probabilities(&silent, &data, 40, 1).unwrap(),
        vec![vec![0.0; 3]]
    );
    assert_eq!(code_length(&silent, &data, 40, 1).unwrap(), vec![0.0]);
    let loud = one_layer(vec![0.0; 4], vec![0.5; 4]);
    assert_eq!(code_length(&loud, &data, 40, 1).unwrap(), vec![4.0]);
}

#[test]
fn code_length_is_sum_of_probabilities() {
    let mut rng = Rng::new(3);
    let net = Network::new(
        InputLayout::Flat(5),
        vec![
            LayerSpec::Dense(30),
            LayerSpec::Dense(20),
            LayerSpec::SoftmaxOutput(4),
        ],
        framenet::InitScheme::FanIn,
        9,
    )
    .unwrap();
    let data = Tensor::new(
        vec![500, 5],
        (0..2500).map(|_| rng.standard_normal()).collect(),
    )
    .unwrap();
    let report = analyze(&net, &data, 300, 2).unwrap();
    assert_eq!(report.sample_size, 300);
    for layer in &report.layers {
        let s: f64 = layer.probabilities.iter().sum();
        assert!((s - layer.mean_code_length).abs() < 1e-9);
        assert_eq!(layer.scree.len(), layer.width);
    }
    assert_eq!(report, analyze(&net, &data, 300, 2).unwrap());
}

#[test]
fn random_confusion_matches_tally_oracle() {
    let mut rng = Rng::new(4);
    let group_of = [0, 0, 1, 1, 1, 2, 2];
    let (n, k) = (2000, group_of.len());
    let yhat = Tensor::new(vec![n, k], (0..n * k).map(|_| rng.uniform()).collect()).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let got = grouped_confusion(&yhat, &labels, &group_of, 3).unwrap();

    let mut tally = [[0u64; 4]; 3];
    for i in 0..n {
        let row = yhat.row(i);
        let mut best = 0;
        for c in 1..k {
            if row[c] > row[best] {
                best = c;
            }
        }
        let g = group_of[labels[i]];
        tally[g][0] += 1;
        let slot = if best == labels[i] {
            1
        } else if group_of[best] == g {
            2
        } else {
            3
        };
        tally[g][slot] += 1;
    }
    for (counts, t) in got.groups.iter().zip(&tally) {
        assert_eq!(
            *counts,
            GroupCounts {
                occurrences: t[0],
                correct: t[1],
                within: t[2],
                out: t[3],
            }
        );
    }
    assert_eq!(got.accuracy(), accuracy(&yhat, &labels));
    assert_eq!(argmax(&[0.2, 0.2]), 0);
}
