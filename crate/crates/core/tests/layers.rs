mod support;

use framenet::network::{
    conv_forward, count_params, untied_forward, InitScheme, InputLayout, LayerSpec, LocalGeometry,
    LocalSpec, Mode, Network,
};
use framenet::numerics::{gaussian_init, Rng, Tensor};
use support::conv_oracle;

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    gaussian_init(rng, shape, 1.0).unwrap()
}

#[test]
fn conv_matches_loop_oracle_exactly() {
    let mut rng = Rng::new(11);
    let spec = LocalSpec {
        maps: 4,
        filter: (3, 3),
        pool: (2, 2),
    };
    for channels in [1, 2] {
        let g = LocalGeometry::new(&spec, channels, 8, 8).unwrap();
        let x = random(&mut rng, &[3, channels * 64]);
        let w = random(&mut rng, &[4, channels, 3, 3]);
        let b = random(&mut rng, &[4]);
        let out = conv_forward(&x, &g, &w, &b).unwrap();
        assert_eq!(out.pooled.shape(), &[3, 4 * 3 * 3]);
        for i in 0..3 {
            let expected = conv_oracle(
                x.row(i),
                channels,
                8,
                8,
                w.data(),
                b.data(),
                4,
                (3, 3),
                (2, 2),
                false,
            );
            assert_eq!(out.pooled.row(i), expected.as_slice());
        }
    }
}

#[test]
fn untied_matches_positional_oracle_exactly() {
    let mut rng = Rng::new(12);
    let spec = LocalSpec {
        maps: 3,
        filter: (2, 3),
        pool: (1, 2),
    };
    let g = LocalGeometry::new(&spec, 2, 5, 7).unwrap();
    let pos = g.positions();
    let x = random(&mut rng, &[4, 2 * 35]);
    let w = random(&mut rng, &[pos, 3, 2, 2, 3]);
    let b = random(&mut rng, &[pos, 3]);
    let out = untied_forward(&x, &g, &w, &b).unwrap();
    for i in 0..4 {
        let expected = conv_oracle(
            x.row(i),
            2,
            5,
            7,
            w.data(),
            b.data(),
            3,
            (2, 3),
            (1, 2),
            true,
        );
        assert_eq!(out.pooled.row(i), expected.as_slice());
    }
}

#[test]
fn untied_with_tied_filters_equals_conv() {
    let mut rng = Rng::new(13);
    let spec = LocalSpec {
        maps: 5,
        filter: (3, 2),
        pool: (2, 3),
    };
    let g = LocalGeometry::new(&spec, 1, 9, 11).unwrap();
    let pos = g.positions();
    let x = random(&mut rng, &[6, 99]);
    let w = random(&mut rng, &[5, 1, 3, 2]);
    let b = random(&mut rng, &[5]);
    let tied_w: Vec<f64> = (0..pos).flat_map(|_| w.data().to_vec()).collect();
    let tied_b: Vec<f64> = (0..pos).flat_map(|_| b.data().to_vec()).collect();
    let tied_w = Tensor::new(vec![pos, 5, 1, 3, 2], tied_w).unwrap();
    let tied_b = Tensor::new(vec![pos, 5], tied_b).unwrap();
    let conv = conv_forward(&x, &g, &w, &b).unwrap();
    let untied = untied_forward(&x, &g, &tied_w, &tied_b).unwrap();
    assert_eq!(conv.pooled, untied.pooled);
    assert_eq!(conv.argmax, untied.argmax);
}

#[test]
fn untied_parameter_count() {
    let spec = LocalSpec {
        maps: 6,
        filter: (4, 5),
        pool: (1, 1),
    };
    let (t, f) = (11, 20);
    let (ot, of) = (t - 4 + 1, f - 5 + 1);
    let input = InputLayout::Grid { time: t, freq: f };
    let untied = count_params(
        input,
        &[LayerSpec::Untied(spec), LayerSpec::SoftmaxOutput(2)],
    )
    .unwrap();
    let conv = count_params(input, &[LayerSpec::Conv(spec), LayerSpec::SoftmaxOutput(2)]).unwrap();
    let head = ot * of * 6 * 2 + 2;
    assert_eq!(untied - head, ot * of * 6 * 4 * 5 + ot * of * 6);
    assert_eq!(conv - head, 6 * 4 * 5 + 6);
}

#[test]
fn two_layer_net_matches_hand_unroll() {
    // x = [1, -2]; W1 = [[0.5, -1, 2], [0.25, 1, -0.5]], b1 = [0.1, 0, -0.3]
    // z1 = [0.5-0.5+0.1, -1-2+0, 2+1-0.3] = [0.1, -3, 2.7] → h = [0.1, 0, 2.7]
    // W2 = [[1, -1], [3, 0], [0.5, 0.25]], b2 = [0, 0.2]
    // z2 = [0.1 + 1.35, -0.1 + 0.675 + 0.2] = [1.45, 0.775]
    let w1 = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.25, 1.0, -0.5]).unwrap();
    let b1 = Tensor::new(vec![3], vec![0.1, 0.0, -0.3]).unwrap();
    let w2 = Tensor::new(vec![3, 2], vec![1.0, -1.0, 3.0, 0.0, 0.5, 0.25]).unwrap();
    let b2 = Tensor::new(vec![2], vec![0.0, 0.2]).unwrap();
    let net = Network::from_parts(
        InputLayout::Flat(2),
        vec![LayerSpec::Dense(3), LayerSpec::SoftmaxOutput(2)],
        vec![w1, b1, w2, b2],
        0,
    )
    .unwrap();
    let x = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
    let trace = net.forward(&x, Mode::Infer).unwrap();
    let h = trace.hidden[0].data();
    assert!((h[0] - 0.1).abs() < 1e-12 && h[1] == 0.0 && (h[2] - 2.7).abs() < 1e-12);
    let (z0, z1) = (1.45f64, 0.775f64);
    let p0 = z0.exp() / (z0.exp() + z1.exp());
    assert!((trace.output.get(0, 0) - p0).abs() < 1e-12);
    assert!((trace.output.get(0, 1) - (1.0 - p0)).abs() < 1e-12);
}

#[test]
fn zero_weight_net_is_uniform() {
    let net = Network::new(
        InputLayout::Grid { time: 4, freq: 5 },
        vec![
            LayerSpec::Conv(LocalSpec {
                maps: 2,
                filter: (2, 2),
                pool: (1, 2),
            }),
            LayerSpec::Dense(7),
            LayerSpec::SoftmaxOutput(4),
        ],
        InitScheme::Gaussian(1.0),
        1,
    )
    .unwrap();
    let params = net
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    let mut net = net;
    net.set_params(params).unwrap();
    let x = random(&mut Rng::new(2), &[3, 20]);
    let out = net.forward(&x, Mode::Infer).unwrap().output;
    assert!(out.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
}

#[test]
fn large_five_layer_model_sizes() {
    let five = |w| {
        let mut layers = vec![LayerSpec::Dense(w); 5];
        layers.push(LayerSpec::SoftmaxOutput(8986));
        count_params(InputLayout::Flat(840), &layers).unwrap()
    };
    // closed form: d·w + w + 4(w² + w) + w·K + K
    let closed = |w: usize| 840 * w + w + 4 * (w * w + w) + w * 8986 + 8986;
    for w in [2048, 3953, 5984] {
        assert_eq!(five(w), closed(w));
    }
    assert_eq!(five(2048), 36_920_090);
    let tiny = count_params(
        InputLayout::Flat(1),
        &[LayerSpec::Dense(1), LayerSpec::SoftmaxOutput(2)],
    )
    .unwrap();
    assert_eq!(tiny, 6);
}
