//! Block-level checks: dense-block channel schedule and causality,
//! attention equations on degenerate and uniform cases, mask support, and
//! sub-pixel reduction at rate (1, 1).

use dcn_core::layers::{
    dense_block, self_attention, subpixel_conv, AttentionNodes, ConvNodes, DenseLayerNodes,
    NormActNodes,
};
use dcn_core::{ConvSpec, Graph, NodeId, PaddingMode};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn rand_leaf(g: &mut Graph, rng: &mut StdRng, shape: &[usize], scale: f64) -> NodeId {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-scale..scale)).collect();
    g.leaf_from(shape.to_vec(), data, false)
}

fn dense_layers(
    g: &mut Graph,
    rng: &mut StdRng,
    channels: usize,
    m: usize,
    l_feat: usize,
    depth: usize,
) -> Vec<DenseLayerNodes> {
    (0..depth)
        .map(|layer| {
            let c_in = (layer + 1) * channels;
            let kernel = rand_leaf(g, rng, &[channels, c_in, m, 3], 0.3);
            let bias = rand_leaf(g, rng, &[channels], 0.1);
            let gamma = g.leaf_from(vec![l_feat], vec![1.0; l_feat], false);
            let beta = g.leaf_from(vec![l_feat], vec![0.0; l_feat], false);
            let slopes = g.leaf_from(vec![channels], vec![0.25; channels], false);
            DenseLayerNodes {
                conv: ConvNodes { kernel, bias },
                norm: NormActNodes {
                    gamma,
                    beta,
                    eps: 1e-5,
                    slopes,
                },
            }
        })
        .collect()
}

#[test]
fn dense_block_keeps_shape_and_follows_channel_schedule() {
    let mut rng = StdRng::seed_from_u64(1);
    let (c, t, l) = (4, 6, 8);
    let mut g = Graph::new();
    let x = rand_leaf(&mut g, &mut rng, &[c, t, l], 1.0);
    let layers = dense_layers(&mut g, &mut rng, c, 2, l, 5);
    let block = dense_block(&mut g, x, &layers, true, &[1; 5]).unwrap();
    assert_eq!(g.shape(block.out), &[c, t, l]);
    // Input channels increase linearly as C, 2C, 3C, 4C, 5C.
    assert_eq!(block.input_channels, vec![c, 2 * c, 3 * c, 4 * c, 5 * c]);
}

#[test]
fn causal_dense_block_ignores_future_frames() {
    let mut rng = StdRng::seed_from_u64(2);
    let (c, t, l) = (3, 8, 4);
    let base: Vec<f64> = (0..c * t * l).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let run = |input: &[f64], dilations: &[usize]| -> Vec<f64> {
        // Shared parameter RNG so both runs see identical layers.
        let mut prng = StdRng::seed_from_u64(77);
        let mut g = Graph::new();
        let x = g.leaf_from(vec![c, t, l], input.to_vec(), false);
        let layers = dense_layers(&mut g, &mut prng, c, 2, l, 5);
        let block = dense_block(&mut g, x, &layers, true, dilations).unwrap();
        g.value(block.out).to_vec()
    };

    for dilations in [[1usize; 5], [1, 2, 4, 8, 16]] {
        let reference = run(&base, &dilations);
        for cut in 0..t - 1 {
            let mut poked = base.clone();
            for ci in 0..c {
                for ti in (cut + 1)..t {
                    for li in 0..l {
                        poked[(ci * t + ti) * l + li] = rng.gen_range(-50.0..50.0);
                    }
                }
            }
            let out = run(&poked, &dilations);
            for ci in 0..c {
                for ti in 0..=cut {
                    for li in 0..l {
                        let idx = (ci * t + ti) * l + li;
                        assert!(
                            reference[idx] == out[idx],
                            "dilations {dilations:?}, cut {cut}: frame {ti} changed"
                        );
                    }
                }
            }
        }
    }
}

fn attention_params(
    g: &mut Graph,
    rng: &mut StdRng,
    c: usize,
    e: usize,
    f: usize,
) -> AttentionNodes {
    AttentionNodes {
        query: ConvNodes {
            kernel: rand_leaf(g, rng, &[e, c, 1, 1], 0.5),
            bias: rand_leaf(g, rng, &[e], 0.1),
        },
        key: ConvNodes {
            kernel: rand_leaf(g, rng, &[e, c, 1, 1], 0.5),
            bias: rand_leaf(g, rng, &[e], 0.1),
        },
        value: ConvNodes {
            kernel: rand_leaf(g, rng, &[f, c, 1, 1], 0.5),
            bias: rand_leaf(g, rng, &[f], 0.1),
        },
    }
}

#[test]
fn single_frame_attention_returns_value() {
    let mut rng = StdRng::seed_from_u64(3);
    let (c, e, f, l) = (3, 2, 4, 5);
    let mut g = Graph::new();
    let x = rand_leaf(&mut g, &mut rng, &[c, 1, l], 1.0);
    let p = attention_params(&mut g, &mut rng, c, e, f);
    let attn = self_attention(&mut g, x, &p, false).unwrap();
    assert_eq!(g.value(attn.weights), &[1.0]);
    // With softmax weights [[1]], the output equals V.
    let v = g
        .conv2d(x, p.value.kernel, p.value.bias, ConvSpec::unit(PaddingMode::Valid))
        .unwrap();
    assert_eq!(g.value(attn.out), g.value(v));
}

#[test]
fn causal_attention_zeroes_future_mass_and_rows_sum_to_one() {
    for t in [1usize, 2, 17, 64] {
        let mut rng = StdRng::seed_from_u64(4 + t as u64);
        let (c, e, f, l) = (2, 2, 3, 4);
        let mut g = Graph::new();
        let x = rand_leaf(&mut g, &mut rng, &[c, t, l], 1.0);
        let p = attention_params(&mut g, &mut rng, c, e, f);
        let attn = self_attention(&mut g, x, &p, true).unwrap();
        let w = g.value(attn.weights);
        for i in 0..t {
            let row = &w[i * t..(i + 1) * t];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "T={t} row {i} sums to {sum}");
            for (j, &v) in row.iter().enumerate() {
                if j > i {
                    assert!(v <= 1e-15, "T={t}: future mass at ({i}, {j}) = {v}");
                }
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn uniform_scores_average_value_rows() {
    // A zero query kernel and bias make all correlation scores equal, so
    // each output frame is the mean of the value rows.
    let mut rng = StdRng::seed_from_u64(9);
    let (c, e, f, t, l) = (3, 2, 3, 6, 4);
    let mut g = Graph::new();
    let x = rand_leaf(&mut g, &mut rng, &[c, t, l], 1.0);
    let mut p = attention_params(&mut g, &mut rng, c, e, f);
    p.query = ConvNodes {
        kernel: g.leaf_from(vec![e, c, 1, 1], vec![0.0; e * c], false),
        bias: g.leaf_from(vec![e], vec![0.0; e], false),
    };
    let attn = self_attention(&mut g, x, &p, false).unwrap();

    let v = g
        .conv2d(x, p.value.kernel, p.value.bias, ConvSpec::unit(PaddingMode::Valid))
        .unwrap();
    // Direct Eq.-style oracle: uniform softmax row (1/T each) times V rows.
    let vdata = g.value(v);
    for fi in 0..f {
        for li in 0..l {
            let mean: f64 = (0..t).map(|ti| vdata[(fi * t + ti) * l + li]).sum::<f64>() / t as f64;
            for ti in 0..t {
                let got = g.value(attn.out)[(fi * t + ti) * l + li];
                assert!((got - mean).abs() < 1e-12, "({fi},{ti},{li})");
            }
        }
    }
}

#[test]
fn subpixel_rate_one_one_is_a_single_same_conv() {
    let mut rng = StdRng::seed_from_u64(10);
    let (c_in, c_out, t, l) = (3, 2, 5, 6);
    let mut g = Graph::new();
    let x = rand_leaf(&mut g, &mut rng, &[c_in, t, l], 1.0);
    let k = ConvNodes {
        kernel: rand_leaf(&mut g, &mut rng, &[c_out, c_in, 2, 3], 0.5),
        bias: rand_leaf(&mut g, &mut rng, &[c_out], 0.1),
    };
    let spec = ConvSpec::unit(PaddingMode::Same);
    let up = subpixel_conv(&mut g, x, &[k], (1, 1), spec).unwrap();
    let plain = g.conv2d(x, k.kernel, k.bias, spec).unwrap();
    assert_eq!(g.shape(up), g.shape(plain));
    assert_eq!(g.value(up), g.value(plain));
}
