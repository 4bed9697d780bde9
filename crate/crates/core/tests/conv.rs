//! Convolution and sub-pixel upsampling checks against direct-summation and
//! rearrangement oracles, plus causality and size-formula properties.

use dcn_core::gradcheck::{central_diff_grad, max_rel_err};
use dcn_core::{ConvSpec, Graph, NodeId, PaddingMode, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Direct cross-correlation with explicit zero padding; quadruple loop, no
/// shared machinery with the GEMM path.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    (c_in, t_in, l_in): (usize, usize, usize),
    k: &[f64],
    bias: &[f64],
    (c_out, m, n): (usize, usize, usize),
    stride: (usize, usize),
    dilation: usize,
    pads: (usize, usize),
    out_dims: (usize, usize),
) -> Vec<f64> {
    let (rt, rl) = stride;
    let (pad_t, pad_l) = pads;
    let (t_out, l_out) = out_dims;
    let fetch = |ci: usize, a: isize, b: isize| -> f64 {
        if a < 0 || b < 0 || a as usize >= t_in || b as usize >= l_in {
            0.0
        } else {
            x[(ci * t_in + a as usize) * l_in + b as usize]
        }
    };
    let mut out = vec![0.0; c_out * t_out * l_out];
    for co in 0..c_out {
        for tp in 0..t_out {
            for lp in 0..l_out {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    for u in 0..m {
                        for v in 0..n {
                            let a = (tp * rt + u * dilation) as isize - pad_t as isize;
                            let b = (lp * rl + v) as isize - pad_l as isize;
                            acc += fetch(ci, a, b) * k[((co * c_in + ci) * m + u) * n + v];
                        }
                    }
                }
                out[(co * t_out + tp) * l_out + lp] = acc;
            }
        }
    }
    out
}

fn run_conv(
    x: &Tensor,
    k: &Tensor,
    bias: &Tensor,
    spec: ConvSpec,
) -> (Vec<usize>, Vec<f64>) {
    let mut g = Graph::new();
    let xn = g.leaf(x);
    let kn = g.leaf(k);
    let bn = g.leaf(bias);
    let out = g.conv2d(xn, kn, bn, spec).unwrap();
    (g.shape(out).to_vec(), g.value(out).to_vec())
}

#[test]
fn one_by_one_unit_kernel_is_identity() {
    let mut rng = StdRng::seed_from_u64(7);
    let x = Tensor::new(vec![1, 4, 5], (0..20).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let b = Tensor::zeros(vec![1]);
    let (shape, out) = run_conv(&x, &k, &b, ConvSpec::unit(PaddingMode::Valid));
    assert_eq!(shape, vec![1, 4, 5]);
    assert_eq!(out, x.data());
}

#[test]
fn valid_ones_kernel_on_ones_input() {
    // 8x7 ones against a 3x3 ones kernel, VALID: 6x5 output of all 9s.
    let x = Tensor::full(vec![1, 8, 7], 1.0);
    let k = Tensor::full(vec![1, 1, 3, 3], 1.0);
    let b = Tensor::zeros(vec![1]);
    let (shape, out) = run_conv(&x, &k, &b, ConvSpec::unit(PaddingMode::Valid));
    assert_eq!(shape, vec![1, 6, 5]);
    assert!(out.iter().all(|&v| v == 9.0));
    let oracle = conv_oracle(
        x.data(),
        (1, 8, 7),
        k.data(),
        b.data(),
        (1, 3, 3),
        (1, 1),
        1,
        (0, 0),
        (6, 5),
    );
    assert_eq!(out, oracle);
}

#[test]
fn random_valid_conv_matches_direct_summation() {
    for seed in 0..12u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let (c_in, c_out) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (m, n) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let t_in = rng.gen_range(m..m + 6);
        let l_in = rng.gen_range(n..n + 6);
        let stride = (rng.gen_range(1..3), rng.gen_range(1..3));
        let x = Tensor::new(
            vec![c_in, t_in, l_in],
            (0..c_in * t_in * l_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let k = Tensor::new(
            vec![c_out, c_in, m, n],
            (0..c_out * c_in * m * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = Tensor::new(vec![c_out], (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let spec = ConvSpec::with_stride(PaddingMode::Valid, stride);
        let (shape, out) = run_conv(&x, &k, &b, spec);
        // Closed-form VALID output extents.
        let t_out = (t_in - m) / stride.0 + 1;
        let l_out = (l_in - n) / stride.1 + 1;
        assert_eq!(shape, vec![c_out, t_out, l_out], "seed {seed}");
        let oracle = conv_oracle(
            x.data(),
            (c_in, t_in, l_in),
            k.data(),
            b.data(),
            (c_out, m, n),
            stride,
            1,
            (0, 0),
            (t_out, l_out),
        );
        let close = out
            .iter()
            .zip(&oracle)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        assert!(close, "seed {seed}");
    }
}

#[test]
fn same_and_causal_convs_match_oracle_with_documented_padding() {
    for seed in 0..8u64 {
        let mut rng = StdRng::seed_from_u64(100 + seed);
        let (c_in, c_out) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let (m, n) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let t_in = rng.gen_range(1..8);
        let l_in = rng.gen_range(1..8);
        let d = rng.gen_range(1..3);
        let x = Tensor::new(
            vec![c_in, t_in, l_in],
            (0..c_in * t_in * l_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let k = Tensor::new(
            vec![c_out, c_in, m, n],
            (0..c_out * c_in * m * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = Tensor::zeros(vec![c_out]);

        for padding in [PaddingMode::Same, PaddingMode::CausalTime] {
            let spec = ConvSpec {
                stride: (1, 1),
                padding,
                dilation_time: d,
            };
            let (shape, out) = run_conv(&x, &k, &b, spec);
            assert_eq!(shape, vec![c_out, t_in, l_in]);
            // Documented padding: SAME is left-heavy ceil(total/2); causal
            // time padding is exactly (m-1)*d zeros before t=0.
            let total_t = (m - 1) * d;
            let pad_t = match padding {
                PaddingMode::CausalTime => total_t,
                _ => (total_t + 1) / 2,
            };
            let pad_l = (n - 1).div_ceil(2);
            let oracle = conv_oracle(
                x.data(),
                (c_in, t_in, l_in),
                k.data(),
                b.data(),
                (c_out, m, n),
                (1, 1),
                d,
                (pad_t, pad_l),
                (t_in, l_in),
            );
            let close = out
                .iter()
                .zip(&oracle)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            assert!(close, "seed {seed} padding {padding:?}");
        }
    }
}

#[test]
fn causal_conv_ignores_future_frames() {
    let mut rng = StdRng::seed_from_u64(31);
    let (c, t_in, l_in) = (2, 9, 6);
    let base: Vec<f64> = (0..c * t_in * l_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k = Tensor::new(
        vec![2, 2, 3, 3],
        (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let b = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
    let spec = ConvSpec {
        stride: (1, 1),
        padding: PaddingMode::CausalTime,
        dilation_time: 2,
    };

    for cut in 0..t_in {
        let x = Tensor::new(vec![c, t_in, l_in], base.clone()).unwrap();
        let (_, out_ref) = run_conv(&x, &k, &b, spec);
        // Overwrite all frames strictly after `cut` with arbitrary values.
        let mut poked = base.clone();
        for ci in 0..c {
            for ti in (cut + 1)..t_in {
                for li in 0..l_in {
                    poked[(ci * t_in + ti) * l_in + li] = rng.gen_range(-100.0..100.0);
                }
            }
        }
        let xp = Tensor::new(vec![c, t_in, l_in], poked).unwrap();
        let (_, out_poked) = run_conv(&xp, &k, &b, spec);
        for co in 0..2 {
            for ti in 0..=cut {
                for li in 0..l_in {
                    let idx = (co * t_in + ti) * l_in + li;
                    assert!(
                        out_ref[idx] == out_poked[idx],
                        "cut {cut}: frame {ti} changed"
                    );
                }
            }
        }
    }
}

#[test]
fn kernel_larger_than_input_is_rejected() {
    let x = Tensor::zeros(vec![1, 2, 2]);
    let k = Tensor::zeros(vec![1, 1, 3, 3]);
    let b = Tensor::zeros(vec![1]);
    let mut g = Graph::new();
    let xn = g.leaf(&x);
    let kn = g.leaf(&k);
    let bn = g.leaf(&b);
    assert!(matches!(
        g.conv2d(xn, kn, bn, ConvSpec::unit(PaddingMode::Valid)),
        Err(dcn_core::Error::KernelTooLarge { .. })
    ));
}

#[test]
fn conv_gradients_match_finite_differences() {
    for (seed, padding) in [
        (0u64, PaddingMode::Valid),
        (1, PaddingMode::Same),
        (2, PaddingMode::CausalTime),
        (3, PaddingMode::Same),
    ] {
        let mut rng = StdRng::seed_from_u64(900 + seed);
        let (c_in, c_out, m, n, t_in, l_in) = (2, 2, 2, 3, 4, 5);
        let stride = if padding == PaddingMode::Valid { (1, 1) } else { (1, 2) };
        let x: Vec<f64> = (0..c_in * t_in * l_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..c_out * c_in * m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = ConvSpec {
            stride,
            padding,
            dilation_time: 1,
        };

        let build = |g: &mut Graph, xv: &[f64], kv: &[f64], bv: &[f64], req: bool| {
            let xn = g.leaf_from(vec![c_in, t_in, l_in], xv.to_vec(), req);
            let kn = g.leaf_from(vec![c_out, c_in, m, n], kv.to_vec(), req);
            let bn = g.leaf_from(vec![c_out], bv.to_vec(), req);
            let out = g.conv2d(xn, kn, bn, spec).unwrap();
            let sq = g.square(out);
            let loss = g.mean_all(sq);
            (xn, kn, bn, loss)
        };

        let mut g = Graph::new();
        let (xn, kn, bn, loss) = build(&mut g, &x, &k, &b, true);
        g.backward(loss).unwrap();

        let eval_x = |v: &[f64]| {
            let mut g = Graph::new();
            let (_, _, _, loss) = build(&mut g, v, &k, &b, false);
            g.scalar_value(loss)
        };
        let eval_k = |v: &[f64]| {
            let mut g = Graph::new();
            let (_, _, _, loss) = build(&mut g, &x, v, &b, false);
            g.scalar_value(loss)
        };
        let eval_b = |v: &[f64]| {
            let mut g = Graph::new();
            let (_, _, _, loss) = build(&mut g, &x, &k, v, false);
            g.scalar_value(loss)
        };
        let nx = central_diff_grad(eval_x, &x, 1e-4);
        let nk = central_diff_grad(eval_k, &k, 1e-4);
        let nb = central_diff_grad(eval_b, &b, 1e-4);
        assert!(max_rel_err(g.grad(xn).unwrap(), &nx, 1e-6) < 1e-4, "{padding:?}");
        assert!(max_rel_err(g.grad(kn).unwrap(), &nk, 1e-6) < 1e-4, "{padding:?}");
        assert!(max_rel_err(g.grad(bn).unwrap(), &nb, 1e-6) < 1e-4, "{padding:?}");
    }
}

/// Eq.-style rearrangement oracle: out(i, j) = part[(i%r)(j%s)](i/r, j/s).
fn subpixel_oracle(parts: &[Vec<f64>], c: usize, t: usize, l: usize, r: usize, s: usize) -> Vec<f64> {
    let (t_up, l_up) = (r * t, s * l);
    let mut out = vec![0.0; c * t_up * l_up];
    for ci in 0..c {
        for i in 0..t_up {
            for j in 0..l_up {
                let part = &parts[(i % r) * s + (j % s)];
                out[(ci * t_up + i) * l_up + j] = part[(ci * t + i / r) * l + j / s];
            }
        }
    }
    out
}

#[test]
fn subpixel_interleave_matches_rearrangement_oracle() {
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(5000 + seed);
        let (r, s) = match seed % 4 {
            0 => (2, 3),
            1 => (1, 2),
            2 => (rng.gen_range(1..4), rng.gen_range(1..4)),
            _ => (2, 2),
        };
        let (c, t, l) = (
            rng.gen_range(1..3),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
        );
        let parts: Vec<Vec<f64>> = (0..r * s)
            .map(|_| (0..c * t * l).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut g = Graph::new();
        let ids: Vec<NodeId> = parts
            .iter()
            .map(|p| g.leaf_from(vec![c, t, l], p.clone(), false))
            .collect();
        let out = g.subpixel_interleave(&ids, (r, s)).unwrap();
        assert_eq!(g.shape(out), &[c, r * t, s * l]);
        let oracle = subpixel_oracle(&parts, c, t, l, r, s);
        assert_eq!(g.value(out), oracle.as_slice(), "seed {seed} must be bit-exact");
    }
}

#[test]
fn subpixel_scaled_identity_kernels_follow_grid_rule() {
    // Each part holds x scaled by its own interleave index, so every output
    // cell reveals which part it came from.
    let (c, t, l, r, s) = (1, 3, 2, 2, 3);
    let x: Vec<f64> = (1..=(t * l)).map(|v| v as f64).collect();
    let parts: Vec<Vec<f64>> = (0..r * s)
        .map(|p| x.iter().map(|&v| v * p as f64).collect())
        .collect();
    let mut g = Graph::new();
    let ids: Vec<NodeId> = parts
        .iter()
        .map(|p| g.leaf_from(vec![c, t, l], p.clone(), false))
        .collect();
    let out = g.subpixel_interleave(&ids, (r, s)).unwrap();
    for i in 0..r * t {
        for j in 0..s * l {
            let expect = x[(i / r) * l + j / s] * ((i % r) * s + (j % s)) as f64;
            assert_eq!(g.value(out)[i * (s * l) + j], expect);
        }
    }
}

#[test]
fn subpixel_output_extent_and_coverage() {
    // Input 4x5 at rate (2,3) upsamples to 8x15.
    let (c, t, l, r, s) = (1, 4, 5, 2usize, 3usize);
    let mut g = Graph::new();
    // Mark each input cell of each part with a unique id to confirm the
    // interleave visits every output cell exactly once.
    let ids: Vec<NodeId> = (0..r * s)
        .map(|p| {
            let data: Vec<f64> = (0..c * t * l).map(|i| (p * 1000 + i) as f64).collect();
            g.leaf_from(vec![c, t, l], data, false)
        })
        .collect();
    let out = g.subpixel_interleave(&ids, (r, s)).unwrap();
    assert_eq!(g.shape(out), &[1, 8, 15]);
    let mut seen = std::collections::HashSet::new();
    for &v in g.value(out) {
        assert!(seen.insert(v.to_bits()), "output cell written twice");
    }
    assert_eq!(seen.len(), 8 * 15);
}

#[test]
fn subpixel_gradients_match_finite_differences() {
    let mut rng = StdRng::seed_from_u64(99);
    let (c, t, l, r, s) = (2, 2, 3, 2usize, 2usize);
    let parts: Vec<Vec<f64>> = (0..r * s)
        .map(|_| (0..c * t * l).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let flat: Vec<f64> = parts.iter().flatten().copied().collect();
    let part_len = c * t * l;

    let eval = |v: &[f64]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = (0..r * s)
            .map(|p| g.leaf_from(vec![c, t, l], v[p * part_len..(p + 1) * part_len].to_vec(), false))
            .collect();
        let out = g.subpixel_interleave(&ids, (r, s)).unwrap();
        let sq = g.square(out);
        let loss = g.mean_all(sq);
        g.scalar_value(loss)
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = (0..r * s)
        .map(|p| g.leaf_from(vec![c, t, l], parts[p].clone(), true))
        .collect();
    let out = g.subpixel_interleave(&ids, (r, s)).unwrap();
    let sq = g.square(out);
    let loss = g.mean_all(sq);
    g.backward(loss).unwrap();

    let numeric = central_diff_grad(eval, &flat, 1e-4);
    for (p, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).unwrap();
        let slice = &numeric[p * part_len..(p + 1) * part_len];
        assert!(max_rel_err(analytic, slice, 1e-6) < 1e-4);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn valid_output_sizes_match_closed_form(
            c_in in 1usize..3, c_out in 1usize..3,
            m in 1usize..4, n in 1usize..4,
            extra_t in 0usize..6, extra_l in 0usize..6,
            rt in 1usize..3, rl in 1usize..3,
        ) {
            let t_in = m + extra_t;
            let l_in = n + extra_l;
            let x = Tensor::zeros(vec![c_in, t_in, l_in]);
            let k = Tensor::zeros(vec![c_out, c_in, m, n]);
            let b = Tensor::zeros(vec![c_out]);
            let (shape, _) = run_conv(&x, &k, &b, ConvSpec::with_stride(PaddingMode::Valid, (rt, rl)));
            prop_assert_eq!(shape, vec![c_out, (t_in - m) / rt + 1, (l_in - n) / rl + 1]);
        }
    }
}
