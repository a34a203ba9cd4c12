//! Reference-implementation comparisons for the core operators: the engine
//! against naive loop oracles on randomized inputs.

mod common;

use common::*;
use geodsr_core::tensor::{ops, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn conv2d_matches_sextuple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..6 {
        let (n, ci, co, k, h, w) = match case {
            0 => (2, 3, 4, 3, 5, 5),
            1 => (1, 1, 1, 1, 4, 7),
            2 => (1, 4, 2, 5, 6, 6),
            3 => (3, 2, 5, 3, 4, 9),
            4 => (1, 8, 8, 3, 8, 8),
            _ => (2, 5, 3, 1, 3, 3),
        };
        let pad = (k - 1) / 2;
        let x: Tensor = rand_tensor(&mut rng, &[n, ci, h, w], -1.0, 1.0);
        let wt: Tensor = rand_tensor(&mut rng, &[co, ci, k, k], -1.0, 1.0);
        let b: Tensor = rand_tensor(&mut rng, &[co], -0.5, 0.5);
        let y = ops::conv2d(&x, &wt, Some(&b), pad).unwrap();
        let oracle = naive_conv2d(
            &x.to_vec().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            n,
            ci,
            h,
            w,
            &wt.to_vec().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            co,
            k,
            pad,
            Some(&b.to_vec().iter().map(|&v| v as f64).collect::<Vec<_>>()),
        );
        let diff = y
            .to_vec()
            .iter()
            .zip(&oracle)
            .map(|(a, o)| (*a as f64 - o).abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-5, "case {case}: max diff {diff}");
    }
}

#[test]
fn conv2d_is_linear_in_its_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Tensor = rand_tensor(&mut rng, &[1, 3, 6, 6], -1.0, 1.0);
    let y: Tensor = rand_tensor(&mut rng, &[1, 3, 6, 6], -1.0, 1.0);
    let w: Tensor = rand_tensor(&mut rng, &[4, 3, 3, 3], -1.0, 1.0);
    let (a, b) = (0.7f32, -1.3f32);
    let lhs_in = ops::add(
        &ops::mul_scalar(&x, a).unwrap(),
        &ops::mul_scalar(&y, b).unwrap(),
    )
    .unwrap();
    let lhs = ops::conv2d(&lhs_in, &w, None, 1).unwrap();
    let rhs = ops::add(
        &ops::mul_scalar(&ops::conv2d(&x, &w, None, 1).unwrap(), a).unwrap(),
        &ops::mul_scalar(&ops::conv2d(&y, &w, None, 1).unwrap(), b).unwrap(),
    )
    .unwrap();
    let diff = max_abs_diff(&lhs.to_vec(), &rhs.to_vec());
    assert!(diff < 1e-5, "linearity violated by {diff}");
}

#[test]
fn linear_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let x: Tensor = rand_tensor(&mut rng, &[7, 5], -2.0, 2.0);
    let w: Tensor = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let b: Tensor = rand_tensor(&mut rng, &[4], -1.0, 1.0);
    let y = ops::linear(&x, &w, &b).unwrap();
    let oracle = naive_linear(
        &x.to_vec().iter().map(|&v| v as f64).collect::<Vec<_>>(),
        7,
        5,
        &w.to_vec().iter().map(|&v| v as f64).collect::<Vec<_>>(),
        4,
        &b.to_vec().iter().map(|&v| v as f64).collect::<Vec<_>>(),
    );
    let diff = y
        .to_vec()
        .iter()
        .zip(&oracle)
        .map(|(a, o)| (*a as f64 - o).abs())
        .fold(0.0f64, f64::max);
    assert!(diff < 1e-6, "max diff {diff}");
}

#[test]
fn grid_sample_matches_closed_form_on_random_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (c, h, w) = (3, 7, 9);
    let feat: Tensor = rand_tensor(&mut rng, &[c, h, w], 0.0, 1.0);
    let feat64: Vec<f64> = feat.to_vec().iter().map(|&v| v as f64).collect();
    let coords: Vec<[f64; 2]> = (0..50)
        .map(|_| {
            [
                rand::Rng::gen_range(&mut rng, 0.0..(h - 1) as f64),
                rand::Rng::gen_range(&mut rng, 0.0..(w - 1) as f64),
            ]
        })
        .collect();
    let out = ops::grid_sample(&feat, &coords).unwrap();
    let ov = out.to_vec();
    for (m, &[y, x]) in coords.iter().enumerate() {
        let want = naive_bilinear(&feat64, c, h, w, y, x);
        for ch in 0..c {
            let got = ov[ch * coords.len() + m] as f64;
            assert!(
                (got - want[ch]).abs() < 1e-6,
                "query {m} channel {ch}: {got} vs {}",
                want[ch]
            );
        }
    }
}

#[test]
fn grid_sample_integer_coordinates_reproduce_values_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (c, h, w) = (2, 5, 6);
    let feat: Tensor = rand_tensor(&mut rng, &[c, h, w], -3.0, 3.0);
    let coords: Vec<[f64; 2]> = (0..h)
        .flat_map(|y| (0..w).map(move |x| [y as f64, x as f64]))
        .collect();
    let out = ops::grid_sample(&feat, &coords).unwrap();
    assert_eq!(out.to_vec(), feat.to_vec());
}

#[test]
fn layer_norm_statistics_on_random_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let (n, c, h, w) = (2, 8, 4, 5);
    let x: Tensor = rand_tensor(&mut rng, &[n, c, h, w], -2.0, 2.0);
    let gain = Tensor::ones(&[c]);
    let offset = Tensor::zeros(&[c]);
    let y = ops::layer_norm_channels(&x, &gain, &offset).unwrap();
    let v = y.to_vec();
    for s in 0..n {
        for j in 0..h * w {
            let vals: Vec<f32> = (0..c).map(|ch| v[(s * c + ch) * h * w + j]).collect();
            let mean: f32 = vals.iter().sum::<f32>() / c as f32;
            let var: f32 = vals.iter().map(|a| (a - mean) * (a - mean)).sum::<f32>() / c as f32;
            assert!(mean.abs() < 1e-5, "site {j}: mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "site {j}: var {var}");
        }
    }
}
