//! Kernels against independent dense or scalar-loop references.

mod common;

use hopflow::autodiff::ops::multi_head_attention;
use hopflow::autodiff::Tape;
use hopflow::graph::{normalize, FeatureMatrix, NormMode, SparseGraph};
use hopflow::hops::{precompute_hops, spmm};
use hopflow::objectives::barlow_loss;
use hopflow::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect()
}

fn as_matrix(x: &[f64], n: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::new(n, d, x.iter().map(|&v| v as f32).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn spmm_and_hops_match_dense_powers(
        seed in any::<u64>(),
        n in 1usize..=8,
        d in 1usize..=4,
        hops in 0usize..=4,
        sym in any::<bool>(),
        loops in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = common::random_edges(&mut rng, n);
        let mode = if sym { NormMode::Sym } else { NormMode::Row };
        let a = normalize(&SparseGraph::from_edges(n, &edges, true).unwrap(), mode, loops);
        let dense = common::dense_normalized(n, &edges, mode, loops);
        prop_assert!(common::max_abs_diff(&a.to_dense(), &dense) < 1e-12);

        let x = features(&mut rng, n, d);
        let y = spmm(&a, &as_matrix(&x, n, d)).unwrap();
        let y: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
        prop_assert!(common::max_abs_diff(&y, &common::dense_matmul(&dense, &x, n, d)) < 1e-5);

        let h = precompute_hops(&a, &as_matrix(&x, n, d), hops).unwrap();
        let expect = common::dense_hops(&dense, &x, n, d, hops);
        for (l, block) in expect.iter().enumerate() {
            let got: Vec<f64> = (0..n).flat_map(|i| h.hop(i, l).iter().map(|&v| v as f64)).collect();
            prop_assert!(common::max_abs_diff(&got, block) < 1e-5, "hop {}", l);
        }
    }

    #[test]
    fn attention_matches_nested_loops(
        seed in any::<u64>(),
        b in 1usize..=3,
        l in 1usize..=5,
        heads in 1usize..=3,
        per_head in 1usize..=3,
    ) {
        let d = heads * per_head;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect() };
        let (x, wq, wk, wv) = (rand(b * l * d), rand(d * d), rand(d * d), rand(d * d));
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(Tensor::new(vec![b, l, d], x.clone()).unwrap(), false);
        let w: Vec<_> = [&wq, &wk, &wv]
            .iter()
            .map(|w| t.leaf(Tensor::new(vec![d, d], w.to_vec()).unwrap(), false))
            .collect();
        let out = multi_head_attention(&mut t, xv, w[0], w[1], w[2], heads).unwrap();
        let expect = common::attention(&x, b, l, d, &wq, &wk, &wv, heads);
        prop_assert!(common::max_abs_diff(t.value(out).data(), &expect) < 1e-6);
    }

    #[test]
    fn barlow_matches_double_loop(
        seed in any::<u64>(),
        n in 2usize..=10,
        d in 1usize..=6,
        alpha in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut t = Tape::<f64>::new();
        let va = t.leaf(Tensor::new(vec![n, d], a.clone()).unwrap(), false);
        let vb = t.leaf(Tensor::new(vec![n, d], b.clone()).unwrap(), false);
        let loss = barlow_loss(&mut t, va, vb, alpha).unwrap();
        prop_assert!((t.value(loss).item() - common::barlow(&a, &b, n, d, alpha)).abs() < 1e-6);
    }
}
