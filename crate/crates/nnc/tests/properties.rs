//! Property tests: invariants that must hold for arbitrary inputs, not just
//! hand-picked examples.

use nnc::baselines::anc::{anc_power, AncConfig};
use nnc::baselines::dct::{dct2_block, idct2_block, BLOCK};
use nnc::baselines::separation::{awgn_capacity, awgn_power};
use nnc::data::synthetic_dataset;
use nnc::linalg::{matmul_par, matmul_seq};
use nnc::metrics::{channel_utilization, psnr_from_mse};
use nnc::tape::Tape;
use nnc::tensor::Tensor;
use nnc::topology::{butterfly_with_dims, chain, LambdaSpec, Topology};
use proptest::prelude::*;

fn tensor_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-10.0..10.0f64, rows * cols)
        .prop_map(move |v| Tensor::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // parallel and sequential kernels are bit-identical for any input
    #[test]
    fn matmul_par_bit_identical_to_seq(
        m in 1usize..40, k in 1usize..40, n in 1usize..40, salt in 0u64..1000
    ) {
        let a = Tensor::from_vec(m, k, (0..m * k)
            .map(|i| ((i as u64).wrapping_mul(salt + 1) % 97) as f64 - 48.0)
            .collect()).unwrap();
        let b = Tensor::from_vec(k, n, (0..k * n)
            .map(|i| ((i as u64).wrapping_mul(salt + 7) % 89) as f64 - 44.0)
            .collect()).unwrap();
        prop_assert_eq!(matmul_seq(&a, &b), matmul_par(&a, &b));
    }

    // AWGN capacity and power are inverses of each other
    #[test]
    fn awgn_capacity_power_round_trip(c in 0.0..20.0f64, var in 1e-6..1.0f64) {
        let p = awgn_power(c, var);
        prop_assert!(p >= 0.0);
        prop_assert!((awgn_capacity(p, var) - c).abs() < 1e-9);
    }

    // pSNR decreases when MSE increases, for any fixed peak
    #[test]
    fn psnr_monotone_in_mse(m1 in 1e-8..1.0f64, factor in 1.001..100.0f64, peak in 0.1..2.0f64) {
        prop_assert!(psnr_from_mse(m1, peak) > psnr_from_mse(m1 * factor, peak));
    }

    // utilization percentages are always in [0, 100] and nonzero >= above-threshold
    #[test]
    fn utilization_percentages_bounded(
        powers in proptest::collection::vec(0.0..1.0f64, 1..20),
        var in 1e-6..1e-2f64
    ) {
        let vars = vec![var; powers.len()];
        let util = channel_utilization(&powers, &vars, 1e-9, 3.0).unwrap();
        prop_assert!((0.0..=100.0).contains(&util.nonzero_pct));
        prop_assert!((0.0..=100.0).contains(&util.above_threshold_pct));
        prop_assert!(util.nonzero_pct >= util.above_threshold_pct);
    }

    // the orthonormal DCT round-trips any block
    #[test]
    fn dct_round_trips(vals in proptest::collection::vec(-1.0..1.0f64, BLOCK * BLOCK)) {
        let mut block = [[0.0; BLOCK]; BLOCK];
        for r in 0..BLOCK {
            for c in 0..BLOCK {
                block[r][c] = vals[r * BLOCK + c];
            }
        }
        let back = idct2_block(&dct2_block(&block));
        for r in 0..BLOCK {
            for c in 0..BLOCK {
                prop_assert!((back[r][c] - block[r][c]).abs() < 1e-10);
            }
        }
    }

    // topology JSON round trip preserves the content hash
    #[test]
    fn topology_hash_survives_json(
        k in 1usize..16, var in 0.0..1e-2f64, d1 in 1usize..16, d2 in 1usize..16,
        lambda in 0.0..1.0f64
    ) {
        let topo = butterfly_with_dims(k, var, &LambdaSpec::Uniform(lambda), [d1, d2]);
        let back = Topology::from_json_str(&topo.to_json()).unwrap();
        prop_assert_eq!(back.content_hash(), topo.content_hash());
        prop_assert!(back.validate().is_empty());
    }

    // synthetic images always land in [0, 1] and are seed-deterministic
    #[test]
    fn synthetic_images_in_unit_interval(count in 1usize..8, seed in 0u64..1000) {
        let a = synthetic_dataset(count, seed, nnc::data::SplitTag::Train);
        prop_assert!(a.images.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let b = synthetic_dataset(count, seed, nnc::data::SplitTag::Train);
        prop_assert_eq!(a.images, b.images);
    }

    // transmit power scales quadratically with the amplification factor on a
    // noiseless network
    #[test]
    fn anc_power_quadratic_in_beta(
        beta in 0.01..5.0f64, hops in 1usize..4, k in 1usize..6
    ) {
        let dim = k * 2;
        let topo = chain(hops, k, 0.0, 0.0, dim);
        let batch = Tensor::from_vec(2, dim, (0..2 * dim).map(|i| i as f64 / (2 * dim) as f64).collect()).unwrap();
        let p1 = anc_power(&topo, &AncConfig::for_topology(&topo, beta).unwrap(), &batch, 0).unwrap();
        let p2 = anc_power(&topo, &AncConfig::for_topology(&topo, 2.0 * beta).unwrap(), &batch, 0).unwrap();
        // on an h-hop noiseless chain doubling beta multiplies hop j's power
        // by 4^j; the total is bounded between 4x and 4^h x
        prop_assert!(p2 >= 4.0 * p1 - 1e-9 * p1.max(1.0));
        prop_assert!(p2 <= 4.0f64.powi(hops as i32) * p1 + 1e-9 * p1.max(1.0));
    }

    // BCE is minimized when the prediction equals the target
    #[test]
    fn bce_minimized_at_target(
        target in proptest::collection::vec(0.05..0.95f64, 1..10),
        other in proptest::collection::vec(0.05..0.95f64, 1..10)
    ) {
        let n = target.len().min(other.len());
        let t = Tensor::from_vec(1, n, target[..n].to_vec()).unwrap();
        let o = Tensor::from_vec(1, n, other[..n].to_vec()).unwrap();

        let mut tape = Tape::new();
        let at_target = tape.leaf(t.clone());
        let l_min = tape.bce_loss(at_target, &t).unwrap();
        let elsewhere = tape.leaf(o);
        let l_other = tape.bce_loss(elsewhere, &t).unwrap();
        let v_min = tape.value(l_min).scalar_value().unwrap();
        let v_other = tape.value(l_other).scalar_value().unwrap();
        prop_assert!(v_min <= v_other + 1e-12);
        prop_assert!(v_min >= 0.0);
    }
}
