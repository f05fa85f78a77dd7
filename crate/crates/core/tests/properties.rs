//! Randomized invariants across modules.

use missbgm::autodiff::{Tape, Tensor};
use missbgm::data::{inject_mnar_mask, normal_cdf, normal_pdf, normal_quantile, Dataset, Scaler};
use missbgm::inference::quantile_sorted;
use missbgm::metrics::{average_ranks, rmse_missing, spearman};
use missbgm::networks::{Checkpoint, FeedForward, GeneratorNet, DEFAULT_VAR_FLOOR};
use missbgm::objectives::MaskedBatch;
use missbgm::rng::Rng;
use missbgm::training::{knn_impute_with, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;

fn table(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-50.0f64..50.0, r * c).prop_map(move |d| Tensor::new(r, c, d).unwrap())
    })
}

/// Table plus a mask that keeps at least one observed entry per row and column.
fn masked_table() -> impl Strategy<Value = (Tensor, Tensor)> {
    (2..=12usize, 1..=6usize).prop_flat_map(|(r, c)| {
        (
            prop::collection::vec(-5.0f64..5.0, r * c),
            prop::collection::vec(any::<bool>(), r * c),
        )
            .prop_map(move |(d, m)| {
                let x = Tensor::new(r, c, d).unwrap();
                let mut mask = Tensor::new(r, c, m.into_iter().map(f64::from).collect()).unwrap();
                for i in 0..r {
                    mask.set(i, i % c, 1.0);
                }
                for j in 0..c {
                    mask.set(j % r, j, 1.0);
                }
                (x, mask)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantiles_are_monotone_and_bounded(mut v in prop::collection::vec(-1e3f64..1e3, 1..60), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (ql, qh) = (quantile_sorted(&v, lo), quantile_sorted(&v, hi));
        prop_assert!(ql <= qh);
        prop_assert!(v[0] <= ql && qh <= v[v.len() - 1]);
        prop_assert_eq!(quantile_sorted(&v, 0.0), v[0]);
        prop_assert_eq!(quantile_sorted(&v, 1.0), v[v.len() - 1]);
    }

    #[test]
    fn ranks_sum_to_triangular_number(v in prop::collection::vec(-5i32..5, 1..40)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let n = v.len() as f64;
        let s: f64 = average_ranks(&v).iter().sum();
        prop_assert!((s - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn spearman_is_symmetric_and_bounded(a in prop::collection::vec(-10.0f64..10.0, 3..30), seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|x| x + rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        if let (Ok(ab), Ok(ba)) = (spearman(&a, &b), spearman(&b, &a)) {
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        }
    }

    #[test]
    fn scaler_round_trips(x in table(20, 6)) {
        let x = Tensor::from_fn(x.rows().max(2), x.cols(), |i, j| if i < x.rows() { x.get(i, j) } else { x.get(0, j) + 1.0 });
        let s = Scaler::fit(&x).unwrap();
        let back = s.invert(&s.apply(&x).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn normal_quantile_inverts_cdf(x in -8.0f64..8.0) {
        let u = normal_cdf(x);
        prop_assume!(u > 0.0 && u < 1.0);
        // near u = 1 the spacing of representable u limits any inverse
        let ulp = f64::EPSILON * u.max(1e-300);
        let tol = 1e-8 * (1.0 + x.abs()) + 2.0 * ulp / normal_pdf(x);
        prop_assert!((normal_quantile(u).unwrap() - x).abs() < tol);
    }

    #[test]
    fn assembled_batches_keep_observed_values_bitwise((x, mask) in masked_table(), seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let free = Tensor::from_fn(x.rows(), x.cols(), |_, _| rand::Rng::random_range(&mut rng, -9.0..9.0));
        let batch = MaskedBatch::new(&x, &mask).unwrap();
        let tape = Tape::new();
        let v = tape.var(free.clone());
        let out = batch.assemble(v).unwrap();
        let grad = tape.backward(out.sum()).unwrap().wrt(v);
        for k in 0..x.len() {
            if mask.data()[k] == 1.0 {
                prop_assert_eq!(out.value().data()[k].to_bits(), x.data()[k].to_bits());
                prop_assert_eq!(grad.data()[k], 0.0);
            } else {
                prop_assert_eq!(out.value().data()[k], free.data()[k]);
                prop_assert_eq!(grad.data()[k], 1.0);
            }
        }
    }

    #[test]
    fn knn_fill_keeps_observed_entries((x, mask) in masked_table(), k in 1usize..6) {
        let x_obs = x.zip_map(&mask, |v, r| if r == 1.0 { v } else { f64::NAN });
        let ds = Dataset::new(x_obs, mask.clone(), None).unwrap();
        let filled = knn_impute_with(&ds, k).unwrap();
        prop_assert!(filled.is_finite());
        for k in 0..x.len() {
            if mask.data()[k] == 1.0 {
                prop_assert_eq!(filled.data()[k].to_bits(), x.data()[k].to_bits());
            }
        }
    }

    #[test]
    fn rmse_vanishes_only_on_agreement((x, mask) in masked_table(), shift in 0.1f64..3.0) {
        prop_assume!(mask.data().contains(&0.0));
        prop_assert_eq!(rmse_missing(&x, &x, &mask).unwrap(), 0.0);
        let off = x.map(|v| v + shift);
        prop_assert!((rmse_missing(&off, &x, &mask).unwrap() - shift).abs() < 1e-12);
    }

    #[test]
    fn injected_masks_leave_no_empty_line(x in table(30, 6), rate in 0.05f64..0.95, seed in any::<u64>()) {
        let (ds, spec) = inject_mnar_mask(&x, rate, seed).unwrap();
        prop_assert!((0..ds.n()).all(|i| (0..ds.p()).any(|j| ds.is_observed(i, j))));
        prop_assert!((0..ds.p()).all(|j| (0..ds.n()).any(|i| ds.is_observed(i, j))));
        prop_assert!(spec.repaired <= ds.n() + ds.p());
    }

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), d in 1usize..4, p in 1usize..5, bnn in any::<bool>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let v = bnn.then_some(0.7);
        let g = GeneratorNet::new(d, p, &[3], v, DEFAULT_VAR_FLOOR, &mut rng);
        let m = FeedForward::new(p, &[2], p, v, &mut rng);
        let mut ck = Checkpoint::default();
        ck.networks.insert("generator".into(), g.to_layers());
        ck.networks.insert("missingness".into(), m.to_layers());
        ck.tensors.insert("t".into(), Tensor::from_fn(2, 3, |i, j| (i as f64 - 0.1) * (j as f64 + 1e-17)));
        ck.meta.insert("note".into(), "x".into());
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(GeneratorNet::from_layers(back.network("generator").unwrap(), DEFAULT_VAR_FLOOR).unwrap(), g);
    }

    #[test]
    fn train_config_pairs_round_trip(epochs in 1usize..500, beta in 0.0f64..5.0, lr in 1e-6f64..1.0, units in prop::collection::vec(1usize..64, 0..4), bnn in any::<bool>()) {
        let cfg = TrainConfig { epochs, beta, lr_z: lr, g_units: units, use_bnn: bnn, ..TrainConfig::default() };
        let mut back = TrainConfig::default();
        for (k, v) in cfg.pairs() {
            prop_assert!(back.set(&k, &v).unwrap(), "unknown key {}", k);
        }
        prop_assert_eq!(back, cfg);
    }
}
