use archscale_core::dataset::Dataset;
use archscale_core::gradsim::{simulate_matrix_product, SimConfig};
use archscale_core::model::{compute_flops, count_params, tokens_for_compute, Architecture, LossRecord, ScaleGroup};
use archscale_core::scaling_law::{d_crit, penalty, predict_loss, ScalingLawParams};
use proptest::prelude::*;

fn arch(d: u64, w: u64) -> Architecture {
    Architecture::new(d, w).unwrap()
}

proptest! {
    #[test]
    fn params_grow_with_depth_and_width(d in 1u64..512, w in 2u64..50_000) {
        let n = count_params(&arch(d, w));
        prop_assert!(count_params(&arch(d + 1, w)) > n);
        prop_assert!(count_params(&arch(d, w + 1)) > n);
    }

    #[test]
    fn flops_and_tokens_invert(d in 1u64..200, w in 64u64..20_000, t in 1e6f64..1e13) {
        let a = arch(d, w);
        let c = compute_flops(&a, t).unwrap();
        let back = tokens_for_compute(&a, c).unwrap();
        prop_assert!((back - t).abs() / t < 1e-12);
    }

    #[test]
    fn penalty_vanishes_below_critical_and_grows_above(d in 1u64..300, w in 2u64..40_000) {
        let p = ScalingLawParams::table1();
        let dc = d_crit(w, &p).unwrap();
        let phi = penalty(&arch(d, w), &p).unwrap();
        prop_assert!(phi >= 0.0);
        if (d as f64) <= dc {
            prop_assert_eq!(phi, 0.0);
        } else {
            prop_assert!(penalty(&arch(d + 1, w), &p).unwrap() > phi);
        }
    }

    #[test]
    fn critical_depth_increases_with_width(w in 2u64..100_000) {
        let p = ScalingLawParams::table1();
        prop_assert!(d_crit(w + 1, &p).unwrap() > d_crit(w, &p).unwrap());
    }

    #[test]
    fn more_tokens_never_hurt(d in 1u64..100, w in 64u64..8192, t in 1e8f64..1e12) {
        let p = ScalingLawParams::table1();
        let a = arch(d, w);
        prop_assert!(predict_loss(&a, Some(2.0 * t), &p).unwrap() < predict_loss(&a, Some(t), &p).unwrap());
    }

    #[test]
    fn simulated_ratios_are_bounded(w in 4u64..96, d in 2u64..24, sigma in 0.0f64..3.0, seed in any::<u64>()) {
        let cfg = SimConfig { depth: d, width: w, sigma, trials: 4, rng_seed: seed, ..SimConfig::for_width(w).unwrap() };
        let p = simulate_matrix_product(&cfg).unwrap();
        prop_assert_eq!(p.ratios.len() as u64, d);
        prop_assert_eq!(*p.ratios.last().unwrap(), 1.0);
        prop_assert!(p.ratios.iter().all(|r| *r > 0.0 && *r <= 1.0 + 1e-12));
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::btree_map(
        (1u64..200, 2u64..9000, 0usize..4),
        (prop::option::of(1e6f64..1e13), 0.5f64..12.0),
        0..40,
    )) {
        let mut ds = Dataset::empty("generated");
        for ((d, w, g), (t, loss)) in rows {
            ds.records.push(LossRecord::new(arch(d, w), t, loss, None, ScaleGroup::ALL[g]).unwrap());
        }
        let back = Dataset::parse_csv(&ds.to_csv_string().unwrap(), "generated").unwrap();
        prop_assert_eq!(back, ds);
    }
}
