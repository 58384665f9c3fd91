mod common;

use common::{oracle_ri, DiagQuadratic};
use fedrough_core::model::ParamVector;
use fedrough_core::roughness::{normalized_tv, project_profile, roughness_index, Profile, RoughnessConfig};
use proptest::prelude::*;
use rayon::prelude::*;

/// A mildly rough landscape: a quadratic bowl with a sinusoidal ripple.
fn rippled(w: &ParamVector, freq: f64) -> f64 {
    w.as_slice()
        .iter()
        .enumerate()
        .map(|(i, x)| x * x * (1.0 + i as f64) + 0.01 * (freq * x).sin())
        .sum()
}

#[test]
fn anisotropic_quadratic_matches_oracle() {
    let q = DiagQuadratic {
        a: vec![2.0, 20.0],
        c: vec![0.0, 0.0],
    };
    let w = [0.05, 0.0];
    let cfg = RoughnessConfig {
        directions: 10,
        half_width: 0.01,
        intervals: 20,
        max_index: 10.0,
        seed: 2024,
    };
    let got = roughness_index(|p| Ok(p.as_slice()[0].powi(2) + 10.0 * p.as_slice()[1].powi(2)), &ParamVector::from_vec(w.to_vec()), &cfg).unwrap();
    let want = oracle_ri(&q, &w, 10, 0.01, 20, 10.0, 2024);
    assert!((got.ri_clipped - want).abs() <= 1e-12, "{} vs {want}", got.ri_clipped);
}

#[test]
fn symmetric_parabola_with_even_intervals() {
    for m in [2usize, 4, 10, 20] {
        let l = 0.01;
        let p = project_profile(|w| Ok(w.norm_sq()), &ParamVector::zeros(1), &ParamVector::from_vec(vec![1.0]), l, m).unwrap();
        assert!((normalized_tv(&p) - 1.0 / l).abs() < 1e-9, "m = {m}");
    }
}

#[test]
fn monotone_projections_collapse_to_zero() {
    // exp of a linear form is monotone along every line.
    let c = [0.3, -1.2, 0.7, 2.0];
    for seed in 0..10 {
        let cfg = RoughnessConfig {
            seed,
            half_width: 0.5,
            ..RoughnessConfig::default()
        };
        let r = roughness_index(
            |w| Ok(w.as_slice().iter().zip(&c).map(|(x, c)| x * c).sum::<f64>().exp()),
            &ParamVector::from_vec(vec![0.1, 0.2, -0.3, 0.0]),
            &cfg,
        )
        .unwrap();
        assert!(r.ri_raw.abs() <= 1e-12, "{}", r.ri_raw);
    }
}

#[test]
fn same_seed_same_report_across_threads() {
    let w = ParamVector::from_vec(vec![0.2, -0.1, 0.4, 0.05, 0.3]);
    let cfg = |seed| RoughnessConfig {
        seed,
        half_width: 0.3,
        ..RoughnessConfig::default()
    };
    let sequential: Vec<_> = (0..16).map(|s| roughness_index(|p| Ok(rippled(p, 40.0)), &w, &cfg(s)).unwrap()).collect();
    let parallel: Vec<_> = (0..16u64)
        .into_par_iter()
        .map(|s| roughness_index(|p| Ok(rippled(p, 40.0)), &w, &cfg(s)).unwrap())
        .collect();
    assert_eq!(sequential, parallel);
}

#[test]
fn flat_profile_and_monotone_profile_share_the_floor() {
    let flat = Profile::new(vec![3.0; 8], 0.25).unwrap();
    let monotone = Profile::new(vec![0.0, 1.0, 1.5, 4.0], 0.25).unwrap();
    assert_eq!(normalized_tv(&flat), 2.0);
    assert_eq!(normalized_tv(&monotone), 2.0);
}

proptest! {
    #[test]
    fn clipped_index_is_bounded_and_counted(
        dim in 1usize..8,
        directions in 2usize..12,
        intervals in 1usize..30,
        half_width in 0.001f64..2.0,
        max_index in 0.01f64..20.0,
        freq in 1.0f64..200.0,
        seed in any::<u64>(),
    ) {
        let cfg = RoughnessConfig { directions, half_width, intervals, max_index, seed };
        let w = ParamVector::from_vec((0..dim).map(|i| 0.1 * i as f64).collect());
        let r = roughness_index(|p| Ok(rippled(p, freq)), &w, &cfg).unwrap();
        prop_assert!(r.ri_raw >= 0.0);
        prop_assert!(r.ri_clipped >= 0.0 && r.ri_clipped <= max_index);
        prop_assert_eq!(r.ri_clipped, r.ri_raw.min(max_index));
        prop_assert_eq!(r.loss_evals, directions * (intervals + 1));
        prop_assert_eq!(r.per_direction_t.len(), directions);
        for t in &r.per_direction_t {
            prop_assert!(*t >= 1.0 / (2.0 * half_width));
        }
    }

    #[test]
    fn power_of_two_scaling_is_bitwise_invariant(
        k in -20i32..20,
        freq in 1.0f64..100.0,
        seed in any::<u64>(),
    ) {
        let a = 2f64.powi(k);
        let cfg = RoughnessConfig { seed, half_width: 0.2, ..RoughnessConfig::default() };
        let w = ParamVector::from_vec(vec![0.3, -0.4, 0.1]);
        let base = roughness_index(|p| Ok(rippled(p, freq)), &w, &cfg).unwrap();
        let scaled = roughness_index(|p| Ok(a * rippled(p, freq)), &w, &cfg).unwrap();
        prop_assert_eq!(base.per_direction_t, scaled.per_direction_t);
        prop_assert_eq!(base.ri_raw, scaled.ri_raw);
    }

    #[test]
    fn affine_rescaling_is_invariant_up_to_rounding(
        a in 0.01f64..100.0,
        b in -100.0f64..100.0,
        freq in 1.0f64..100.0,
        seed in any::<u64>(),
    ) {
        let cfg = RoughnessConfig { seed, half_width: 0.2, ..RoughnessConfig::default() };
        let w = ParamVector::from_vec(vec![0.3, -0.4, 0.1]);
        let base = roughness_index(|p| Ok(rippled(p, freq)), &w, &cfg).unwrap();
        let moved = roughness_index(|p| Ok(a * rippled(p, freq) + b), &w, &cfg).unwrap();
        for (x, y) in base.per_direction_t.iter().zip(&moved.per_direction_t) {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs());
        }
        prop_assert!((base.ri_raw - moved.ri_raw).abs() <= 1e-8);
    }
}
