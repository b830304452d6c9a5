use proptest::prelude::*;
use rsamp::potential::{self, rs_potential, rs_potential_de, stationary_points};
use rsamp::{ChannelParams, DiscretePrior, QuadratureSpec, ScalarChannel, ThresholdConfig};

fn binary() -> ScalarChannel {
    ScalarChannel::new(DiscretePrior::binary(), &QuadratureSpec::default()).unwrap()
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn psi_vanishes_at_zero(delta in 1e-6f64..1e3, alpha in 0.05f64..4.0, b in 1usize..5) {
        let p = ChannelParams::new(alpha, b, delta).unwrap();
        prop_assert_eq!(potential::psi(0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn potential_derivative_matches_finite_differences(e in 0.02f64..0.98, delta in 0.01f64..2.0) {
        let ch = binary();
        let p = ChannelParams::new(0.5, 1, delta).unwrap();
        let h = 1e-5;
        let fd = (rs_potential(e + h, &ch, &p).unwrap() - rs_potential(e - h, &ch, &p).unwrap()) / (2.0 * h);
        let an = rs_potential_de(e, &ch, &p).unwrap();
        prop_assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "E={} Δ={}: {} vs {}", e, delta, fd, an);
    }
}

#[test]
fn stationary_points_are_fixed_points() {
    for (prior, alpha) in [(DiscretePrior::binary(), 0.5), (DiscretePrior::sparse(0.1, 1.0).unwrap(), 0.3)] {
        let v = prior.v();
        let ch = ScalarChannel::new(prior, &QuadratureSpec::default()).unwrap();
        for delta in log_grid(1e-3, 1.0, 50) {
            let p = ChannelParams::new(alpha, 1, delta).unwrap();
            let set = stationary_points(&ch, &p, 512).unwrap();
            assert!(!set.points.is_empty());
            for pt in &set.points {
                let gap = potential::fixed_point_gap(pt.e, &ch, &p).abs();
                assert!(gap <= 1e-7 * v, "Δ={delta} E*={} gap {gap}", pt.e);
            }
        }
    }
}

#[test]
fn optimal_potential_falls_with_noise_and_minimizer_jumps_once() {
    let ch = binary();
    let base = ChannelParams::new(0.5, 1, 0.1).unwrap();
    let th = potential::thresholds(&ch, &base, &ThresholdConfig::default()).unwrap();
    let grid = log_grid(0.005, 0.5, 120);
    let mut values = Vec::new();
    let mut e_tilde = Vec::new();
    for &d in &grid {
        let set = stationary_points(&ch, &base.with_delta(d), 512).unwrap();
        values.push(set.global_min_value());
        e_tilde.push(set.global_min);
    }
    // MI degrades with noise
    for (i, w) in values.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-12, "i_RS rose between Δ={} and Δ={}", grid[i], grid[i + 1]);
    }
    // and is continuous across Δ_RS while the minimizer jumps
    let eps = 1e-5;
    let below = stationary_points(&ch, &base.with_delta(th.delta_rs - eps), 512).unwrap();
    let above = stationary_points(&ch, &base.with_delta(th.delta_rs + eps), 512).unwrap();
    assert!((below.global_min_value() - above.global_min_value()).abs() < 1e-3);
    assert!(above.global_min - below.global_min > 0.1);
    // a single large jump in the minimizer, bracketing Δ_RS
    let jumps: Vec<usize> = e_tilde.windows(2).enumerate().filter(|(_, w)| (w[1] - w[0]).abs() > 0.1).map(|(i, _)| i).collect();
    assert_eq!(jumps.len(), 1, "{e_tilde:?}");
    let i = jumps[0];
    assert!(grid[i] - th.tol <= th.delta_rs && th.delta_rs <= grid[i + 1] + th.tol);
}

#[test]
fn algorithmic_threshold_never_exceeds_static() {
    let ch = ScalarChannel::new(DiscretePrior::sparse(0.1, 1.0).unwrap(), &QuadratureSpec::default()).unwrap();
    for alpha in [0.2, 0.25, 0.3, 0.35] {
        let th = potential::thresholds(&ch, &ChannelParams::new(alpha, 1, 0.1).unwrap(), &ThresholdConfig::default()).unwrap();
        assert!(th.delta_amp <= th.delta_rs + th.tol, "α={alpha}: {th:?}");
    }
}

#[test]
fn noise_derivative_matches_total_derivative() {
    // d i_RS(Ẽ(Δ); Δ)/dΔ⁻¹ against a central difference in γ = 1/Δ with Ẽ recomputed
    let ch = binary();
    let base = ChannelParams::new(0.5, 1, 0.1).unwrap();
    let min_value = |gamma: f64| stationary_points(&ch, &base.with_delta(1.0 / gamma), 512).unwrap().global_min_value();
    for delta in [0.2, 0.3, 0.5, 1.0] {
        let gamma = 1.0 / delta;
        let h = 1e-4 * gamma;
        let fd = (min_value(gamma + h) - min_value(gamma - h)) / (2.0 * h);
        let set = stationary_points(&ch, &base.with_delta(delta), 512).unwrap();
        let an = potential::rs_mi_noise_derivative(set.global_min, &base.with_delta(delta));
        assert!((fd - an).abs() <= 1e-3 * an.abs(), "Δ={delta}: {fd} vs {an}");
    }
}
