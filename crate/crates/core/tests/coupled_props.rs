use proptest::prelude::*;
use rsamp::coupling::{pinned_sections, sample_sc_matrix, BlockLayout};
use rsamp::potential;
use rsamp::state_evolution::{
    build_coupling, coupled_se_step, run_coupled_se, run_se, se_step, CoupledProfile,
};
use rsamp::{
    apply_seed, exact_posterior, generate_instance, ChannelParams, CouplingKind, DiscretePrior,
    QuadratureSpec, ScalarChannel, SeOptions, SeedStream,
};

fn channel(prior: DiscretePrior) -> ScalarChannel {
    ScalarChannel::new(prior, &QuadratureSpec::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn periodic_sums_are_gamma(half in 0usize..6, w_frac in 0.0f64..1.0) {
        let gamma = 2 * half + 1;
        let w = ((half as f64) * w_frac).floor() as usize;
        let spec = build_coupling(gamma, w, CouplingKind::Periodic).unwrap();
        for r in 0..gamma {
            let row: f64 = (0..gamma).map(|c| spec.j(r, c)).sum();
            let col: f64 = (0..gamma).map(|c| spec.j(c, r)).sum();
            prop_assert!((row - gamma as f64).abs() < 1e-12);
            prop_assert!((col - gamma as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_profile_reduces_to_homogeneous(half in 1usize..5, w_frac in 0.0f64..1.0, e in 0.0f64..1.0, delta in 0.01f64..1.0) {
        let gamma = 2 * half + 1;
        let w = ((half as f64) * w_frac).floor() as usize;
        let spec = build_coupling(gamma, w, CouplingKind::Periodic).unwrap();
        let ch = channel(DiscretePrior::binary());
        let p = ChannelParams::new(0.5, 1, delta).unwrap();
        let profile = CoupledProfile { e: vec![e; gamma], pinned: vec![false; gamma] };
        let next = coupled_se_step(&profile, &spec, &ch, &p).unwrap();
        let hom = se_step(e, &ch, &p).unwrap();
        for x in next.e {
            prop_assert!((x - hom).abs() < 1e-12);
        }
    }

    #[test]
    fn row_power_is_ensemble_invariant(half in 1usize..5, w_frac in 0.0f64..1.0, per in 1usize..4) {
        // Σ_c (J_rc/L)·(N/Γ) = N/L for every row block
        let gamma = 2 * half + 1;
        let w = ((half as f64) * w_frac).floor() as usize;
        let spec = build_coupling(gamma, w, CouplingKind::Periodic).unwrap();
        let b = 2;
        let l = gamma * per;
        let lay = BlockLayout::new(gamma, gamma, l, b).unwrap();
        for r in 0..gamma {
            let power: f64 = (0..gamma).map(|c| spec.j(r, c) / l as f64 * lay.cols_per_block as f64).sum();
            prop_assert!((power - (l * b) as f64 / l as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn homogeneous_fixed_point_is_stationary() {
    let ch = channel(DiscretePrior::binary());
    for delta in [0.01, 0.05, 0.1, 0.3, 1.0] {
        let p = ChannelParams::new(0.5, 1, delta).unwrap();
        let traj = run_se(&ch, &p, &SeOptions::for_prior_variance(1.0)).unwrap();
        assert!(traj.converged);
        let d = potential::rs_potential_de(traj.fixed_point, &ch, &p).unwrap();
        assert!(d.abs() <= 1e-6, "Δ={delta}: {d}");
    }
}

#[test]
fn coupled_trajectories_fall_and_keep_seed() {
    let ch = channel(DiscretePrior::sparse(0.1, 1.0).unwrap());
    let p = ChannelParams::new(0.3, 1, 0.0085).unwrap();
    let spec = build_coupling(25, 2, CouplingKind::Seeded).unwrap();
    let run = run_coupled_se(&spec, &ch, &p, &SeOptions::for_prior_variance(0.1), true).unwrap();
    let traj = run.trajectory.unwrap();
    for w in traj.windows(2) {
        for (r, (a, b)) in w[0].iter().zip(&w[1]).enumerate() {
            assert!(*b <= *a + 1e-10);
            if spec.is_pinned(r) {
                assert_eq!(*b, 0.0);
            }
        }
    }
}

#[test]
fn seeded_without_window_pins_nothing() {
    let spec = build_coupling(5, 0, CouplingKind::Seeded).unwrap();
    assert!(spec.boundary.is_empty());
    let p = ChannelParams::new(0.5, 1, 0.2).unwrap();
    let inst = generate_instance(&DiscretePrior::binary(), 10, &p, Some(&spec), &mut SeedStream::new(1).rng()).unwrap();
    let seeded = apply_seed(&inst, &spec).unwrap();
    assert_eq!(seeded.reduced.phi, inst.phi);
    assert_eq!(seeded.reduced.y, inst.y);
}

#[test]
fn eight_w_boundary_blocks() {
    for w in 1..=2 {
        let gamma = 8 * w + 3;
        let spec = build_coupling(gamma, w, CouplingKind::Seeded).unwrap();
        assert_eq!(spec.boundary.len(), 8 * w);
    }
    let spec = build_coupling(9, 1, CouplingKind::Seeded).unwrap();
    assert_eq!(spec.boundary.len(), 8);
    let mask = pinned_sections(&spec, 9).unwrap();
    assert_eq!(mask.iter().filter(|m| **m).count(), 8);
}

#[test]
fn column_subtraction_matches_explicit_pinning() {
    let prior = DiscretePrior::sparse(0.3, 1.0).unwrap();
    let spec = build_coupling(9, 1, CouplingKind::Seeded).unwrap();
    let p = ChannelParams::new(1.0, 1, 0.2).unwrap();
    for seed in 0..5 {
        let inst = generate_instance(&prior, 18, &p, Some(&spec), &mut SeedStream::new(seed).rng()).unwrap();
        assert_eq!(inst.pinned.iter().filter(|x| **x).count(), 16);
        let pinned = exact_posterior(&inst, &prior).unwrap();
        let seeded = apply_seed(&inst, &spec).unwrap();
        let reduced = exact_posterior(&seeded.reduced, &prior).unwrap();
        assert_eq!(pinned.weights.len(), reduced.weights.len());
        for (a, b) in pinned.weights.iter().zip(&reduced.weights) {
            assert!((a - b).abs() < 1e-12);
        }
        // pinned coordinates are known exactly
        for (sec, &pin) in seeded.pinned.iter().enumerate() {
            if pin {
                assert_eq!(pinned.mean[sec], inst.s[sec]);
            }
        }
    }
}

#[test]
fn full_band_matrix_has_uniform_variance() {
    let spec = build_coupling(5, 2, CouplingKind::Periodic).unwrap();
    let l = 500;
    let phi = sample_sc_matrix(&spec, l, 1, 500, &mut SeedStream::new(3).rng()).unwrap();
    let n = phi.len() as f64;
    let var = phi.iter().map(|x| x * x).sum::<f64>() / n;
    let target = 1.0 / l as f64;
    assert!((var - target).abs() < 3.0 * (2.0 / n).sqrt() * target);
}
