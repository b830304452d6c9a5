use proptest::prelude::*;
use rsamp::amp::{free_mse, rescale, run_amp, run_sc_amp, AmpConfig, TauMode};
use rsamp::potential::{self, stationary_points};
use rsamp::state_evolution::{build_coupling, run_se};
use rsamp::{
    generate_instance, ChannelParams, CouplingKind, DiscretePrior, QuadratureSpec, ScalarChannel,
    SeOptions, SeedStream, ThresholdConfig,
};

fn channel(prior: DiscretePrior) -> ScalarChannel {
    ScalarChannel::new(prior, &QuadratureSpec::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn amp_is_reproducible_and_bounded(idx in 0usize..3, l in 50usize..300, log_d in -2.0f64..0.5, seed in 0u64..1000) {
        let prior = match idx {
            0 => DiscretePrior::binary(),
            1 => DiscretePrior::sparse(0.2, 2.0).unwrap(),
            _ => DiscretePrior::new(1, vec![vec![-1.5], vec![0.5]], vec![0.25, 0.75]).unwrap(),
        };
        let s_max = prior.s_max();
        let ch = channel(prior.clone());
        let p = ChannelParams::new(0.6, 1, 10f64.powf(log_d)).unwrap();
        let inst = generate_instance(&prior, l, &p, None, &mut SeedStream::new(seed).rng()).unwrap();
        let cfg = AmpConfig { t_max: 25, ..AmpConfig::default() };
        let a = run_amp(&inst, &ch, &cfg).unwrap();
        let b = run_amp(&inst, &ch, &cfg).unwrap();
        prop_assert_eq!(&a.mse_trace, &b.mse_trace);
        prop_assert_eq!(&a.estimate, &b.estimate);
        prop_assert!(a.estimate.iter().all(|x| x.abs() <= s_max + 1e-12));
        prop_assert!(a.mse_trace.iter().chain(&a.ymse_trace).all(|x| x.is_finite()));
    }
}

#[test]
fn rescaled_matrix_has_variance_one_over_m() {
    let prior = DiscretePrior::binary();
    let p = ChannelParams::new(10.0, 1, 0.1).unwrap();
    let inst = generate_instance(&prior, 1000, &p, None, &mut SeedStream::new(1).rng()).unwrap();
    assert_eq!(inst.m(), 10_000);
    let (phi0, _) = rescale(&inst);
    let n = phi0.len() as f64;
    let var = phi0.iter().map(|x| x * x).sum::<f64>() / n;
    let target = 1.0 / inst.m() as f64;
    assert!((var - target).abs() < 3.0 * (2.0 / n).sqrt() * target, "{var} vs {target}");
}

#[test]
fn onsager_coefficient_follows_state_evolution() {
    // w^(t) → E^(t)/(Δ + E^(t−1)) for large L
    let prior = DiscretePrior::binary();
    let ch = channel(prior.clone());
    let p = ChannelParams::new(0.6, 1, 0.2).unwrap();
    let se = run_se(&ch, &p, &SeOptions::for_prior_variance(1.0)).unwrap();
    let cfg = AmpConfig { t_max: 6, stop_eps: Some(0.0), ..AmpConfig::default() };
    let seeds = SeedStream::new(21);
    let runs: Vec<Vec<f64>> = (0..5)
        .map(|k| {
            let inst = generate_instance(&prior, 5000, &p, None, &mut seeds.substream("onsager", k).rng()).unwrap();
            run_amp(&inst, &ch, &cfg).unwrap().onsager_trace
        })
        .collect();
    for t in 1..6 {
        let xs: Vec<f64> = runs.iter().map(|r| r[t]).collect();
        let est = rsamp::Estimate::from_samples(&xs);
        let limit = se.values[t] / (p.delta + se.values[t - 1]);
        // sampling spread across seeds plus the O(1/√N) finite-size bias
        assert!((est.value - limit).abs() <= 3.0 * est.stderr + 0.01, "t={t}: {est:?} vs {limit}");
    }
}

#[test]
fn hard_phase_amp_sticks_to_the_bad_fixed_point() {
    let prior = DiscretePrior::binary();
    let ch = channel(prior.clone());
    let base = ChannelParams::new(0.5, 1, 0.03).unwrap();
    let th = potential::thresholds(&ch, &base, &ThresholdConfig::default()).unwrap();
    assert!(th.delta_amp < 0.03 && 0.03 < th.delta_rs);
    let se = run_se(&ch, &base, &SeOptions::for_prior_variance(1.0)).unwrap();
    let e_tilde = stationary_points(&ch, &base, 512).unwrap().global_min;
    assert!(se.fixed_point > e_tilde + 0.1);
    let finals: Vec<f64> = (0..3)
        .map(|k| {
            let inst = generate_instance(&prior, 5000, &base, None, &mut SeedStream::new(k).rng()).unwrap();
            run_amp(&inst, &ch, &AmpConfig::default()).unwrap().final_mse()
        })
        .collect();
    let mean = finals.iter().sum::<f64>() / 3.0;
    assert!((mean - se.fixed_point).abs() <= 0.02, "{finals:?} vs {}", se.fixed_point);
}

#[test]
fn seeded_coupling_beats_the_uncoupled_fixed_point() {
    // experimental coupled AMP inside the hard phase
    let prior = DiscretePrior::binary();
    let ch = channel(prior.clone());
    let p = ChannelParams::new(0.5, 1, 0.025).unwrap();
    let uncoupled = run_se(&ch, &p, &SeOptions::for_prior_variance(1.0)).unwrap().fixed_point;
    let cases = [(15, TauMode::StateEvolution), (15, TauMode::Empirical), (21, TauMode::Empirical)];
    for (gamma, tau) in cases {
        let spec = build_coupling(gamma, 1, CouplingKind::Seeded).unwrap();
        let inst = generate_instance(&prior, gamma * 200, &p, Some(&spec), &mut SeedStream::new(3).rng()).unwrap();
        let state = run_sc_amp(&inst, &ch, &AmpConfig { tau, ..AmpConfig::default() }).unwrap();
        let free = free_mse(&state, &inst);
        assert!(free < uncoupled - 0.1, "Γ={gamma} {tau:?}: {free} vs {uncoupled}");
    }
}

#[test]
fn vector_sections_are_tracked_conjecture() {
    // B = 2 tracking, asserted with the scalar tolerance
    let prior = DiscretePrior::one_hot(2, 1.0).unwrap();
    let ch = channel(prior.clone());
    let p = ChannelParams::new(0.6, 2, 0.1).unwrap();
    let se = run_se(&ch, &p, &SeOptions::for_prior_variance(prior.v())).unwrap();
    let cfg = AmpConfig { t_max: 30, stop_eps: Some(0.0), ..AmpConfig::default() };
    let seeds = SeedStream::new(77);
    let mut dev = vec![0.0; 31];
    for k in 0..10 {
        let inst = generate_instance(&prior, 2500, &p, None, &mut seeds.substream("b2", k).rng()).unwrap();
        let st = run_amp(&inst, &ch, &cfg).unwrap();
        for (t, d) in dev.iter_mut().enumerate() {
            let e = se.values.get(t).copied().unwrap_or(se.fixed_point);
            *d += (st.mse_trace[t] - e).abs() / 10.0;
        }
    }
    let worst = dev.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= 0.02, "{dev:?}");
}
