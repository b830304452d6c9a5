use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use rsamp::amp::{amp_fixedpoint_identity, free_mse, run_amp, run_sc_amp, AmpConfig};
use rsamp::instance::{
    free_energy_spread, immse_check, mmse_relation_check, nishimori_check, replica_check, sc_mi_invariance_check,
};
use rsamp::potential::{self, potential_curve};
use rsamp::state_evolution::{delta_amp_coupled, run_coupled_se, run_se, CoupledThresholdConfig};
use rsamp::{generate_instance, SeOptions, SeedStream};
use serde::Serialize;

use crate::config::Config;
use crate::output::{num, write_csv, write_json, Csv};
use crate::Check;

pub fn potential_scan(c: &Config) -> Result<()> {
    let ch = c.channel()?;
    let curves = c
        .deltas()?
        .into_par_iter()
        .map(|d| Ok(potential_curve(&ch, &c.params(d)?, c.thresholds.e_points)?))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = Csv::new("delta,E,i_rs,di_rs_dE");
    for curve in &curves {
        for ((e, v), d) in curve.e_grid.iter().zip(&curve.values).zip(&curve.derivative) {
            csv.row(&[num(curve.delta), num(*e), num(*v), num(*d)]);
        }
    }
    write_csv(c, "potential-scan", "potential-scan.csv", &csv)?;
    Ok(())
}

pub fn thresholds(c: &Config) -> Result<()> {
    let th = potential::thresholds(&c.channel()?, &c.params(c.model.delta)?, &c.threshold_config())?;
    write_json(c, "thresholds", "thresholds.json", &th)?;
    Ok(())
}

fn se_options(c: &Config) -> Result<SeOptions> {
    Ok(SeOptions::for_prior_variance(c.prior()?.v()))
}

pub fn se_run(c: &Config) -> Result<()> {
    let traj = run_se(&c.channel()?, &c.params(c.model.delta)?, &se_options(c)?)?;
    let mut csv = Csv::new("t,E");
    for (t, e) in traj.values.iter().enumerate() {
        csv.row(&[t.to_string(), num(*e)]);
    }
    write_csv(c, "se-run", "se-run.csv", &csv)?;
    Ok(())
}

pub fn coupled_se(c: &Config) -> Result<()> {
    let spec = c.coupling_spec(c.coupling.gamma, c.coupling.w)?;
    let run = run_coupled_se(&spec, &c.channel()?, &c.params(c.model.delta)?, &se_options(c)?, true)?;
    let mut csv = Csv::new("t,block,E");
    for (t, profile) in run.trajectory.unwrap_or_default().iter().enumerate() {
        for (block, e) in profile.iter().enumerate() {
            csv.row(&[t.to_string(), block.to_string(), num(*e)]);
        }
    }
    write_csv(c, "coupled-se", "coupled-se.csv", &csv)?;
    Ok(())
}

pub fn saturation_sweep(c: &Config) -> Result<()> {
    let ch = c.channel()?;
    let params = c.params(c.model.delta)?;
    let cfg = CoupledThresholdConfig {
        thresholds: c.threshold_config(),
        slack: c.thresholds.coupled_slack,
        scan_points: c.thresholds.scan_points,
        se: None,
    };
    let grid: Vec<(usize, usize)> =
        c.coupling.gammas.iter().flat_map(|&g| c.coupling.ws.iter().map(move |&w| (g, w))).collect();
    let rows = grid
        .into_par_iter()
        .map(|(g, w)| Ok(delta_amp_coupled(&ch, &params, &c.coupling_spec(g, w)?, &cfg)?))
        .collect::<Result<Vec<_>>>()?;
    write_json(c, "saturation-sweep", "saturation-sweep.json", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct AmpSummary {
    final_mse: f64,
    final_ymse: f64,
    /// `ymse − E/(1 + E/Δ)`; homogeneous runs only.
    identity_gap: Option<f64>,
    /// Mean error over non-pinned sections; coupled runs only.
    free_mse: Option<f64>,
    converged: bool,
    iterations: usize,
}

pub fn amp_run(c: &Config) -> Result<()> {
    let prior = c.prior()?;
    let ch = c.channel()?;
    let params = c.params(c.model.delta)?;
    let cfg = AmpConfig { t_max: c.amp.t, stop_eps: c.amp.stop_eps, tau: c.amp.tau, ..AmpConfig::default() };
    let mut rng = SeedStream::new(c.run.seed).substream("amp-run", 0).rng();
    let (state, summary_extra) = if c.amp.coupled {
        let spec = c.coupling_spec(c.coupling.gamma, c.coupling.w)?;
        let inst = generate_instance(&prior, c.model.l, &params, Some(&spec), &mut rng).context("model.L")?;
        let state = run_sc_amp(&inst, &ch, &cfg)?;
        let free = free_mse(&state, &inst);
        (state, (None, Some(free)))
    } else {
        let inst = generate_instance(&prior, c.model.l, &params, None, &mut rng).context("model.L")?;
        let state = run_amp(&inst, &ch, &cfg)?;
        let gap = amp_fixedpoint_identity(&state, &inst).discrepancy;
        (state, (Some(gap), None))
    };
    let mut csv = Csv::new("t,mse,ymse");
    for (t, (m, y)) in state.mse_trace.iter().zip(&state.ymse_trace).enumerate() {
        csv.row(&[t.to_string(), num(*m), num(*y)]);
    }
    write_csv(c, "amp-run", "amp-run.csv", &csv)?;
    let summary = AmpSummary {
        final_mse: state.final_mse(),
        final_ymse: state.final_ymse(),
        identity_gap: summary_extra.0,
        free_mse: summary_extra.1,
        converged: state.converged,
        iterations: state.t,
    };
    write_json(c, "amp-run", "amp-run.json", &summary)?;
    Ok(())
}

pub fn verify(c: &Config, check: Check) -> Result<()> {
    let prior = c.prior()?;
    let params = c.params(c.model.delta)?;
    let seeds = SeedStream::new(c.run.seed);
    let v = &c.verify;
    let l = c.model.l;
    let (report, name) = match check {
        Check::Nishimori => (nishimori_check(&prior, l, &params, v.n_inst, &seeds)?, "nishimori"),
        Check::Immse => (immse_check(&prior, l, &params, v.n_inst, v.h, &seeds)?, "immse"),
        Check::MmseRelation => (mmse_relation_check(&prior, &v.ls, &params, v.n_inst, v.slack, &seeds)?, "mmse-relation"),
        Check::Replica => (replica_check(&c.channel()?, &v.ls, &params, v.n_inst, v.slack, &seeds)?, "replica"),
        Check::ScInvariance => {
            let spec = c.coupling_spec(c.coupling.gamma, c.coupling.w)?;
            (sc_mi_invariance_check(&prior, l, &params, &spec, v.n_inst, v.slack, &seeds)?, "sc-invariance")
        }
        Check::FeSpread => (free_energy_spread(&prior, &v.ls, &params, v.n_inst, v.slack, &seeds)?, "fe-spread"),
    };
    write_json(c, "verify", &format!("verify-{name}.json"), &report)?;
    Ok(())
}

pub fn phase_diagram(c: &Config) -> Result<()> {
    let ch = c.channel()?;
    let alphas = c.alphas()?;
    if c.model.alpha_range.is_none() {
        bail!("model.alpha_range is required for phase-diagram");
    }
    let cfg = c.threshold_config();
    let b = ch.prior().b();
    let rows = alphas
        .par_iter()
        .map(|&a| {
            let params = rsamp::ChannelParams::new(a, b, c.model.delta).context("model.alpha_range")?;
            let th = potential::thresholds(&ch, &params, &cfg).with_context(|| format!("alpha = {a}"))?;
            Ok((a, th))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = Csv::new("alpha,delta_amp,delta_rs");
    for (a, th) in rows {
        csv.row(&[num(a), num(th.delta_amp), num(th.delta_rs)]);
    }
    write_csv(c, "phase-diagram", "phase-diagram.csv", &csv)?;
    Ok(())
}
