//! Approximate message passing on concrete instances.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::BlockLayout;
use crate::error::{domain, Error, Result};
use crate::instance::CsInstance;
use crate::prior::{DiscretePrior, ScalarChannel};
use crate::state_evolution::CouplingKind;

/// Lower bound on the denoiser variance; below it the posterior has
/// collapsed onto the nearest atom anyway.
const TAU2_FLOOR: f64 = 1e-300;

/// Source of the effective variance `τ_t²` fed to the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauMode {
    /// Precomputed from state evolution.
    StateEvolution,
    /// `‖z^(t)‖²/M`, measured on the running residual.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpConfig {
    pub t_max: usize,
    /// Stop once the mse changes by less than this; `None` means `1e-8·v`.
    pub stop_eps: Option<f64>,
    pub tau: TauMode,
    /// Abort when the mse exceeds this multiple of `v`.
    pub divergence_factor: f64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self { t_max: 200, stop_eps: None, tau: TauMode::StateEvolution, divergence_factor: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmpState {
    /// `ŝ^(t)`.
    pub estimate: Vec<f64>,
    /// `z^(t−1)` in the scale of the iteration (empty before the first step).
    pub residual: Vec<f64>,
    /// Effective observation the current estimate was denoised from.
    pub observation: Vec<f64>,
    pub t: usize,
    /// `τ_0², τ_1², …`: the full schedule when precomputed, the values used
    /// so far when empirical.
    pub tau2: Vec<f64>,
    pub tau_mode: TauMode,
    /// `‖s − ŝ^(t)‖²/L` for `t = 0, 1, …`.
    pub mse_trace: Vec<f64>,
    /// `‖Φ(s − ŝ^(t))‖²/M`.
    pub ymse_trace: Vec<f64>,
    /// Coefficient of `z^(t−1)` in the residual update, per iteration.
    pub onsager_trace: Vec<f64>,
    /// Per-iteration, per-column-block effective variances (coupled runs only).
    pub block_tau2: Option<Vec<Vec<f64>>>,
    pub converged: bool,
    /// `Σ_i ∂η_i/∂r_i` at the last denoising step.
    divergence: f64,
    /// `Φ ŝ^(t)`, unscaled.
    phi_estimate: Vec<f64>,
}

/// `Φ₀ = Φ/√(αB)` and `y₀ = y/√(αB)`, with `α = M/N`.
pub fn rescale(instance: &CsInstance) -> (Array2<f64>, Vec<f64>) {
    let c = 1.0 / amp_scale(instance);
    (&instance.phi * c, instance.y.iter().map(|y| y * c).collect())
}

/// `√(αB) = √(M/L)`.
fn amp_scale(instance: &CsInstance) -> f64 {
    (instance.m() as f64 / instance.l as f64).sqrt()
}

fn signal_image(instance: &CsInstance) -> Vec<f64> {
    mat_vec(&instance.phi, &instance.s)
}

fn mat_vec(phi: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    phi.dot(&ArrayView1::from(x)).to_vec()
}

fn mat_t_vec(phi: &Array2<f64>, z: &[f64]) -> Vec<f64> {
    phi.t().dot(&ArrayView1::from(z)).to_vec()
}

fn errors(instance: &CsInstance, estimate: &[f64], phi_estimate: &[f64], phi_s: &[f64]) -> (f64, f64) {
    let mse = instance.s.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / instance.l as f64;
    let ymse = phi_s.iter().zip(phi_estimate).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / instance.m() as f64;
    (mse, ymse)
}

/// SE schedule `τ_t² = (Δ + E^(t))/(αB)` started from `E^(0) = e0`.
fn tau_schedule(channel: &ScalarChannel, delta: f64, alpha_b: f64, e0: f64, t_max: usize) -> Vec<f64> {
    let mut e = e0;
    let mut out = Vec::with_capacity(t_max + 1);
    for _ in 0..=t_max {
        let tau2 = (delta + e) / alpha_b;
        out.push(tau2);
        e = if tau2 > 0.0 { channel.mmse(1.0 / tau2) } else { 0.0 };
    }
    out
}

fn check_instance(instance: &CsInstance, prior: &DiscretePrior) -> Result<()> {
    if prior.b() != instance.b {
        return Err(Error::DimensionMismatch(format!("prior has B = {} but the instance has B = {}", prior.b(), instance.b)));
    }
    if instance.s.len() != instance.n() || instance.y.len() != instance.m() || instance.phi.ncols() != instance.n() {
        return Err(Error::DimensionMismatch("instance fields disagree on M or N".into()));
    }
    Ok(())
}

/// Denoises every free section of `r` in place into `out`; pinned sections
/// are set to the truth. Returns the per-section divergences.
fn denoise_sections(instance: &CsInstance, prior: &DiscretePrior, r: &[f64], tau2: &[f64], out: &mut [f64]) -> Vec<f64> {
    let b = instance.b;
    let k = prior.k();
    out.par_chunks_mut(b)
        .zip(r.par_chunks(b))
        .enumerate()
        .map_init(
            || vec![0.0; k],
            |scratch, (sec, (o, ri))| {
                if instance.is_pinned(sec) {
                    o.copy_from_slice(&instance.s[sec * b..(sec + 1) * b]);
                    0.0
                } else {
                    prior.denoise_into(ri, tau2[sec].max(TAU2_FLOOR), o, scratch)
                }
            },
        )
        .collect()
}

impl AmpState {
    /// State at `t = 0` with `ŝ^(0) = start` and an SE schedule started from
    /// `E^(0) = e0` (used only in [`TauMode::StateEvolution`]).
    pub fn new(
        instance: &CsInstance,
        channel: &ScalarChannel,
        cfg: &AmpConfig,
        start: Vec<f64>,
        e0: f64,
    ) -> Result<Self> {
        check_instance(instance, channel.prior())?;
        if start.len() != instance.n() {
            return Err(Error::DimensionMismatch(format!("start has length {} but N = {}", start.len(), instance.n())));
        }
        if e0.is_nan() || e0 < 0.0 {
            return domain(format!("initial E must be non-negative, got {e0}"));
        }
        let mut estimate = start;
        let b = instance.b;
        for sec in (0..instance.l).filter(|s| instance.is_pinned(*s)) {
            estimate[sec * b..(sec + 1) * b].copy_from_slice(&instance.s[sec * b..(sec + 1) * b]);
        }
        let tau2 = match cfg.tau {
            TauMode::StateEvolution => {
                let ab = instance.m() as f64 / instance.l as f64;
                tau_schedule(channel, instance.delta, ab, e0, cfg.t_max)
            }
            TauMode::Empirical => Vec::new(),
        };
        let phi_estimate = mat_vec(&instance.phi, &estimate);
        let (mse, ymse) = errors(instance, &estimate, &phi_estimate, &signal_image(instance));
        Ok(Self {
            estimate,
            residual: Vec::new(),
            observation: Vec::new(),
            t: 0,
            tau2,
            tau_mode: cfg.tau,
            mse_trace: vec![mse],
            ymse_trace: vec![ymse],
            onsager_trace: Vec::new(),
            block_tau2: None,
            converged: false,
            divergence: 0.0,
            phi_estimate,
        })
    }

    /// Cold start `ŝ^(0) = 0` with `E^(0) = v`.
    pub fn cold(instance: &CsInstance, channel: &ScalarChannel, cfg: &AmpConfig) -> Result<Self> {
        Self::new(instance, channel, cfg, vec![0.0; instance.n()], channel.prior().v())
    }

    pub fn final_mse(&self) -> f64 {
        *self.mse_trace.last().unwrap()
    }

    pub fn final_ymse(&self) -> f64 {
        *self.ymse_trace.last().unwrap()
    }
}

/// `(1/M) Σ_i [η′]_i` at the previous effective observation; zero before the
/// first iteration.
pub fn onsager_coefficient(state: &AmpState, instance: &CsInstance, prior: &DiscretePrior) -> Result<f64> {
    if state.t == 0 {
        return Ok(0.0);
    }
    check_instance(instance, prior)?;
    let tau2 = state.tau2[state.t - 1];
    let per_sec = vec![tau2; instance.l];
    let mut out = vec![0.0; instance.n()];
    let div: f64 = denoise_sections(instance, prior, &state.observation, &per_sec, &mut out).iter().sum();
    Ok(div / instance.m() as f64)
}

fn step(state: &mut AmpState, instance: &CsInstance, prior: &DiscretePrior, phi_s: &[f64]) -> Result<()> {
    let m = instance.m();
    let c = amp_scale(instance);
    let w = state.divergence / m as f64;
    let mut z: Vec<f64> = instance.y.iter().zip(&state.phi_estimate).map(|(y, p)| (y - p) / c).collect();
    if !state.residual.is_empty() {
        for (zi, old) in z.iter_mut().zip(&state.residual) {
            *zi += w * old;
        }
    }
    let tau2 = match state.tau_mode {
        TauMode::StateEvolution => match state.tau2.get(state.t) {
            Some(t) => *t,
            None => return domain(format!("iteration {} is past the precomputed schedule", state.t)),
        },
        TauMode::Empirical => {
            let t = z.iter().map(|x| x * x).sum::<f64>() / m as f64;
            state.tau2.push(t);
            t
        }
    };
    let mut r = mat_t_vec(&instance.phi, &z);
    for (ri, si) in r.iter_mut().zip(&state.estimate) {
        *ri = *ri / c + si;
    }
    let mut next = vec![0.0; instance.n()];
    let per_sec = vec![tau2; instance.l];
    state.divergence = denoise_sections(instance, prior, &r, &per_sec, &mut next).iter().sum();
    state.phi_estimate = mat_vec(&instance.phi, &next);
    let (mse, ymse) = errors(instance, &next, &state.phi_estimate, phi_s);
    state.estimate = next;
    state.observation = r;
    state.residual = z;
    state.onsager_trace.push(w);
    state.mse_trace.push(mse);
    state.ymse_trace.push(ymse);
    state.t += 1;
    Ok(())
}

/// One AMP iteration:
/// `z^(t) = y₀ − Φ₀ŝ^(t) + w z^(t−1)`, `ŝ^(t+1) = η(Φ₀ᵀz^(t) + ŝ^(t); τ_t²)`.
pub fn amp_iterate(state: &AmpState, instance: &CsInstance, prior: &DiscretePrior) -> Result<AmpState> {
    check_instance(instance, prior)?;
    let mut next = state.clone();
    step(&mut next, instance, prior, &signal_image(instance))?;
    Ok(next)
}

/// Cold-started AMP until `cfg.t_max` iterations or an mse change below the
/// stopping tolerance.
pub fn run_amp(instance: &CsInstance, channel: &ScalarChannel, cfg: &AmpConfig) -> Result<AmpState> {
    let state = AmpState::cold(instance, channel, cfg)?;
    run_amp_from(state, instance, channel, cfg)
}

pub fn run_amp_from(mut state: AmpState, instance: &CsInstance, channel: &ScalarChannel, cfg: &AmpConfig) -> Result<AmpState> {
    let prior = channel.prior();
    check_instance(instance, prior)?;
    if cfg.t_max == 0 {
        return domain("AMP needs at least one iteration");
    }
    let v = prior.v();
    let eps = cfg.stop_eps.unwrap_or(1e-8 * v);
    let limit = cfg.divergence_factor * v;
    let phi_s = signal_image(instance);
    while state.t < cfg.t_max {
        step(&mut state, instance, prior, &phi_s)?;
        let n = state.mse_trace.len();
        let mse = state.mse_trace[n - 1];
        if !mse.is_finite() || mse > limit {
            return Err(Error::Divergence { iteration: state.t, mse, limit, mse_trace: state.mse_trace.clone() });
        }
        if (mse - state.mse_trace[n - 2]).abs() < eps {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointIdentity {
    pub ymse: f64,
    pub mse: f64,
    /// `|ymse − E/(1 + E/Δ)|`.
    pub discrepancy: f64,
}

pub fn amp_fixedpoint_identity(state: &AmpState, instance: &CsInstance) -> FixedPointIdentity {
    let e = state.final_mse();
    let ymse = state.final_ymse();
    let predicted = if instance.delta > 0.0 { e / (1.0 + e / instance.delta) } else { 0.0 };
    FixedPointIdentity { ymse, mse: e, discrepancy: (ymse - predicted).abs() }
}

/// Per-iteration block quantities of the coupled schedule: row variances
/// `E_r^(t)` and column effective variances `Σ_c^(t)²`.
struct CoupledSchedule {
    rows: Vec<Vec<f64>>,
    /// Predicted per-column-block section mse.
    cols: Vec<Vec<f64>>,
}

/// Coupled SE with the pinned *column* blocks held at zero error, as seen by
/// an estimator that knows those signal blocks.
fn coupled_schedule(
    instance: &CsInstance,
    channel: &ScalarChannel,
    pinned_cols: &[bool],
    t_max: usize,
) -> Result<CoupledSchedule> {
    let spec = instance.coupling.as_ref().expect("coupled instance");
    let g = spec.gamma;
    let ab = instance.m() as f64 / instance.l as f64;
    let v = channel.prior().v();
    let mut mc: Vec<f64> = pinned_cols.iter().map(|p| if *p { 0.0 } else { v }).collect();
    let mut rows = Vec::with_capacity(t_max + 1);
    let mut cols = Vec::with_capacity(t_max + 1);
    for _ in 0..=t_max {
        let e: Vec<f64> = (0..g).map(|r| (0..g).map(|c| spec.j(r, c) * mc[c]).sum::<f64>() / g as f64).collect();
        let mut snr = vec![0.0; g];
        for r in 0..g {
            let d = instance.delta + e[r];
            if d <= 0.0 {
                return domain("coupled AMP needs Δ + E_r > 0 in every row block");
            }
            for (c, s) in snr.iter_mut().enumerate() {
                *s += spec.j(r, c) / d;
            }
        }
        let s2: Vec<f64> = snr.iter().map(|s| g as f64 / (ab * s)).collect();
        cols.push(mc);
        mc = (0..g).map(|c| if pinned_cols[c] { 0.0 } else { channel.mmse(1.0 / s2[c]) }).collect();
        rows.push(e);
    }
    Ok(CoupledSchedule { rows, cols })
}

/// Coupled SE prediction of the per-section mse of [`run_sc_amp`], per
/// iteration.
pub fn sc_amp_prediction(instance: &CsInstance, channel: &ScalarChannel, t_max: usize) -> Result<Vec<f64>> {
    let spec = match &instance.coupling {
        Some(s) => s,
        None => return domain("coupled AMP needs a coupled instance"),
    };
    let g = spec.gamma;
    let layout = BlockLayout::new(g, instance.m(), instance.l, instance.b)?;
    let pinned_cols = pinned_column_blocks(instance, &layout);
    let sched = coupled_schedule(instance, channel, &pinned_cols, t_max)?;
    Ok(sched.cols.iter().map(|m| m.iter().sum::<f64>() / g as f64).collect())
}

fn pinned_column_blocks(instance: &CsInstance, layout: &BlockLayout) -> Vec<bool> {
    let seeded = instance.coupling.as_ref().is_some_and(|s| s.kind == CouplingKind::Seeded);
    (0..layout.gamma).map(|c| seeded && instance.is_pinned(c * layout.cols_per_block / instance.b)).collect()
}

/// AMP for spatially coupled instances (experimental).
///
/// Works on the unscaled matrix with block-dependent variances:
/// `z_μ = y_μ − (Φŝ)_μ + V_r/(Δ + E_r^(t−1)) z_μ^(t−1)` with
/// `V_r = Σ_c (J_rc/L) Σ_{i∈c} v_i`, and
/// `r_i = ŝ_i + Σ_c² Σ_μ Φ_μi z_μ/(Δ + E_r^(t))`, where `v_i = Σ_c² η′_i`.
/// With [`TauMode::StateEvolution`] the row variances `E_r` follow the
/// coupled SE schedule; with [`TauMode::Empirical`] they are the measured
/// `V_r`. Seeded boundary sections are fixed to the truth. With `Γ = 1` this
/// is the homogeneous iteration.
pub fn run_sc_amp(instance: &CsInstance, channel: &ScalarChannel, cfg: &AmpConfig) -> Result<AmpState> {
    let prior = channel.prior();
    check_instance(instance, prior)?;
    let spec = match &instance.coupling {
        Some(s) => s.clone(),
        None => return domain("coupled AMP needs a coupled instance"),
    };
    if cfg.t_max == 0 {
        return domain("AMP needs at least one iteration");
    }
    let g = spec.gamma;
    let layout = BlockLayout::new(g, instance.m(), instance.l, instance.b)?;
    let b = instance.b;
    let n = instance.n();
    let ab = instance.m() as f64 / instance.l as f64;
    let pinned_cols = pinned_column_blocks(instance, &layout);
    let sched = coupled_schedule(instance, channel, &pinned_cols, cfg.t_max)?;
    let mut state = AmpState::cold(instance, channel, cfg)?;
    state.tau2.clear();
    state.tau_mode = cfg.tau;
    let mut block_tau2 = Vec::new();
    let phi_s = signal_image(instance);
    let v = prior.v();
    let eps = cfg.stop_eps.unwrap_or(1e-8 * v);
    let limit = cfg.divergence_factor * v;
    let inv_l = 1.0 / instance.l as f64;
    // V_r from the previous denoising step, and the row variances used last time
    let mut row_var = sched.rows[0].clone();
    let mut prev_rows: Vec<f64> = Vec::new();

    while state.t < cfg.t_max {
        let t = state.t;
        let rows = match cfg.tau {
            TauMode::StateEvolution => sched.rows[t].clone(),
            TauMode::Empirical => row_var.clone(),
        };
        if rows.iter().any(|e| instance.delta + e <= 0.0) {
            return domain("coupled AMP needs Δ + E_r > 0 in every row block");
        }
        let mut z: Vec<f64> = instance.y.iter().zip(&state.phi_estimate).map(|(y, p)| y - p).collect();
        let mut coef = vec![0.0; g];
        if t > 0 {
            for r in 0..g {
                coef[r] = row_var[r] / (instance.delta + prev_rows[r]);
            }
            for (mu, zi) in z.iter_mut().enumerate() {
                *zi += coef[layout.row_block(mu)] * state.residual[mu];
            }
        }
        let scaled: Vec<f64> = z.iter().enumerate().map(|(mu, zi)| zi / (instance.delta + rows[layout.row_block(mu)])).collect();
        let s2: Vec<f64> = (0..g)
            .map(|c| {
                let snr: f64 = (0..g).map(|r| spec.j(r, c) / (instance.delta + rows[r])).sum::<f64>() * ab / g as f64;
                1.0 / snr
            })
            .collect();
        let back = mat_t_vec(&instance.phi, &scaled);
        let r: Vec<f64> = (0..n).map(|i| state.estimate[i] + s2[layout.col_block(i)] * back[i]).collect();
        let per_sec: Vec<f64> = (0..instance.l).map(|sec| s2[layout.col_block(sec * b)]).collect();
        let mut next = vec![0.0; n];
        let divs = denoise_sections(instance, prior, &r, &per_sec, &mut next);
        // per column block Σ_{i∈c} v_i
        let mut col_var = vec![0.0; g];
        for (sec, d) in divs.iter().enumerate() {
            col_var[layout.col_block(sec * b)] += per_sec[sec] * d;
        }
        for (ri, rv) in row_var.iter_mut().enumerate() {
            *rv = (0..g).map(|c| spec.j(ri, c) * inv_l * col_var[c]).sum();
        }
        prev_rows = rows;
        state.divergence = divs.iter().sum();
        state.phi_estimate = mat_vec(&instance.phi, &next);
        let (mse, ymse) = errors(instance, &next, &state.phi_estimate, &phi_s);
        state.onsager_trace.push(coef.iter().sum::<f64>() / g as f64);
        state.estimate = next;
        state.observation = r;
        state.residual = z;
        state.mse_trace.push(mse);
        state.ymse_trace.push(ymse);
        state.tau2.push(s2.iter().sum::<f64>() / g as f64);
        block_tau2.push(s2);
        state.t += 1;
        if !mse.is_finite() || mse > limit {
            return Err(Error::Divergence { iteration: state.t, mse, limit, mse_trace: state.mse_trace.clone() });
        }
        let k = state.mse_trace.len();
        if (mse - state.mse_trace[k - 2]).abs() < eps {
            state.converged = true;
            break;
        }
    }
    state.block_tau2 = Some(block_tau2);
    Ok(state)
}

/// `‖s − ŝ‖²` per section over the sections that are not pinned.
pub fn free_mse(state: &AmpState, instance: &CsInstance) -> f64 {
    let b = instance.b;
    let free: Vec<usize> = (0..instance.l).filter(|s| !instance.is_pinned(*s)).collect();
    if free.is_empty() {
        return 0.0;
    }
    let total: f64 = free
        .iter()
        .flat_map(|sec| sec * b..(sec + 1) * b)
        .map(|i| (instance.s[i] - state.estimate[i]).powi(2))
        .sum();
    total / free.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_instance;
    use crate::potential::ChannelParams;
    use crate::quadrature::QuadratureSpec;
    use crate::state_evolution::build_coupling;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(prior: DiscretePrior, l: usize, alpha: f64, delta: f64, seed: u64) -> (CsInstance, ScalarChannel) {
        let p = ChannelParams::new(alpha, prior.b(), delta).unwrap();
        let inst = generate_instance(&prior, l, &p, None, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        (inst, ScalarChannel::new(prior, &QuadratureSpec::default()).unwrap())
    }

    #[test]
    fn rescale_identities() {
        let (inst, _) = setup(DiscretePrior::binary(), 40, 0.5, 0.1, 1);
        let (phi0, y0) = rescale(&inst);
        let ab: f64 = 0.5;
        let n2: f64 = inst.y.iter().map(|y| y * y).sum();
        let n02: f64 = y0.iter().map(|y| y * y).sum();
        assert!((n02 - n2 / ab).abs() < 1e-12 * n2);
        assert!((phi0[[3, 7]] - inst.phi[[3, 7]] / ab.sqrt()).abs() < 1e-15);
        let (inst, _) = setup(DiscretePrior::binary(), 30, 1.0, 0.1, 1);
        let (phi0, y0) = rescale(&inst);
        assert_eq!((phi0, y0), (inst.phi.clone(), inst.y.clone()));
    }

    #[test]
    fn point_prior_is_immediate() {
        let (inst, ch) = setup(DiscretePrior::point(vec![0.7]).unwrap(), 50, 0.5, 0.3, 2);
        let s0 = AmpState::cold(&inst, &ch, &AmpConfig::default()).unwrap();
        let s1 = amp_iterate(&s0, &inst, ch.prior()).unwrap();
        assert_eq!(s1.estimate, inst.s);
        assert_eq!(onsager_coefficient(&s1, &inst, ch.prior()).unwrap(), 0.0);
        let id = amp_fixedpoint_identity(&s1, &inst);
        assert_eq!((id.ymse, id.mse, id.discrepancy), (0.0, 0.0, 0.0));
    }

    #[test]
    fn noiseless_truth_is_fixed() {
        let (inst, ch) = setup(DiscretePrior::binary(), 200, 0.6, 0.0, 3);
        let cfg = AmpConfig::default();
        let s0 = AmpState::new(&inst, &ch, &cfg, inst.s.clone(), 0.0).unwrap();
        let s1 = amp_iterate(&s0, &inst, ch.prior()).unwrap();
        assert!(s1.residual.iter().all(|z| z.abs() < 1e-12));
        assert_eq!(s1.estimate, inst.s);
    }

    #[test]
    fn deterministic_and_bounded() {
        let (inst, ch) = setup(DiscretePrior::sparse(0.2, 1.5).unwrap(), 400, 0.5, 0.05, 4);
        let cfg = AmpConfig { t_max: 30, ..AmpConfig::default() };
        let a = run_amp(&inst, &ch, &cfg).unwrap();
        let b = run_amp(&inst, &ch, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.estimate.iter().all(|x| (0.0..=1.5).contains(x)));
    }

    #[test]
    fn onsager_matches_cached_divergence() {
        let (inst, ch) = setup(DiscretePrior::binary(), 300, 0.6, 0.2, 5);
        let mut s = AmpState::cold(&inst, &ch, &AmpConfig::default()).unwrap();
        for _ in 0..4 {
            s = amp_iterate(&s, &inst, ch.prior()).unwrap();
        }
        let w = onsager_coefficient(&s, &inst, ch.prior()).unwrap();
        let next = amp_iterate(&s, &inst, ch.prior()).unwrap();
        assert!((w - next.onsager_trace[4]).abs() < 1e-12);
    }

    #[test]
    fn empirical_tau_runs() {
        let (inst, ch) = setup(DiscretePrior::binary(), 500, 0.6, 0.2, 6);
        let cfg = AmpConfig { tau: TauMode::Empirical, t_max: 20, ..AmpConfig::default() };
        let s = run_amp(&inst, &ch, &cfg).unwrap();
        assert_eq!(s.tau2.len(), s.t);
        assert!(s.tau2.iter().all(|t| *t > 0.0));
    }

    #[test]
    fn divergence_guard() {
        // a mis-scaled matrix drives a sparse prior far above its variance
        let (mut inst, ch) = setup(DiscretePrior::sparse(0.02, 1.0).unwrap(), 200, 0.6, 0.01, 7);
        inst.phi *= 30.0;
        let r = run_amp(&inst, &ch, &AmpConfig::default());
        assert!(matches!(r, Err(Error::Divergence { .. })), "{:?}", r.map(|s| s.mse_trace));
    }

    #[test]
    fn single_block_coupling_is_homogeneous() {
        let prior = DiscretePrior::binary();
        let p = ChannelParams::new(0.6, 1, 0.2).unwrap();
        let spec = build_coupling(1, 0, CouplingKind::Periodic).unwrap();
        let inst = generate_instance(&prior, 300, &p, Some(&spec), &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
        let ch = ScalarChannel::new(prior, &QuadratureSpec::default()).unwrap();
        let cfg = AmpConfig { t_max: 15, ..AmpConfig::default() };
        let a = run_amp(&inst, &ch, &cfg).unwrap();
        let b = run_sc_amp(&inst, &ch, &cfg).unwrap();
        for (x, y) in a.mse_trace.iter().zip(&b.mse_trace) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}
