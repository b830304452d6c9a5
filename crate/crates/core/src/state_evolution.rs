//! State evolution for homogeneous and spatially coupled ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::potential::{self, ChannelParams, ThresholdConfig};
use crate::prior::ScalarChannel;

/// Slack allowed for an upward step of a state-evolution trajectory.
pub const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeOptions {
    /// Stop when `|E^(t+1) − E^(t)| < eps`.
    pub eps: f64,
    pub max_iter: usize,
}

impl SeOptions {
    /// `eps = 1e-11·v`, at most `10^5` iterations.
    pub fn for_prior_variance(v: f64) -> Self {
        Self { eps: (1e-11 * v).max(f64::MIN_POSITIVE), max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeTrajectory {
    /// `E^(0) = v, E^(1), …`.
    pub values: Vec<f64>,
    pub converged: bool,
    pub fixed_point: f64,
}

/// `E ↦ mmse(Σ(E; Δ)^{-2})`.
pub fn se_step(e: f64, channel: &ScalarChannel, params: &ChannelParams) -> Result<f64> {
    params.check_prior(channel.prior())?;
    let s2 = potential::effective_variance(e, params)?;
    Ok(channel.mmse(1.0 / s2))
}

pub fn run_se(channel: &ScalarChannel, params: &ChannelParams, opts: &SeOptions) -> Result<SeTrajectory> {
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return domain("SE tolerance must be positive");
    }
    let mut values = vec![channel.prior().v()];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let prev = *values.last().unwrap();
        let next = se_step(prev, channel, params)?;
        if next > prev + MONOTONE_SLACK {
            return Err(Error::NonMonotone {
                what: "state evolution trajectory".into(),
                diagnostics: format!(
                    "E rose from {prev:.15e} to {next:.15e} at step {}; the quadrature is probably under-resolved",
                    values.len()
                ),
            });
        }
        values.push(next);
        if (next - prev).abs() < opts.eps {
            converged = true;
            break;
        }
    }
    let fixed_point = *values.last().unwrap();
    Ok(SeTrajectory { values, converged, fixed_point })
}

/// `τ_0², …, τ_T²` with `τ_t² = (Δ + E^(t))/(αB)` along the SE trajectory
/// (no early stopping).
pub fn tau_sequence(channel: &ScalarChannel, params: &ChannelParams, t_max: usize) -> Result<Vec<f64>> {
    let mut e = channel.prior().v();
    let mut out = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        out.push(potential::effective_variance(e, params)?);
        if t < t_max {
            e = se_step(e, channel, params)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    Periodic,
    Seeded,
}

impl std::str::FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Self::Periodic),
            "seeded" => Ok(Self::Seeded),
            _ => domain(format!("unknown coupling kind '{s}' (expected periodic or seeded)")),
        }
    }
}

/// Block-variance design of a spatially coupled ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub gamma: usize,
    pub w: usize,
    pub kind: CouplingKind,
    /// Row-major `Γ × Γ`; every row sums to `Γ`.
    pub j: Vec<f64>,
    /// Zero-based indices of the seeded boundary blocks.
    pub boundary: Vec<usize>,
    /// Built with an even `Γ` through [`build_coupling_nonconforming`].
    pub nonconforming: bool,
}

impl CouplingSpec {
    pub fn j(&self, r: usize, c: usize) -> f64 {
        self.j[r * self.gamma + c]
    }

    pub fn is_pinned(&self, block: usize) -> bool {
        self.boundary.binary_search(&block).is_ok()
    }

    pub fn pinned_mask(&self) -> Vec<bool> {
        (0..self.gamma).map(|b| self.is_pinned(b)).collect()
    }
}

pub fn build_coupling(gamma: usize, w: usize, kind: CouplingKind) -> Result<CouplingSpec> {
    if gamma.is_multiple_of(2) {
        return domain(format!("Γ must be odd, got {gamma}"));
    }
    build(gamma, w, kind, false)
}

/// Like [`build_coupling`] but also accepts an even `Γ`. The result is
/// flagged as nonconforming and meant for small verification runs.
pub fn build_coupling_nonconforming(gamma: usize, w: usize, kind: CouplingKind) -> Result<CouplingSpec> {
    build(gamma, w, kind, gamma.is_multiple_of(2))
}

fn build(gamma: usize, w: usize, kind: CouplingKind, nonconforming: bool) -> Result<CouplingSpec> {
    if gamma == 0 {
        return domain("Γ must be positive");
    }
    if w > (gamma - 1) / 2 {
        return domain(format!("coupling window w = {w} exceeds (Γ−1)/2 = {}", (gamma - 1) / 2));
    }
    let g = gamma as f64;
    let mut j = vec![0.0; gamma * gamma];
    let mut boundary = Vec::new();
    match kind {
        CouplingKind::Periodic => {
            let val = g / (2 * w + 1) as f64;
            for r in 0..gamma {
                for k in 0..=2 * w {
                    let c = (r + gamma + k - w) % gamma;
                    j[r * gamma + c] = val;
                }
            }
        }
        CouplingKind::Seeded => {
            if 8 * w >= gamma && w > 0 {
                return domain(format!("seeded chain with Γ = {gamma} and w = {w} has no interior block (needs Γ > 8w)"));
            }
            for r in 0..gamma {
                let lo = r.saturating_sub(w);
                let hi = (r + w).min(gamma - 1);
                let val = g / (hi - lo + 1) as f64;
                for c in lo..=hi {
                    j[r * gamma + c] = val;
                }
            }
            boundary.extend(0..4 * w);
            boundary.extend(gamma - 4 * w..gamma);
            boundary.dedup();
        }
    }
    Ok(CouplingSpec { gamma, w, kind, j, boundary, nonconforming })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledProfile {
    pub e: Vec<f64>,
    pub pinned: Vec<bool>,
}

impl CoupledProfile {
    /// `E_r = v` on free blocks, `0` on the seeded boundary.
    pub fn initial(spec: &CouplingSpec, v: f64) -> Self {
        let pinned = spec.pinned_mask();
        Self { e: pinned.iter().map(|p| if *p { 0.0 } else { v }).collect(), pinned }
    }

    pub fn max_free(&self) -> f64 {
        self.e.iter().zip(&self.pinned).filter(|(_, p)| !**p).map(|(e, _)| *e).fold(0.0, f64::max)
    }
}

/// Per-column effective inverse variances `Σ_c^{-2} = (αB/Γ) Σ_r J_rc/(Δ+E_r)`.
pub fn coupled_snr(profile: &CoupledProfile, spec: &CouplingSpec, params: &ChannelParams) -> Result<Vec<f64>> {
    let g = spec.gamma;
    if profile.e.len() != g {
        return Err(Error::DimensionMismatch(format!("profile has {} blocks but Γ = {g}", profile.e.len())));
    }
    let ab = params.alpha_b();
    let mut snr = vec![0.0; g];
    for r in 0..g {
        let s = params.delta + profile.e[r];
        if s <= 0.0 {
            return domain("Δ + E_r = 0 in the coupled recursion");
        }
        for (c, out) in snr.iter_mut().enumerate() {
            *out += spec.j(r, c) / s;
        }
    }
    for x in &mut snr {
        *x *= ab / g as f64;
    }
    Ok(snr)
}

/// One synchronous update `E_r ← (1/Γ) Σ_c J_rc mmse(Σ_c^{-2})`; pinned
/// blocks stay at zero.
pub fn coupled_se_step(
    profile: &CoupledProfile,
    spec: &CouplingSpec,
    channel: &ScalarChannel,
    params: &ChannelParams,
) -> Result<CoupledProfile> {
    params.check_prior(channel.prior())?;
    let g = spec.gamma;
    let snr = coupled_snr(profile, spec, params)?;
    let m: Vec<f64> = snr.par_iter().map(|s| channel.mmse(*s)).collect();
    let e = (0..g)
        .map(|r| {
            if profile.pinned[r] {
                0.0
            } else {
                (0..g).map(|c| spec.j(r, c) * m[c]).sum::<f64>() / g as f64
            }
        })
        .collect();
    Ok(CoupledProfile { e, pinned: profile.pinned.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub profile: CoupledProfile,
    pub iterations: usize,
    pub converged: bool,
    /// Every profile from the initial one on, when recording was requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

pub fn run_coupled_se(
    spec: &CouplingSpec,
    channel: &ScalarChannel,
    params: &ChannelParams,
    opts: &SeOptions,
    record: bool,
) -> Result<CoupledRun> {
    run_coupled_until(spec, channel, params, opts, record, |_| false)
}

/// Runs coupled SE until convergence, `max_iter`, or `stop(profile)` holds.
fn run_coupled_until(
    spec: &CouplingSpec,
    channel: &ScalarChannel,
    params: &ChannelParams,
    opts: &SeOptions,
    record: bool,
    stop: impl Fn(&CoupledProfile) -> bool,
) -> Result<CoupledRun> {
    let mut profile = CoupledProfile::initial(spec, channel.prior().v());
    let mut trajectory = record.then(|| vec![profile.e.clone()]);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = coupled_se_step(&profile, spec, channel, params)?;
        iterations += 1;
        let mut change = 0.0f64;
        for (r, (a, b)) in profile.e.iter().zip(&next.e).enumerate() {
            if *b > *a + MONOTONE_SLACK {
                return Err(Error::NonMonotone {
                    what: "coupled state evolution".into(),
                    diagnostics: format!("block {r} rose from {a:.15e} to {b:.15e} at iteration {iterations}"),
                });
            }
            change = change.max((a - b).abs());
        }
        profile = next;
        if let Some(t) = trajectory.as_mut() {
            t.push(profile.e.clone());
        }
        if change < opts.eps {
            converged = true;
            break;
        }
        if stop(&profile) {
            break;
        }
    }
    Ok(CoupledRun { profile, iterations, converged, trajectory })
}

/// Smallest fixed point of the uncoupled recursion (the good branch).
pub fn e_good(channel: &ScalarChannel, params: &ChannelParams, grid_n: usize) -> Result<f64> {
    let set = potential::stationary_points(channel, params, grid_n)?;
    Ok(set.points[0].e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledThresholdConfig {
    pub thresholds: ThresholdConfig,
    /// `Δ` counts as recovered when `max_r E_r ≤ E_good(Δ) + slack·v`.
    pub slack: f64,
    /// Coarse predicate evaluations inside the hard phase before bisection.
    pub scan_points: usize,
    pub se: Option<SeOptions>,
}

impl Default for CoupledThresholdConfig {
    fn default() -> Self {
        Self { thresholds: ThresholdConfig::default(), slack: 1e-3, scan_points: 12, se: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledThreshold {
    #[serde(rename = "Gamma")]
    pub gamma: usize,
    pub w: usize,
    pub delta_amp_coupled: f64,
    pub delta_amp: f64,
    pub delta_rs: f64,
    pub nonconforming: bool,
}

/// Whether coupled SE at `delta` drives every free block down to the good branch.
pub fn coupled_recovers(
    spec: &CouplingSpec,
    channel: &ScalarChannel,
    params: &ChannelParams,
    delta: f64,
    cfg: &CoupledThresholdConfig,
) -> Result<(bool, CoupledRun)> {
    let p = params.with_delta(delta);
    let v = channel.prior().v();
    let target = e_good(channel, &p, cfg.thresholds.grid_n)? + cfg.slack * v;
    let opts = cfg.se.unwrap_or(SeOptions { eps: 1e-10 * v, max_iter: 100_000 });
    // profiles only decrease, so once below target they stay there
    let run = run_coupled_until(spec, channel, &p, &opts, false, |pr| pr.max_free() <= target)?;
    Ok((run.profile.max_free() <= target, run))
}

/// Largest `Δ` for which seeded coupled SE reaches the good branch, at fixed
/// `(Γ, w)`. The search runs over the uncoupled hard phase `[Δ_AMP, Δ_RS]`
/// and the window beyond it where the good branch still exists.
pub fn delta_amp_coupled(
    channel: &ScalarChannel,
    params: &ChannelParams,
    spec: &CouplingSpec,
    cfg: &CoupledThresholdConfig,
) -> Result<CoupledThreshold> {
    if spec.kind != CouplingKind::Seeded {
        return domain("the coupled threshold is defined for seeded chains");
    }
    let th = potential::thresholds(channel, params, &cfg.thresholds)?;
    let out = |d: f64| CoupledThreshold {
        gamma: spec.gamma,
        w: spec.w,
        delta_amp_coupled: d,
        delta_amp: th.delta_amp,
        delta_rs: th.delta_rs,
        nonconforming: spec.nonconforming,
    };
    if th.cap_hit {
        return Ok(out(f64::INFINITY));
    }
    let upper = good_branch_end(channel, params, &cfg.thresholds, th.delta_rs)?;
    let n = cfg.scan_points.max(2);
    let grid: Vec<f64> = (0..=n).map(|i| th.delta_amp + (upper - th.delta_amp) * i as f64 / n as f64).collect();
    let mut flags = Vec::with_capacity(grid.len());
    let mut dumps = Vec::new();
    for &d in &grid[..n] {
        let (ok, run) = coupled_recovers(spec, channel, params, d, cfg)?;
        flags.push(ok);
        dumps.push(format!("Δ={d:.8e} recovered={ok} iters={} profile={:?}", run.iterations, run.profile.e));
    }
    if !flags[0] {
        return Err(Error::NonMonotone {
            what: "coupled recovery predicate".into(),
            diagnostics: format!("seeded SE fails already at the uncoupled threshold\n{}", dumps.join("\n")),
        });
    }
    let first_fail = flags.iter().position(|f| !*f).unwrap_or(n);
    if flags[first_fail..].iter().any(|f| *f) {
        return Err(Error::NonMonotone {
            what: "coupled recovery predicate".into(),
            diagnostics: dumps.join("\n"),
        });
    }
    let (mut lo, mut hi) = (grid[first_fail - 1], grid[first_fail]);
    while hi - lo > cfg.thresholds.tol {
        let mid = 0.5 * (lo + hi);
        if coupled_recovers(spec, channel, params, mid, cfg)?.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(out(lo))
}

/// Largest scanned Δ at which the good (smallest) branch is still separated
/// from the high-error one, starting the search at `from`.
fn good_branch_end(channel: &ScalarChannel, params: &ChannelParams, cfg: &ThresholdConfig, from: f64) -> Result<f64> {
    let multi = |d: f64| -> Result<bool> {
        Ok(potential::stationary_points(channel, &params.with_delta(d), cfg.grid_n)?.points.len() > 1)
    };
    let mut lo = from;
    let mut hi = from;
    while multi(hi)? {
        lo = hi;
        hi *= 1.05;
    }
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        if multi(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
