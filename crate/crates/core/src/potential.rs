//! The replica-symmetric potential
//!
//! ```text
//! i_RS(E; Δ) = ψ(E; Δ) + i(S; S + Σ(E; Δ) Z),   Σ² = (Δ + E) / (αB)
//! ψ(E; Δ)    = ½ (αB ln(1 + E/Δ) − E/Σ²)
//! ```
//!
//! its stationary points (the fixed points of state evolution) and the two
//! noise thresholds: `Δ_AMP`, where a second stable branch appears, and
//! `Δ_RS`, where the global minimum jumps to it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::prior::{DiscretePrior, ScalarChannel};
use crate::quadrature::QuadratureSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub delta: f64,
}

impl ChannelParams {
    pub fn new(alpha: f64, b: usize, delta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return domain(format!("measurement rate must be positive, got {alpha}"));
        }
        if b == 0 {
            return domain("section dimension must be positive");
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return domain(format!("noise variance must be finite and non-negative, got {delta}"));
        }
        Ok(Self { alpha, b, delta })
    }

    pub fn alpha_b(&self) -> f64 {
        self.alpha * self.b as f64
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..*self }
    }

    pub(crate) fn check_prior(&self, prior: &DiscretePrior) -> Result<()> {
        if prior.b() != self.b {
            return Err(Error::DimensionMismatch(format!("prior has B = {} but parameters say B = {}", prior.b(), self.b)));
        }
        Ok(())
    }
}

/// `Σ(E; Δ)² = (Δ + E) / (αB)`.
pub fn effective_variance(e: f64, params: &ChannelParams) -> Result<f64> {
    if e.is_nan() || e < 0.0 {
        return domain(format!("E must be non-negative, got {e}"));
    }
    let s = params.delta + e;
    if s <= 0.0 {
        return domain("Δ + E = 0: the effective channel is noiseless");
    }
    Ok(s / params.alpha_b())
}

pub fn psi(e: f64, params: &ChannelParams) -> Result<f64> {
    if e == 0.0 {
        return Ok(0.0);
    }
    if params.delta <= 0.0 {
        return domain("ψ(E; 0) diverges for E > 0");
    }
    let ab = params.alpha_b();
    let d = params.delta;
    Ok(0.5 * (ab * (e / d).ln_1p() - e * ab / (d + e)))
}

/// Mutual information of the denoising channel at noise variance `sigma2`.
pub fn denoising_mi(prior: &DiscretePrior, sigma2: f64, spec: &QuadratureSpec) -> Result<f64> {
    ScalarChannel::new(prior.clone(), spec)?.mutual_information(sigma2)
}

pub fn rs_potential(e: f64, channel: &ScalarChannel, params: &ChannelParams) -> Result<f64> {
    check_e(e, channel)?;
    params.check_prior(channel.prior())?;
    if params.delta == 0.0 {
        if e == 0.0 {
            return Ok(channel.prior().entropy());
        }
        return domain("at Δ = 0 the potential is only defined at E = 0");
    }
    Ok(psi(e, params)? + channel.mutual_information(effective_variance(e, params)?)?)
}

/// `∂i_RS/∂E = αB / (2(Δ+E)²) · (E − mmse(1/Σ²))`.
pub fn rs_potential_de(e: f64, channel: &ScalarChannel, params: &ChannelParams) -> Result<f64> {
    check_e(e, channel)?;
    params.check_prior(channel.prior())?;
    if params.delta <= 0.0 {
        return domain("the potential derivative needs Δ > 0");
    }
    let s = params.delta + e;
    Ok(params.alpha_b() / (2.0 * s * s) * fixed_point_gap(e, channel, params))
}

/// `E − mmse(Σ(E;Δ)^{-2})`; shares its sign with `∂i_RS/∂E`.
pub fn fixed_point_gap(e: f64, channel: &ScalarChannel, params: &ChannelParams) -> f64 {
    e - channel.mmse(params.alpha_b() / (params.delta + e))
}

/// `d i_RS(Ẽ; Δ) / dΔ⁻¹ = (αB/2) Ẽ / (1 + Ẽ/Δ)`.
pub fn rs_mi_noise_derivative(e_tilde: f64, params: &ChannelParams) -> f64 {
    if e_tilde == 0.0 {
        return 0.0;
    }
    0.5 * params.alpha_b() * e_tilde / (1.0 + e_tilde / params.delta)
}

fn check_e(e: f64, channel: &ScalarChannel) -> Result<()> {
    let v = channel.prior().v();
    if !(e >= 0.0 && e <= v * (1.0 + 1e-12)) {
        return domain(format!("E = {e} lies outside [0, v = {v}]"));
    }
    Ok(())
}

/// Grid on `[0, v]` with `n` points: `0`, a logarithmic block on
/// `[1e-12 v, 1e-2 v]` holding a quarter of the points, then a uniform block
/// up to `v`.
pub fn e_grid(v: f64, n: usize) -> Vec<f64> {
    let n = n.max(8);
    if v == 0.0 {
        return vec![0.0];
    }
    let n_log = n / 4;
    let n_lin = n - 1 - n_log;
    let mut g = Vec::with_capacity(n);
    g.push(0.0);
    let (a, b) = ((1e-12f64).ln(), (1e-2f64).ln());
    for i in 0..n_log {
        g.push(v * (a + (b - a) * i as f64 / n_log as f64).exp());
    }
    for i in 0..n_lin {
        g.push(v * (1e-2 + (1.0 - 1e-2) * i as f64 / (n_lin - 1) as f64));
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialCurve {
    pub delta: f64,
    pub e_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub derivative: Vec<f64>,
}

pub fn potential_curve(channel: &ScalarChannel, params: &ChannelParams, grid_n: usize) -> Result<PotentialCurve> {
    let e_grid = e_grid(channel.prior().v(), grid_n);
    let rows: Vec<(f64, f64)> = e_grid
        .par_iter()
        .map(|&e| Ok((rs_potential(e, channel, params)?, rs_potential_de(e, channel, params)?)))
        .collect::<Result<_>>()?;
    let (values, derivative) = rows.into_iter().unzip();
    Ok(PotentialCurve { delta: params.delta, e_grid, values, derivative })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryKind {
    LocalMin,
    LocalMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub e: f64,
    pub kind: StationaryKind,
    pub i_rs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySet {
    /// Sorted by increasing `E`.
    pub points: Vec<StationaryPoint>,
    /// `Ẽ(Δ)`, the minimizer with least `i_RS`.
    pub global_min: f64,
    /// Two minima tie in `i_RS`; `global_min` is then the smaller `E`.
    pub degenerate: bool,
    /// More than three stationary points were found.
    pub violation: bool,
}

impl StationarySet {
    pub fn minima(&self) -> impl Iterator<Item = &StationaryPoint> {
        self.points.iter().filter(|p| p.kind == StationaryKind::LocalMin)
    }

    pub fn global_min_value(&self) -> f64 {
        self.minima().find(|p| p.e == self.global_min).map(|p| p.i_rs).unwrap_or(f64::NAN)
    }
}

const DEGENERACY_TOL: f64 = 1e-12;

/// Locates the stationary points of `i_RS(·; Δ)` on `[0, v]`.
///
/// Sign changes of `E − mmse` on the grid are refined by bisection to
/// `1e-9·v`. Grid-local extrema of the gap that approach zero without
/// crossing are refined as well, so a pair of nearby roots inside one grid
/// cell is not missed.
pub fn stationary_points(channel: &ScalarChannel, params: &ChannelParams, grid_n: usize) -> Result<StationarySet> {
    params.check_prior(channel.prior())?;
    if params.delta <= 0.0 {
        return domain("stationary points need Δ > 0");
    }
    let v = channel.prior().v();
    let gap = |e: f64| fixed_point_gap(e, channel, params);
    let mut roots: Vec<(f64, StationaryKind)> = Vec::new();
    if v == 0.0 {
        roots.push((0.0, StationaryKind::LocalMin));
    } else {
        let grid = e_grid(v, grid_n);
        let g: Vec<f64> = grid.iter().map(|&e| gap(e)).collect();
        let etol = 1e-9 * v;
        let positive: Vec<bool> = g.iter().map(|x| *x > 0.0).collect();
        if g[0] >= 0.0 {
            // mmse at E = 0 is exactly zero: E = 0 is itself a fixed point
            roots.push((0.0, StationaryKind::LocalMin));
        }
        let mut prev = g[0] >= 0.0;
        for i in 1..grid.len() {
            if positive[i] != prev {
                let e = bisect_root(&gap, grid[i - 1], grid[i], etol);
                let kind = if positive[i] { StationaryKind::LocalMin } else { StationaryKind::LocalMax };
                roots.push((e, kind));
                prev = positive[i];
            }
            if i + 1 < grid.len() {
                let (a, b, c) = (g[i - 1], g[i], g[i + 1]);
                let dips = b > 0.0 && b <= a && b <= c;
                let peaks = b <= 0.0 && b >= a && b >= c && i > 1;
                if dips || peaks {
                    let sgn = if dips { 1.0 } else { -1.0 };
                    let (e_ext, g_ext) = golden_min(|e| sgn * gap(e), grid[i - 1], grid[i + 1], etol);
                    if (dips && g_ext <= 0.0) || (peaks && -g_ext > 0.0) {
                        let r1 = bisect_root(&gap, grid[i - 1], e_ext, etol);
                        let r2 = bisect_root(&gap, e_ext, grid[i + 1], etol);
                        let (k1, k2) = if dips {
                            (StationaryKind::LocalMax, StationaryKind::LocalMin)
                        } else {
                            (StationaryKind::LocalMin, StationaryKind::LocalMax)
                        };
                        roots.push((r1, k1));
                        roots.push((r2, k2));
                    }
                }
            }
        }
        roots.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let mut points = Vec::with_capacity(roots.len());
    for (e, kind) in roots {
        points.push(StationaryPoint { e, kind, i_rs: rs_potential(e, channel, params)? });
    }
    let mut best: Option<StationaryPoint> = None;
    let mut degenerate = false;
    for p in points.iter().filter(|p| p.kind == StationaryKind::LocalMin) {
        match best {
            None => best = Some(*p),
            Some(b) => {
                let scale = b.i_rs.abs().max(p.i_rs.abs()).max(1.0);
                if (p.i_rs - b.i_rs).abs() <= DEGENERACY_TOL * scale {
                    degenerate = true;
                } else if p.i_rs < b.i_rs {
                    best = Some(*p);
                    degenerate = false;
                }
            }
        }
    }
    let global_min = best.map(|p| p.e).ok_or_else(|| Error::Domain("no local minimum of the potential was found".into()))?;
    let violation = points.len() > 3;
    Ok(StationarySet { points, global_min, degenerate, violation })
}

/// Root of `f` in `[lo, hi]` (opposite signs) to width `tol`.
pub(crate) fn bisect_root(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let lo_pos = f(lo) > 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == lo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Bisection tolerance on Δ.
    pub tol: f64,
    /// Largest Δ examined; `None` means `10·v/(αB)`.
    pub cap: Option<f64>,
    /// Points of the E-grid used by [`stationary_points`].
    pub grid_n: usize,
    /// Points of the logarithmic Δ scan on `[1e-6·cap, cap]`.
    pub delta_grid_n: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { tol: 1e-6, cap: None, grid_n: 512, delta_grid_n: 160 }
    }
}

impl ThresholdConfig {
    pub fn cap_for(&self, prior: &DiscretePrior, params: &ChannelParams) -> f64 {
        self.cap.unwrap_or(10.0 * prior.v() / params.alpha_b())
    }

    pub fn delta_grid(&self, cap: f64) -> Vec<f64> {
        let n = self.delta_grid_n.max(2);
        let lo = (cap * 1e-6).ln();
        let hi = cap.ln();
        (0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub delta_amp: f64,
    pub delta_rs: f64,
    pub tol: f64,
    /// No transition was found below the cap; both thresholds are `+∞`.
    pub cap_hit: bool,
}

/// Where the stationary structure has more than one point, as seen by a Δ scan.
#[derive(Debug, Clone)]
struct Window {
    /// Last scanned Δ with a unique stationary point, and first with several.
    enter: (f64, f64),
    /// First scanned Δ after the window with a unique point again, if any.
    exit: Option<f64>,
}

fn multi(channel: &ScalarChannel, params: &ChannelParams, delta: f64, grid_n: usize) -> Result<bool> {
    Ok(stationary_points(channel, &params.with_delta(delta), grid_n)?.points.len() > 1)
}

fn scan_window(channel: &ScalarChannel, params: &ChannelParams, cfg: &ThresholdConfig) -> Result<Option<Window>> {
    params.check_prior(channel.prior())?;
    let cap = cfg.cap_for(channel.prior(), params);
    let grid = cfg.delta_grid(cap);
    let flags: Vec<bool> = grid.par_iter().map(|&d| multi(channel, params, d, cfg.grid_n)).collect::<Result<_>>()?;
    let dump = || {
        grid.iter()
            .zip(&flags)
            .map(|(d, f)| format!("{d:.6e}:{}", if *f { "multi" } else { "unique" }))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let Some(first) = flags.iter().position(|f| *f) else {
        return Ok(None);
    };
    let exit_idx = flags[first..].iter().position(|f| !*f).map(|i| i + first);
    if let Some(j) = exit_idx {
        if flags[j..].iter().any(|f| *f) {
            return Err(Error::NonMonotone {
                what: "stationary-point count".into(),
                diagnostics: format!("more than one Δ window with several stationary points; grid: {}", dump()),
            });
        }
    }
    let enter = if first > 0 {
        (grid[first - 1], grid[first])
    } else {
        // Several branches already at the bottom of the scan: probe further
        // down. If the structure stays non-unique the threshold is zero.
        let mut enter = (0.0, grid[0]);
        for k in 1..=6 {
            let d = grid[0] * 10f64.powi(-k);
            if !multi(channel, params, d, cfg.grid_n)? {
                enter = (d, d * 10.0);
                break;
            }
        }
        enter
    };
    Ok(Some(Window { enter, exit: exit_idx.map(|j| grid[j]) }))
}

/// Largest Δ below which the stationary point of `i_RS` is unique.
/// Returns `+∞` when no second branch appears below the cap.
pub fn delta_amp(channel: &ScalarChannel, params: &ChannelParams, cfg: &ThresholdConfig) -> Result<f64> {
    match scan_window(channel, params, cfg)? {
        None => Ok(f64::INFINITY),
        Some(w) => refine_amp(channel, params, cfg, &w).map(|(lo, _)| lo),
    }
}

fn refine_amp(channel: &ScalarChannel, params: &ChannelParams, cfg: &ThresholdConfig, w: &Window) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = w.enter;
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        if multi(channel, params, mid, cfg.grid_n)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

/// Both thresholds. `Δ_RS` is where the two local minima of `i_RS` have equal
/// value; it is bisected to relative precision well below `cfg.tol` so the
/// minima agree closely at the returned point.
pub fn thresholds(channel: &ScalarChannel, params: &ChannelParams, cfg: &ThresholdConfig) -> Result<Thresholds> {
    let Some(w) = scan_window(channel, params, cfg)? else {
        return Ok(Thresholds { delta_amp: f64::INFINITY, delta_rs: f64::INFINITY, tol: cfg.tol, cap_hit: true });
    };
    let (amp, amp_hi) = refine_amp(channel, params, cfg, &w)?;
    let delta_rs = refine_rs(channel, params, cfg, amp_hi, &w)?;
    Ok(Thresholds { delta_amp: amp, delta_rs: delta_rs.max(amp), tol: cfg.tol, cap_hit: false })
}

pub fn delta_rs(channel: &ScalarChannel, params: &ChannelParams, cfg: &ThresholdConfig) -> Result<f64> {
    Ok(thresholds(channel, params, cfg)?.delta_rs)
}

/// Which side of `Δ_RS` a Δ lies on: `Some(true)` below (small-E minimum
/// wins), `Some(false)` above, by comparing the outermost minima.
fn below_rs(channel: &ScalarChannel, params: &ChannelParams, delta: f64, grid_n: usize, e_split: f64) -> Result<(bool, f64)> {
    let set = stationary_points(channel, &params.with_delta(delta), grid_n)?;
    let mins: Vec<&StationaryPoint> = set.minima().collect();
    match mins.len() {
        1 => Ok((mins[0].e < e_split, 0.0)),
        2 => {
            let f = mins[0].i_rs - mins[1].i_rs;
            Ok((f < 0.0, f))
        }
        n => Err(Error::NonMonotone {
            what: "local-minimum count".into(),
            diagnostics: format!("{n} local minima at Δ = {delta:.12e}: {:?}", set.points),
        }),
    }
}

fn refine_rs(channel: &ScalarChannel, params: &ChannelParams, cfg: &ThresholdConfig, start: f64, w: &Window) -> Result<f64> {
    // the local maximum at the window entry separates the two branches
    let entry = stationary_points(channel, &params.with_delta(start), cfg.grid_n)?;
    let e_split = entry
        .points
        .iter()
        .find(|p| p.kind == StationaryKind::LocalMax)
        .map(|p| p.e)
        .unwrap_or(0.5 * channel.prior().v());
    let cap = cfg.cap_for(channel.prior(), params);
    let mut lo = start;
    let (below, _) = below_rs(channel, params, lo, cfg.grid_n, e_split)?;
    if !below {
        return Ok(lo);
    }
    let mut hi = f64::NAN;
    let scan: Vec<f64> = cfg.delta_grid(cap).into_iter().filter(|d| *d > start).collect();
    for d in scan {
        let (b, _) = below_rs(channel, params, d, cfg.grid_n, e_split)?;
        if b {
            lo = d;
        } else {
            hi = d;
            break;
        }
        if w.exit.is_some_and(|x| d >= x) {
            break;
        }
    }
    if hi.is_nan() {
        return Ok(f64::INFINITY);
    }
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below_rs(channel, params, mid, cfg.grid_n, e_split)?.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
