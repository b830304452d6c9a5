//! Discrete section priors and the Bayes-optimal scalar channel.
//!
//! A prior `P0 = Σ_k p_k δ(· − a_k)` lives on `R^B`. Observing a section
//! through `y = s + σ z` with `z ~ N(0, I_B)` gives the posterior weights
//! `∝ p_k exp(−‖y − a_k‖² / 2σ²)`; its mean is the denoiser used by AMP and
//! its average squared error is the `mmse` function driving state evolution.

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature::{Quadrature, QuadratureSpec};
use crate::stats::Estimate;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const JSON_RENORMALIZE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePrior {
    b: usize,
    /// Row-major `K × B`.
    atoms: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    s_max: f64,
    mean: Vec<f64>,
    v: f64,
}

/// JSON layout of a prior document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorDoc {
    #[serde(rename = "B")]
    pub b: usize,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl DiscretePrior {
    pub fn new(b: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if b == 0 {
            return Err(Error::InvalidPrior("section dimension B must be positive".into()));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidPrior("a prior needs at least one atom".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidPrior(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        for (k, a) in atoms.iter().enumerate() {
            if a.len() != b {
                return Err(Error::InvalidPrior(format!("atom {k} has length {} != B = {b}", a.len())));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidPrior(format!("atom {k} has a non-finite component")));
            }
        }
        if let Some(k) = weights.iter().position(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::InvalidPrior(format!("weight {k} = {} is not positive", weights[k])));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidPrior(format!("weights sum to {total}, expected 1")));
        }

        let flat: Vec<f64> = atoms.iter().flatten().copied().collect();
        let s_max = flat.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut mean = vec![0.0; b];
        let mut v = 0.0;
        for (a, p) in atoms.iter().zip(&weights) {
            for (m, x) in mean.iter_mut().zip(a) {
                *m += p * x;
            }
            v += p * a.iter().map(|x| x * x).sum::<f64>();
        }
        Ok(Self {
            b,
            log_weights: weights.iter().map(|p| p.ln()).collect(),
            atoms: flat,
            weights,
            s_max,
            mean,
            v,
        })
    }

    /// Symmetric binary prior on `{+1, −1}`.
    pub fn binary() -> Self {
        Self::new(1, vec![vec![1.0], vec![-1.0]], vec![0.5, 0.5]).expect("valid")
    }

    /// `{0` w.p. `1 − ρ`, `amplitude` w.p. `ρ}` on the real line.
    pub fn sparse(rho: f64, amplitude: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidPrior(format!("sparsity {rho} must lie in (0, 1)")));
        }
        Self::new(1, vec![vec![0.0], vec![amplitude]], vec![1.0 - rho, rho])
    }

    /// Uniform prior over the `B` scaled canonical basis vectors.
    pub fn one_hot(b: usize, amplitude: f64) -> Result<Self> {
        let atoms = (0..b)
            .map(|k| (0..b).map(|j| if j == k { amplitude } else { 0.0 }).collect())
            .collect();
        Self::new(b, atoms, vec![1.0 / b as f64; b])
    }

    /// Deterministic prior concentrated on a single atom.
    pub fn point(atom: Vec<f64>) -> Result<Self> {
        Self::new(atom.len(), vec![atom], vec![1.0])
    }

    /// Parses `binary`, `sparse:<rho>[:<a>]`, `onehot:<B>[:<a>]` or
    /// `point:<x1>,<x2>,...`.
    pub fn builtin(name: &str) -> Result<Self> {
        let parts: Vec<&str> = name.split(':').collect();
        let num = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::InvalidPrior(format!("bad number '{s}' in '{name}'")))
        };
        match parts.as_slice() {
            ["binary"] => Ok(Self::binary()),
            ["sparse", rho] => Self::sparse(num(rho)?, 1.0),
            ["sparse", rho, a] => Self::sparse(num(rho)?, num(a)?),
            ["onehot", b] => Self::one_hot(parse_dim(b, name)?, 1.0),
            ["onehot", b, a] => Self::one_hot(parse_dim(b, name)?, num(a)?),
            ["point", xs] => Self::point(xs.split(',').map(num).collect::<Result<Vec<_>>>()?),
            _ => Err(Error::InvalidPrior(format!(
                "unknown builtin prior '{name}' (expected binary, sparse:<rho>[:<a>], onehot:<B>[:<a>], point:<x,..>)"
            ))),
        }
    }

    /// Loads a JSON prior document. Weights that are off from summing to one
    /// by at most 1e-9 are renormalized; larger deviations are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PriorDoc = serde_json::from_str(text)?;
        let total: f64 = doc.weights.iter().sum();
        if (total - 1.0).abs() > JSON_RENORMALIZE_TOL {
            return Err(Error::InvalidPrior(format!("weights sum to {total}, expected 1 within 1e-9")));
        }
        let weights = doc.weights.iter().map(|p| p / total).collect();
        Self::new(doc.b, doc.atoms, weights)
    }

    pub fn to_doc(&self) -> PriorDoc {
        PriorDoc { b: self.b, atoms: (0..self.k()).map(|k| self.atom(k).to_vec()).collect(), weights: self.weights.clone() }
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.b..(k + 1) * self.b]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    /// Prior mean and `v = E‖S‖²`.
    pub fn moments(&self) -> (Vec<f64>, f64) {
        (self.mean.clone(), self.v)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    /// Trace of the prior covariance, `v − ‖mean‖²`.
    pub fn variance(&self) -> f64 {
        (self.v - self.mean.iter().map(|m| m * m).sum::<f64>()).max(0.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.weights.iter().map(|p| p * p.ln()).sum::<f64>()
    }

    /// Smallest distance between two distinct atoms (infinite for `K = 1`).
    pub fn min_atom_distance(&self) -> f64 {
        let mut d = f64::INFINITY;
        for i in 0..self.k() {
            for j in i + 1..self.k() {
                d = d.min(dist2(self.atom(i), self.atom(j)).sqrt());
            }
        }
        d
    }

    /// `L` i.i.d. sections, concatenated into a vector of length `L·B`.
    pub fn sample_sections<R: Rng + ?Sized>(&self, l: usize, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(l * self.b);
        for k in self.sample_indices(l, rng) {
            out.extend_from_slice(self.atom(k));
        }
        out
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, l: usize, rng: &mut R) -> Vec<usize> {
        if self.k() == 1 {
            return vec![0; l];
        }
        let dist = WeightedIndex::new(&self.weights).expect("weights validated at construction");
        (0..l).map(|_| dist.sample(rng)).collect()
    }

    /// Posterior weights of the atoms given `y` observed at noise variance
    /// `sigma2`. Writes them into `w` and returns
    /// `ln Σ_k p_k exp(−‖y − a_k‖² / 2σ²)`.
    pub fn posterior_weights(&self, y: &[f64], sigma2: f64, w: &mut [f64]) -> f64 {
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = self.log_weights[k] - dist2(y, self.atom(k)) / (2.0 * sigma2);
        }
        normalize_log_weights(w)
    }

    pub fn denoise(&self, y: &[f64], sigma2: f64) -> Result<Vec<f64>> {
        check_sigma2(sigma2)?;
        check_len(y, self.b)?;
        let mut out = vec![0.0; self.b];
        let mut w = vec![0.0; self.k()];
        self.denoise_into(y, sigma2, &mut out, &mut w);
        Ok(out)
    }

    /// Posterior mean written into `out`; returns the trace of the denoiser
    /// Jacobian (the divergence `Σ_j ∂η_j/∂y_j`). `scratch` must have length `K`.
    pub fn denoise_into(&self, y: &[f64], sigma2: f64, out: &mut [f64], scratch: &mut [f64]) -> f64 {
        self.posterior_weights(y, sigma2, scratch);
        out.fill(0.0);
        for (k, wk) in scratch.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.atom(k)) {
                *o += wk * a;
            }
        }
        let mut var = 0.0;
        for (k, wk) in scratch.iter().enumerate() {
            var += wk * dist2(self.atom(k), out);
        }
        var / sigma2
    }

    /// `∂η/∂y = (⟨xxᵀ⟩ − ⟨x⟩⟨x⟩ᵀ) / σ²` under the channel posterior.
    pub fn denoiser_jacobian(&self, y: &[f64], sigma2: f64) -> Result<Array2<f64>> {
        check_sigma2(sigma2)?;
        check_len(y, self.b)?;
        let mut w = vec![0.0; self.k()];
        let mut mean = vec![0.0; self.b];
        self.denoise_into(y, sigma2, &mut mean, &mut w);
        let mut jac = Array2::zeros((self.b, self.b));
        for (k, wk) in w.iter().enumerate() {
            let a = self.atom(k);
            for i in 0..self.b {
                let di = a[i] - mean[i];
                for j in 0..self.b {
                    jac[[i, j]] += wk * di * (a[j] - mean[j]);
                }
            }
        }
        jac.mapv_inplace(|x| x / sigma2);
        Ok(jac)
    }

    /// `E‖S − η(S + σZ; σ²)‖²` with `σ² = 1/snr`.
    pub fn mmse_fn(&self, snr: f64, quad: &Quadrature) -> f64 {
        self.mmse_estimate(snr, quad).value
    }

    /// [`mmse_fn`](Self::mmse_fn) together with the integration standard error
    /// (zero for Gauss–Hermite).
    pub fn mmse_estimate(&self, snr: f64, quad: &Quadrature) -> Estimate {
        if snr <= 0.0 {
            return Estimate::exact(self.variance());
        }
        if !snr.is_finite() || self.k() == 1 {
            return Estimate::exact(0.0);
        }
        let sigma = (1.0 / snr).sqrt();
        if let Some(gh) = quad.hermite() {
            let v = self.scalar_mmse(sigma, gh.nodes(), gh.weights());
            return Estimate::exact(v.clamp(0.0, self.variance()));
        }
        let mut est = self.channel_expect(sigma, quad, |prior, k, w| {
            // η − a_k = Σ_l w_l (a_l − a_k), avoids cancellation at high snr.
            let ak = prior.atom(k);
            let mut err = 0.0;
            for j in 0..prior.b {
                let mut d = 0.0;
                for (l, wl) in w.iter().enumerate() {
                    d += wl * (prior.atom(l)[j] - ak[j]);
                }
                err += d * d;
            }
            err
        });
        est.value = est.value.clamp(0.0, self.variance());
        est
    }

    /// Scalar (`B = 1`) mmse on a Gauss–Hermite rule; the hot path of
    /// state evolution.
    fn scalar_mmse(&self, sigma: f64, nodes: &[f64], weights: &[f64]) -> f64 {
        let k = self.k();
        let a = &self.atoms;
        let mut e = vec![0.0; k];
        let mut total = 0.0;
        // the integrand is at most the squared atom diameter, so far-tail
        // nodes cannot contribute at double precision
        let floor = 1e-18 / (4.0 * self.s_max * self.s_max).max(1e-300);
        for (z, wz) in nodes.iter().zip(weights) {
            if *wz < floor {
                continue;
            }
            let mut acc = 0.0;
            for (ak, pk) in a.iter().zip(&self.weights) {
                let mut m = f64::NEG_INFINITY;
                for l in 0..k {
                    let u = (ak - a[l]) / sigma + z;
                    e[l] = self.log_weights[l] - 0.5 * u * u;
                    m = m.max(e[l]);
                }
                let (mut num, mut den) = (0.0, 0.0);
                for l in 0..k {
                    let w = (e[l] - m).exp();
                    num += w * (a[l] - ak);
                    den += w;
                }
                let d = num / den;
                acc += pk * d * d;
            }
            total += wz * acc;
        }
        total
    }

    /// Expected trace of the posterior covariance at noise variance
    /// `sigma2`, computed as `σ²·E[tr ∂η]`. Equals the mmse by the
    /// Nishimori identity.
    pub fn mean_posterior_variance(&self, sigma2: f64, quad: &Quadrature) -> Result<Estimate> {
        check_sigma2(sigma2)?;
        let sigma = sigma2.sqrt();
        let mut y = vec![0.0; self.b];
        let mut w2 = vec![0.0; self.k()];
        let mut mean = vec![0.0; self.b];
        Ok(self.channel_expect_z(quad, |prior, k, z| {
            for j in 0..prior.b {
                y[j] = prior.atom(k)[j] + sigma * z[j];
            }
            let jac = prior.denoise_into(&y, sigma2, &mut mean, &mut w2);
            jac * sigma2
        }))
    }

    /// Mutual information (nats) between `S ~ P0` and `S + σZ`.
    pub fn channel_mutual_information(&self, sigma2: f64, quad: &Quadrature) -> Result<Estimate> {
        check_sigma2(sigma2)?;
        if self.k() == 1 {
            return Ok(Estimate::exact(0.0));
        }
        let sigma = sigma2.sqrt();
        let b = self.b as f64;
        let mut log_terms = vec![0.0; self.k()];
        let mut est = self.channel_expect_z(quad, |prior, k, z| {
            // exponent of atom l: ln p_l − ‖(a_k − a_l)/σ + z‖²/2
            for (l, t) in log_terms.iter_mut().enumerate() {
                let mut q = 0.0;
                for j in 0..prior.b {
                    let u = (prior.atom(k)[j] - prior.atom(l)[j]) / sigma + z[j];
                    q += u * u;
                }
                *t = prior.log_weights[l] - 0.5 * q;
            }
            -log_sum_exp(&log_terms)
        });
        est.value -= b / 2.0;
        est.value = est.value.clamp(0.0, self.entropy());
        Ok(est)
    }

    /// `E_{S,Z}[f(k, w)]` where `k` indexes the true atom and `w` are the
    /// posterior weights for `y = a_k + σz`.
    fn channel_expect(&self, sigma: f64, quad: &Quadrature, mut f: impl FnMut(&Self, usize, &[f64]) -> f64) -> Estimate {
        let mut w = vec![0.0; self.k()];
        self.channel_expect_z(quad, |prior, k, z| {
            for (l, wl) in w.iter_mut().enumerate() {
                let mut q = 0.0;
                for j in 0..prior.b {
                    let u = (prior.atom(k)[j] - prior.atom(l)[j]) / sigma + z[j];
                    q += u * u;
                }
                *wl = prior.log_weights[l] - 0.5 * q;
            }
            normalize_log_weights(&mut w);
            f(prior, k, &w)
        })
    }

    fn channel_expect_z(&self, quad: &Quadrature, mut f: impl FnMut(&Self, usize, &[f64]) -> f64) -> Estimate {
        assert_eq!(quad.dim(), self.b, "quadrature dimension must equal B");
        quad.expect(|z| (0..self.k()).map(|k| self.weights[k] * f(self, k, z)).sum())
    }
}

/// A prior bundled with the integration rule used for its scalar channel.
#[derive(Debug, Clone)]
pub struct ScalarChannel {
    prior: DiscretePrior,
    spec: QuadratureSpec,
    quad: Quadrature,
}

impl ScalarChannel {
    pub fn new(prior: DiscretePrior, spec: &QuadratureSpec) -> Result<Self> {
        let quad = Quadrature::new(spec, prior.b())?;
        Ok(Self { prior, spec: *spec, quad })
    }

    pub fn prior(&self) -> &DiscretePrior {
        &self.prior
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    pub fn mmse(&self, snr: f64) -> f64 {
        self.prior.mmse_fn(snr, &self.quad)
    }

    pub fn mmse_estimate(&self, snr: f64) -> Estimate {
        self.prior.mmse_estimate(snr, &self.quad)
    }

    pub fn mutual_information(&self, sigma2: f64) -> Result<f64> {
        Ok(self.prior.channel_mutual_information(sigma2, &self.quad)?.value)
    }
}

/// `mmse(snr)` for a one-off evaluation; build a [`ScalarChannel`] for repeated use.
pub fn mmse_fn(prior: &DiscretePrior, snr: f64, spec: &QuadratureSpec) -> Result<f64> {
    if snr.is_nan() || snr < 0.0 {
        return domain(format!("snr must be non-negative, got {snr}"));
    }
    Ok(prior.mmse_fn(snr, &Quadrature::new(spec, prior.b())?))
}

fn parse_dim(s: &str, name: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| Error::InvalidPrior(format!("bad dimension '{s}' in '{name}'")))
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && !sigma2.is_nan() {
        Ok(())
    } else {
        domain(format!("noise variance must be positive, got {sigma2}"))
    }
}

fn check_len(y: &[f64], b: usize) -> Result<()> {
    if y.len() == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("observation has length {} but B = {b}", y.len())))
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Turns log-weights into probabilities in place; returns their log-sum.
pub(crate) fn normalize_log_weights(w: &mut [f64]) -> f64 {
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in w.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in w.iter_mut() {
        *x /= total;
    }
    m + total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn gh() -> Quadrature {
        Quadrature::new(&QuadratureSpec::default(), 1).unwrap()
    }

    #[test]
    fn moments_examples() {
        let (m, v) = DiscretePrior::binary().moments();
        assert_eq!((m[0], v), (0.0, 1.0));
        let (m, v) = DiscretePrior::point(vec![2.0, -1.0]).unwrap().moments();
        assert_eq!((m, v), (vec![2.0, -1.0], 5.0));
        let (m, v) = DiscretePrior::one_hot(2, 1.0).unwrap().moments();
        assert_eq!((m, v), (vec![0.5, 0.5], 1.0));
    }

    #[test]
    fn entropy_examples() {
        assert!((DiscretePrior::binary().entropy() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(DiscretePrior::point(vec![3.0]).unwrap().entropy(), 0.0);
        let p = DiscretePrior::new(1, vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).unwrap();
        let h = -0.25 * 0.25f64.ln() - 0.75 * 0.75f64.ln();
        assert!((p.entropy() - h).abs() < 1e-15);
        assert!(p.entropy() <= 2f64.ln());
    }

    #[test]
    fn invalid_priors_rejected() {
        assert!(DiscretePrior::new(1, vec![vec![1.0]], vec![0.9]).is_err());
        assert!(DiscretePrior::new(1, vec![vec![1.0], vec![0.0]], vec![1.0, 0.0]).is_err());
        assert!(DiscretePrior::new(2, vec![vec![1.0]], vec![1.0]).is_err());
        assert!(DiscretePrior::new(1, vec![], vec![]).is_err());
        assert!(DiscretePrior::builtin("gaussian").is_err());
    }

    #[test]
    fn json_renormalizes_small_errors_only() {
        let ok = r#"{"B": 1, "atoms": [[1.0], [-1.0]], "weights": [0.5000000001, 0.5]}"#;
        let p = DiscretePrior::from_json(ok).unwrap();
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let bad = r#"{"B": 1, "atoms": [[1.0], [-1.0]], "weights": [0.6, 0.5]}"#;
        assert!(DiscretePrior::from_json(bad).is_err());
        let doc = serde_json::to_string(&DiscretePrior::binary().to_doc()).unwrap();
        assert_eq!(DiscretePrior::from_json(&doc).unwrap(), DiscretePrior::binary());
    }

    #[test]
    fn builtins_parse() {
        assert_eq!(DiscretePrior::builtin("binary").unwrap(), DiscretePrior::binary());
        let s = DiscretePrior::builtin("sparse:0.1").unwrap();
        assert!((s.v() - 0.1).abs() < 1e-15);
        assert_eq!(DiscretePrior::builtin("onehot:4").unwrap().b(), 4);
        assert_eq!(DiscretePrior::builtin("point:1,2").unwrap().v(), 5.0);
    }

    #[test]
    fn sampling() {
        let p = DiscretePrior::point(vec![0.5, -2.0]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let s = p.sample_sections(7, &mut rng);
        assert!(s.chunks(2).all(|c| c == [0.5, -2.0]));

        let b = DiscretePrior::binary();
        let n = 100_000;
        let s = b.sample_sections(n, &mut ChaCha20Rng::seed_from_u64(3));
        let plus = s.iter().filter(|x| **x > 0.0).count() as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((plus - 0.5).abs() < 3.0 * sigma, "{plus}");

        let a = b.sample_sections(50, &mut ChaCha20Rng::seed_from_u64(9));
        let c = b.sample_sections(50, &mut ChaCha20Rng::seed_from_u64(9));
        assert_eq!(a, c);
    }

    #[test]
    fn denoise_examples() {
        let b = DiscretePrior::binary();
        for s2 in [0.01, 1.0, 100.0] {
            assert!(b.denoise(&[0.0], s2).unwrap()[0].abs() < 1e-15);
        }
        // direct weighted sum at y = 1, σ² = 1
        let wp = (-(1.0f64 - 1.0).powi(2) / 2.0).exp();
        let wm = (-(1.0f64 + 1.0).powi(2) / 2.0).exp();
        let direct = (wp - wm) / (wp + wm);
        let got = b.denoise(&[1.0], 1.0).unwrap()[0];
        assert!((got - 1f64.tanh()).abs() < 1e-15);
        assert!((got - direct).abs() < 1e-15);
        assert!((got - 0.761594).abs() < 1e-6);

        let p = DiscretePrior::point(vec![0.3]).unwrap();
        assert_eq!(p.denoise(&[5.0], 0.2).unwrap(), vec![0.3]);
        assert!(b.denoise(&[1.0], 0.0).is_err());
        assert!(b.denoise(&[1.0], -1.0).is_err());
        // extreme observations do not overflow
        assert_eq!(b.denoise(&[1e6], 1e-6).unwrap()[0], 1.0);
    }

    #[test]
    fn jacobian_examples() {
        let p = DiscretePrior::point(vec![1.0, 2.0]).unwrap();
        assert!(p.denoiser_jacobian(&[0.0, 0.0], 1.0).unwrap().iter().all(|x| *x == 0.0));
        let b = DiscretePrior::binary();
        for (y, s2) in [(0.3f64, 0.5f64), (-1.2, 2.0), (2.0, 0.7)] {
            let t = (y / s2).tanh();
            let j = b.denoiser_jacobian(&[y], s2).unwrap()[[0, 0]];
            assert!((j - (1.0 - t * t) / s2).abs() < 1e-13);
        }
        let oh = DiscretePrior::one_hot(3, 1.0).unwrap();
        let j = oh.denoiser_jacobian(&[0.2, 0.1, 0.0], 1e8).unwrap();
        assert!(j.iter().all(|x| x.abs() < 1e-8));
        assert!(b.denoiser_jacobian(&[0.0], 0.0).is_err());
    }

    #[test]
    fn mmse_boundaries() {
        let q = gh();
        let b = DiscretePrior::binary();
        assert_eq!(b.mmse_fn(0.0, &q), 1.0);
        assert!(b.mmse_fn(1e6, &q) <= (-10f64).exp());
        let s = DiscretePrior::sparse(0.2, 1.0).unwrap();
        assert!((s.mmse_fn(0.0, &q) - 0.16).abs() < 1e-15);
        assert_eq!(DiscretePrior::point(vec![1.0]).unwrap().mmse_fn(3.0, &q), 0.0);
    }

    #[test]
    fn binary_mmse_matches_tanh_formula() {
        // independent route: 1 − E_z tanh(snr + √snr z) on a dense
        // composite Simpson grid
        let b = DiscretePrior::binary();
        let q = gh();
        for (snr, tol) in [(0.1f64, 1e-8), (1.0, 1e-8), (3.0, 1e-6)] {
            let oracle = 1.0 - simpson(|z| gauss(z) * (snr + snr.sqrt() * z).tanh(), -12.0, 12.0, 200_000);
            let got = b.mmse_fn(snr, &q);
            assert!((got - oracle).abs() < tol, "snr={snr}: {got} vs {oracle}");
        }
    }

    #[test]
    fn mmse_equals_mean_posterior_variance() {
        let q = gh();
        for p in [DiscretePrior::binary(), DiscretePrior::sparse(0.1, 1.0).unwrap()] {
            for s2 in [0.5, 1.0, 2.0] {
                let m = p.mmse_fn(1.0 / s2, &q);
                let v = p.mean_posterior_variance(s2, &q).unwrap().value;
                assert!(((m - v) / m).abs() < 1e-6, "{m} vs {v}");
            }
        }
    }

    #[test]
    fn mi_limits() {
        let q = gh();
        let b = DiscretePrior::binary();
        assert!(b.channel_mutual_information(1e8, &q).unwrap().value <= 1e-3);
        assert!((b.channel_mutual_information(1e-8, &q).unwrap().value - 2f64.ln()).abs() < 1e-3);
        // binary-input AWGN: I = snr − E ln cosh(snr + √snr z)
        let snr: f64 = 1.0;
        let oracle = snr - simpson(|z| gauss(z) * (snr + snr.sqrt() * z).cosh().ln(), -12.0, 12.0, 200_000);
        assert!((b.channel_mutual_information(1.0, &q).unwrap().value - oracle).abs() < 1e-6);
    }

    #[test]
    fn vector_channel_uses_qmc() {
        let oh = DiscretePrior::one_hot(2, 1.0).unwrap();
        let q = Quadrature::new(&QuadratureSpec::default(), 2).unwrap();
        let e = oh.mmse_estimate(1.0, &q);
        assert!(e.stderr > 0.0 && e.value > 0.0 && e.value < oh.variance());
        // B = 2 one-hot reduces to a binary channel along (1,-1)/√2 with
        // atom separation √2: mmse = binary mmse at amplitude 1/√2
        let amp2: f64 = 0.5;
        let oracle = amp2 * (1.0 - simpson(|z| gauss(z) * (amp2 + amp2.sqrt() * z).tanh(), -12.0, 12.0, 100_000));
        assert!((e.value - oracle).abs() < 4.0 * e.stderr + 1e-4, "{e:?} vs {oracle}");
    }

    fn gauss(z: f64) -> f64 {
        (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }
}
