//! Spatially coupled measurement matrices and boundary seeding.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};
use crate::instance::CsInstance;
use crate::state_evolution::{CouplingKind, CouplingSpec};

/// Row and column block maps of a `Γ × Γ` block matrix of size `M × N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub gamma: usize,
    pub m: usize,
    pub n: usize,
    pub rows_per_block: usize,
    pub cols_per_block: usize,
}

impl BlockLayout {
    /// Requires `Γ | M` and `Γ | L` (so no section straddles two blocks).
    pub fn new(gamma: usize, m: usize, l: usize, b: usize) -> Result<Self> {
        if gamma == 0 || !m.is_multiple_of(gamma) || !l.is_multiple_of(gamma) {
            let valid_l: Vec<usize> = (1..=6).map(|k| k * gamma).collect();
            return domain(format!(
                "coupled ensembles need Γ = {gamma} to divide both M = {m} and L = {l}; valid L include {valid_l:?} with M a multiple of {gamma}"
            ));
        }
        Ok(Self { gamma, m, n: l * b, rows_per_block: m / gamma, cols_per_block: l * b / gamma })
    }

    pub fn row_block(&self, mu: usize) -> usize {
        mu / self.rows_per_block
    }

    pub fn col_block(&self, i: usize) -> usize {
        i / self.cols_per_block
    }
}

/// `M × N` matrix with entries of block `(r, c)` drawn i.i.d. `N(0, J_rc/L)`.
/// Zero-variance blocks are exactly zero.
pub fn sample_sc_matrix<R: Rng + ?Sized>(
    spec: &CouplingSpec,
    l: usize,
    b: usize,
    m: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let layout = BlockLayout::new(spec.gamma, m, l, b)?;
    let n = l * b;
    let scale: Vec<f64> = spec.j.iter().map(|j| (j / l as f64).sqrt()).collect();
    let mut phi = Array2::zeros((m, n));
    for mu in 0..m {
        let r = layout.row_block(mu);
        for i in 0..n {
            let g: f64 = rng.sample(StandardNormal);
            phi[[mu, i]] = g * scale[r * spec.gamma + layout.col_block(i)];
        }
    }
    Ok(phi)
}

/// Section indices pinned by a seeded coupling.
pub fn pinned_sections(spec: &CouplingSpec, l: usize) -> Result<Vec<bool>> {
    if !l.is_multiple_of(spec.gamma) {
        return domain(format!("Γ = {} does not divide L = {l}", spec.gamma));
    }
    let per = l / spec.gamma;
    Ok((0..l).map(|sec| spec.is_pinned(sec / per)).collect())
}

/// A seeded instance reduced by column subtraction: the known boundary
/// sections are moved to the measurement side and their columns dropped.
#[derive(Debug, Clone)]
pub struct SeededInstance {
    /// The reduced problem over the free sections only.
    pub reduced: CsInstance,
    /// For each section of the original instance, whether it is known.
    pub pinned: Vec<bool>,
    /// Original section index of every section of `reduced`.
    pub free_sections: Vec<usize>,
}

pub fn apply_seed(instance: &CsInstance, spec: &CouplingSpec) -> Result<SeededInstance> {
    if spec.kind != CouplingKind::Seeded {
        return Err(Error::Domain("seeding needs a seeded coupling".into()));
    }
    let pinned = pinned_sections(spec, instance.l)?;
    let b = instance.b;
    let free_sections: Vec<usize> = (0..instance.l).filter(|s| !pinned[*s]).collect();
    let m = instance.m();
    let mut y = instance.y.clone();
    for (sec, _) in pinned.iter().enumerate().filter(|(_, p)| **p) {
        for j in sec * b..(sec + 1) * b {
            let sj = instance.s[j];
            for (mu, ym) in y.iter_mut().enumerate() {
                *ym -= instance.phi[[mu, j]] * sj;
            }
        }
    }
    let cols: Vec<usize> = free_sections.iter().flat_map(|s| s * b..(s + 1) * b).collect();
    let mut phi = Array2::zeros((m, cols.len()));
    for (new, &old) in cols.iter().enumerate() {
        phi.column_mut(new).assign(&instance.phi.column(old));
    }
    let s = cols.iter().map(|&i| instance.s[i]).collect();
    let reduced = CsInstance {
        phi,
        s,
        z: instance.z.clone(),
        y,
        delta: instance.delta,
        l: free_sections.len(),
        b,
        coupling: None,
        pinned: Vec::new(),
    };
    Ok(SeededInstance { reduced, pinned, free_sections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_evolution::build_coupling;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn block_maps() {
        let lay = BlockLayout::new(3, 6, 9, 2).unwrap();
        assert_eq!((lay.rows_per_block, lay.cols_per_block), (2, 6));
        assert_eq!(lay.row_block(5), 2);
        assert_eq!(lay.col_block(6), 1);
        assert!(BlockLayout::new(3, 5, 9, 1).is_err());
        assert!(BlockLayout::new(3, 6, 8, 1).is_err());
    }

    #[test]
    fn decoupled_is_block_diagonal() {
        let spec = build_coupling(3, 0, CouplingKind::Periodic).unwrap();
        let phi = sample_sc_matrix(&spec, 6, 1, 6, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        for mu in 0..6 {
            for i in 0..6 {
                assert_eq!(phi[[mu, i]] == 0.0, mu / 2 != i / 2);
            }
        }
    }

    #[test]
    fn block_variances() {
        // Γ = 9, w = 2, 100 × 100 blocks: sample variance within 3σ of J/L
        let spec = build_coupling(9, 2, CouplingKind::Periodic).unwrap();
        let l = 900;
        let phi = sample_sc_matrix(&spec, l, 1, 900, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                let block = phi.slice(ndarray::s![r * 100..(r + 1) * 100, c * 100..(c + 1) * 100]);
                let var = block.iter().map(|x| x * x).sum::<f64>() / 10_000.0;
                let target = spec.j(r, c) / l as f64;
                // Var of a mean of x² for Gaussian x: 2σ⁴/n
                let sd = (2.0 * target * target / 10_000.0).sqrt();
                assert!((var - target).abs() <= 3.0 * sd + 1e-300, "block ({r},{c}): {var} vs {target}");
            }
        }
    }

    #[test]
    fn seeded_boundary_sections() {
        let spec = build_coupling(9, 1, CouplingKind::Seeded).unwrap();
        let p = pinned_sections(&spec, 18).unwrap();
        assert_eq!(p.iter().filter(|x| **x).count(), 16);
        assert!(!p[8] && !p[9] && p[7] && p[10]);
    }
}
