//! Second-order Schrieffer–Wolff reduction for non-Hermitian Hamiltonians
//! with a complete biorthogonal eigenbasis.
//!
//! Projectors are built from right/left pairs, `P = Σ_p |R_p><L_p|`, so they
//! are idempotent but not Hermitian. The generator is chosen block
//! off-diagonal and cancels the off-diagonal perturbation at first order.

use crate::error::{Error, Result};
use crate::linalg::{
    commutator, eigendecompose, BiorthogonalEigensystem, ComplexMatrix, ComplexVector, C64, OVERLAP_TOL,
};

/// Relative size (against the unperturbed spectral spread) below which an
/// energy denominator is treated as vanishing.
pub const DENOMINATOR_REL_TOL: f64 = 1e-10;

/// Indices of the retained levels P; Q is the complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuasiDegenerateGroup {
    p: Vec<usize>,
    q: Vec<usize>,
}

impl QuasiDegenerateGroup {
    pub fn new(p: Vec<usize>, dim: usize) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidGroup("P is empty".into()));
        }
        let mut seen = vec![false; dim];
        for &i in &p {
            if i >= dim {
                return Err(Error::IndexOutOfRange { index: i, dim });
            }
            if seen[i] {
                return Err(Error::InvalidGroup(format!("index {i} listed twice")));
            }
            seen[i] = true;
        }
        let q = (0..dim).filter(|&i| !seen[i]).collect();
        Ok(Self { p, q })
    }

    pub fn p_indices(&self) -> &[usize] {
        &self.p
    }

    pub fn q_indices(&self) -> &[usize] {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.p.len() + self.q.len()
    }

    fn check_against(&self, eig: &BiorthogonalEigensystem) -> Result<()> {
        if self.dim() != eig.dim() {
            return Err(Error::DimensionMismatch {
                expected: eig.dim(),
                got: self.dim(),
            });
        }
        Ok(())
    }

    /// Smallest `|E_q − E_p|` across the partition, and the threshold it must
    /// exceed.
    pub fn min_gap(&self, values: &[C64]) -> (f64, f64) {
        let mut gap = f64::INFINITY;
        for &p in &self.p {
            for &q in &self.q {
                gap = gap.min((values[q] - values[p]).norm());
            }
        }
        let mut spread = 0.0f64;
        for a in values {
            for b in values {
                spread = spread.max((a - b).norm());
            }
        }
        (gap, DENOMINATOR_REL_TOL * spread.max(f64::MIN_POSITIVE))
    }
}

/// Second-order effective Hamiltonian on a P subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveHamiltonian {
    pub matrix: ComplexMatrix,
    pub basis_labels: Vec<String>,
    pub g: f64,
    pub order: u32,
}

impl EffectiveHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigensystem(&self) -> Result<BiorthogonalEigensystem> {
        eigendecompose(&self.matrix, OVERLAP_TOL)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: labels.len(),
            });
        }
        self.basis_labels = labels;
        Ok(self)
    }
}

fn projector(eig: &BiorthogonalEigensystem, idx: &[usize]) -> ComplexMatrix {
    let n = eig.dim();
    let mut m = ComplexMatrix::zeros(n, n);
    for &i in idx {
        m += &eig.rights[i] * &eig.lefts[i];
    }
    m
}

/// `(P, Q)` with `P + Q = 1` on a complete basis.
pub fn build_projectors(
    eig: &BiorthogonalEigensystem,
    group: &QuasiDegenerateGroup,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    group.check_against(eig)?;
    Ok((projector(eig, group.p_indices()), projector(eig, group.q_indices())))
}

fn check_operator(v: &ComplexMatrix, dim: usize) -> Result<()> {
    if v.nrows() != dim || v.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.nrows().max(v.ncols()),
        });
    }
    Ok(())
}

/// Block-diagonal `V_D = PVP + QVQ` and off-diagonal `V_X = PVQ + QVP`.
pub fn split_perturbation(
    v: &ComplexMatrix,
    p: &ComplexMatrix,
    q: &ComplexMatrix,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    check_operator(v, p.nrows())?;
    check_operator(q, p.nrows())?;
    let vd = p * v * p + q * v * q;
    let vx = p * v * q + q * v * p;
    Ok((vd, vx))
}

/// Projectors, split perturbation and generator for one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SwDecomposition {
    pub projector_p: ComplexMatrix,
    pub projector_q: ComplexMatrix,
    pub v_diag: ComplexMatrix,
    pub v_off: ComplexMatrix,
    pub generator_s0: ComplexMatrix,
}

pub fn decompose(
    eig: &BiorthogonalEigensystem,
    v: &ComplexMatrix,
    group: &QuasiDegenerateGroup,
) -> Result<SwDecomposition> {
    let (projector_p, projector_q) = build_projectors(eig, group)?;
    let (v_diag, v_off) = split_perturbation(v, &projector_p, &projector_q)?;
    let generator_s0 = build_generator(eig, v, group)?;
    Ok(SwDecomposition {
        projector_p,
        projector_q,
        v_diag,
        v_off,
        generator_s0,
    })
}

/// The block off-diagonal generator `S_0` solving `[S_0, H_0] = −V_X`.
///
/// Written as `S_0 = Σ_{p,q} (|R_p><L_p|V|R_q><L_q| − |R_q><L_q|V|R_p><L_p|) / (E_p − E_q)`.
pub fn build_generator(
    eig: &BiorthogonalEigensystem,
    v: &ComplexMatrix,
    group: &QuasiDegenerateGroup,
) -> Result<ComplexMatrix> {
    group.check_against(eig)?;
    check_operator(v, eig.dim())?;
    check_gaps(eig, group)?;
    let vm = eig.to_eigenbasis(v);
    let n = eig.dim();
    let mut coeff = ComplexMatrix::zeros(n, n);
    for &p in group.p_indices() {
        for &q in group.q_indices() {
            let d = eig.values[p] - eig.values[q];
            coeff[(p, q)] = vm[(p, q)] / d;
            coeff[(q, p)] = -vm[(q, p)] / d;
        }
    }
    Ok(eig.right_matrix() * coeff * eig.left_matrix())
}

fn check_gaps(eig: &BiorthogonalEigensystem, group: &QuasiDegenerateGroup) -> Result<()> {
    let (gap, threshold) = group.min_gap(&eig.values);
    if gap <= threshold {
        return Err(Error::VanishingDenominator { gap, threshold });
    }
    Ok(())
}

/// Matrix elements
/// `<L_p|H_eff|R_p'> = E_p δ + g V_pp' − (g²/2) Σ_q V_pq V_qp' [1/(E_q−E_p) + 1/(E_q−E_p')]`,
/// in the order of `group.p_indices()`.
pub fn effective_hamiltonian(
    eig: &BiorthogonalEigensystem,
    v: &ComplexMatrix,
    g: f64,
    group: &QuasiDegenerateGroup,
) -> Result<EffectiveHamiltonian> {
    group.check_against(eig)?;
    check_operator(v, eig.dim())?;
    check_gaps(eig, group)?;
    let vm = eig.to_eigenbasis(v);
    let ps = group.p_indices();
    let k = ps.len();
    let gc = C64::new(g, 0.0);
    let mut h = ComplexMatrix::zeros(k, k);
    for (a, &p) in ps.iter().enumerate() {
        for (b, &pp) in ps.iter().enumerate() {
            let mut second = C64::new(0.0, 0.0);
            for &q in group.q_indices() {
                let w = C64::new(1.0, 0.0) / (eig.values[q] - eig.values[p])
                    + C64::new(1.0, 0.0) / (eig.values[q] - eig.values[pp]);
                second += vm[(p, q)] * vm[(q, pp)] * w;
            }
            let mut entry = gc * vm[(p, pp)] - gc * gc * 0.5 * second;
            if a == b {
                entry += eig.values[p];
            }
            h[(a, b)] = entry;
        }
    }
    Ok(EffectiveHamiltonian {
        matrix: h,
        basis_labels: ps.iter().map(|i| format!("p{i}")).collect(),
        g,
        order: 2,
    })
}

/// Maps a vector of P-space coefficients back to the full space, `Σ_p u_p R_p`.
pub fn embed_group_vector(
    eig: &BiorthogonalEigensystem,
    group: &QuasiDegenerateGroup,
    u: &ComplexVector,
) -> Result<ComplexVector> {
    if u.len() != group.p_indices().len() {
        return Err(Error::DimensionMismatch {
            expected: group.p_indices().len(),
            got: u.len(),
        });
    }
    let mut out = ComplexVector::zeros(eig.dim());
    for (k, &p) in group.p_indices().iter().enumerate() {
        out += &eig.rights[p] * u[k];
    }
    Ok(out)
}

/// Truncated `e^{gS} H e^{−gS} = Σ_n gⁿ/n! ad_S^n(H)` up to `n_terms`, and the
/// Frobenius norm of its P–Q blocks `‖PH'Q‖ + ‖QH'P‖`.
pub fn transform_check(
    h: &ComplexMatrix,
    s0: &ComplexMatrix,
    g: f64,
    p: &ComplexMatrix,
    q: &ComplexMatrix,
    n_terms: usize,
) -> Result<f64> {
    let dim = h.nrows();
    check_operator(h, dim)?;
    check_operator(s0, dim)?;
    check_operator(p, dim)?;
    check_operator(q, dim)?;
    let mut total = h.clone();
    let mut term = h.clone();
    let mut factor = 1.0;
    for n in 1..=n_terms {
        term = commutator(s0, &term);
        factor *= g / n as f64;
        total += &term * C64::new(factor, 0.0);
    }
    Ok((p * &total * q).norm() + (q * &total * p).norm())
}
