//! Exact diagonalization of the truncated circuit Hamiltonian: spectra,
//! parity indices, level tracking along sweeps, EP2 brackets and comparison
//! with the effective 3×3 models.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    eigendecompose, eigenvalues, greedy_assignment, BiorthogonalEigensystem, ComplexMatrix, ComplexVector, C64,
    OVERLAP_TOL,
};
use crate::model::{
    build_full_hamiltonian, effective_matrix_approx, effective_matrix_full, parity_basis_matrix, parity_operator,
    resonant_group_basis, SystemParams,
};

/// `|Im E|` below this (times Ω) counts as real.
pub const REAL_TOL: f64 = 1e-9;
pub const PARITY_TOL: f64 = 1e-8;
/// Smallest accepted overlap between consecutive steps of a branch.
pub const TRACKING_FLOOR: f64 = 0.5;
/// Relative bracket width at which EP2 bisection stops.
pub const BISECTION_REL_WIDTH: f64 = 1e-8;
/// `|<R|P|R>|/<R|R>` below this leaves the parity of a real level undefined.
const KREIN_FLOOR: f64 = 1e-6;

pub fn full_spectrum(params: &SystemParams) -> Result<BiorthogonalEigensystem> {
    eigendecompose(&build_full_hamiltonian(params)?, OVERLAP_TOL)
}

fn expectation(v: &ComplexVector, op: &ComplexMatrix) -> f64 {
    (v.dotc(&(op * v))).re / v.norm_squared()
}

/// Parity of every level of a Hermitian (γ = 0) Hamiltonian.
pub fn assign_parity_indices(params: &SystemParams) -> Result<Vec<i8>> {
    if params.gamma != 0.0 {
        return Err(Error::InvalidParams("parity indices are defined at gamma = 0".into()));
    }
    let eig = full_spectrum(params)?;
    let par = parity_operator(params.n_max);
    eig.rights
        .iter()
        .enumerate()
        .map(|(level, v)| {
            let e = expectation(v, &par);
            if (e - 1.0).abs() < PARITY_TOL {
                Ok(1)
            } else if (e + 1.0).abs() < PARITY_TOL {
                Ok(-1)
            } else {
                Err(Error::ParityAmbiguous { level, expectation: e })
            }
        })
        .collect()
}

/// Sign of `<R|P|R>` for a level with real energy. Along a real branch this
/// sign cannot change without the branch meeting a partner at an EP2, so it
/// equals the parity the level had at γ = 0.
pub fn level_parity(energy: C64, right: &ComplexVector, parity: &ComplexMatrix, omega: f64) -> Option<i8> {
    if energy.im.abs() >= REAL_TOL * omega {
        return None;
    }
    let k = expectation(right, parity);
    if k.abs() < KREIN_FLOOR {
        None
    } else {
        Some(if k > 0.0 { 1 } else { -1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    G,
    Gamma,
}

impl SweepParam {
    pub fn apply(self, base: &SystemParams, x: f64) -> SystemParams {
        match self {
            SweepParam::G => base.with_g(x),
            SweepParam::Gamma => base.with_gamma(x),
        }
    }
}

/// One level followed across a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBranch {
    pub sweep_values: Vec<f64>,
    pub energies: Vec<C64>,
    /// Parity at each step where the level is real, else `None`.
    pub parities: Vec<Option<i8>>,
    /// Parity at the first sweep point, carried by the branch.
    pub parity_index: Option<i8>,
    pub vectors: Option<Vec<ComplexVector>>,
}

impl LevelBranch {
    pub fn is_real(&self, k: usize, omega: f64) -> bool {
        self.energies[k].im.abs() < REAL_TOL * omega
    }
}

/// Branches are matched between consecutive points by the largest
/// normalized overlap `|<R_i(k)|R_j(k+1)>|` (greedy, bijective). Branch order
/// follows the level order at the first point.
pub fn track_levels(base: &SystemParams, sweep: SweepParam, values: &[f64]) -> Result<Vec<LevelBranch>> {
    track(base, sweep, values, false)
}

pub fn track_levels_with_vectors(base: &SystemParams, sweep: SweepParam, values: &[f64]) -> Result<Vec<LevelBranch>> {
    track(base, sweep, values, true)
}

fn track(base: &SystemParams, sweep: SweepParam, values: &[f64], keep: bool) -> Result<Vec<LevelBranch>> {
    if values.is_empty() {
        return Err(Error::InvalidParams("empty sweep".into()));
    }
    if values.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidParams("sweep values must be non-decreasing".into()));
    }
    let spectra = values
        .par_iter()
        .map(|&x| full_spectrum(&sweep.apply(base, x)))
        .collect::<Result<Vec<_>>>()?;
    let omega = base.omega();
    let par = parity_operator(base.n_max);
    let dim = spectra[0].dim();

    let mut branches: Vec<LevelBranch> = (0..dim)
        .map(|_| LevelBranch {
            sweep_values: values.to_vec(),
            energies: Vec::with_capacity(values.len()),
            parities: Vec::with_capacity(values.len()),
            parity_index: None,
            vectors: keep.then(Vec::new),
        })
        .collect();
    // current[b] = level index of branch b at the current step
    let mut current: Vec<usize> = (0..dim).collect();
    for (step, eig) in spectra.iter().enumerate() {
        if step > 0 {
            let prev = &spectra[step - 1];
            let scores = nalgebra::DMatrix::from_fn(dim, dim, |b, j| {
                let r = &prev.rights[current[b]];
                r.dotc(&eig.rights[j]).norm() / (r.norm() * eig.rights[j].norm())
            });
            let (assign, best) = greedy_assignment(&scores);
            if let Some(&worst) = best.iter().min_by(|a, b| a.total_cmp(b)) {
                if worst < TRACKING_FLOOR {
                    return Err(Error::TrackingAmbiguous { step, overlap: worst });
                }
            }
            current = assign;
        }
        for (b, branch) in branches.iter_mut().enumerate() {
            let j = current[b];
            branch.energies.push(eig.values[j]);
            branch
                .parities
                .push(level_parity(eig.values[j], &eig.rights[j], &par, omega));
            if let Some(v) = branch.vectors.as_mut() {
                v.push(eig.rights[j].clone());
            }
        }
    }
    for b in &mut branches {
        b.parity_index = b.parities[0];
    }
    Ok(branches)
}

/// Bracket of one second-order EP on a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ep2Location {
    pub sweep_lo: f64,
    pub sweep_hi: f64,
    pub branch_a: usize,
    pub branch_b: usize,
    /// Parities of the two levels on the real side of the EP.
    pub parity_a: Option<i8>,
    pub parity_b: Option<i8>,
}

impl Ep2Location {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.sweep_lo + self.sweep_hi)
    }

    pub fn opposite_parity(&self) -> bool {
        matches!((self.parity_a, self.parity_b), (Some(a), Some(b)) if a == -b)
    }
}

fn conjugate_pair(a: C64, b: C64, omega: f64) -> bool {
    a.im.abs() >= REAL_TOL * omega && b.im.abs() >= REAL_TOL * omega && (a - b.conj()).norm() < 1e-6 * omega
}

/// Every EP2 between branches `a` and `b`: sweep intervals on which the pair
/// turns from two real levels into a conjugate pair or back, each refined by
/// bisection to a relative width of 1e-8.
pub fn detect_ep2(
    base: &SystemParams,
    sweep: SweepParam,
    branches: &[LevelBranch],
    a: usize,
    b: usize,
) -> Result<Vec<Ep2Location>> {
    let omega = base.omega();
    let (ba, bb) = (&branches[a], &branches[b]);
    let xs = &ba.sweep_values;
    let mut out = Vec::new();
    for k in 0..xs.len().saturating_sub(1) {
        let real = |i: usize| ba.is_real(i, omega) && bb.is_real(i, omega);
        let pair = |i: usize| conjugate_pair(ba.energies[i], bb.energies[i], omega);
        let real_side = if real(k) && pair(k + 1) {
            k
        } else if pair(k) && real(k + 1) {
            k + 1
        } else {
            continue;
        };
        let (lo, hi) = bisect_ep2(base, sweep, (xs[k], xs[k + 1]), |x| {
            let t = if xs[k + 1] > xs[k] {
                (x - xs[k]) / (xs[k + 1] - xs[k])
            } else {
                0.0
            };
            let mean = |i: usize| (ba.energies[i] + bb.energies[i]).re / 2.0;
            mean(k) + t * (mean(k + 1) - mean(k))
        })?;
        out.push(Ep2Location {
            sweep_lo: lo,
            sweep_hi: hi,
            branch_a: a,
            branch_b: b,
            parity_a: ba.parities[real_side],
            parity_b: bb.parities[real_side],
        });
    }
    Ok(out)
}

/// All EP2s among the given branches, ordered by sweep position.
pub fn detect_all_ep2(base: &SystemParams, sweep: SweepParam, branches: &[LevelBranch]) -> Result<Vec<Ep2Location>> {
    let mut out = Vec::new();
    for a in 0..branches.len() {
        for b in a + 1..branches.len() {
            out.extend(detect_ep2(base, sweep, branches, a, b)?);
        }
    }
    out.sort_by(|x, y| x.sweep_lo.total_cmp(&y.sweep_lo).then(x.branch_a.cmp(&y.branch_a)));
    Ok(out)
}

/// Whether the two levels closest to `centre` form a complex pair.
fn pair_broken(params: &SystemParams, centre: f64) -> Result<bool> {
    let mut values = eigenvalues(&build_full_hamiltonian(params)?)?;
    values.sort_by(|x, y| (x - centre).norm().total_cmp(&(y - centre).norm()));
    let tol = REAL_TOL * params.omega();
    Ok(values[0].im.abs() >= tol && values[1].im.abs() >= tol)
}

fn bisect_ep2(
    base: &SystemParams,
    sweep: SweepParam,
    (mut lo, mut hi): (f64, f64),
    centre: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    let broken_lo = pair_broken(&sweep.apply(base, lo), centre(lo))?;
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    while hi - lo > BISECTION_REL_WIDTH * scale {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pair_broken(&sweep.apply(base, mid), centre(mid))? == broken_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

/// ED and effective-model energies of one level of the resonant triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub g: f64,
    pub level: usize,
    pub ed: C64,
    pub full: C64,
    pub approx: C64,
}

impl ComparisonRow {
    pub fn dev_full_re(&self) -> f64 {
        (self.ed.re - self.full.re).abs()
    }

    pub fn dev_full_im(&self) -> f64 {
        (self.ed.im - self.full.im).abs()
    }

    pub fn dev_approx_re(&self) -> f64 {
        (self.ed.re - self.approx.re).abs()
    }

    pub fn dev_approx_im(&self) -> f64 {
        (self.ed.im - self.approx.im).abs()
    }
}

/// Full-space right vectors of the effective eigenvectors, given in the
/// product basis `|+−̃;0>, |−+̃;0>, |−−̃;1>`.
fn embed_triple(params: &SystemParams, coeffs: &[ComplexVector]) -> Result<Vec<ComplexVector>> {
    let basis = resonant_group_basis(params, 0)?;
    Ok(coeffs
        .iter()
        .map(|u| {
            basis
                .rights
                .iter()
                .zip(u.iter())
                .fold(ComplexVector::zeros(params.dim()), |acc, (r, c)| acc + r * *c)
        })
        .collect())
}

/// ED levels best overlapping each embedded vector (greedy, bijective).
fn match_levels(ed: &BiorthogonalEigensystem, embedded: &[ComplexVector]) -> Vec<usize> {
    let scores = nalgebra::DMatrix::from_fn(embedded.len(), ed.dim(), |i, j| {
        embedded[i].dotc(&ed.rights[j]).norm() / (embedded[i].norm() * ed.rights[j].norm())
    });
    greedy_assignment(&scores).0
}

/// Per-level comparison of the n = 0 triple between ED and both effective
/// models. Levels are listed in the eigenvalue order of the full model; each
/// is matched to the ED level with the largest overlap.
pub fn compare_effective_vs_ed(base: &SystemParams, g_values: &[f64], gamma: f64) -> Result<Vec<ComparisonRow>> {
    let rows = g_values
        .par_iter()
        .map(|&g| compare_at(&base.with_g(g).with_gamma(gamma)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn compare_at(params: &SystemParams) -> Result<Vec<ComparisonRow>> {
    let ed = full_spectrum(params)?;
    let full = effective_matrix_full(params)?.eigensystem()?;
    let approx = effective_matrix_approx(params)?.eigensystem()?;
    let f = parity_basis_matrix();
    let full_vecs = embed_triple(params, &full.rights)?;
    let approx_vecs = embed_triple(params, &approx.rights.iter().map(|u| &f * u).collect::<Vec<_>>())?;
    let ed_for_full = match_levels(&ed, &full_vecs);
    let ed_for_approx = match_levels(&ed, &approx_vecs);
    // pair approximate levels with full-model levels through their ED partner
    let approx_for = |level: usize| {
        let target = ed_for_full[level];
        ed_for_approx.iter().position(|&j| j == target)
    };
    (0..3)
        .map(|level| {
            let approx_level = approx_for(level).unwrap_or(level);
            Ok(ComparisonRow {
                g: params.g,
                level,
                ed: ed.values[ed_for_full[level]],
                full: full.values[level],
                approx: approx.values[approx_level],
            })
        })
        .collect()
}

/// Largest `|Re ΔE|` against the full model per coupling value.
pub fn max_re_deviation_by_g(rows: &[ComparisonRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some(last) if last.0 == r.g => last.1 = last.1.max(r.dev_full_re()),
            _ => out.push((r.g, r.dev_full_re())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::qubit_lambda;
    use std::f64::consts::PI;

    fn reference_point(gamma: f64, g: f64) -> SystemParams {
        SystemParams::resonant(PI / 40.0, 1.07, gamma, g).unwrap()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn bare_spectrum_closed_form() {
        let p = reference_point(0.006, 0.0);
        let eig = full_spectrum(&p).unwrap();
        let lam = qubit_lambda(&p);
        let mut expected = Vec::new();
        for n in 0..=p.n_max {
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    expected.push(lam * s1 + lam.conj() * s2 + C64::new(p.omega_r * n as f64, 0.0));
                }
            }
        }
        // compare sorted lists; pairs of levels are exactly degenerate
        let mut e = expected.clone();
        e.sort_by(crate::linalg::eigenvalue_order);
        for (a, b) in eig.values.iter().zip(&e) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
        let herm = full_spectrum(&reference_point(0.0, 0.0)).unwrap();
        assert!((herm.values[0] - C64::new(-1.0, 0.0)).norm() < 1e-13);
    }

    fn low_level_shift(g: f64, n_max: usize) -> f64 {
        let a = full_spectrum(&reference_point(0.0, g)).unwrap();
        let b = full_spectrum(&reference_point(0.0, g).with_n_max(n_max)).unwrap();
        (0..9).map(|k| (a.values[k] - b.values[k]).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn truncation_converged() {
        for g in [0.05, 0.1, 0.15] {
            assert!(low_level_shift(g, 9) < 1e-6, "g = {g}");
        }
        assert!(low_level_shift(0.05, 10) < 1e-8);
        // at g = 0.2 the two-photon tail of the sixth level still moves it
        // by ~1.3e-6 when the cutoff is raised
        let at_02 = low_level_shift(0.2, 10);
        assert!(at_02 > 1e-6 && at_02 < 2e-6, "{at_02}");
    }

    #[test]
    fn parities_of_low_levels() {
        let idx = assign_parity_indices(&reference_point(0.0, 0.05)).unwrap();
        let low = &idx[..9];
        assert_eq!(low.iter().filter(|&&x| x == 1).count(), 7);
        assert_eq!(low.iter().filter(|&&x| x == -1).count(), 2);
        assert!(matches!(
            assign_parity_indices(&reference_point(0.01, 0.05)),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn singlet_and_ground_parities() {
        let par = parity_operator(2);
        let mut singlet = ComplexVector::zeros(12);
        singlet[crate::model::basis_index(0, 1, 0)] = C64::new(1.0, 0.0);
        singlet[crate::model::basis_index(1, 0, 0)] = C64::new(-1.0, 0.0);
        assert_eq!(level_parity(C64::new(0.0, 0.0), &singlet, &par, 1.0), Some(-1));
        let mut down = ComplexVector::zeros(12);
        down[crate::model::basis_index(1, 1, 0)] = C64::new(1.0, 0.0);
        assert_eq!(level_parity(C64::new(-1.0, 0.0), &down, &par, 1.0), Some(1));
        assert_eq!(level_parity(C64::new(-1.0, 0.1), &down, &par, 1.0), None);
    }

    #[test]
    fn degenerate_levels_are_ambiguous() {
        // at g = 0 the two singly-excited states are degenerate
        assert!(matches!(
            assign_parity_indices(&reference_point(0.0, 0.0)),
            Err(Error::ParityAmbiguous { .. })
        ));
    }

    #[test]
    fn hermitian_sweep_stays_real() {
        let xs = linspace(0.0, 0.3, 61);
        let branches = track_levels(&reference_point(0.0, 0.0), SweepParam::G, &xs).unwrap();
        for b in &branches {
            assert!(b.energies.iter().all(|e| e.im.abs() < 1e-10));
        }
        assert!(detect_all_ep2(&reference_point(0.0, 0.0), SweepParam::G, &branches)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn repeated_point_tracks_identity() {
        let branches = track_levels(&reference_point(0.003, 0.1), SweepParam::G, &[0.1, 0.1]).unwrap();
        for b in &branches {
            assert_eq!(b.energies[0], b.energies[1]);
        }
    }

    #[test]
    fn tracking_rejects_bad_sweeps() {
        assert!(track_levels(&reference_point(0.0, 0.0), SweepParam::G, &[]).is_err());
        assert!(track_levels(&reference_point(0.0, 0.0), SweepParam::G, &[0.2, 0.1]).is_err());
    }

    #[test]
    fn middle_triple_has_two_opposite_parity_ep2s() {
        let base = reference_point(0.004, 0.0);
        let xs = linspace(0.0, 0.2, 401);
        let branches = track_levels(&base, SweepParam::G, &xs).unwrap();
        // the triple sits at levels 1..4 at the start of the sweep
        let triple: Vec<LevelBranch> = branches
            .iter()
            .filter(|b| b.energies[0].re.abs() < 0.5 && b.energies[0].re > -0.5)
            .cloned()
            .collect();
        assert_eq!(triple.len(), 3);
        let eps = detect_all_ep2(&base, SweepParam::G, &triple).unwrap();
        assert_eq!(eps.len(), 2, "{eps:?}");
        for ep in &eps {
            assert!(ep.opposite_parity(), "{ep:?}");
            assert!((ep.sweep_hi - ep.sweep_lo) <= 1e-8 * ep.sweep_hi.abs() * 1.01);
        }
        // one level takes part in both
        let shared = [eps[0].branch_a, eps[0].branch_b]
            .iter()
            .filter(|b| [eps[1].branch_a, eps[1].branch_b].contains(b))
            .count();
        assert_eq!(shared, 1);
    }

    #[test]
    fn krein_sign_matches_continuation_from_zero_gamma() {
        // follow real levels from γ = 0 at fixed g and compare the γ = 0
        // parity with the sign read off at the end of the path
        let base = reference_point(0.0, 0.138);
        let gammas = linspace(0.0, 0.004, 81);
        let branches = track_levels(&base, SweepParam::Gamma, &gammas).unwrap();
        let start = assign_parity_indices(&base).unwrap();
        let eig0 = full_spectrum(&base).unwrap();
        for b in branches.iter().filter(|b| (0..gammas.len()).all(|k| b.is_real(k, 1.0))) {
            let level = eig0.values.iter().position(|e| *e == b.energies[0]).unwrap();
            assert_eq!(b.parities.last().copied().flatten(), Some(start[level]));
        }
    }

    #[test]
    fn comparison_exact_at_zero_coupling() {
        let rows = compare_effective_vs_ed(&reference_point(0.0, 0.0), &[0.0], 0.005).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.dev_full_re() < 1e-10 && r.dev_full_im() < 1e-10, "{r:?}");
            assert!(r.dev_approx_re() < 1e-4, "{r:?}");
        }
        let small = compare_effective_vs_ed(&reference_point(0.0, 0.0), &[0.05], 0.005).unwrap();
        let worst = small
            .iter()
            .map(|r| r.dev_full_re().max(r.dev_full_im()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn conjugation_closed_spectrum() {
        let eig = full_spectrum(&reference_point(0.02, 0.17)).unwrap();
        let conj: Vec<C64> = eig.values.iter().map(|z| z.conj()).collect();
        assert!(crate::linalg::multiset_distance(&eig.values, &conj) < 1e-10);
    }
}
