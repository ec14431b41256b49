//! Dense complex linear algebra: a general (non-Hermitian) eigensolver that
//! returns a biorthonormal right/left eigenvector system, plus the small
//! helpers built on top of it (binormalization, quasi-degenerate clustering,
//! greedy overlap assignment).
//!
//! The eigensolver reduces the matrix to upper Hessenberg form with complex
//! Householder reflections and then runs implicitly shifted single-shift QR
//! sweeps (Wilkinson shift, exceptional shifts on stagnation) to reach the
//! complex Schur form `M = Z T Z^H`. Right eigenvectors come from
//! back-substitution on `T`; left eigenvectors are the rows of the inverse
//! right-eigenvector matrix, which makes `<L_i|R_j> = delta_ij` hold by
//! construction even inside exactly degenerate eigenspaces.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;
pub type ComplexRow = RowDVector<C64>;

/// Default threshold on `|<L_i|R_i>|` (unit vectors) below which a matrix is
/// treated as sitting on an exceptional point.
pub const OVERLAP_TOL: f64 = 1e-12;
/// Default bound on the eigen-residual `|H R - E R|` relative to `max(1, |H|)`.
pub const RESIDUAL_TOL: f64 = 1e-10;

const MAX_SWEEPS_PER_EIGENVALUE: usize = 30;

/// Eigenvalues with paired right and left eigenvectors, `<L_i|R_j> = delta_ij`.
///
/// Right vectors are kept at unit Euclidean norm; left vectors carry the
/// remaining normalization.
#[derive(Debug, Clone)]
pub struct BiorthogonalEigensystem {
    pub values: Vec<C64>,
    pub rights: Vec<ComplexVector>,
    pub lefts: Vec<ComplexRow>,
    pub residual_norm: f64,
}

impl BiorthogonalEigensystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Right eigenvectors as the columns of a matrix.
    pub fn right_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_columns(&self.rights)
    }

    /// Left eigenvectors as the rows of a matrix.
    pub fn left_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_rows(&self.lefts)
    }

    /// `O_ij = <L_i|R_j>`.
    pub fn overlap_matrix(&self) -> ComplexMatrix {
        self.left_matrix() * self.right_matrix()
    }

    /// `max_ij |<L_i|R_j> - delta_ij|`.
    pub fn biorthogonality_error(&self) -> f64 {
        let o = self.overlap_matrix();
        max_abs_diff(&o, &ComplexMatrix::identity(o.nrows(), o.ncols()))
    }

    /// Spectral norm bound (Frobenius) of `sum_i |R_i><L_i| - 1`.
    pub fn completeness_error(&self) -> f64 {
        let n = self.dim();
        (self.right_matrix() * self.left_matrix() - ComplexMatrix::identity(n, n)).norm()
    }

    /// Largest `|M R_i - E_i R_i|` for an arbitrary matrix `m`.
    pub fn residual_against(&self, m: &ComplexMatrix) -> f64 {
        self.values
            .iter()
            .zip(&self.rights)
            .map(|(&e, r)| (m * r - r * e).norm())
            .fold(0.0, f64::max)
    }

    /// `<L_i| A |R_j>` for all pairs, i.e. `A` written in the eigenbasis.
    pub fn to_eigenbasis(&self, a: &ComplexMatrix) -> ComplexMatrix {
        self.left_matrix() * a * self.right_matrix()
    }
}

/// Checks the `ComplexMatrix` invariants: square with finite entries.
pub fn validate_square_finite(m: &ComplexMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidParams("matrix contains non-finite entries".into()));
    }
    Ok(())
}

pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `A^H`.
pub fn dagger(a: &ComplexMatrix) -> ComplexMatrix {
    a.adjoint()
}

/// `[A, B] = AB - BA`.
pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a * b - b * a
}

/// Total order used for eigenvalues: real part first, imaginary part second.
pub fn eigenvalue_order(a: &C64, b: &C64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

/// Full eigendecomposition of a general complex matrix.
///
/// `overlap_tol` is the conditioning floor on `|<L_i|R_i>|` for unit-norm
/// vectors; below it the matrix is reported as defective (an exceptional
/// point within numerical resolution). Eigenvalues are sorted by
/// `(Re, Im)`.
pub fn eigendecompose(m: &ComplexMatrix, overlap_tol: f64) -> Result<BiorthogonalEigensystem> {
    validate_square_finite(m)?;
    let n = m.nrows();
    if n == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }

    let (mut t, mut z) = hessenberg(m);
    schur_in_place(&mut t, &mut z)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigenvalue_order(&t[(i, i)], &t[(j, j)]).then(i.cmp(&j)));

    let values: Vec<C64> = order.iter().map(|&k| t[(k, k)]).collect();
    let rights: Vec<ComplexVector> = order
        .iter()
        .map(|&k| {
            let mut r = &z * triangular_eigenvector(&t, k);
            let norm = r.norm();
            r /= C64::new(norm, 0.0);
            r
        })
        .collect();

    let r_mat = ComplexMatrix::from_columns(&rights);
    let l_mat = r_mat
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::DefectiveMatrix("right eigenvector matrix is singular".into()))?;
    let lefts: Vec<ComplexRow> = (0..n).map(|i| l_mat.row(i).into_owned()).collect();

    for (i, l) in lefts.iter().enumerate() {
        // with |R_i| = 1 and <L_i|R_i> = 1 this is the normalized overlap
        let cond = 1.0 / l.norm();
        if !cond.is_finite() || cond < overlap_tol {
            return Err(Error::DefectiveMatrix(format!(
                "normalized overlap {cond:e} of level {i} below {overlap_tol:e}"
            )));
        }
    }

    let mut eig = BiorthogonalEigensystem {
        values,
        rights,
        lefts,
        residual_norm: 0.0,
    };
    eig.residual_norm = eig.residual_against(m);
    let scale = m.norm().max(1.0);
    if eig.residual_norm > RESIDUAL_TOL * scale {
        return Err(Error::NonConvergence(format!(
            "eigen-residual {:e} exceeds {:e}",
            eig.residual_norm,
            RESIDUAL_TOL * scale
        )));
    }
    Ok(eig)
}

/// Eigenvalues only, sorted by `(Re, Im)`.
pub fn eigenvalues(m: &ComplexMatrix) -> Result<Vec<C64>> {
    validate_square_finite(m)?;
    let (mut t, mut z) = hessenberg(m);
    schur_in_place(&mut t, &mut z)?;
    let mut vals: Vec<C64> = (0..m.nrows()).map(|k| t[(k, k)]).collect();
    vals.sort_by(eigenvalue_order);
    Ok(vals)
}

/// Rescales paired vectors so that `<L'_i|R'_j> = delta_ij`: rights get unit
/// Euclidean norm and lefts absorb the remaining factor. Cross overlaps are
/// not touched; callers pass pairs that are already biorthogonal.
pub fn binormalize(rights: &[ComplexVector], lefts: &[ComplexRow]) -> Result<(Vec<ComplexVector>, Vec<ComplexRow>)> {
    if rights.len() != lefts.len() {
        return Err(Error::DimensionMismatch {
            expected: rights.len(),
            got: lefts.len(),
        });
    }
    let mut out_r = Vec::with_capacity(rights.len());
    let mut out_l = Vec::with_capacity(lefts.len());
    for (i, (r, l)) in rights.iter().zip(lefts).enumerate() {
        if r.len() != l.len() {
            return Err(Error::DimensionMismatch {
                expected: r.len(),
                got: l.len(),
            });
        }
        let overlap = (l * r)[(0, 0)];
        if overlap.norm() < OVERLAP_TOL {
            return Err(Error::DefectiveMatrix(format!(
                "diagonal overlap {:e} of pair {i} below {OVERLAP_TOL:e}",
                overlap.norm()
            )));
        }
        let rn = r.norm();
        let r_new = r / C64::new(rn, 0.0);
        let l_new = l * (C64::new(rn, 0.0) / overlap);
        out_r.push(r_new);
        out_l.push(l_new);
    }
    Ok((out_r, out_l))
}

/// Partitions level indices into quasi-degenerate groups.
///
/// Levels are ordered by real part; a new group starts wherever two
/// consecutive real parts are at least `gap` apart. Groups are returned in
/// ascending energy with indices inside each group in the same order.
pub fn cluster_quasi_degenerate(values: &[C64], gap: f64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| eigenvalue_order(&values[i], &values[j]).then(i.cmp(&j)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last_re = f64::NEG_INFINITY;
    for i in idx {
        let re = values[i].re;
        match groups.last_mut() {
            Some(g) if re - last_re < gap => g.push(i),
            _ => groups.push(vec![i]),
        }
        last_re = re;
    }
    groups
}

/// Greedy bijective assignment maximizing `scores[(row, col)]`: repeatedly
/// pick the largest remaining entry. Ties resolve to the smaller (row, col).
/// Returns `assign[row] = col` and the score of every chosen pair.
pub fn greedy_assignment(scores: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let (nr, nc) = scores.shape();
    let mut entries: Vec<(usize, usize)> = (0..nr).flat_map(|i| (0..nc).map(move |j| (i, j))).collect();
    entries.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    let mut assign = vec![usize::MAX; nr];
    let mut best = vec![0.0; nr];
    let mut used = vec![false; nc];
    for (i, j) in entries {
        if assign[i] == usize::MAX && !used[j] {
            assign[i] = j;
            best[i] = scores[(i, j)];
            used[j] = true;
        }
    }
    (assign, best)
}

/// Largest pairwise distance under the best one-to-one pairing of two
/// spectra. Exact (bottleneck) for up to 7 levels, greedy beyond.
/// Returns infinity when the lengths differ.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    if a.len() <= 7 {
        fn search(a: &[C64], b: &[C64], used: &mut [bool], k: usize, worst: f64, best: &mut f64) {
            if worst >= *best {
                return;
            }
            if k == a.len() {
                *best = worst;
                return;
            }
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    search(a, b, used, k + 1, worst.max((a[k] - b[j]).norm()), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        search(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
        return best;
    }
    let scores = DMatrix::from_fn(a.len(), b.len(), |i, j| -(a[i] - b[j]).norm());
    let (_, s) = greedy_assignment(&scores);
    s.iter().fold(0.0, |w, x| w.max(-x))
}

/// Householder reduction `M = Q H Q^H` with `H` upper Hessenberg.
fn hessenberg(m: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let n = m.nrows();
    let mut h = m.clone();
    let mut q = ComplexMatrix::identity(n, n);
    for k in 0..n.saturating_sub(2) {
        let x: Vec<C64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let xnorm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            continue;
        }
        let phase = if x[0].norm() > 0.0 {
            x[0] / x[0].norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let alpha = -phase * xnorm;
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for z in v.iter_mut() {
            *z /= vnorm;
        }
        // H <- (I - 2 v v^H) H
        for j in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for (a, vi) in v.iter().enumerate() {
                s += vi.conj() * h[(k + 1 + a, j)];
            }
            for (a, vi) in v.iter().enumerate() {
                h[(k + 1 + a, j)] -= *vi * s * 2.0;
            }
        }
        // H <- H (I - 2 v v^H), Q <- Q (I - 2 v v^H)
        for mat in [&mut h, &mut q] {
            for i in 0..n {
                let mut s = C64::new(0.0, 0.0);
                for (a, vi) in v.iter().enumerate() {
                    s += mat[(i, k + 1 + a)] * *vi;
                }
                for (a, vi) in v.iter().enumerate() {
                    mat[(i, k + 1 + a)] -= s * vi.conj() * 2.0;
                }
            }
        }
        for i in k + 2..n {
            h[(i, k)] = C64::new(0.0, 0.0);
        }
    }
    (h, q)
}

/// Rotation `G = [[c, s], [-conj(s), c]]` with `G [x; y] = [r; 0]`.
fn givens(x: C64, y: C64) -> (f64, C64) {
    let nx = x.norm();
    let ny = y.norm();
    if ny == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if nx == 0.0 {
        return (0.0, C64::new(1.0, 0.0));
    }
    let nrm = nx.hypot(ny);
    let c = nx / nrm;
    let s = (x / nx) * y.conj() / nrm;
    (c, s)
}

/// Drives an upper Hessenberg `h` to upper triangular form, accumulating the
/// unitary similarity into `z`.
fn schur_in_place(h: &mut ComplexMatrix, z: &mut ComplexMatrix) -> Result<()> {
    let n = h.nrows();
    if n == 1 {
        return Ok(());
    }
    let eps = f64::EPSILON;
    let hnorm = h.norm().max(f64::MIN_POSITIVE);
    let mut hi = n - 1;
    let mut its = 0usize;
    let budget = MAX_SWEEPS_PER_EIGENVALUE * n.max(10);
    let mut total = 0usize;

    while hi > 0 {
        // locate the active block [lo, hi]
        let mut lo = hi;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let mut diag = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            if diag == 0.0 {
                diag = hnorm;
            }
            if sub <= eps * diag {
                h[(lo, lo - 1)] = C64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            its = 0;
            continue;
        }

        its += 1;
        total += 1;
        if total > budget {
            return Err(Error::NonConvergence(format!(
                "QR iteration exceeded {budget} sweeps with {} eigenvalues unconverged",
                hi + 1
            )));
        }

        let mu = if its % 10 == 0 {
            // exceptional shift breaks cycles
            h[(hi, hi)] + 0.75 * h[(hi, hi - 1)].re.abs()
        } else {
            wilkinson_shift(h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)])
        };

        // implicit single-shift bulge chase on [lo, hi]
        for k in lo..hi {
            let (x, y) = if k == lo {
                (h[(lo, lo)] - mu, h[(lo + 1, lo)])
            } else {
                (h[(k, k - 1)], h[(k + 1, k - 1)])
            };
            let (c, s) = givens(x, y);
            let col_start = if k == lo { lo } else { k - 1 };
            for j in col_start..n {
                let u = h[(k, j)];
                let v = h[(k + 1, j)];
                h[(k, j)] = u * c + s * v;
                h[(k + 1, j)] = -s.conj() * u + v * c;
            }
            let row_end = (k + 2).min(hi);
            for i in 0..=row_end {
                let u = h[(i, k)];
                let v = h[(i, k + 1)];
                h[(i, k)] = u * c + v * s.conj();
                h[(i, k + 1)] = -u * s + v * c;
            }
            for i in 0..n {
                let u = z[(i, k)];
                let v = z[(i, k + 1)];
                z[(i, k)] = u * c + v * s.conj();
                z[(i, k + 1)] = -u * s + v * c;
            }
            if k > lo {
                h[(k + 1, k - 1)] = C64::new(0.0, 0.0);
            }
        }
    }
    for j in 0..n {
        for i in j + 1..n {
            h[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    Ok(())
}

/// Eigenvalue of the trailing 2x2 block `[[a, b], [c, d]]` closest to `d`.
fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let m1 = d + half + disc;
    let m2 = d + half - disc;
    if (m1 - d).norm() <= (m2 - d).norm() {
        m1
    } else {
        m2
    }
}

/// Eigenvector of upper triangular `t` for the diagonal entry `k`, by
/// back-substitution with tiny pivots clamped to `eps |T|`.
fn triangular_eigenvector(t: &ComplexMatrix, k: usize) -> ComplexVector {
    let n = t.nrows();
    let smin = (f64::EPSILON * t.norm()).max(f64::MIN_POSITIVE);
    let lambda = t[(k, k)];
    let mut x = ComplexVector::zeros(n);
    x[k] = C64::new(1.0, 0.0);
    for i in (0..k).rev() {
        let mut s = C64::new(0.0, 0.0);
        for j in i + 1..=k {
            s += t[(i, j)] * x[j];
        }
        let mut d = t[(i, i)] - lambda;
        if d.norm() < smin {
            d = C64::new(smin, 0.0);
        }
        x[i] = -s / d;
    }
    x
}
