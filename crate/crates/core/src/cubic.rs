//! Characteristic cubic of the 3×3 effective Hamiltonian: depressed form,
//! Cardano roots, discriminant classification, the EP2 contour
//! `p³ + q² = 0` and the EP3 point `p = q = 0` in the (g, γ) plane.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};
use crate::model::{effective_matrix_approx, effective_matrix_full, SystemParams};

/// Imaginary part of the polynomial coefficients above which the input is
/// rejected as not PT-symmetric.
pub const IMAG_LEAK_TOL: f64 = 1e-8;
pub const CLASSIFY_TOL: f64 = 1e-8;
/// Largest |p|³/q² still treated as the "q/p fixed, |p|³ ≪ q²" regime.
pub const FIXED_RATIO_LIMIT: f64 = 1e-2;
pub const RANK_TOL: f64 = 1e-12;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_BUDGET: usize = 50;
const FD_STEP: f64 = 1e-7;

/// `E³ + b E² + c E + d`, real parts only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CubicCoeffs {
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub imag_leak: f64,
}

pub fn char_poly_coeffs(h: &ComplexMatrix) -> Result<CubicCoeffs> {
    if h.shape() != (3, 3) {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: h.nrows().max(h.ncols()),
        });
    }
    let tr = h.trace();
    let tr2 = (h * h).trace();
    let b = -tr;
    let c = (tr * tr - tr2) * 0.5;
    let d = -h.determinant();
    let imag_leak = b.im.abs().max(c.im.abs()).max(d.im.abs());
    if !(imag_leak < IMAG_LEAK_TOL) {
        return Err(Error::NotPTSymmetric(imag_leak));
    }
    Ok(CubicCoeffs {
        b: b.re,
        c: c.re,
        d: d.re,
        imag_leak,
    })
}

/// `Ẽ³ + 3pẼ + 2q = 0` with `E = scale·Ẽ + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepressedCubic {
    pub p: f64,
    pub q: f64,
    /// `−b/3`, the mean of the three roots.
    pub shift: f64,
    pub scale: f64,
}

impl DepressedCubic {
    pub fn new(p: f64, q: f64) -> Self {
        Self {
            p,
            q,
            shift: 0.0,
            scale: 1.0,
        }
    }

    pub fn discriminant(&self) -> f64 {
        self.p.powi(3) + self.q * self.q
    }

    pub fn to_energy(&self, root: C64) -> C64 {
        root * self.scale + self.shift
    }
}

pub fn depress(coeffs: &CubicCoeffs, omega: f64) -> DepressedCubic {
    let CubicCoeffs { b, c, d, .. } = *coeffs;
    DepressedCubic {
        p: (c - b * b / 3.0) / (3.0 * omega * omega),
        q: (2.0 * b * b * b - 9.0 * c * b + 27.0 * d) / (54.0 * omega.powi(3)),
        shift: -b / 3.0,
        scale: omega,
    }
}

/// Cardano roots in the fixed order `α + β`, `ωα + ω̄β`, `ω̄α + ωβ` with
/// `ω = e^{2πi/3}`, and the branch pair `(α, β)`, `αβ = −p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CardanoRoots {
    pub roots: [C64; 3],
    pub alpha: C64,
    pub beta: C64,
}

impl CardanoRoots {
    pub fn energies(&self, dc: &DepressedCubic) -> [C64; 3] {
        self.roots.map(|z| dc.to_energy(z))
    }
}

/// Real radicands use the real cube root; the three-real-roots case uses
/// the principal complex root, written in trigonometric form so the roots
/// come out exactly real.
pub fn cardano_roots(dc: &DepressedCubic) -> CardanoRoots {
    let (p, q) = (dc.p, dc.q);
    let disc = dc.discriminant();
    let half_sqrt3 = 3f64.sqrt() / 2.0;
    if disc < 0.0 {
        // p < 0 here; α = sqrt(−p) e^{iφ}, β = conj(α)
        let r = (-p).sqrt();
        let phi = (-disc).sqrt().atan2(-q) / 3.0;
        let alpha = C64::from_polar(r, phi);
        let roots = [0.0, 2.0 * PI / 3.0, -2.0 * PI / 3.0].map(|k| C64::new(2.0 * r * (phi + k).cos(), 0.0));
        return CardanoRoots {
            roots,
            alpha,
            beta: alpha.conj(),
        };
    }
    // p³ + q² cancels; anything within rounding of zero is a double root
    if disc <= 8.0 * f64::EPSILON * p.abs().powi(3).max(q * q) {
        let a = (-q).cbrt();
        return CardanoRoots {
            roots: [C64::new(2.0 * a, 0.0), C64::new(-a, 0.0), C64::new(-a, 0.0)],
            alpha: C64::new(a, 0.0),
            beta: C64::new(a, 0.0),
        };
    }
    let s = disc.sqrt();
    let (alpha, beta) = if q > 0.0 {
        // avoid cancellation in −q + s
        let beta = (-q - s).cbrt();
        (-p / beta, beta)
    } else {
        let alpha = (-q + s).cbrt();
        if alpha == 0.0 {
            (0.0, 0.0)
        } else {
            (alpha, -p / alpha)
        }
    };
    let re = -(alpha + beta) / 2.0;
    let im = half_sqrt3 * (alpha - beta);
    CardanoRoots {
        roots: [C64::new(alpha + beta, 0.0), C64::new(re, im), C64::new(re, -im)],
        alpha: C64::new(alpha, 0.0),
        beta: C64::new(beta, 0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SpectrumTag {
    ThreeReal,
    OneRealConjugatePair,
    EP2,
    EP3,
}

impl SpectrumTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SpectrumTag::ThreeReal => "ThreeReal",
            SpectrumTag::OneRealConjugatePair => "OneRealConjugatePair",
            SpectrumTag::EP2 => "EP2",
            SpectrumTag::EP3 => "EP3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumClass {
    pub tag: SpectrumTag,
    pub discriminant: f64,
}

pub fn classify(dc: &DepressedCubic, tol: f64) -> SpectrumClass {
    let discriminant = dc.discriminant();
    let tag = if dc.p.abs().powf(1.5).max(dc.q.abs()) < tol {
        SpectrumTag::EP3
    } else if discriminant.abs() < tol * tol {
        SpectrumTag::EP2
    } else if discriminant < 0.0 {
        SpectrumTag::ThreeReal
    } else {
        SpectrumTag::OneRealConjugatePair
    };
    SpectrumClass { tag, discriminant }
}

/// Which 3×3 effective Hamiltonian the analysis runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EffectiveModel {
    /// Small-γ parity-basis form.
    #[default]
    Approx,
    /// Closed form with exact `s`, `t`, `λ`.
    Full,
}

pub fn effective_matrix(params: &SystemParams, model: EffectiveModel) -> Result<ComplexMatrix> {
    Ok(match model {
        EffectiveModel::Approx => effective_matrix_approx(params)?.matrix,
        EffectiveModel::Full => effective_matrix_full(params)?.matrix,
    })
}

/// Depressed cubic of the effective Hamiltonian, in units of Ω.
pub fn effective_cubic(params: &SystemParams, model: EffectiveModel) -> Result<DepressedCubic> {
    let coeffs = char_poly_coeffs(&effective_matrix(params, model)?)?;
    Ok(depress(&coeffs, params.omega()))
}

fn at(base: &SystemParams, g: f64, gamma: f64) -> SystemParams {
    base.with_g(g).with_gamma(gamma)
}

fn pq_at(base: &SystemParams, model: EffectiveModel, g: f64, gamma: f64) -> Result<(f64, f64)> {
    let dc = effective_cubic(&at(base, g, gamma), model)?;
    Ok((dc.p, dc.q))
}

/// Axis-aligned rectangle of `nx × ny` nodes in the (g, γ) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub g_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub n_g: usize,
    pub n_gamma: usize,
}

pub const MIN_GRID: usize = 16;

impl Grid {
    pub fn new(g_range: (f64, f64), gamma_range: (f64, f64), n_g: usize, n_gamma: usize) -> Result<Self> {
        let ok_range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 >= 0.0 && r.1 > r.0;
        if !ok_range(g_range) || !ok_range(gamma_range) {
            return Err(Error::InvalidParams(
                "grid ranges must be finite, non-negative and increasing".into(),
            ));
        }
        if n_g < MIN_GRID || n_gamma < MIN_GRID {
            return Err(Error::InvalidParams(format!(
                "grid needs at least {MIN_GRID} nodes per axis"
            )));
        }
        Ok(Self {
            g_range,
            gamma_range,
            n_g,
            n_gamma,
        })
    }

    pub fn g(&self, i: usize) -> f64 {
        lerp(self.g_range, i, self.n_g)
    }

    pub fn gamma(&self, j: usize) -> f64 {
        lerp(self.gamma_range, j, self.n_gamma)
    }

    pub fn cell(&self) -> (f64, f64) {
        (
            (self.g_range.1 - self.g_range.0) / (self.n_g - 1) as f64,
            (self.gamma_range.1 - self.gamma_range.0) / (self.n_gamma - 1) as f64,
        )
    }

    /// Evaluates `f` on every node in parallel; result index is `j * n_g + i`.
    pub fn evaluate<T: Send>(&self, f: impl Fn(f64, f64) -> Result<T> + Sync) -> Result<Vec<T>> {
        (0..self.n_g * self.n_gamma)
            .into_par_iter()
            .map(|k| f(self.g(k % self.n_g), self.gamma(k / self.n_g)))
            .collect()
    }
}

fn lerp(r: (f64, f64), i: usize, n: usize) -> f64 {
    if i + 1 == n {
        r.1
    } else {
        r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64
    }
}

pub type Polyline = Vec<(f64, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum EdgeKey {
    /// between (i, j) and (i + 1, j)
    Along(usize, usize),
    /// between (i, j) and (i, j + 1)
    Across(usize, usize),
}

/// Zero-level set of `f` on the grid by marching squares, each vertex
/// refined by Newton iteration along its cell edge. Polylines are returned
/// open ones first, in scan order.
pub fn trace_zero_contour(grid: &Grid, f: impl Fn(f64, f64) -> Result<f64> + Sync) -> Result<Vec<Polyline>> {
    let values = grid.evaluate(&f)?;
    let (ng, nm) = (grid.n_g, grid.n_gamma);
    let val = |i: usize, j: usize| values[j * ng + i];
    let inside = |i: usize, j: usize| val(i, j) > 0.0;

    let mut keys: Vec<EdgeKey> = Vec::new();
    let mut index = std::collections::BTreeMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut vid = |k: EdgeKey, keys: &mut Vec<EdgeKey>| {
        *index.entry(k).or_insert_with(|| {
            keys.push(k);
            keys.len() - 1
        })
    };

    for j in 0..nm - 1 {
        for i in 0..ng - 1 {
            let corner = [inside(i, j), inside(i + 1, j), inside(i + 1, j + 1), inside(i, j + 1)];
            let sides = [
                EdgeKey::Along(i, j),
                EdgeKey::Across(i + 1, j),
                EdgeKey::Along(i, j + 1),
                EdgeKey::Across(i, j),
            ];
            let crossed: Vec<usize> = (0..4).filter(|&e| corner[e] != corner[(e + 1) % 4]).collect();
            let pairs: Vec<(usize, usize)> = match crossed.len() {
                2 => vec![(crossed[0], crossed[1])],
                4 => {
                    let centre = (val(i, j) + val(i + 1, j) + val(i + 1, j + 1) + val(i, j + 1)) / 4.0;
                    if (centre > 0.0) == corner[0] {
                        vec![(0, 1), (2, 3)]
                    } else {
                        vec![(3, 0), (1, 2)]
                    }
                }
                _ => vec![],
            };
            for (a, b) in pairs {
                let va = vid(sides[a], &mut keys);
                let vb = vid(sides[b], &mut keys);
                edges.push((va, vb));
            }
        }
    }
    if keys.is_empty() {
        return Err(Error::EmptyContour);
    }

    let points = keys
        .par_iter()
        .map(|&k| {
            let ((i0, j0), (i1, j1)) = match k {
                EdgeKey::Along(i, j) => ((i, j), (i + 1, j)),
                EdgeKey::Across(i, j) => ((i, j), (i, j + 1)),
            };
            edge_root(grid, &f, (i0, j0), (i1, j1), val(i0, j0), val(i1, j1))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut adj = vec![Vec::new(); keys.len()];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut used = vec![false; keys.len()];
    let mut lines = Vec::new();
    let starts: Vec<usize> = (0..keys.len())
        .filter(|&v| adj[v].len() == 1)
        .chain(0..keys.len())
        .collect();
    for s in starts {
        if used[s] {
            continue;
        }
        let mut line = vec![points[s]];
        used[s] = true;
        let mut cur = s;
        while let Some(&next) = adj[cur].iter().find(|&&n| !used[n]) {
            used[next] = true;
            if line.last() != Some(&points[next]) {
                line.push(points[next]);
            }
            cur = next;
        }
        if adj[cur].contains(&s) && line.len() > 2 {
            line.push(points[s]);
        }
        lines.push(line);
    }
    Ok(lines)
}

/// Root of `f` on one cell edge: linear interpolation, then Newton along the
/// edge while it stays inside the edge and keeps reducing |f|.
fn edge_root(
    grid: &Grid,
    f: &(impl Fn(f64, f64) -> Result<f64> + Sync),
    a: (usize, usize),
    b: (usize, usize),
    fa: f64,
    fb: f64,
) -> Result<(f64, f64)> {
    let (xa, ya) = (grid.g(a.0), grid.gamma(a.1));
    let (xb, yb) = (grid.g(b.0), grid.gamma(b.1));
    let point = |t: f64| (xa + t * (xb - xa), ya + t * (yb - ya));
    let eval = |t: f64| {
        let (x, y) = point(t);
        f(x, y)
    };
    if fa == 0.0 {
        return Ok(point(0.0));
    }
    if fb == 0.0 {
        return Ok(point(1.0));
    }
    let mut t = fa / (fa - fb);
    let mut ft = eval(t)?;
    for _ in 0..8 {
        if ft == 0.0 {
            break;
        }
        let h = 1e-6;
        let slope = (eval((t + h).min(1.0))? - eval((t - h).max(0.0))?) / ((t + h).min(1.0) - (t - h).max(0.0));
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        let next = t - ft / slope;
        if !(0.0..=1.0).contains(&next) {
            break;
        }
        let fnext = eval(next)?;
        if fnext.abs() >= ft.abs() {
            break;
        }
        t = next;
        ft = fnext;
    }
    Ok(point(t))
}

/// The `p³ + q² = 0` contour of the effective cubic over the grid.
///
/// The contour has a cusp at the EP3 which sign changes of `p³ + q²` cannot
/// resolve: the horn narrows like depth^{3/2} and slips between grid columns.
/// On `p ≤ 0` the function factors as `(q − (−p)^{3/2})(q + (−p)^{3/2})`, each
/// factor with a smooth zero set, so the two branches are traced separately,
/// clipped to `p ≤ 0` and joined where they meet at `p = 0`.
pub fn trace_ep2_line(base: &SystemParams, grid: &Grid, model: EffectiveModel) -> Result<Vec<Polyline>> {
    let mut branches = Vec::new();
    for sign in [1.0, -1.0] {
        let lines = match trace_zero_contour(grid, |g, gamma| {
            let (p, q) = pq_at(base, model, g, gamma)?;
            Ok(q - sign * (-p).max(0.0).powf(1.5))
        }) {
            Ok(lines) => lines,
            Err(Error::EmptyContour) => continue,
            Err(e) => return Err(e),
        };
        for line in lines {
            branches.extend(clip_negative_p(base, model, &line)?);
        }
    }
    if branches.is_empty() {
        return Err(Error::EmptyContour);
    }
    let (cg, cy) = grid.cell();
    Ok(join_polylines(branches, cg.hypot(cy)))
}

/// Pieces of `line` on which `p ≤ 0`, with the `p = 0` crossings located by
/// secant steps along the segment.
fn clip_negative_p(base: &SystemParams, model: EffectiveModel, line: &Polyline) -> Result<Vec<Polyline>> {
    let p_at = |x: (f64, f64)| pq_at(base, model, x.0, x.1).map(|pq| pq.0);
    let ps = line.iter().map(|&x| p_at(x)).collect::<Result<Vec<_>>>()?;
    let crossing = |a: (f64, f64), b: (f64, f64), pa: f64, pb: f64| -> Result<(f64, f64)> {
        let at = |t: f64| (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        let (mut t0, mut f0, mut t1, mut f1) = (0.0, pa, 1.0, pb);
        for _ in 0..20 {
            let t = t0 - f0 * (t1 - t0) / (f1 - f0);
            if !t.is_finite() {
                break;
            }
            let ft = p_at(at(t))?;
            if ft == 0.0 || (t - t1).abs() < 1e-15 {
                return Ok(at(t));
            }
            (t0, f0, t1, f1) = (t1, f1, t, ft);
        }
        Ok(at(t1))
    };
    let mut out = Vec::new();
    let mut cur: Polyline = Vec::new();
    for k in 0..line.len() {
        if ps[k] <= 0.0 {
            if k > 0 && ps[k - 1] > 0.0 {
                cur.push(crossing(line[k - 1], line[k], ps[k - 1], ps[k])?);
            }
            cur.push(line[k]);
        } else if k > 0 && ps[k - 1] <= 0.0 {
            cur.push(crossing(line[k - 1], line[k], ps[k - 1], ps[k])?);
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out.into_iter().filter(|l| l.len() > 1).collect())
}

/// Merges open polylines whose end points lie within `tol` of each other.
fn join_polylines(mut lines: Vec<Polyline>, tol: f64) -> Vec<Polyline> {
    let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1) <= tol;
    let is_open = |l: &Polyline| l.first() != l.last();
    'outer: loop {
        for a in 0..lines.len() {
            for b in a + 1..lines.len() {
                if !is_open(&lines[a]) || !is_open(&lines[b]) {
                    continue;
                }
                let (fa, la) = (lines[a][0], *lines[a].last().unwrap());
                let (fb, lb) = (lines[b][0], *lines[b].last().unwrap());
                let mut second = if close(la, fb) {
                    lines[b].clone()
                } else if close(la, lb) {
                    lines[b].iter().rev().copied().collect()
                } else if close(fa, fb) {
                    lines[a].reverse();
                    lines[b].clone()
                } else if close(fa, lb) {
                    lines[a].reverse();
                    lines[b].iter().rev().copied().collect()
                } else {
                    continue;
                };
                second.remove(0);
                lines.remove(b);
                lines[a].extend(second);
                continue 'outer;
            }
        }
        return lines;
    }
}

/// Closed-form critical coupling and gain/loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalScaling {
    /// `sqrt(Δω Ω)/2`
    pub g_cr: f64,
    /// `g_cr θ/√2`
    pub gamma_cr: f64,
    /// Pre-asymptotic `(g/Ω)² = D/u₂` with `D = Δω/Ω`.
    pub g_tilde_sq: f64,
    /// Pre-asymptotic `(γ/Ω)²` at that coupling.
    pub gamma_tilde_sq: f64,
}

pub fn critical_scaling(delta_omega: f64, theta: f64, omega: f64) -> Result<CriticalScaling> {
    if !(delta_omega > 0.0) || !(omega > 0.0) || !(theta > 0.0 && theta < PI / 2.0) {
        return Err(Error::InvalidParams(format!(
            "critical scaling needs delta_omega > 0, omega > 0, theta in (0, pi/2); got {delta_omega}, {omega}, {theta}"
        )));
    }
    let dd = delta_omega / omega;
    let (sin, cos) = theta.sin_cos();
    let u1 = 2.0 * sin * sin / (2.0 + dd);
    let u2 = 4.0 * (cos * cos / (1.0 + dd) + sin * sin / (2.0 + dd));
    let g_tilde_sq = dd / u2;
    let gamma_tilde_sq = (4.0 * dd * sin * sin / u2 + 2.0 * dd * dd / 3.0 * (u1 / u2).powi(2)) / (8.0 * cos * cos);
    let g_cr = (delta_omega * omega).sqrt() / 2.0;
    Ok(CriticalScaling {
        g_cr,
        gamma_cr: g_cr * theta / SQRT_2,
        g_tilde_sq,
        gamma_tilde_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ep3Report {
    pub g_cr: f64,
    pub gamma_cr: f64,
    pub triple_energy: C64,
    pub rank_ok: bool,
    /// `|p| + |q|` at the solution.
    pub residual: f64,
    pub iterations: usize,
}

/// Largest 2×2 minor of `H − E·1`; nonzero means rank 2, so a triple root
/// with this minor is a genuine third-order EP rather than a degeneracy.
pub fn rank_minor(h: &ComplexMatrix, e: C64) -> f64 {
    let m = h - ComplexMatrix::identity(3, 3) * e;
    let mut best = 0.0f64;
    for r in [(0, 1), (0, 2), (1, 2)] {
        for c in [(0, 1), (0, 2), (1, 2)] {
            let minor = m[(r.0, c.0)] * m[(r.1, c.1)] - m[(r.0, c.1)] * m[(r.1, c.0)];
            best = best.max(minor.norm());
        }
    }
    best
}

/// Solves `p(g, γ) = q(g, γ) = 0` with Newton's method and a central
/// finite-difference Jacobian. Without a guess, starts from the
/// pre-asymptotic critical-scaling estimates.
pub fn find_ep3(base: &SystemParams, guess: Option<(f64, f64)>, model: EffectiveModel) -> Result<Ep3Report> {
    let theta = base.theta();
    if !(theta > 0.0 && theta < PI / 2.0) || !(base.delta_omega() > 0.0) {
        return Err(Error::InvalidParams(
            "EP3 search needs theta in (0, pi/2) and omega_r > Omega".into(),
        ));
    }
    let omega = base.omega();
    let start = match guess {
        Some(x) => x,
        None => {
            let cs = critical_scaling(base.delta_omega(), theta, omega)?;
            (omega * cs.g_tilde_sq.sqrt(), omega * cs.gamma_tilde_sq.sqrt())
        }
    };
    let ((g, gamma), iterations) = solve_pq(base, model, start, (0.0, 0.0))?;
    let params = at(base, g, gamma);
    let dc = effective_cubic(&params, model)?;
    let triple = C64::new(dc.shift, 0.0);
    let minor = rank_minor(&effective_matrix(&params, model)?, triple);
    if minor <= RANK_TOL {
        return Err(Error::RankDeficient(minor));
    }
    Ok(Ep3Report {
        g_cr: g,
        gamma_cr: gamma,
        triple_energy: triple,
        rank_ok: true,
        residual: dc.p.abs() + dc.q.abs(),
        iterations,
    })
}

/// Newton solve of `(p, q)(g, γ) = target`. Returns the point and the number
/// of Newton steps taken until `|Δp| + |Δq| < 1e-12`; a few extra polishing
/// steps follow while they keep reducing the residual.
pub fn solve_pq(
    base: &SystemParams,
    model: EffectiveModel,
    start: (f64, f64),
    target: (f64, f64),
) -> Result<((f64, f64), usize)> {
    let residual = |x: (f64, f64)| -> Result<(f64, f64)> {
        let (p, q) = pq_at(base, model, x.0, x.1)?;
        Ok((p - target.0, q - target.1))
    };
    let norm = |r: (f64, f64)| r.0.abs() + r.1.abs();
    let mut x = start;
    let mut r = residual(x)?;
    let mut converged_at = None;
    for it in 0..NEWTON_BUDGET {
        if norm(r) < NEWTON_TOL && converged_at.is_none() {
            converged_at = Some(it);
        }
        if let Some(c) = converged_at {
            if it >= c + 3 {
                break;
            }
        }
        let hg = FD_STEP * x.0.abs().max(1e-3 * base.omega());
        let hy = FD_STEP * x.1.abs().max(1e-3 * base.omega());
        let rgp = residual((x.0 + hg, x.1))?;
        let rgm = residual((x.0 - hg, x.1))?;
        let ryp = residual((x.0, x.1 + hy))?;
        let rym = residual((x.0, x.1 - hy))?;
        let j = [
            [(rgp.0 - rgm.0) / (2.0 * hg), (ryp.0 - rym.0) / (2.0 * hy)],
            [(rgp.1 - rgm.1) / (2.0 * hg), (ryp.1 - rym.1) / (2.0 * hy)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dg = (j[1][1] * r.0 - j[0][1] * r.1) / det;
        let dy = (-j[1][0] * r.0 + j[0][0] * r.1) / det;
        let next = (x.0 - dg, x.1 - dy);
        let rn = residual(next)?;
        if converged_at.is_some() && norm(rn) >= norm(r) {
            break;
        }
        x = next;
        r = rn;
    }
    if !(norm(r) < NEWTON_TOL) {
        return Err(Error::NoConvergence {
            iterations: NEWTON_BUDGET,
            residual: norm(r),
        });
    }
    Ok((x, converged_at.unwrap_or(NEWTON_BUDGET)))
}

/// Directions of approach to the EP3 with closed-form roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PerturbationCase {
    /// On the EP2 line `p³ + q² = 0`.
    AlongEp2Line,
    /// `q = 0, p < 0`.
    NegativeP,
    /// `q = 0, p > 0`.
    PositiveP,
    /// `q/p` fixed with `|p|³ ≪ q²`.
    FixedRatio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationRoots {
    pub case: PerturbationCase,
    pub roots: [C64; 3],
    /// Guaranteed distance to the exact roots: zero for cases exact on their
    /// line (up to `tol`), `2|p|/∛(2|q|)` for the fixed-ratio case.
    pub bound: f64,
}

/// `tol` is relative: `|p³ + q²| ≤ tol·max(|p|³, q²)` selects the EP2 line,
/// `|q| ≤ tol·|p|^{3/2}` the `q = 0` lines.
pub fn perturbation_case(dc: &DepressedCubic, tol: f64) -> Result<PerturbationRoots> {
    let (p, q) = (dc.p, dc.q);
    let p3 = p.abs().powi(3);
    let mut cases = Vec::new();
    if p < 0.0 && q != 0.0 && (p.powi(3) + q * q).abs() <= tol * p3.max(q * q) {
        cases.push(PerturbationCase::AlongEp2Line);
    }
    if p != 0.0 && q.abs() <= tol * p3.sqrt() {
        cases.push(if p < 0.0 {
            PerturbationCase::NegativeP
        } else {
            PerturbationCase::PositiveP
        });
    }
    if q != 0.0 && p3 <= FIXED_RATIO_LIMIT * q * q {
        cases.push(PerturbationCase::FixedRatio);
    }
    if cases.len() != 1 {
        return Err(Error::AmbiguousCase(format!(
            "(p, q) = ({p:e}, {q:e}) matches {cases:?}"
        )));
    }
    let w = C64::from_polar(1.0, 2.0 * PI / 3.0);
    let real = |x: f64| C64::new(x, 0.0);
    let case = cases[0];
    let (roots, bound) = match case {
        PerturbationCase::AlongEp2Line => {
            let r = q.cbrt();
            let pair = -2.0 * (2.0 * PI / 3.0).cos() * r;
            ([real(-2.0 * r), real(pair), real(pair)], 0.0)
        }
        PerturbationCase::NegativeP => {
            let s = p.abs().sqrt();
            (
                [0.0, 1.0, 2.0].map(|k| real(2.0 * (PI / 6.0 + 2.0 * PI * k / 3.0).cos() * s)),
                0.0,
            )
        }
        PerturbationCase::PositiveP => {
            let im = 2.0 * (2.0 * PI / 3.0).sin() * p.sqrt();
            ([real(0.0), C64::new(0.0, im), C64::new(0.0, -im)], 0.0)
        }
        PerturbationCase::FixedRatio => {
            let r = (2.0 * q).cbrt();
            ([real(-r), -w * r, -w.conj() * r], 2.0 * p.abs() / r.abs())
        }
    };
    Ok(PerturbationRoots { case, roots, bound })
}

/// One node of the phase diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseNode {
    pub g: f64,
    pub gamma: f64,
    pub max_im_e: f64,
    pub min_level_dist: f64,
    pub class: SpectrumTag,
}

pub fn phase_node(params: &SystemParams, model: EffectiveModel) -> Result<PhaseNode> {
    let dc = effective_cubic(params, model)?;
    let e = cardano_roots(&dc).energies(&dc);
    let max_im_e = e.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max);
    let min_level_dist = [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(a, b)| (e[a] - e[b]).norm())
        .fold(f64::INFINITY, f64::min);
    Ok(PhaseNode {
        g: params.g,
        gamma: params.gamma,
        max_im_e,
        min_level_dist,
        class: classify(&dc, CLASSIFY_TOL).tag,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    pub grid: Grid,
    /// Row-major with γ slowest: index `j * n_g + i`.
    pub nodes: Vec<PhaseNode>,
}

impl PhaseDiagram {
    pub fn node(&self, i: usize, j: usize) -> &PhaseNode {
        &self.nodes[j * self.grid.n_g + i]
    }
}

pub fn phase_diagram(base: &SystemParams, grid: &Grid, model: EffectiveModel) -> Result<PhaseDiagram> {
    let nodes = grid.evaluate(|g, gamma| phase_node(&at(base, g, gamma), model))?;
    Ok(PhaseDiagram { grid: *grid, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigenvalues, multiset_distance};
    use proptest::prelude::*;

    fn reference_point(gamma: f64, g: f64) -> SystemParams {
        SystemParams::resonant(PI / 40.0, 1.07, gamma, g).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn poly(dc: &DepressedCubic, z: C64) -> C64 {
        z * z * z + z * 3.0 * dc.p + 2.0 * dc.q
    }

    #[test]
    fn coefficients_of_simple_matrices() {
        let d = ComplexMatrix::from_diagonal(&crate::linalg::ComplexVector::from_vec(vec![
            c(1.0, 0.0),
            c(2.0, 0.0),
            c(3.0, 0.0),
        ]));
        let cc = char_poly_coeffs(&d).unwrap();
        assert_eq!((cc.b, cc.c, cc.d), (-6.0, 11.0, -6.0));
        let z = char_poly_coeffs(&ComplexMatrix::zeros(3, 3)).unwrap();
        assert_eq!((z.b, z.c, z.d), (0.0, 0.0, 0.0));
        let dc = depress(&cc, 1.0);
        assert!((dc.p + 1.0 / 3.0).abs() < 1e-15);
        assert!(dc.q.abs() < 1e-14);
        assert!((dc.shift - 2.0).abs() < 1e-15);
        let zero = depress(&z, 1.0);
        assert_eq!((zero.p, zero.q), (0.0, 0.0));
        let skew = ComplexMatrix::from_diagonal(&crate::linalg::ComplexVector::from_vec(vec![
            c(0.0, 1.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
        ]));
        assert!(matches!(char_poly_coeffs(&skew), Err(Error::NotPTSymmetric(_))));
        assert!(matches!(
            char_poly_coeffs(&ComplexMatrix::zeros(2, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn coefficients_of_effective_matrix() {
        let p = reference_point(0.005, 0.1);
        let h = effective_matrix(&p, EffectiveModel::Approx).unwrap();
        let cc = char_poly_coeffs(&h).unwrap();
        assert!(cc.imag_leak < 1e-12);
        let dc = depress(&cc, p.omega());
        let roots = cardano_roots(&dc).energies(&dc);
        assert!(multiset_distance(&roots, &eigenvalues(&h).unwrap()) < 1e-10);
        let full = effective_matrix(&p, EffectiveModel::Full).unwrap();
        assert!(char_poly_coeffs(&full).unwrap().imag_leak < 1e-12);
    }

    #[test]
    fn cardano_reference_roots() {
        let triple = cardano_roots(&DepressedCubic::new(0.0, 0.0));
        assert_eq!(triple.roots, [c(0.0, 0.0); 3]);
        let sym = cardano_roots(&DepressedCubic::new(-1.0, 0.0));
        let s3 = 3f64.sqrt();
        assert!(multiset_distance(&sym.roots, &[c(s3, 0.0), c(-s3, 0.0), c(0.0, 0.0)]) < 1e-15);
        let ep2 = cardano_roots(&DepressedCubic::new(-1.0, 1.0));
        assert!(multiset_distance(&ep2.roots, &[c(-2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]) < 1e-15);
        assert!((ep2.roots[0] - c(-2.0, 0.0)).norm() < 1e-15);
        let cube = cardano_roots(&DepressedCubic::new(0.0, 4.0));
        let expected = [
            c(-2.0, 0.0),
            C64::from_polar(2.0, PI / 3.0),
            C64::from_polar(2.0, -PI / 3.0),
        ];
        assert!(multiset_distance(&cube.roots, &expected) < 1e-14);
    }

    #[test]
    fn energy_mapping_restores_spectrum() {
        let cc = CubicCoeffs {
            b: -6.0,
            c: 11.0,
            d: -6.0,
            imag_leak: 0.0,
        };
        for omega in [1.0, 2.5] {
            let dc = depress(&cc, omega);
            let e = cardano_roots(&dc).energies(&dc);
            assert!(multiset_distance(&e, &[c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)]) < 1e-14);
        }
    }

    #[test]
    fn classification() {
        let tag = |p, q| classify(&DepressedCubic::new(p, q), CLASSIFY_TOL).tag;
        assert_eq!(tag(-1.0, 0.0), SpectrumTag::ThreeReal);
        assert_eq!(tag(1.0, 0.0), SpectrumTag::OneRealConjugatePair);
        assert_eq!(tag(-1.0, 1.0), SpectrumTag::EP2);
        assert_eq!(tag(0.0, 0.0), SpectrumTag::EP3);
        assert_eq!(tag(1e-12, -1e-13), SpectrumTag::EP3);
    }

    #[test]
    fn perturbation_cases() {
        let r = perturbation_case(&DepressedCubic::new(-1.0, 1.0), 1e-9).unwrap();
        assert_eq!(r.case, PerturbationCase::AlongEp2Line);
        assert!(multiset_distance(&r.roots, &[c(-2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]) < 1e-15);
        let r = perturbation_case(&DepressedCubic::new(1.0, 0.0), 1e-9).unwrap();
        assert_eq!(r.case, PerturbationCase::PositiveP);
        let s3 = 3f64.sqrt();
        assert!(multiset_distance(&r.roots, &[c(0.0, 0.0), c(0.0, s3), c(0.0, -s3)]) < 1e-15);
        let r = perturbation_case(&DepressedCubic::new(-4.0, 0.0), 1e-9).unwrap();
        assert_eq!(r.case, PerturbationCase::NegativeP);
        assert!(multiset_distance(&r.roots, &[c(2.0 * s3, 0.0), c(-2.0 * s3, 0.0), c(0.0, 0.0)]) < 1e-14);
        let r = perturbation_case(&DepressedCubic::new(0.0, 4.0), 1e-9).unwrap();
        assert_eq!(r.case, PerturbationCase::FixedRatio);
        let expected = [
            c(-2.0, 0.0),
            C64::from_polar(2.0, PI / 3.0),
            C64::from_polar(2.0, -PI / 3.0),
        ];
        assert!(multiset_distance(&r.roots, &expected) < 1e-14);
        assert!(matches!(
            perturbation_case(&DepressedCubic::new(0.0, 0.0), 1e-9),
            Err(Error::AmbiguousCase(_))
        ));
        assert!(matches!(
            perturbation_case(&DepressedCubic::new(1.0, 1.0), 1e-9),
            Err(Error::AmbiguousCase(_))
        ));
    }

    #[test]
    fn fixed_ratio_bound_holds() {
        for &(p, q) in &[(1e-4, 3e-4), (-2e-5, 1e-4), (3e-6, -5e-5)] {
            let dc = DepressedCubic::new(p, q);
            let r = perturbation_case(&dc, 1e-9).unwrap();
            assert_eq!(r.case, PerturbationCase::FixedRatio);
            let exact = cardano_roots(&dc).roots;
            assert!(multiset_distance(&r.roots, &exact) <= r.bound);
        }
    }

    #[test]
    fn critical_scaling_estimates() {
        let cs = critical_scaling(0.07, PI / 40.0, 1.0).unwrap();
        assert!((cs.g_cr - 0.07f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((cs.g_cr - 0.1323).abs() < 1e-4);
        assert!((cs.gamma_cr - 0.00735).abs() < 1e-5);
        assert!(critical_scaling(-0.1, 0.1, 1.0).is_err());
        assert!(critical_scaling(0.1, 0.0, 1.0).is_err());
        let small = critical_scaling(0.07, 1e-6, 1.0).unwrap();
        assert!(small.gamma_cr < 1e-7);
        assert_eq!(small.g_cr, cs.g_cr);
    }

    #[test]
    fn ep3_at_reference_point() {
        let r = find_ep3(&reference_point(0.0, 0.0), None, EffectiveModel::Approx).unwrap();
        assert!((r.g_cr / 0.1375 - 1.0).abs() < 0.01, "{}", r.g_cr);
        assert!((r.gamma_cr / 7.65e-3 - 1.0).abs() < 0.01, "{}", r.gamma_cr);
        assert!(r.rank_ok);
        assert!(r.residual < 1e-12);
        let dc = effective_cubic(&reference_point(r.gamma_cr, r.g_cr), EffectiveModel::Approx).unwrap();
        assert_eq!(classify(&dc, CLASSIFY_TOL).tag, SpectrumTag::EP3);
        // the distinguished minor: rows {1,2}, columns {1,3}
        let h = effective_matrix(&reference_point(r.gamma_cr, r.g_cr), EffectiveModel::Approx).unwrap();
        let m = &h - ComplexMatrix::identity(3, 3) * r.triple_energy;
        let minor = m[(0, 0)] * m[(1, 2)] - m[(0, 2)] * m[(1, 0)];
        let analytic = c(0.0, SQRT_2 * r.g_cr * r.gamma_cr * (PI / 20.0).sin());
        assert!((minor - analytic).norm() < 1e-12);
    }

    #[test]
    fn ep3_newton_is_fast() {
        for dw in [0.02, 0.05, 0.1, 0.15] {
            let base = SystemParams::resonant(PI / 40.0, 1.0 + dw, 0.0, 0.0).unwrap();
            let r = find_ep3(&base, None, EffectiveModel::Approx).unwrap();
            assert!(r.iterations <= 10, "{dw}: {} steps", r.iterations);
        }
    }

    #[test]
    fn ep3_rejects_bad_geometry() {
        let below = SystemParams::resonant(PI / 40.0, 0.95, 0.0, 0.0).unwrap();
        assert!(matches!(
            find_ep3(&below, None, EffectiveModel::Approx),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn zero_gamma_row_is_real() {
        let grid = Grid::new((0.0, 0.3), (0.0, 0.02), 16, 16).unwrap();
        let pd = phase_diagram(&reference_point(0.0, 0.0), &grid, EffectiveModel::Approx).unwrap();
        for i in 0..16 {
            assert_eq!(pd.node(i, 0).max_im_e, 0.0);
        }
        // high above the contour at small g the pair is complex
        assert!(pd.node(1, 15).max_im_e > 1e-3);
        assert_eq!(pd.node(1, 15).class, SpectrumTag::OneRealConjugatePair);
    }

    #[test]
    fn phase_node_at_ep3() {
        let r = find_ep3(&reference_point(0.0, 0.0), None, EffectiveModel::Approx).unwrap();
        let node = phase_node(&reference_point(r.gamma_cr, r.g_cr), EffectiveModel::Approx).unwrap();
        assert!(node.max_im_e.abs() < 1e-6);
        assert!(node.min_level_dist < 1e-6);
    }

    #[test]
    fn contour_vertices_sit_on_the_line() {
        let base = reference_point(0.0, 0.0);
        let grid = Grid::new((0.0, 0.3), (0.0, 0.02), 40, 40).unwrap();
        let lines = trace_ep2_line(&base, &grid, EffectiveModel::Approx).unwrap();
        assert!(!lines.is_empty());
        for &(g, gamma) in lines.iter().flatten() {
            let dc = effective_cubic(&reference_point(gamma, g), EffectiveModel::Approx).unwrap();
            assert!(dc.discriminant().abs() < 1e-8);
        }
    }

    #[test]
    fn contour_absent_above_g_zero_boundary() {
        // at g = 0 the pair is broken for every γ > 0
        let grid = Grid::new((0.0, 0.05), (0.0, 0.02), 16, 16).unwrap();
        let lines = trace_ep2_line(&reference_point(0.0, 0.0), &grid, EffectiveModel::Approx).unwrap();
        for &(g, gamma) in lines.iter().flatten() {
            assert!(g > 0.0 || gamma < 1e-9, "({g}, {gamma})");
        }
        let far = Grid::new((0.0, 0.01), (0.01, 0.02), 16, 16).unwrap();
        assert!(matches!(
            trace_ep2_line(&reference_point(0.0, 0.0), &far, EffectiveModel::Approx),
            Err(Error::EmptyContour)
        ));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new((0.0, 0.3), (0.0, 0.02), 8, 16).is_err());
        assert!(Grid::new((0.3, 0.0), (0.0, 0.02), 16, 16).is_err());
    }

    proptest! {
        #[test]
        fn branch_identity_and_realness(p in -2.0f64..2.0, q in -2.0f64..2.0) {
            let dc = DepressedCubic::new(p, q);
            let r = cardano_roots(&dc);
            prop_assert!((r.alpha * r.beta + p).norm() < 1e-12);
            for z in r.roots {
                prop_assert!(poly(&dc, z).norm() < 1e-11);
            }
            let disc = dc.discriminant();
            let real = r.roots.iter().filter(|z| z.im.abs() < 1e-10).count();
            if disc < 0.0 {
                prop_assert_eq!(real, 3);
            } else if disc > 1e-12 {
                prop_assert_eq!(real, 1);
            }
            let conj: Vec<C64> = r.roots.iter().map(|z| z.conj()).collect();
            prop_assert!(multiset_distance(&r.roots, &conj) < 1e-10);
        }
    }
}
