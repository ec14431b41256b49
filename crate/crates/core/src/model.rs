//! Two identical non-Hermitian qubits with staggered imaginary longitudinal
//! fields, coupled longitudinally to one lossless resonator mode.
//!
//! Full Hilbert space ordering is qubit-1 ⊗ qubit-2 ⊗ boson with the boson
//! index slowest: `index = 4 n + 2 q1 + q2`, qubit state 0 = ↑ (σ_z = +1),
//! 1 = ↓. Qubit 1 carries `+iγ σ_z`, qubit 2 carries `-iγ σ_z`, so the second
//! qubit is the complex conjugate of the first.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{binormalize, BiorthogonalEigensystem, ComplexMatrix, ComplexRow, ComplexVector, C64};
use crate::sw::{EffectiveHamiltonian, QuasiDegenerateGroup};

/// Circuit-QED parameter set. All energies share one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub delta: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub omega_r: f64,
    pub g: f64,
    pub n_max: usize,
}

pub const DEFAULT_N_MAX: usize = 7;

impl SystemParams {
    pub fn new(delta: f64, epsilon: f64, gamma: f64, omega_r: f64, g: f64, n_max: usize) -> Result<Self> {
        let p = Self {
            delta,
            epsilon,
            gamma,
            omega_r,
            g,
            n_max,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds the parameters from the qubit frequency and mixing angle:
    /// `Δ = Ω sin θ`, `ε = Ω cos θ`.
    pub fn from_omega_theta(omega: f64, theta: f64, gamma: f64, omega_r: f64, g: f64, n_max: usize) -> Result<Self> {
        Self::new(omega * theta.sin(), omega * theta.cos(), gamma, omega_r, g, n_max)
    }

    /// Ω = 1 units: `omega_r_ratio = ω_r/Ω`, `gamma` and `g` in units of Ω.
    pub fn resonant(theta: f64, omega_r_ratio: f64, gamma: f64, g: f64) -> Result<Self> {
        Self::from_omega_theta(1.0, theta, gamma, omega_r_ratio, g, DEFAULT_N_MAX)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.delta, self.epsilon, self.gamma, self.omega_r, self.g];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidParams(format!("delta = {} must be >= 0", self.delta)));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidParams(format!("gamma = {} must be >= 0", self.gamma)));
        }
        if self.g < 0.0 {
            return Err(Error::InvalidParams(format!("g = {} must be >= 0", self.g)));
        }
        if self.omega_r <= 0.0 {
            return Err(Error::InvalidParams(format!("omega_r = {} must be > 0", self.omega_r)));
        }
        if self.omega() <= 0.0 {
            return Err(Error::InvalidParams(
                "qubit frequency sqrt(delta^2+epsilon^2) is zero".into(),
            ));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidParams("n_max must be >= 1".into()));
        }
        Ok(())
    }

    /// Ω = sqrt(Δ² + ε²).
    pub fn omega(&self) -> f64 {
        self.delta.hypot(self.epsilon)
    }

    /// θ = arccos(ε/Ω) in [0, π].
    pub fn theta(&self) -> f64 {
        (self.epsilon / self.omega()).clamp(-1.0, 1.0).acos()
    }

    /// Δω = ω_r − Ω.
    pub fn delta_omega(&self) -> f64 {
        self.omega_r - self.omega()
    }

    pub fn dim(&self) -> usize {
        4 * (self.n_max + 1)
    }

    pub fn with_g(self, g: f64) -> Self {
        Self { g, ..self }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn with_n_max(self, n_max: usize) -> Self {
        Self { n_max, ..self }
    }
}

impl fmt::Display for SystemParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "delta={:.17e},epsilon={:.17e},gamma={:.17e},omega_r={:.17e},g={:.17e},n_max={}",
            self.delta, self.epsilon, self.gamma, self.omega_r, self.g, self.n_max
        )
    }
}

/// Full-space index of `|q1, q2, n>`.
pub fn basis_index(q1: usize, q2: usize, n: usize) -> usize {
    4 * n + 2 * q1 + q2
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn sigma_z() -> Matrix2<C64> {
    Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))
}

/// `(Δ/2) σ_x + (ε/2 + iγ) σ_z`, the first qubit.
pub fn single_qubit_hamiltonian(params: &SystemParams) -> Matrix2<C64> {
    let a = c(params.epsilon / 2.0, params.gamma);
    let d = c(params.delta / 2.0, 0.0);
    Matrix2::new(a, d, d, -a)
}

/// Embeds `h1 ⊗ h2 ⊗ B` into the full space, where `boson(n, m)` gives the
/// boson-factor matrix element.
fn embed(n_max: usize, h1: &Matrix2<C64>, h2: &Matrix2<C64>, boson: impl Fn(usize, usize) -> f64) -> ComplexMatrix {
    let dim = 4 * (n_max + 1);
    let mut m = ComplexMatrix::zeros(dim, dim);
    for n in 0..=n_max {
        for k in 0..=n_max {
            let b = boson(n, k);
            if b == 0.0 {
                continue;
            }
            for (i1, j1, i2, j2) in four_indices() {
                let v = h1[(i1, j1)] * h2[(i2, j2)] * b;
                if v != c(0.0, 0.0) {
                    m[(basis_index(i1, i2, n), basis_index(j1, j2, k))] += v;
                }
            }
        }
    }
    m
}

fn four_indices() -> impl Iterator<Item = (usize, usize, usize, usize)> {
    (0..16).map(|x| ((x >> 3) & 1, (x >> 2) & 1, (x >> 1) & 1, x & 1))
}

/// `H_0 = H_qb + ω_r a†a`: the g = 0 part.
pub fn bare_hamiltonian(params: &SystemParams) -> Result<ComplexMatrix> {
    params.validate()?;
    let h1 = single_qubit_hamiltonian(params);
    let h2 = h1.map(|z| z.conj());
    let id = Matrix2::<C64>::identity();
    let delta = |n: usize, k: usize| if n == k { 1.0 } else { 0.0 };
    let mut h = embed(params.n_max, &h1, &id, delta) + embed(params.n_max, &id, &h2, delta);
    for n in 0..=params.n_max {
        for q in 0..4 {
            h[(4 * n + q, 4 * n + q)] += c(params.omega_r * n as f64, 0.0);
        }
    }
    Ok(h)
}

/// `V = (a† + a)(σ_1^z + σ_2^z)` on the truncated Fock space.
pub fn interaction_operator(n_max: usize) -> ComplexMatrix {
    let sz = sigma_z();
    let id = Matrix2::<C64>::identity();
    let x = |n: usize, k: usize| {
        if n == k + 1 {
            (n as f64).sqrt()
        } else if k == n + 1 {
            (k as f64).sqrt()
        } else {
            0.0
        }
    };
    embed(n_max, &sz, &id, x) + embed(n_max, &id, &sz, x)
}

/// Full Hamiltonian `H_qb + H_res + g V`; complex symmetric.
pub fn build_full_hamiltonian(params: &SystemParams) -> Result<ComplexMatrix> {
    let h0 = bare_hamiltonian(params)?;
    Ok(h0 + interaction_operator(params.n_max) * c(params.g, 0.0))
}

/// Qubit-exchange permutation, identity on the boson factor.
pub fn parity_operator(n_max: usize) -> ComplexMatrix {
    let dim = 4 * (n_max + 1);
    let mut p = ComplexMatrix::zeros(dim, dim);
    for n in 0..=n_max {
        for q1 in 0..2 {
            for q2 in 0..2 {
                p[(basis_index(q2, q1, n), basis_index(q1, q2, n))] = c(1.0, 0.0);
            }
        }
    }
    p
}

/// Sign of a single-qubit eigenvector branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }

    fn symbol(self) -> char {
        match self {
            Branch::Plus => '+',
            Branch::Minus => '-',
        }
    }
}

/// `|a_r, b̃_r; n>`: qubit-1 branch, qubit-2 (conjugated) branch, photons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateLabel {
    pub q1: Branch,
    pub q2: Branch,
    pub n: usize,
}

impl StateLabel {
    pub fn new(q1: Branch, q2: Branch, n: usize) -> Self {
        Self { q1, q2, n }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}~;{}", self.q1.symbol(), self.q2.symbol(), self.n)
    }
}

/// Closed-form biorthonormal eigendata of the first qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleQubitData {
    pub lambda: C64,
    pub right_plus: Vector2<C64>,
    pub right_minus: Vector2<C64>,
    pub left_plus: RowVector2<C64>,
    pub left_minus: RowVector2<C64>,
    /// `<+_l|σ_z|+_r> = (ε/2 + iγ)/λ`
    pub s: C64,
    /// `-<+_l|σ_z|-_r> = Δ/(2λ)`
    pub t: C64,
}

impl SingleQubitData {
    pub fn right(&self, b: Branch) -> Vector2<C64> {
        match b {
            Branch::Plus => self.right_plus,
            Branch::Minus => self.right_minus,
        }
    }

    pub fn left(&self, b: Branch) -> RowVector2<C64> {
        match b {
            Branch::Plus => self.left_plus,
            Branch::Minus => self.left_minus,
        }
    }

    /// Unperturbed energy `±λ ± λ* + n ω_r` of a product state.
    pub fn energy(&self, label: StateLabel, omega_r: f64) -> C64 {
        self.lambda * label.q1.sign() + self.lambda.conj() * label.q2.sign() + c(omega_r * label.n as f64, 0.0)
    }
}

/// `λ = sqrt((Δ/2)² + (ε/2 + iγ)²)` on the branch with `Re λ >= 0`
/// (and `Im λ >= 0` when `Re λ = 0`).
pub fn qubit_lambda(params: &SystemParams) -> C64 {
    let a = c(params.epsilon / 2.0, params.gamma);
    let mut lambda = (c(params.delta * params.delta / 4.0, 0.0) + a * a).sqrt();
    if lambda.re < 0.0 || (lambda.re == 0.0 && lambda.im < 0.0) {
        lambda = -lambda;
    }
    lambda
}

pub fn single_qubit_data(params: &SystemParams) -> Result<SingleQubitData> {
    params.validate()?;
    let lambda = qubit_lambda(params);
    if lambda.norm() < 1e-12 * params.omega() {
        return Err(Error::SingleQubitEP(lambda.norm()));
    }
    let a = c(params.epsilon / 2.0, params.gamma) + lambda;
    let d = c(params.delta / 2.0, 0.0);
    let norm = d * d + a * a;
    let right_plus = Vector2::new(a, d);
    let right_minus = Vector2::new(-d, a);
    let left_plus = RowVector2::new(a, d) / norm;
    let left_minus = RowVector2::new(-d, a) / norm;
    let s = c(params.epsilon / 2.0, params.gamma) / lambda;
    let t = d / lambda;
    Ok(SingleQubitData {
        lambda,
        right_plus,
        right_minus,
        left_plus,
        left_minus,
        s,
        t,
    })
}

/// Full-space right vector `|a_r> ⊗ conj(|b_r>) ⊗ |n>`.
fn product_right(data: &SingleQubitData, label: StateLabel, n_max: usize) -> ComplexVector {
    let r1 = data.right(label.q1);
    let r2 = data.right(label.q2).map(|z| z.conj());
    let mut v = ComplexVector::zeros(4 * (n_max + 1));
    for i in 0..2 {
        for j in 0..2 {
            v[basis_index(i, j, label.n)] = r1[i] * r2[j];
        }
    }
    v
}

fn product_left(data: &SingleQubitData, label: StateLabel, n_max: usize) -> ComplexRow {
    let l1 = data.left(label.q1);
    let l2 = data.left(label.q2).map(|z| z.conj());
    let mut v = ComplexRow::zeros(4 * (n_max + 1));
    for i in 0..2 {
        for j in 0..2 {
            v[basis_index(i, j, label.n)] = l1[i] * l2[j];
        }
    }
    v
}

/// Analytic biorthonormal eigenbasis of `H_0` with the label of every level.
#[derive(Debug, Clone)]
pub struct UnperturbedBasis {
    pub eig: BiorthogonalEigensystem,
    pub labels: Vec<StateLabel>,
}

impl UnperturbedBasis {
    pub fn index_of(&self, label: StateLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// The resonant group `n` as a partition of this basis.
    pub fn resonant_group(&self, n: usize) -> Result<QuasiDegenerateGroup> {
        let p = resonant_labels(n)
            .into_iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| Error::InvalidParams(format!("state {l} lies beyond the boson cutoff")))
            })
            .collect::<Result<Vec<_>>>()?;
        QuasiDegenerateGroup::new(p, self.labels.len())
    }
}

/// Levels are listed in label order (photon number, then qubit 1, then qubit
/// 2), not sorted by energy. Right vectors have unit norm; since every
/// product state has the same norm this keeps the relative gauge of the
/// closed-form vectors.
pub fn unperturbed_basis(params: &SystemParams) -> Result<UnperturbedBasis> {
    let data = single_qubit_data(params)?;
    let mut labels = Vec::with_capacity(params.dim());
    for n in 0..=params.n_max {
        for q1 in [Branch::Plus, Branch::Minus] {
            for q2 in [Branch::Plus, Branch::Minus] {
                labels.push(StateLabel::new(q1, q2, n));
            }
        }
    }
    let rights: Vec<ComplexVector> = labels.iter().map(|&l| product_right(&data, l, params.n_max)).collect();
    let lefts: Vec<ComplexRow> = labels.iter().map(|&l| product_left(&data, l, params.n_max)).collect();
    let (rights, lefts) = binormalize(&rights, &lefts)?;
    let values = labels.iter().map(|&l| data.energy(l, params.omega_r)).collect();
    let mut eig = BiorthogonalEigensystem {
        values,
        rights,
        lefts,
        residual_norm: 0.0,
    };
    eig.residual_norm = eig.residual_against(&bare_hamiltonian(params)?);
    Ok(UnperturbedBasis { eig, labels })
}

/// Labels of the resonant group `n`: `|+−̃;n>, |−+̃;n>, |−−̃;n+1>` and, for
/// `n >= 1`, `|++̃;n−1>`.
pub fn resonant_labels(n: usize) -> Vec<StateLabel> {
    use Branch::{Minus, Plus};
    let mut v = vec![
        StateLabel::new(Plus, Minus, n),
        StateLabel::new(Minus, Plus, n),
        StateLabel::new(Minus, Minus, n + 1),
    ];
    if n >= 1 {
        v.push(StateLabel::new(Plus, Plus, n - 1));
    }
    v
}

/// Closed-form right/left vectors and g = 0 energies of a resonant group.
#[derive(Debug, Clone)]
pub struct GroupBasis {
    pub labels: Vec<StateLabel>,
    pub rights: Vec<ComplexVector>,
    pub lefts: Vec<ComplexRow>,
    pub energies: Vec<C64>,
}

pub fn resonant_group_basis(params: &SystemParams, n: usize) -> Result<GroupBasis> {
    let data = single_qubit_data(params)?;
    let labels = resonant_labels(n);
    if labels.iter().any(|l| l.n > params.n_max) {
        return Err(Error::InvalidParams(format!(
            "resonant group {n} needs n_max >= {}",
            n + 1
        )));
    }
    Ok(GroupBasis {
        rights: labels.iter().map(|&l| product_right(&data, l, params.n_max)).collect(),
        lefts: labels.iter().map(|&l| product_left(&data, l, params.n_max)).collect(),
        energies: labels.iter().map(|&l| data.energy(l, params.omega_r)).collect(),
        labels,
    })
}

fn group0_labels() -> Vec<String> {
    resonant_labels(0).iter().map(|l| l.to_string()).collect()
}

/// Closed-form second-order effective Hamiltonian of the `n = 0` triple in
/// the product basis `|+−̃;0>, |−+̃;0>, |−−̃;1>`, with exact `s`, `t`, `λ`.
pub fn effective_matrix_full(params: &SystemParams) -> Result<EffectiveHamiltonian> {
    let data = single_qubit_data(params)?;
    let (lambda, s, t) = (data.lambda, data.s, data.t);
    let w = c(params.omega_r, 0.0);
    let den = w + lambda * 2.0;
    if den.norm() < 1e-14 * params.omega() {
        return Err(Error::InvalidParams("omega_r + 2 lambda vanishes".into()));
    }
    let g = c(params.g, 0.0);
    let g2 = g * g;
    let im_s2 = c(4.0 * s.im * s.im / params.omega_r, 0.0);
    let two_i_im_lambda = c(0.0, 2.0 * lambda.im);

    let h11 = two_i_im_lambda - g2 * (t.conj() * t.conj() / den.conj() - im_s2);
    let h22 = -two_i_im_lambda - g2 * (t * t / den - im_s2);
    let h12 = -g2 * t.norm_sqr() * (c(1.0, 0.0) / den).re;
    let h33 = w - c(2.0 * lambda.re, 0.0) - g2 * 4.0 * (s.re * s.re / params.omega_r + (t * t / den).re);
    let h13 = -g * t;
    let h23 = -g * t.conj();

    let m = ComplexMatrix::from_row_slice(3, 3, &[h11, h12, h13, h12, h22, h23, h13, h23, h33]);
    Ok(EffectiveHamiltonian {
        matrix: m,
        basis_labels: group0_labels(),
        g: params.g,
        order: 2,
    })
}

/// Small-γ simplification of the effective Hamiltonian in the parity basis
/// (even, odd, `|−−̃;1>`). Valid for `γ/Ω ≪ 1`; not enforced.
pub fn effective_matrix_approx(params: &SystemParams) -> Result<EffectiveHamiltonian> {
    params.validate()?;
    let omega = params.omega();
    let theta = params.theta();
    let (sin, cos) = theta.sin_cos();
    let (g, w) = (params.g, params.omega_r);
    let h11 = -2.0 * g * g * sin * sin / (w + omega);
    let h33 = params.delta_omega() - 4.0 * g * g * (cos * cos / w + sin * sin / (w + omega));
    let h12 = c(0.0, 2.0 * params.gamma * cos);
    let h13 = c(-SQRT_2 * g * sin, 0.0);
    let z = c(0.0, 0.0);
    let m = ComplexMatrix::from_row_slice(3, 3, &[c(h11, 0.0), h12, h13, h12, z, z, h13, z, c(h33, 0.0)]);
    Ok(EffectiveHamiltonian {
        matrix: m,
        basis_labels: vec!["even;0".into(), "odd;0".into(), "--~;1".into()],
        g,
        order: 2,
    })
}

/// Basis change to the parity basis; `F` is real, symmetric and involutory.
pub fn parity_basis_matrix() -> ComplexMatrix {
    let a = c(FRAC_1_SQRT_2, 0.0);
    let z = c(0.0, 0.0);
    ComplexMatrix::from_row_slice(3, 3, &[a, a, z, a, -a, z, z, z, c(1.0, 0.0)])
}

/// `F^{-1} H F`.
pub fn parity_transform(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    if h.shape() != (3, 3) {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: h.nrows(),
        });
    }
    let f = parity_basis_matrix();
    // F is its own inverse
    Ok(&f * h * &f)
}

/// Qubit exchange restricted to the `n = 0` triple (swaps the first two states).
pub fn effective_parity() -> ComplexMatrix {
    let (o, z) = (c(1.0, 0.0), c(0.0, 0.0));
    ComplexMatrix::from_row_slice(3, 3, &[z, o, z, o, z, z, z, z, o])
}

/// Expansion of `(σ_1^z + σ_2^z)|a_r b̃_r>` in the two-spin product basis:
/// three `(branch1, branch2, coefficient)` terms, diagonal term first.
pub fn two_spin_sigma_action(data: &SingleQubitData, q1: Branch, q2: Branch) -> [(Branch, Branch, C64); 3] {
    use Branch::{Minus, Plus};
    let (s, t) = (data.s, data.t);
    let (sc, tc) = (s.conj(), t.conj());
    match (q1, q2) {
        (Plus, Minus) => [(Plus, Minus, s - sc), (Minus, Minus, -t), (Plus, Plus, -tc)],
        (Minus, Plus) => [(Minus, Plus, -(s - sc)), (Plus, Plus, -t), (Minus, Minus, -tc)],
        (Minus, Minus) => [(Minus, Minus, -(s + sc)), (Plus, Minus, -t), (Minus, Plus, -tc)],
        (Plus, Plus) => [(Plus, Plus, s + sc), (Minus, Plus, -t), (Plus, Minus, -tc)],
    }
}

/// Parses a two-spin label such as `"+-"` (or `"+-~"`).
pub fn parse_two_spin_label(label: &str) -> Result<(Branch, Branch)> {
    let trimmed = label.trim().trim_end_matches('~');
    let mut chars = trimmed.chars();
    let parse = |ch: Option<char>| match ch {
        Some('+') => Ok(Branch::Plus),
        Some('-') => Ok(Branch::Minus),
        _ => Err(Error::InvalidLabel(label.to_string())),
    };
    let a = parse(chars.next())?;
    let b = parse(chars.next())?;
    if chars.next().is_some() {
        return Err(Error::InvalidLabel(label.to_string()));
    }
    Ok((a, b))
}
