//! Dirichlet sine eigenbasis on (0, 1).
//!
//! The Laplacian with homogeneous Dirichlet conditions has eigenpairs
//! `e_k(ξ) = √2 sin(kπξ)`, `λ_k = (kπ)²`. States of the Galerkin scheme are
//! coefficient vectors in this basis. Pointwise (Nemytskii) operations go
//! through the uniform interior grid `ξ_q = q/(Q+1)`, `q = 1..Q`, with equal
//! weights `1/(Q+1)`; discrete sine orthogonality makes the analysis step exact
//! for every sine polynomial of bandwidth at most `Q`.

use std::f64::consts::{PI, SQRT_2};
use std::ops::Index;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Coefficients `c_k` of `x = Σ c_k e_k`, `k = 1..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs(Vec<f64>);

impl SpectralCoeffs {
    /// Rejects empty vectors and non-finite entries.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidParameter(
                "a state needs at least one mode".into(),
            ));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(coeffs))
    }

    pub fn zeros(n_modes: usize) -> Self {
        Self(vec![0.0; n_modes])
    }

    /// Caller guarantees finiteness.
    pub(crate) fn from_vec(coeffs: Vec<f64>) -> Self {
        debug_assert!(coeffs.iter().all(|c| c.is_finite()));
        Self(coeffs)
    }

    pub fn n_modes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `‖x‖²` by Parseval.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|c| c * s).collect())
    }

    /// Same coefficients padded with zeros or truncated to `n_modes`.
    pub fn resized(&self, n_modes: usize) -> Self {
        let mut v = self.0.clone();
        v.resize(n_modes, 0.0);
        Self(v)
    }
}

impl Index<usize> for SpectralCoeffs {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Samples at the interior nodes `ξ_q = q/(Q+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalGrid {
    pub values: Vec<f64>,
}

impl PhysicalGrid {
    pub fn q_nodes(&self) -> usize {
        self.values.len()
    }

    /// Samples `f` at the `q` interior nodes.
    pub fn sample(q: usize, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: (1..=q).map(|i| f(node(i, q))).collect(),
        }
    }
}

/// `ξ_q = q/(Q+1)`.
pub fn node(q: usize, q_nodes: usize) -> f64 {
    q as f64 / (q_nodes + 1) as f64
}

/// `λ_k = (kπ)²`.
pub fn eigenvalue(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidModeIndex(0));
    }
    Ok(eigenvalue_unchecked(k))
}

#[inline]
pub(crate) fn eigenvalue_unchecked(k: usize) -> f64 {
    let kp = k as f64 * PI;
    kp * kp
}

/// `λ_1, …, λ_N`.
pub fn eigenvalues(n_modes: usize) -> Vec<f64> {
    (1..=n_modes).map(eigenvalue_unchecked).collect()
}

/// `e_k(ξ) = √2 sin(kπξ)`.
pub fn basis_eval(k: usize, xi: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidModeIndex(0));
    }
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::OutOfDomain(xi));
    }
    Ok(SQRT_2 * (k as f64 * PI * xi).sin())
}

/// Evaluates `Σ c_k e_k` at the `q` interior nodes.
pub fn synthesize(c: &SpectralCoeffs, q: usize) -> Result<PhysicalGrid> {
    let n = c.n_modes();
    if q < n {
        return Err(Error::InsufficientQuadrature {
            quadrature: q,
            floor: n,
            what: "synthesis would lose modes",
        });
    }
    let h = 1.0 / (q + 1) as f64;
    let values = (1..=q)
        .map(|i| {
            let xi = i as f64 * h;
            c.as_slice()
                .iter()
                .enumerate()
                .map(|(k, ck)| ck * SQRT_2 * ((k + 1) as f64 * PI * xi).sin())
                .sum()
        })
        .collect();
    Ok(PhysicalGrid { values })
}

/// Discrete Galerkin projection onto the first `n` modes.
pub fn analyze(v: &PhysicalGrid, n: usize) -> Result<SpectralCoeffs> {
    analyze_weighted(v, n, 1.0 / (v.q_nodes() + 1) as f64)
}

/// [`analyze`] with an explicit quadrature weight. Only the self-test uses a
/// weight other than `1/(Q+1)`, to show that the Parseval suite notices.
pub(crate) fn analyze_weighted(v: &PhysicalGrid, n: usize, weight: f64) -> Result<SpectralCoeffs> {
    let q = v.q_nodes();
    if n > q {
        return Err(Error::InsufficientQuadrature {
            quadrature: q,
            floor: n,
            what: "analysis to more modes than nodes",
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter("analysis to zero modes".into()));
    }
    let h = 1.0 / (q + 1) as f64;
    let coeffs = (1..=n)
        .map(|k| {
            let s: f64 = v
                .values
                .iter()
                .enumerate()
                .map(|(i, val)| val * SQRT_2 * (k as f64 * PI * (i + 1) as f64 * h).sin())
                .sum();
            weight * s
        })
        .collect::<Vec<_>>();
    SpectralCoeffs::new(coeffs)
}

/// `(Σ_k λ_k^β c_k²)^{1/2}`; `β = 0` is the L² norm.
pub fn sobolev_norm(c: &SpectralCoeffs, beta: f64) -> f64 {
    sobolev_norm_sq(c.as_slice(), beta).sqrt()
}

pub(crate) fn sobolev_norm_sq(c: &[f64], beta: f64) -> f64 {
    if beta == 0.0 {
        return c.iter().map(|x| x * x).sum();
    }
    c.iter()
        .enumerate()
        .map(|(k, x)| eigenvalue_unchecked(k + 1).powf(beta) * x * x)
        .sum()
}

/// `S_{N,τ} c = (I - τΔ_N)^{-1} c`, componentwise `c_k / (1 + τλ_k)`.
pub fn resolvent_apply(c: &SpectralCoeffs, tau: f64) -> SpectralCoeffs {
    let mut out = c.0.clone();
    resolvent_in_place(&mut out, tau);
    SpectralCoeffs(out)
}

pub(crate) fn resolvent_in_place(c: &mut [f64], tau: f64) {
    for (k, ck) in c.iter_mut().enumerate() {
        *ck /= 1.0 + tau * eigenvalue_unchecked(k + 1);
    }
}

/// Number of terms in a geometric decay sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Steps(u64),
    Infinite,
}

/// `Σ_{i=0}^{j-1} (1+τλ)^{-2(j-i)}` in closed form.
///
/// Equals `(1 - r^{2j}) / (τλ(2+τλ))` with `r = 1/(1+τλ)`; the infinite
/// horizon gives `1/(τλ(2+τλ))`.
pub fn geometric_decay_sum(lambda: f64, tau: f64, horizon: Horizon) -> f64 {
    let a = tau * lambda;
    let limit = 1.0 / (a * (2.0 + a));
    match horizon {
        Horizon::Infinite => limit,
        Horizon::Steps(j) => {
            // 1 - r^{2j} without cancellation for small τλ
            let tail = -(-2.0 * j as f64 * a.ln_1p()).exp_m1();
            tail * limit
        }
    }
}

/// Precomputed sine and cosine tables on the interior grid, shared by the
/// hot paths of the scheme.
///
/// Products of basis functions are handled through
/// `e_m e_n = cos((m-n)πξ) - cos((m+n)πξ)`, so weighted Gram matrices cost
/// `O(Q·(M+N))` instead of `O(Q·M·N)`.
#[derive(Debug, Clone)]
pub struct SineQuadrature {
    modes: usize,
    q: usize,
    weight: f64,
    /// `sines[i * modes + k] = e_{k+1}(ξ_{i+1})`
    sines: Vec<f64>,
    /// `cosines[k * q + i] = cos(kπ ξ_{i+1})`, `k = 0..=2·modes`
    cosines: Vec<f64>,
}

impl SineQuadrature {
    pub fn new(modes: usize, q: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidParameter("zero modes".into()));
        }
        if q < modes {
            return Err(Error::InsufficientQuadrature {
                quadrature: q,
                floor: modes,
                what: "fewer nodes than modes",
            });
        }
        let h = 1.0 / (q + 1) as f64;
        let mut sines = Vec::with_capacity(q * modes);
        for i in 1..=q {
            let xi = i as f64 * h;
            sines.extend((1..=modes).map(|k| SQRT_2 * (k as f64 * PI * xi).sin()));
        }
        let mut cosines = Vec::with_capacity((2 * modes + 1) * q);
        for k in 0..=2 * modes {
            cosines.extend((1..=q).map(|i| (k as f64 * PI * i as f64 * h).cos()));
        }
        Ok(Self {
            modes,
            q,
            weight: h,
            sines,
            cosines,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn nodes(&self) -> usize {
        self.q
    }

    /// Grid values of `Σ c_k e_k`; `coeffs.len() <= modes`, `out.len() == Q`.
    pub fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert!(coeffs.len() <= self.modes && out.len() == self.q);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.sines[i * self.modes..i * self.modes + coeffs.len()];
            *o = row.iter().zip(coeffs).map(|(s, c)| s * c).sum();
        }
    }

    /// First `out.len()` Galerkin coefficients of grid values.
    pub fn analyze_into(&self, values: &[f64], out: &mut [f64]) {
        debug_assert!(out.len() <= self.modes && values.len() == self.q);
        out.iter_mut().for_each(|o| *o = 0.0);
        let n = out.len();
        for (i, v) in values.iter().enumerate() {
            let row = &self.sines[i * self.modes..i * self.modes + n];
            for (o, s) in out.iter_mut().zip(row) {
                *o += v * s;
            }
        }
        out.iter_mut().for_each(|o| *o *= self.weight);
    }

    /// `M[n][m] = (1/(Q+1)) Σ_q w_q e_{n+1}(ξ_q) e_{m+1}(ξ_q)` for a
    /// `rows × cols` block, `rows, cols <= modes`.
    pub fn weighted_gram(&self, weights: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
        debug_assert!(rows <= self.modes && cols <= self.modes);
        let kmax = rows + cols;
        let moments: Vec<f64> = (0..=kmax)
            .map(|k| {
                let row = &self.cosines[k * self.q..(k + 1) * self.q];
                self.weight * row.iter().zip(weights).map(|(c, w)| c * w).sum::<f64>()
            })
            .collect();
        DMatrix::from_fn(rows, cols, |n, m| {
            let (n, m) = (n + 1, m + 1);
            moments[n.abs_diff(m)] - moments[n + m]
        })
    }
}
