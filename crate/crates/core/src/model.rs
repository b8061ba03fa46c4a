//! Drift and diffusion coefficient models.
//!
//! A [`CoefficientModel`] bundles the scalar drift `f`, its derivative `f'`
//! and the diffusion `g` with the structural constants the scheme relies on:
//!
//! ```text
//! (f(ξ) - f(η))(ξ - η) <= K1 (ξ - η)²        one-sided Lipschitz
//! f(ξ) ξ               <= K2 ξ² + K3          coercivity
//! |f(ξ)|               <= K4 |ξ|^q + K5       polynomial growth
//! 0 < |g(ξ)|           <= K6                  bounded, non-degenerate noise
//! ```
//!
//! [`Nemytskii`] evaluates the Galerkin projections `P_N F(x)`, their
//! Jacobian and the projected multiplicative noise operator on a cached
//! interior-node quadrature.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{eigenvalue_unchecked, SineQuadrature, SpectralCoeffs};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    /// growth exponent, `q >= 1`
    pub q: f64,
}

#[derive(Clone)]
pub struct CoefficientModel {
    name: String,
    drift: ScalarFn,
    drift_deriv: ScalarFn,
    diffusion: ScalarFn,
    constants: ModelConstants,
}

impl fmt::Debug for CoefficientModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientModel")
            .field("name", &self.name)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl CoefficientModel {
    pub fn new(
        name: impl Into<String>,
        drift: ScalarFn,
        drift_deriv: ScalarFn,
        diffusion: ScalarFn,
        constants: ModelConstants,
    ) -> Self {
        Self {
            name: name.into(),
            drift,
            drift_deriv,
            diffusion,
            constants,
        }
    }

    /// Allen–Cahn drift `f(ξ) = ε⁻²(ξ - ξ³)` with the given diffusion.
    ///
    /// `K1 = ε⁻²`, `K4 = 2ε⁻²`, `K5 = ε⁻²`, `q = 3`; the coercivity pair is
    /// fixed at `K2 = -1`, `K3 = (ε⁻² + 1)² / (4ε⁻²)`, the maximum over `s = ξ²`
    /// of `(ε⁻² + 1)s - ε⁻² s²`.
    pub fn allen_cahn(epsilon: f64, diffusion: ScalarFn, k6: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "interface thickness must be positive, got {epsilon}"
            )));
        }
        let a = epsilon.powi(-2);
        let constants = ModelConstants {
            k1: a,
            k2: -1.0,
            k3: (a + 1.0).powi(2) / (4.0 * a),
            k4: 2.0 * a,
            k5: a,
            k6,
            q: 3.0,
        };
        Ok(Self::new(
            format!("allen_cahn(eps={epsilon})"),
            Arc::new(move |x: f64| a * (x - x * x * x)),
            Arc::new(move |x: f64| a * (1.0 - 3.0 * x * x)),
            diffusion,
            constants,
        ))
    }

    /// Zero drift: the scheme reduces to the implicit stochastic heat equation.
    pub fn linear_heat(diffusion: ScalarFn, k6: f64) -> Self {
        let constants = ModelConstants {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
            k5: 0.0,
            k6,
            q: 1.0,
        };
        Self::new(
            "heat",
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            diffusion,
            constants,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    #[inline]
    pub fn drift_deriv(&self, x: f64) -> f64 {
        (self.drift_deriv)(x)
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    pub fn constants(&self) -> &ModelConstants {
        &self.constants
    }

    /// Smallest admissible quadrature size for the drift projection on `n` modes.
    pub fn drift_quadrature_floor(&self, n: usize) -> usize {
        (self.constants.q.ceil().max(1.0) as usize + 1) * n
    }
}

/// `g(ξ) = 2 + sin(ξ²)`, with `1 <= g <= 3`.
pub fn paper_diffusion() -> ScalarFn {
    Arc::new(|x: f64| 2.0 + (x * x).sin())
}

pub fn constant_diffusion(value: f64) -> ScalarFn {
    Arc::new(move |_| value)
}

/// Diffusion choices exposed through configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DiffusionSpec {
    /// `2 + sin(ξ²)`
    Paper,
    Constant(f64),
    Zero,
}

impl DiffusionSpec {
    pub fn build(&self) -> (ScalarFn, f64) {
        match *self {
            DiffusionSpec::Paper => (paper_diffusion(), 3.0),
            DiffusionSpec::Constant(v) => (constant_diffusion(v), v.abs()),
            DiffusionSpec::Zero => (constant_diffusion(0.0), 0.0),
        }
    }
}

impl fmt::Display for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionSpec::Paper => write!(f, "paper"),
            DiffusionSpec::Constant(v) => write!(f, "constant:{v:?}"),
            DiffusionSpec::Zero => write!(f, "zero"),
        }
    }
}

impl std::str::FromStr for DiffusionSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(DiffusionSpec::Paper),
            "zero" => Ok(DiffusionSpec::Zero),
            _ => match s.strip_prefix("constant:") {
                Some(v) => v
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(DiffusionSpec::Constant)
                    .ok_or_else(|| format!("bad constant diffusion value '{v}'")),
                None => Err(format!(
                    "unknown diffusion '{s}' (expected paper, zero or constant:<value>)"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DriftSpec {
    AllenCahn { epsilon: f64 },
    /// `f ≡ 0`
    Zero,
}

/// Serializable description of a [`CoefficientModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
}

impl ModelSpec {
    pub fn allen_cahn(epsilon: f64, diffusion: DiffusionSpec) -> Self {
        Self {
            drift: DriftSpec::AllenCahn { epsilon },
            diffusion,
        }
    }

    pub fn heat(diffusion: DiffusionSpec) -> Self {
        Self {
            drift: DriftSpec::Zero,
            diffusion,
        }
    }

    pub fn build(&self) -> Result<CoefficientModel> {
        let (g, k6) = self.diffusion.build();
        match self.drift {
            DriftSpec::AllenCahn { epsilon } => CoefficientModel::allen_cahn(epsilon, g, k6),
            DriftSpec::Zero => Ok(CoefficientModel::linear_heat(g, k6)),
        }
    }
}

/// Outcome of the step-size condition check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepCheck {
    pub ok: bool,
    /// `(K1 - λ1)τ < 1`
    pub lipschitz_ok: bool,
    /// `K2 < λ1`
    pub coercivity_ok: bool,
    /// `C0 = 1 - (K1 - λ1)τ`, the strict monotonicity constant of the
    /// implicit operator.
    pub c0: f64,
}

pub fn validate_step_constraint(m: &ModelConstants, tau: f64) -> StepCheck {
    let lambda1 = PI * PI;
    let lipschitz_ok = (m.k1 - lambda1) * tau < 1.0;
    let coercivity_ok = m.k2 < lambda1;
    StepCheck {
        ok: lipschitz_ok && coercivity_ok,
        lipschitz_ok,
        coercivity_ok,
        c0: 1.0 - (m.k1 - lambda1) * tau,
    }
}

/// Violations found by [`validate_constants`]; empty means every sampled
/// inequality held.
#[derive(Debug, Clone, Default)]
pub struct ConstantsReport {
    pub violations: Vec<String>,
}

impl ConstantsReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the structural inequalities on `samples` equispaced points of
/// `[-radius, radius]` (all pairs for the one-sided Lipschitz bound), and
/// `f'` against central differences with `h = 1e-5`.
pub fn validate_constants(model: &CoefficientModel, radius: f64, samples: usize) -> ConstantsReport {
    let c = model.constants;
    let grid: Vec<f64> = (0..samples)
        .map(|i| -radius + 2.0 * radius * i as f64 / (samples.max(2) - 1) as f64)
        .collect();
    let mut violations = Vec::new();
    let mut note = |kind: &str, msg: String| {
        if violations.len() < 32 {
            violations.push(format!("{kind}: {msg}"));
        }
    };
    let slack = |v: f64| 1e-9 * (1.0 + v.abs());

    for &x in &grid {
        let fx = model.drift(x);
        for &y in &grid {
            let lhs = (fx - model.drift(y)) * (x - y);
            let rhs = c.k1 * (x - y) * (x - y);
            if lhs > rhs + slack(rhs) {
                note("one-sided Lipschitz", format!("fails at ({x}, {y})"));
            }
        }
        let coe = c.k2 * x * x + c.k3;
        if fx * x > coe + slack(coe) {
            note("coercivity", format!("fails at {x}"));
        }
        let gro = c.k4 * x.abs().powf(c.q) + c.k5;
        if fx.abs() > gro + slack(gro) {
            note("growth", format!("fails at {x}"));
        }
        let g = model.diffusion(x).abs();
        if !(g > 0.0 && g <= c.k6 + slack(c.k6)) {
            note("diffusion bound", format!("|g({x})| = {g} outside (0, {}]", c.k6));
        }
        let h = 1e-5;
        let fd = (model.drift(x + h) - model.drift(x - h)) / (2.0 * h);
        let d = model.drift_deriv(x);
        if (d - fd).abs() > 1e-6 * (1.0 + d.abs()) {
            note("drift derivative", format!("f'({x}) = {d}, central difference {fd}"));
        }
    }
    ConstantsReport { violations }
}

/// Outcome of the non-degeneracy check on one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NondegeneracyCheck {
    pub ok: bool,
    pub min_abs_diffusion: f64,
}

/// Galerkin projections of the drift and diffusion Nemytskii operators on a
/// cached quadrature.
#[derive(Debug, Clone)]
pub struct Nemytskii {
    quad: SineQuadrature,
    n: usize,
    noise_modes: usize,
}

impl Nemytskii {
    /// `n` state modes, `noise_modes` noise modes, `q` nodes. The node count
    /// must reach the drift dealiasing floor of `model` and `n + noise_modes`.
    pub fn new(model: &CoefficientModel, n: usize, noise_modes: usize, q: usize) -> Result<Self> {
        check_drift_floor(model, n, q)?;
        Self::for_noise(n, noise_modes, q)
    }

    /// Only the noise projection is meaningful on the result; the drift
    /// dealiasing floor is not checked.
    pub fn for_noise(n: usize, noise_modes: usize, q: usize) -> Result<Self> {
        check_noise_floor(n, noise_modes, q)?;
        Ok(Self {
            quad: SineQuadrature::new(n.max(noise_modes), q)?,
            n,
            noise_modes,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n
    }

    pub fn noise_modes(&self) -> usize {
        self.noise_modes
    }

    pub fn nodes(&self) -> usize {
        self.quad.nodes()
    }

    /// Grid values of the state.
    pub fn state_on_grid(&self, x: &[f64]) -> Vec<f64> {
        let mut grid = vec![0.0; self.quad.nodes()];
        self.quad.synthesize_into(x, &mut grid);
        grid
    }

    /// `P_N F(x)` into `out`, given the state's grid values.
    pub fn drift_from_grid(&self, model: &CoefficientModel, grid: &[f64], out: &mut [f64]) {
        let fx: Vec<f64> = grid.iter().map(|&v| model.drift(v)).collect();
        self.quad.analyze_into(&fx, out);
    }

    pub fn drift(&self, model: &CoefficientModel, x: &[f64]) -> Vec<f64> {
        let grid = self.state_on_grid(x);
        let mut out = vec![0.0; self.n];
        self.drift_from_grid(model, &grid, &mut out);
        out
    }

    /// `J_nm = (1/(Q+1)) Σ_q f'(x(ξ_q)) e_m(ξ_q) e_n(ξ_q)`.
    pub fn jacobian_from_grid(&self, model: &CoefficientModel, grid: &[f64]) -> DMatrix<f64> {
        let w: Vec<f64> = grid.iter().map(|&v| model.drift_deriv(v)).collect();
        self.quad.weighted_gram(&w, self.n, self.n)
    }

    /// `M_nm = (1/(Q+1)) Σ_q g(x(ξ_q)) e_m(ξ_q) e_n(ξ_q)`, `N × N_w`.
    pub fn noise_matrix_from_grid(&self, model: &CoefficientModel, grid: &[f64]) -> DMatrix<f64> {
        let w: Vec<f64> = grid.iter().map(|&v| model.diffusion(v)).collect();
        self.quad.weighted_gram(&w, self.n, self.noise_modes)
    }

    /// `M(x) δβ` without forming `M`: synthesize `δβ`, multiply by
    /// `g(x(ξ_q))`, project back.
    pub fn noise_apply_from_grid(
        &self,
        model: &CoefficientModel,
        grid: &[f64],
        dbeta: &[f64],
        out: &mut [f64],
    ) {
        let mut field = vec![0.0; self.quad.nodes()];
        self.quad.synthesize_into(dbeta, &mut field);
        for (f, &v) in field.iter_mut().zip(grid) {
            *f *= model.diffusion(v);
        }
        self.quad.analyze_into(&field, out);
    }
}

fn check_drift_floor(model: &CoefficientModel, n: usize, q: usize) -> Result<()> {
    let floor = model.drift_quadrature_floor(n);
    if q < floor {
        return Err(Error::InsufficientQuadrature {
            quadrature: q,
            floor,
            what: "drift dealiasing needs (q+1)·N nodes",
        });
    }
    Ok(())
}

fn check_noise_floor(n: usize, noise_modes: usize, q: usize) -> Result<()> {
    if q < n + noise_modes {
        return Err(Error::InsufficientQuadrature {
            quadrature: q,
            floor: n + noise_modes,
            what: "noise projection needs N + N_w nodes",
        });
    }
    Ok(())
}

/// Default node count `max(4N, N + N_w + 1)`.
pub fn default_quadrature(n: usize, noise_modes: usize) -> usize {
    (4 * n).max(n + noise_modes + 1)
}

/// Coefficients of `P_N F(x)`.
pub fn nemytskii_drift(c: &SpectralCoeffs, model: &CoefficientModel, q: usize) -> Result<SpectralCoeffs> {
    let n = c.n_modes();
    check_drift_floor(model, n, q)?;
    let quad = SineQuadrature::new(n, q)?;
    let mut grid = vec![0.0; q];
    quad.synthesize_into(c.as_slice(), &mut grid);
    let fx: Vec<f64> = grid.iter().map(|&v| model.drift(v)).collect();
    let mut out = vec![0.0; n];
    quad.analyze_into(&fx, &mut out);
    SpectralCoeffs::new(out)
}

/// Jacobian of `x ↦ P_N F(x)` in the sine basis.
pub fn nemytskii_jacobian(c: &SpectralCoeffs, model: &CoefficientModel, q: usize) -> Result<DMatrix<f64>> {
    let n = c.n_modes();
    check_drift_floor(model, n, q)?;
    let quad = SineQuadrature::new(n, q)?;
    let mut grid = vec![0.0; q];
    quad.synthesize_into(c.as_slice(), &mut grid);
    let w: Vec<f64> = grid.iter().map(|&v| model.drift_deriv(v)).collect();
    Ok(quad.weighted_gram(&w, n, n))
}

/// `N × N_w` matrix of `P_N G(x)` acting on the first `N_w` noise modes.
pub fn noise_matrix(
    c: &SpectralCoeffs,
    model: &CoefficientModel,
    noise_modes: usize,
    q: usize,
) -> Result<DMatrix<f64>> {
    let n = c.n_modes();
    check_noise_floor(n, noise_modes, q)?;
    let quad = SineQuadrature::new(n.max(noise_modes), q)?;
    let mut grid = vec![0.0; q];
    quad.synthesize_into(c.as_slice(), &mut grid);
    let w: Vec<f64> = grid.iter().map(|&v| model.diffusion(v)).collect();
    Ok(quad.weighted_gram(&w, n, noise_modes))
}

/// `min_q |g(x(ξ_q))| > 0`, up to roundoff.
pub fn validate_nondegeneracy(c: &SpectralCoeffs, model: &CoefficientModel, q: usize) -> Result<NondegeneracyCheck> {
    let quad = SineQuadrature::new(c.n_modes(), q)?;
    let mut grid = vec![0.0; q];
    quad.synthesize_into(c.as_slice(), &mut grid);
    let g: Vec<f64> = grid.iter().map(|&v| model.diffusion(v).abs()).collect();
    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
    let max = g.iter().copied().fold(0.0, f64::max);
    // values at roundoff level count as zero
    Ok(NondegeneracyCheck {
        ok: min > 1e-12 * (1.0 + max),
        min_abs_diffusion: min,
    })
}

/// `λ_1 = π²`, the Poincaré constant on (0, 1).
pub fn lambda1() -> f64 {
    eigenvalue_unchecked(1)
}
