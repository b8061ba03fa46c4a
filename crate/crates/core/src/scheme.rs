//! The drift-implicit Euler spectral-Galerkin step.
//!
//! One step of the scheme solves
//!
//! ```text
//! F̂(X_{j+1}) = X_j + P_N G(X_j) δ_j W,     F̂(x) = (I + τΛ) x - τ P_N F(x)
//! ```
//!
//! with `Λ = diag(λ_1..λ_N)`. Under `(K1 - λ1)τ < 1` the operator `F̂` is
//! strictly monotone with constant `C0 = 1 - (K1 - λ1)τ`, so the root is
//! unique and Newton's method on `I + τΛ - τJ` is well posed.
//!
//! Alongside the chain the discrete stochastic convolution
//! `W_{j+1} = S_{N,τ}(W_j + P_N G(X_j) δ_j W)` is advanced with the same
//! increments; `Y = X - W` then solves a noise-free random PDE recursion.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{self, validate_step_constraint, CoefficientModel, Nemytskii, StepCheck};
use crate::noise::NoiseStream;
use crate::spectral::{eigenvalues, resolvent_in_place, SpectralCoeffs};

/// Everything that fixes one discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeParams {
    pub n_modes: usize,
    pub tau: f64,
    pub noise_modes: usize,
    pub quadrature: usize,
    /// absolute L² tolerance on the Newton residual
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl SchemeParams {
    /// `N` modes and step `τ` with default noise modes (`N_w = N`),
    /// quadrature `max(4N, N + N_w + 1)` and Newton settings `1e-10` / 50.
    pub fn new(n_modes: usize, tau: f64) -> Self {
        Self {
            n_modes,
            tau,
            noise_modes: n_modes,
            quadrature: model::default_quadrature(n_modes, n_modes),
            newton_tol: 1e-10,
            newton_max_iter: 50,
        }
    }

    /// Sets `N_w` and resets the quadrature to its default for the new pair.
    pub fn with_noise_modes(mut self, noise_modes: usize) -> Self {
        self.noise_modes = noise_modes;
        self.quadrature = model::default_quadrature(self.n_modes, noise_modes);
        self
    }

    /// Collects every violated constraint. On success returns the step check,
    /// whose `c0` is the monotonicity constant of the implicit operator.
    pub fn validate(&self, model: &CoefficientModel) -> Result<StepCheck> {
        let mut problems = Vec::new();
        if self.n_modes == 0 {
            problems.push("n_modes must be positive".to_string());
        }
        if self.noise_modes == 0 {
            problems.push("noise_modes must be positive".to_string());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            problems.push(format!("tau = {} must lie in (0, 1)", self.tau));
        }
        let check = validate_step_constraint(model.constants(), self.tau);
        if !check.lipschitz_ok {
            problems.push(format!(
                "(K1 - λ1)·tau = {:.6} must be < 1 (K1 = {}, tau = {})",
                1.0 - check.c0,
                model.constants().k1,
                self.tau
            ));
        }
        if !check.coercivity_ok {
            problems.push(format!(
                "K2 = {} must be < λ1 = π²",
                model.constants().k2
            ));
        }
        let drift_floor = model.drift_quadrature_floor(self.n_modes);
        let floor = drift_floor.max(self.n_modes + self.noise_modes);
        if self.quadrature < floor {
            problems.push(format!(
                "quadrature = {} is below the dealiasing floor {floor} (drift needs {drift_floor}, noise needs N + N_w = {})",
                self.quadrature,
                self.n_modes + self.noise_modes
            ));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol.is_finite()) {
            problems.push("newton_tol must be positive".to_string());
        }
        if self.newton_max_iter == 0 {
            problems.push("newton_max_iter must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(check)
        } else {
            Err(Error::InvalidParams(problems))
        }
    }
}

/// Chain `X_j`, stochastic convolution `W_j`, step index and noise position.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub x: SpectralCoeffs,
    pub w: SpectralCoeffs,
    pub step: u64,
    pub stream: NoiseStream,
}

impl PathState {
    /// `W_0 = 0`.
    pub fn new(x0: SpectralCoeffs, stream: NoiseStream) -> Self {
        let n = x0.n_modes();
        Self {
            x: x0,
            w: SpectralCoeffs::zeros(n),
            step: 0,
            stream,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub newton_iters: usize,
    pub final_residual: f64,
    pub c0: f64,
}

/// Result of one step: the new state and the noise increment both recursions
/// consumed.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: PathState,
    pub diagnostics: StepDiagnostics,
    pub noise: SpectralCoeffs,
}

/// Receives `(step, X_step, W_step)` along a trajectory, starting with the
/// initial state at step 0.
pub trait Observer {
    fn observe(&mut self, step: u64, x: &SpectralCoeffs, w: &SpectralCoeffs);
}

impl<F: FnMut(u64, &SpectralCoeffs, &SpectralCoeffs)> Observer for F {
    fn observe(&mut self, step: u64, x: &SpectralCoeffs, w: &SpectralCoeffs) {
        self(step, x, w)
    }
}

/// Per-path solver statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PathSummary {
    pub steps: u64,
    pub newton_iters_total: u64,
    pub newton_iters_max: usize,
    pub max_residual: f64,
}

/// The scheme for one `(params, model)` pair, with its quadrature tables
/// and eigenvalues precomputed.
#[derive(Debug, Clone)]
pub struct Dieg {
    params: SchemeParams,
    model: CoefficientModel,
    ops: Nemytskii,
    /// diagonal of `I + τΛ`
    implicit_diag: Vec<f64>,
    c0: f64,
}

impl Dieg {
    pub fn new(params: SchemeParams, model: CoefficientModel) -> Result<Self> {
        let check = params.validate(&model)?;
        let ops = Nemytskii::new(&model, params.n_modes, params.noise_modes, params.quadrature)?;
        let implicit_diag = eigenvalues(params.n_modes)
            .into_iter()
            .map(|l| 1.0 + params.tau * l)
            .collect();
        Ok(Self {
            params,
            model,
            ops,
            implicit_diag,
            c0: check.c0,
        })
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn model(&self) -> &CoefficientModel {
        &self.model
    }

    /// `C0 = 1 - (K1 - λ1)τ`.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    fn check_dim(&self, c: &SpectralCoeffs) -> Result<()> {
        if c.n_modes() != self.params.n_modes {
            return Err(Error::DimensionMismatch {
                expected: self.params.n_modes,
                actual: c.n_modes(),
            });
        }
        Ok(())
    }

    /// `P_N F(x)`.
    pub fn drift(&self, x: &SpectralCoeffs) -> SpectralCoeffs {
        SpectralCoeffs::from_vec(self.ops.drift(&self.model, x.as_slice()))
    }

    /// `F̂(x) = (I + τΛ)x - τ P_N F(x)`.
    pub fn implicit_operator(&self, x: &SpectralCoeffs) -> SpectralCoeffs {
        let grid = self.ops.state_on_grid(x.as_slice());
        let mut out = vec![0.0; self.params.n_modes];
        self.implicit_operator_from_grid(x.as_slice(), &grid, &mut out);
        SpectralCoeffs::from_vec(out)
    }

    fn implicit_operator_from_grid(&self, x: &[f64], grid: &[f64], out: &mut [f64]) {
        self.ops.drift_from_grid(&self.model, grid, out);
        let tau = self.params.tau;
        for ((o, xi), d) in out.iter_mut().zip(x).zip(&self.implicit_diag) {
            *o = d * xi - tau * *o;
        }
    }

    /// Jacobian `I + τΛ - τ J_F(x)` of the implicit operator.
    pub fn implicit_jacobian(&self, x: &SpectralCoeffs) -> DMatrix<f64> {
        let grid = self.ops.state_on_grid(x.as_slice());
        self.implicit_jacobian_from_grid(&grid)
    }

    fn implicit_jacobian_from_grid(&self, grid: &[f64]) -> DMatrix<f64> {
        let mut jac = self.ops.jacobian_from_grid(&self.model, grid);
        jac *= -self.params.tau;
        for (i, d) in self.implicit_diag.iter().enumerate() {
            jac[(i, i)] += d;
        }
        jac
    }

    /// Solves `F̂(x) = rhs` by Newton's method from `guess`.
    ///
    /// Full steps are taken while they reduce the residual norm; otherwise
    /// the step is halved (at most 30 times) before being accepted. At least
    /// one step is taken unless the guess solves the system exactly, so that
    /// states below the absolute tolerance still evolve.
    pub fn implicit_solve(
        &self,
        rhs: &SpectralCoeffs,
        guess: &SpectralCoeffs,
    ) -> Result<(SpectralCoeffs, StepDiagnostics)> {
        self.check_dim(rhs)?;
        self.check_dim(guess)?;
        let n = self.params.n_modes;
        let mut x = guess.as_slice().to_vec();
        let mut grid = self.ops.state_on_grid(&x);
        let mut res = vec![0.0; n];
        let residual = |x: &[f64], grid: &[f64], res: &mut [f64]| -> f64 {
            self.implicit_operator_from_grid(x, grid, res);
            for (r, b) in res.iter_mut().zip(rhs.as_slice()) {
                *r -= b;
            }
            res.iter().map(|r| r * r).sum::<f64>().sqrt()
        };
        let mut norm = residual(&x, &grid, &mut res);
        let mut iters = 0;
        let mut trial = vec![0.0; n];
        let mut trial_res = vec![0.0; n];
        while norm > self.params.newton_tol || (iters == 0 && norm > 0.0) {
            if iters == self.params.newton_max_iter || !norm.is_finite() {
                return Err(Error::NonConvergence {
                    iterations: iters,
                    residual: norm,
                });
            }
            let jac = self.implicit_jacobian_from_grid(&grid);
            let delta = jac
                .lu()
                .solve(&DVector::from_column_slice(&res))
                .filter(|d| d.iter().all(|v| v.is_finite()))
                .ok_or(Error::SingularLinearSolve)?;
            let mut damping = 1.0;
            let mut halvings = 0;
            loop {
                for ((t, xi), d) in trial.iter_mut().zip(&x).zip(delta.iter()) {
                    *t = xi - damping * d;
                }
                let trial_grid = self.ops.state_on_grid(&trial);
                let trial_norm = residual(&trial, &trial_grid, &mut trial_res);
                if trial_norm < norm || halvings == 30 {
                    std::mem::swap(&mut x, &mut trial);
                    std::mem::swap(&mut res, &mut trial_res);
                    grid = trial_grid;
                    norm = trial_norm;
                    break;
                }
                damping *= 0.5;
                halvings += 1;
            }
            iters += 1;
        }
        Ok((
            SpectralCoeffs::from_vec(x),
            StepDiagnostics {
                newton_iters: iters,
                final_residual: norm,
                c0: self.c0,
            },
        ))
    }

    /// `P_N G(x) δβ`.
    pub fn noise_increment(&self, x: &SpectralCoeffs, dbeta: &[f64]) -> Result<SpectralCoeffs> {
        self.check_dim(x)?;
        if dbeta.len() != self.params.noise_modes {
            return Err(Error::DimensionMismatch {
                expected: self.params.noise_modes,
                actual: dbeta.len(),
            });
        }
        let grid = self.ops.state_on_grid(x.as_slice());
        let mut out = vec![0.0; self.params.n_modes];
        self.ops.noise_apply_from_grid(&self.model, &grid, dbeta, &mut out);
        Ok(SpectralCoeffs::from_vec(out))
    }

    /// `W' = S_{N,τ}(W + noise)`.
    pub fn convolution_update(&self, w: &SpectralCoeffs, noise: &SpectralCoeffs) -> Result<SpectralCoeffs> {
        self.check_dim(w)?;
        self.check_dim(noise)?;
        let mut out = w.add(noise).into_vec();
        resolvent_in_place(&mut out, self.params.tau);
        Ok(SpectralCoeffs::from_vec(out))
    }

    /// One step of the coupled chain: draw `δβ`, form the noise increment at
    /// `X_j`, solve for `X_{j+1}` from the guess `X_j`, and advance `W` with
    /// the same increment.
    pub fn step(&self, state: &PathState) -> Result<StepOutcome> {
        let attach = |e: Error| Error::Step {
            step: state.step,
            source: Box::new(e),
        };
        let mut stream = state.stream;
        let dbeta = stream.gaussian_increments(self.params.noise_modes, self.params.tau);
        let noise = self.noise_increment(&state.x, &dbeta).map_err(attach)?;
        let rhs = state.x.add(&noise);
        let (x, diagnostics) = self.implicit_solve(&rhs, &state.x).map_err(attach)?;
        let w = self.convolution_update(&state.w, &noise).map_err(attach)?;
        Ok(StepOutcome {
            state: PathState {
                x,
                w,
                step: state.step + 1,
                stream,
            },
            diagnostics,
            noise,
        })
    }

    /// `‖(I + τΛ)Y_{j+1} - Y_j - τ P_N F(X_{j+1})‖` with `Y = X - W`, for each
    /// consecutive pair of a coupled trajectory.
    pub fn random_pde_residual(
        &self,
        traj_x: &[SpectralCoeffs],
        traj_w: &[SpectralCoeffs],
    ) -> Result<Vec<f64>> {
        if traj_x.len() != traj_w.len() {
            return Err(Error::DimensionMismatch {
                expected: traj_x.len(),
                actual: traj_w.len(),
            });
        }
        for c in traj_x.iter().chain(traj_w) {
            self.check_dim(c)?;
        }
        let tau = self.params.tau;
        Ok(traj_x
            .windows(2)
            .zip(traj_w.windows(2))
            .map(|(xs, ws)| {
                let y0 = xs[0].sub(&ws[0]);
                let y1 = xs[1].sub(&ws[1]);
                let f = self.drift(&xs[1]);
                y1.as_slice()
                    .iter()
                    .zip(&self.implicit_diag)
                    .zip(y0.as_slice())
                    .zip(f.as_slice())
                    .map(|(((y1, d), y0), f)| {
                        let r = d * y1 - y0 - tau * f;
                        r * r
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    /// Iterates [`Dieg::step`] `n_steps` times from `x0` with `W_0 = 0`.
    ///
    /// Observers see step 0 and then every new state. On failure the error
    /// carries the failing step; observers keep what they recorded.
    pub fn run_path(
        &self,
        x0: SpectralCoeffs,
        n_steps: u64,
        stream: NoiseStream,
        observers: &mut [&mut dyn Observer],
    ) -> Result<(PathState, PathSummary)> {
        self.check_dim(&x0)?;
        let mut state = PathState::new(x0, stream);
        for obs in observers.iter_mut() {
            obs.observe(0, &state.x, &state.w);
        }
        let mut summary = PathSummary::default();
        for _ in 0..n_steps {
            let outcome = self.step(&state)?;
            state = outcome.state;
            let d = outcome.diagnostics;
            summary.steps += 1;
            summary.newton_iters_total += d.newton_iters as u64;
            summary.newton_iters_max = summary.newton_iters_max.max(d.newton_iters);
            summary.max_residual = summary.max_residual.max(d.final_residual);
            for obs in observers.iter_mut() {
                obs.observe(state.step, &state.x, &state.w);
            }
        }
        Ok((state, summary))
    }
}
