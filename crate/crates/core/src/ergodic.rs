//! Monte Carlo ensembles and the ergodicity diagnostics built on them.
//!
//! [`run_ensemble`] runs independent paths of the scheme (in parallel, with a
//! path-ordered reduction) and records, at every step, the test functionals of
//! `X_j`, `‖X_j‖²` and `‖W_j‖_β^p`. From those per-path series it derives
//! running time averages with standard errors, ensemble moment series and
//! window statistics. The remaining functions turn these into verdicts:
//! [`agreement_check`] compares time averages across initial data,
//! [`lyapunov_series`] summarises the second-moment bound and
//! [`convolution_moment_report`] checks the convolution moments for growth in
//! time and in the number of modes.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{lambda1, ModelConstants, ModelSpec};
use crate::noise::NoiseStream;
use crate::scheme::{Dieg, PathSummary, SchemeParams};
use crate::spectral::{sobolev_norm_sq, SpectralCoeffs};

/// Test functionals of the L² norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FunctionalId {
    /// `e^{-‖x‖²}`
    ExpNegNormSq,
    /// `sin ‖x‖²`
    SinNormSq,
    /// `‖x‖²`
    NormSq,
}

impl FunctionalId {
    pub const ALL: [FunctionalId; 3] = [
        FunctionalId::ExpNegNormSq,
        FunctionalId::SinNormSq,
        FunctionalId::NormSq,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            FunctionalId::ExpNegNormSq => "exp_neg_norm_sq",
            FunctionalId::SinNormSq => "sin_norm_sq",
            FunctionalId::NormSq => "norm_sq",
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, FunctionalId::NormSq)
    }

    pub fn of_norm_sq(&self, norm_sq: f64) -> f64 {
        match self {
            FunctionalId::ExpNegNormSq => (-norm_sq).exp(),
            FunctionalId::SinNormSq => norm_sq.sin(),
            FunctionalId::NormSq => norm_sq,
        }
    }
}

impl fmt::Display for FunctionalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FunctionalId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        FunctionalId::ALL
            .into_iter()
            .find(|f| f.tag() == s)
            .ok_or_else(|| format!("unknown functional '{s}'"))
    }
}

pub fn functional_eval(id: FunctionalId, c: &SpectralCoeffs) -> f64 {
    id.of_norm_sq(c.norm_sq())
}

/// The three initial data of the Allen–Cahn experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum InitialDatum {
    /// `sin πξ`
    Sine,
    /// `Σ_{k=1}^{10} sin kπξ`
    MixPlus,
    /// `-Σ_{k=1}^{10} sin kπξ`
    MixMinus,
}

impl InitialDatum {
    pub const ALL: [InitialDatum; 3] = [InitialDatum::Sine, InitialDatum::MixPlus, InitialDatum::MixMinus];

    pub fn tag(&self) -> &'static str {
        match self {
            InitialDatum::Sine => "sine",
            InitialDatum::MixPlus => "mix_plus",
            InitialDatum::MixMinus => "mix_minus",
        }
    }

    pub fn index(&self) -> u64 {
        match self {
            InitialDatum::Sine => 0,
            InitialDatum::MixPlus => 1,
            InitialDatum::MixMinus => 2,
        }
    }
}

impl fmt::Display for InitialDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for InitialDatum {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        InitialDatum::ALL
            .into_iter()
            .find(|d| d.tag() == s)
            .ok_or_else(|| format!("unknown initial datum '{s}'"))
    }
}

/// Sine coefficients of an initial datum on `n` modes. `sin kπξ` has
/// coefficient `1/√2` on `e_k`; the mixed data are truncated when `n < 10`.
pub fn initial_datum(id: InitialDatum, n: usize) -> SpectralCoeffs {
    let mut c = vec![0.0; n];
    match id {
        InitialDatum::Sine => {
            if let Some(c0) = c.first_mut() {
                *c0 = FRAC_1_SQRT_2;
            }
        }
        InitialDatum::MixPlus | InitialDatum::MixMinus => {
            if n < 10 {
                log::warn!("initial datum {id} truncated to {n} of its 10 modes");
            }
            let sign = if id == InitialDatum::MixPlus { 1.0 } else { -1.0 };
            c.iter_mut().take(10).for_each(|ck| *ck = sign * FRAC_1_SQRT_2);
        }
    }
    SpectralCoeffs::from_vec(c)
}

/// One Monte Carlo experiment: many paths from a single initial datum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub params: SchemeParams,
    pub model: ModelSpec,
    pub initial: InitialDatum,
    pub n_paths: usize,
    pub n_steps: u64,
    pub master_seed: u64,
    pub functionals: Vec<FunctionalId>,
    /// Sobolev exponents for `‖W_j‖_β^p`, each in `[0, 1/2)`.
    pub moment_betas: Vec<f64>,
    /// even moment order `p >= 2`
    pub moment_p: u32,
    /// time averages start after this many steps
    pub burn_in: u64,
}

impl EnsembleConfig {
    /// Defaults: all three functionals, `β ∈ {0, 0.25, 0.4}`, `p = 2`, no burn-in.
    pub fn new(
        params: SchemeParams,
        model: ModelSpec,
        initial: InitialDatum,
        n_paths: usize,
        n_steps: u64,
        master_seed: u64,
    ) -> Self {
        Self {
            params,
            model,
            initial,
            n_paths,
            n_steps,
            master_seed,
            functionals: FunctionalId::ALL.to_vec(),
            moment_betas: vec![0.0, 0.25, 0.4],
            moment_p: 2,
            burn_in: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_paths == 0 {
            problems.push("n_paths must be positive".to_string());
        }
        if self.n_steps == 0 {
            problems.push("n_steps must be positive".to_string());
        }
        if self.burn_in >= self.n_steps {
            problems.push(format!(
                "burn_in = {} must be below n_steps = {}",
                self.burn_in, self.n_steps
            ));
        }
        for &b in &self.moment_betas {
            if !(0.0..0.5).contains(&b) {
                problems.push(format!("moment beta {b} outside [0, 1/2)"));
            }
        }
        if self.moment_p < 2 || !self.moment_p.is_multiple_of(2) {
            problems.push(format!("moment order p = {} must be even and >= 2", self.moment_p));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(problems))
        }
    }

    /// Identifies everything but the initial datum and the seed; reports with
    /// equal keys are comparable.
    pub fn comparison_key(&self) -> String {
        format!(
            "{:?}|{:?}|paths={}|steps={}|{:?}|burn_in={}",
            self.params, self.model, self.n_paths, self.n_steps, self.functionals, self.burn_in
        )
    }
}

/// Per-step ensemble means with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub steps: Vec<u64>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
}

impl MomentSeries {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Largest mean over steps `first..=last`, with its standard error and step.
    pub fn max_in(&self, first: u64, last: u64) -> Option<(f64, f64, u64)> {
        self.steps
            .iter()
            .zip(&self.values)
            .zip(&self.stderrs)
            .filter(|((s, _), _)| (first..=last).contains(*s))
            .fold(None, |acc: Option<(f64, f64, u64)>, ((&s, &v), &e)| match acc {
                Some((best, _, _)) if best >= v => acc,
                _ => Some((v, e, s)),
            })
    }
}

/// Mean of a per-path quantity with its standard error across paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowStat {
    pub mean: f64,
    pub stderr: f64,
}

/// Two-pass mean and standard error `sd / √n` of independent samples.
pub fn mean_stderr(samples: &[f64]) -> WindowStat {
    let n = samples.len();
    if n == 0 {
        return WindowStat { mean: f64::NAN, stderr: f64::NAN };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return WindowStat { mean, stderr: 0.0 };
    }
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    WindowStat {
        mean,
        stderr: (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt(),
    }
}

/// A scalar recorded at steps `0..=n_steps` on every path, one row per path
/// in path-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n_paths: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Panel {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_paths = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged panel");
        Self {
            n_paths,
            n_cols,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Last recorded step.
    pub fn last_step(&self) -> u64 {
        self.n_cols as u64 - 1
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.data[path * self.n_cols..(path + 1) * self.n_cols]
    }

    fn column(&self, step: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.data[p * self.n_cols + step]).collect()
    }

    /// Ensemble mean and standard error at every step.
    pub fn step_stats(&self) -> MomentSeries {
        let (mut values, mut stderrs) = (Vec::with_capacity(self.n_cols), Vec::with_capacity(self.n_cols));
        for j in 0..self.n_cols {
            let s = mean_stderr(&self.column(j));
            values.push(s.mean);
            stderrs.push(s.stderr);
        }
        MomentSeries {
            steps: (0..self.n_cols as u64).collect(),
            values,
            stderrs,
        }
    }

    /// Per-path averages over steps `first..=last`, then their mean and
    /// standard error across paths.
    pub fn window_mean(&self, first: u64, last: u64) -> WindowStat {
        assert!(first <= last && last < self.n_cols as u64, "window out of range");
        let (a, b) = (first as usize, last as usize);
        let per_path: Vec<f64> = (0..self.n_paths)
            .map(|p| self.row(p)[a..=b].iter().sum::<f64>() / (b - a + 1) as f64)
            .collect();
        mean_stderr(&per_path)
    }

    /// Running time averages `(1/(n-b)) Σ_{i=b+1}^{n}` over steps
    /// `n = b+1..=last`, pooled over paths: returns `(steps, means, stderrs)`
    /// where the standard error is that of the per-path running averages.
    pub fn running_average(&self, burn_in: u64) -> (Vec<u64>, Vec<f64>, Vec<f64>) {
        let b = burn_in as usize;
        let len = self.n_cols.saturating_sub(b + 1);
        let mut sums = vec![0.0; self.n_paths];
        let (mut steps, mut means, mut errs) = (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
        let mut avgs = vec![0.0; self.n_paths];
        for n in b + 1..self.n_cols {
            let count = (n - b) as f64;
            for (p, (s, a)) in sums.iter_mut().zip(avgs.iter_mut()).enumerate() {
                *s += self.data[p * self.n_cols + n];
                *a = *s / count;
            }
            let st = mean_stderr(&avgs);
            steps.push(n as u64);
            means.push(st.mean);
            errs.push(st.stderr);
        }
        (steps, means, errs)
    }
}

/// Running time average of one functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalSeries {
    pub functional: FunctionalId,
    pub steps: Vec<u64>,
    pub running_avg: Vec<f64>,
    pub stderr: Vec<f64>,
    pub final_value: f64,
    pub final_stderr: f64,
}

/// Time averages of every functional for one initial datum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicReport {
    pub initial: InitialDatum,
    pub config_key: String,
    pub n_paths: usize,
    pub n_steps: u64,
    pub burn_in: u64,
    pub series: Vec<FunctionalSeries>,
}

impl ErgodicReport {
    pub fn series_for(&self, f: FunctionalId) -> Option<&FunctionalSeries> {
        self.series.iter().find(|s| s.functional == f)
    }
}

/// Solver statistics pooled over all paths.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SolverStats {
    pub newton_iters_total: u64,
    pub newton_iters_max: usize,
    pub max_residual: f64,
}

/// Everything [`run_ensemble`] measures.
#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub config: EnsembleConfig,
    pub report: ErgodicReport,
    /// `E‖X_j‖²`
    pub x_moments: MomentSeries,
    /// `(β, E‖W_j‖_β^p)` in the order of `config.moment_betas`
    pub w_moments: Vec<(f64, MomentSeries)>,
    pub x_panel: Panel,
    pub w_panels: Vec<Panel>,
    pub functional_panels: Vec<Panel>,
    pub solver: SolverStats,
}

struct PathRecord {
    functionals: Vec<Vec<f64>>,
    x_norm_sq: Vec<f64>,
    w_moments: Vec<Vec<f64>>,
    summary: PathSummary,
}

fn run_one_path(dieg: &Dieg, cfg: &EnsembleConfig, x0: &SpectralCoeffs, path: usize) -> Result<PathRecord> {
    let cols = cfg.n_steps as usize + 1;
    let mut functionals = vec![Vec::with_capacity(cols); cfg.functionals.len()];
    let mut x_norm_sq = Vec::with_capacity(cols);
    let mut w_moments = vec![Vec::with_capacity(cols); cfg.moment_betas.len()];
    let half_p = cfg.moment_p / 2;
    let mut record = |_: u64, x: &SpectralCoeffs, w: &SpectralCoeffs| {
        let n2 = x.norm_sq();
        x_norm_sq.push(n2);
        for (f, out) in cfg.functionals.iter().zip(functionals.iter_mut()) {
            out.push(f.of_norm_sq(n2));
        }
        for (&beta, out) in cfg.moment_betas.iter().zip(w_moments.iter_mut()) {
            out.push(sobolev_norm_sq(w.as_slice(), beta).powi(half_p as i32));
        }
    };
    let stream = NoiseStream::new(cfg.master_seed, path as u64);
    let (_, summary) = dieg.run_path(x0.clone(), cfg.n_steps, stream, &mut [&mut record])?;
    Ok(PathRecord {
        functionals,
        x_norm_sq,
        w_moments,
        summary,
    })
}

/// Runs `n_paths` independent paths; path `k` draws its noise from stream
/// `(master_seed, k)`. Results do not depend on scheduling: paths are
/// reduced in index order after all of them finish.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleOutput> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let dieg = Dieg::new(cfg.params, model)?;
    let x0 = initial_datum(cfg.initial, cfg.params.n_modes);

    let results: Vec<Result<PathRecord>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| run_one_path(&dieg, cfg, &x0, p))
        .collect();

    let mut records = Vec::with_capacity(cfg.n_paths);
    let mut failures = Vec::new();
    for (p, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((p, e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Ensemble(failures));
    }

    let mut solver = SolverStats::default();
    for r in &records {
        solver.newton_iters_total += r.summary.newton_iters_total;
        solver.newton_iters_max = solver.newton_iters_max.max(r.summary.newton_iters_max);
        solver.max_residual = solver.max_residual.max(r.summary.max_residual);
    }

    let functional_panels: Vec<Panel> = (0..cfg.functionals.len())
        .map(|i| Panel::from_rows(records.iter().map(|r| r.functionals[i].clone()).collect()))
        .collect();
    let w_panels: Vec<Panel> = (0..cfg.moment_betas.len())
        .map(|i| Panel::from_rows(records.iter().map(|r| r.w_moments[i].clone()).collect()))
        .collect();
    let x_panel = Panel::from_rows(records.into_iter().map(|r| r.x_norm_sq).collect());

    let series = cfg
        .functionals
        .iter()
        .zip(&functional_panels)
        .map(|(&functional, panel)| {
            let (steps, running_avg, stderr) = panel.running_average(cfg.burn_in);
            FunctionalSeries {
                functional,
                final_value: *running_avg.last().expect("n_steps > burn_in"),
                final_stderr: *stderr.last().expect("n_steps > burn_in"),
                steps,
                running_avg,
                stderr,
            }
        })
        .collect();

    Ok(EnsembleOutput {
        report: ErgodicReport {
            initial: cfg.initial,
            config_key: cfg.comparison_key(),
            n_paths: cfg.n_paths,
            n_steps: cfg.n_steps,
            burn_in: cfg.burn_in,
            series,
        },
        x_moments: x_panel.step_stats(),
        w_moments: cfg
            .moment_betas
            .iter()
            .zip(&w_panels)
            .map(|(&b, p)| (b, p.step_stats()))
            .collect(),
        x_panel,
        w_panels,
        functional_panels,
        solver,
        config: cfg.clone(),
    })
}

/// Tolerances of [`agreement_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementTolerance {
    /// absolute floor for the bounded functionals
    pub abs_bounded: f64,
    /// relative floor for `‖x‖²`, against the mean of the compared pair
    pub rel_norm_sq: f64,
    /// multiple of the pooled standard error
    pub stderr_mult: f64,
}

impl Default for AgreementTolerance {
    fn default() -> Self {
        Self {
            abs_bounded: 0.01,
            rel_norm_sq: 0.02,
            stderr_mult: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalAgreement {
    pub functional: FunctionalId,
    pub initials: Vec<InitialDatum>,
    pub finals: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// `finals[i] - finals[j]`
    pub differences: Vec<Vec<f64>>,
    /// largest `|finals[i] - finals[j]|`
    pub max_diff: f64,
    /// `√(se_i² + se_j²)` of the pair with the largest difference
    pub pooled_stderr: f64,
    /// allowed difference for that pair
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub functionals: Vec<FunctionalAgreement>,
    /// fewer than two initial data: nothing to compare
    pub skipped: bool,
    pub pass: bool,
}

/// Compares final time averages across initial data: a pair passes when
/// `|Δ| <= max(k · √(se_i² + se_j²), floor)`; the verdict needs every pair of
/// every functional to pass.
pub fn agreement_check(reports: &[ErgodicReport], tol: &AgreementTolerance) -> Result<AgreementReport> {
    let Some(first) = reports.first() else {
        return Ok(AgreementReport { functionals: vec![], skipped: true, pass: true });
    };
    for r in &reports[1..] {
        if r.config_key != first.config_key {
            return Err(Error::MismatchedReports(format!(
                "{} and {} were produced with different settings",
                first.initial, r.initial
            )));
        }
    }
    let functionals: Vec<FunctionalId> = first.series.iter().map(|s| s.functional).collect();
    let mut out = Vec::with_capacity(functionals.len());
    for f in functionals {
        let series: Vec<&FunctionalSeries> = reports
            .iter()
            .map(|r| {
                r.series_for(f).ok_or_else(|| {
                    Error::MismatchedReports(format!("{} lacks functional {f}", r.initial))
                })
            })
            .collect::<Result<_>>()?;
        let finals: Vec<f64> = series.iter().map(|s| s.final_value).collect();
        let stderrs: Vec<f64> = series.iter().map(|s| s.final_stderr).collect();
        let k = finals.len();
        let mut differences = vec![vec![0.0; k]; k];
        let (mut max_diff, mut pooled, mut threshold, mut pass) = (0.0f64, 0.0, 0.0, true);
        for i in 0..k {
            for j in 0..k {
                differences[i][j] = finals[i] - finals[j];
                if j <= i {
                    continue;
                }
                let d = differences[i][j].abs();
                let se = stderrs[i].hypot(stderrs[j]);
                let floor = if f.is_bounded() {
                    tol.abs_bounded
                } else {
                    tol.rel_norm_sq * 0.5 * (finals[i] + finals[j]).abs()
                };
                let allowed = (tol.stderr_mult * se).max(floor);
                pass &= d <= allowed;
                if d >= max_diff {
                    max_diff = d;
                    pooled = se;
                    threshold = allowed;
                }
            }
        }
        out.push(FunctionalAgreement {
            functional: f,
            initials: reports.iter().map(|r| r.initial).collect(),
            finals,
            stderrs,
            differences,
            max_diff,
            pooled_stderr: pooled,
            threshold,
            pass,
        });
    }
    Ok(AgreementReport {
        pass: out.iter().all(|a| a.pass),
        skipped: reports.len() < 2,
        functionals: out,
    })
}

/// Rate of the second-moment bound `E‖X_j‖² <= e^{-γ t_j} E‖X_0‖² + C_γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReference {
    /// auxiliary `ε̃` of the Young inequality in the moment estimate
    pub epsilon_aux: f64,
    /// `γ = a / (1 + aτ)` with `a = (2 - ε̃)λ1 - 2K2`
    pub gamma: f64,
    pub tau: f64,
}

impl LyapunovReference {
    pub fn new(k2: f64, tau: f64, epsilon_aux: f64) -> Self {
        let a = (2.0 - epsilon_aux) * lambda1() - 2.0 * k2;
        Self {
            epsilon_aux,
            gamma: a / (1.0 + a * tau),
            tau,
        }
    }

    /// `ε̃ = 0.1`.
    pub fn for_model(constants: &ModelConstants, tau: f64) -> Self {
        Self::new(constants.k2, tau, 0.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub gamma: f64,
    pub x0_norm_sq: f64,
    /// max of the mean over steps `>= burn_in`
    pub max_after_burn_in: f64,
    /// max of the mean over steps `0..=10`
    pub early_max: f64,
    /// max of the mean over the second half of the run
    pub late_max: f64,
    /// every mean in the second half lies below `‖X_0‖²`
    pub eventually_below_x0: bool,
    /// `max_j [mean_j - e^{-γ t_j} ‖X_0‖²]`, the empirical stand-in for `C_γ`
    pub envelope: f64,
}

pub fn lyapunov_series(m: &MomentSeries, reference: &LyapunovReference, x0_norm_sq: f64, burn_in: u64) -> LyapunovReport {
    let last = m.steps.last().copied().unwrap_or(0);
    let max_of = |a: u64, b: u64| m.max_in(a, b).map_or(f64::NAN, |(v, _, _)| v);
    let late_start = last / 2;
    let envelope = m
        .steps
        .iter()
        .zip(&m.values)
        .map(|(&j, &v)| v - (-reference.gamma * reference.tau * j as f64).exp() * x0_norm_sq)
        .fold(f64::NEG_INFINITY, f64::max);
    LyapunovReport {
        gamma: reference.gamma,
        x0_norm_sq,
        max_after_burn_in: max_of(burn_in, last),
        early_max: max_of(0, 10.min(last)),
        late_max: max_of(late_start, last),
        eventually_below_x0: m
            .steps
            .iter()
            .zip(&m.values)
            .filter(|(&j, _)| j >= late_start)
            .all(|(_, &v)| v < x0_norm_sq),
        envelope,
    }
}

/// Pairwise comparison of window means from independent ensembles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowAgreement {
    pub labels: Vec<String>,
    pub stats: Vec<WindowStat>,
    /// largest `|m_i - m_j| / √(se_i² + se_j²)`
    pub max_z: f64,
    pub stderr_mult: f64,
    pub pass: bool,
}

pub fn window_agreement(labels: Vec<String>, stats: Vec<WindowStat>, stderr_mult: f64) -> WindowAgreement {
    let mut max_z = 0.0f64;
    let mut pass = true;
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            let d = (stats[i].mean - stats[j].mean).abs();
            let se = stats[i].stderr.hypot(stats[j].stderr);
            pass &= d <= stderr_mult * se;
            let z = if se > 0.0 { d / se } else if d == 0.0 { 0.0 } else { f64::INFINITY };
            max_z = max_z.max(z);
        }
    }
    WindowAgreement {
        labels,
        stats,
        max_z,
        stderr_mult,
        pass,
    }
}

/// A convolution-moment series for one `(N, β)` with its quarter windows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvolutionSeries {
    pub n_modes: usize,
    pub beta: f64,
    pub series: MomentSeries,
    /// steps `(n/4, n/2]`
    pub second_quarter: WindowStat,
    /// steps `(3n/4, n]`
    pub last_quarter: WindowStat,
}

impl ConvolutionSeries {
    pub fn from_panel(n_modes: usize, beta: f64, panel: &Panel) -> Self {
        let n = panel.last_step();
        assert!(n >= 4, "need at least four steps for quarter windows");
        Self {
            n_modes,
            beta,
            series: panel.step_stats(),
            second_quarter: panel.window_mean(n / 4 + 1, n / 2),
            last_quarter: panel.window_mean(3 * n / 4 + 1, n),
        }
    }
}

/// Thresholds of [`convolution_moment_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformityCriteria {
    /// last quarter may exceed the second quarter by this factor
    pub growth_factor: f64,
    /// the largest `N` may exceed the smallest by this factor
    pub n_factor: f64,
    pub stderr_mult: f64,
}

impl Default for UniformityCriteria {
    fn default() -> Self {
        Self {
            growth_factor: 1.1,
            n_factor: 1.25,
            stderr_mult: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvolutionEntry {
    pub n_modes: usize,
    pub beta: f64,
    pub sup: f64,
    pub sup_stderr: f64,
    pub sup_step: u64,
    pub second_quarter: WindowStat,
    pub last_quarter: WindowStat,
    /// last-quarter mean over second-quarter mean
    pub growth_ratio: f64,
    pub growth_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NUniformity {
    pub beta: f64,
    pub n_small: usize,
    pub n_large: usize,
    /// `sup(N_large) / sup(N_small)`
    pub sup_ratio: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvolutionReport {
    pub p: u32,
    pub entries: Vec<ConvolutionEntry>,
    /// one row per β with at least two mode counts
    pub n_uniformity: Vec<NUniformity>,
    pub pass: bool,
}

/// Checks `E‖W_j‖_β^p` for growth in `j` (last quarter against second
/// quarter) and in `N` (sup at the largest against the smallest `N`).
/// Comparisons allow `stderr_mult` combined standard errors of slack.
pub fn convolution_moment_report(
    series: &[ConvolutionSeries],
    p: u32,
    criteria: &UniformityCriteria,
) -> ConvolutionReport {
    let k = criteria.stderr_mult;
    let entries: Vec<ConvolutionEntry> = series
        .iter()
        .map(|s| {
            let (sup, sup_stderr, sup_step) = s.series.max_in(0, u64::MAX).unwrap_or((f64::NAN, f64::NAN, 0));
            let (sq, lq) = (s.second_quarter, s.last_quarter);
            let slack = k * lq.stderr.hypot(criteria.growth_factor * sq.stderr);
            ConvolutionEntry {
                n_modes: s.n_modes,
                beta: s.beta,
                sup,
                sup_stderr,
                sup_step,
                second_quarter: sq,
                last_quarter: lq,
                growth_ratio: if sq.mean > 0.0 { lq.mean / sq.mean } else { f64::NAN },
                growth_ok: lq.mean <= criteria.growth_factor * sq.mean + slack,
            }
        })
        .collect();

    let mut betas: Vec<f64> = entries.iter().map(|e| e.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let n_uniformity: Vec<NUniformity> = betas
        .into_iter()
        .filter_map(|beta| {
            let group: Vec<&ConvolutionEntry> = entries.iter().filter(|e| e.beta == beta).collect();
            let small = group.iter().min_by_key(|e| e.n_modes)?;
            let large = group.iter().max_by_key(|e| e.n_modes)?;
            if small.n_modes == large.n_modes {
                return None;
            }
            let slack = k * large.sup_stderr.hypot(criteria.n_factor * small.sup_stderr);
            Some(NUniformity {
                beta,
                n_small: small.n_modes,
                n_large: large.n_modes,
                sup_ratio: large.sup / small.sup,
                ok: large.sup <= criteria.n_factor * small.sup + slack,
            })
        })
        .collect();
    ConvolutionReport {
        p,
        pass: entries.iter().all(|e| e.growth_ok) && n_uniformity.iter().all(|u| u.ok),
        entries,
        n_uniformity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DiffusionSpec;
    use crate::spectral::resolvent_apply;
    use std::f64::consts::PI;

    #[test]
    fn functional_values() {
        let zero = SpectralCoeffs::zeros(4);
        assert_eq!(functional_eval(FunctionalId::ExpNegNormSq, &zero), 1.0);
        assert_eq!(functional_eval(FunctionalId::SinNormSq, &zero), 0.0);
        assert_eq!(functional_eval(FunctionalId::NormSq, &zero), 0.0);
        let e1 = SpectralCoeffs::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(functional_eval(FunctionalId::NormSq, &e1), 1.0);
        assert_eq!(functional_eval(FunctionalId::ExpNegNormSq, &e1), (-1.0f64).exp());
        let sine = initial_datum(InitialDatum::Sine, 10);
        assert!((functional_eval(FunctionalId::NormSq, &sine) - 0.5).abs() < 1e-15);
        for f in FunctionalId::ALL {
            assert_eq!(f.tag().parse::<FunctionalId>().unwrap(), f);
        }
        assert!("norm".parse::<FunctionalId>().is_err());
    }

    #[test]
    fn initial_data() {
        let s = initial_datum(InitialDatum::Sine, 10);
        assert!((s[0] - 0.707_106_781_186_547_5).abs() < 1e-15);
        assert!(s.as_slice()[1..].iter().all(|c| *c == 0.0));
        let plus = initial_datum(InitialDatum::MixPlus, 12);
        assert!((plus.norm_sq() - 5.0).abs() < 1e-14);
        assert_eq!((plus[9], plus[10]), (FRAC_1_SQRT_2, 0.0));
        let minus = initial_datum(InitialDatum::MixMinus, 12);
        assert_eq!(minus, plus.scale(-1.0));
        assert_eq!(initial_datum(InitialDatum::MixPlus, 4).n_modes(), 4);
        for d in InitialDatum::ALL {
            assert_eq!(d.tag().parse::<InitialDatum>().unwrap(), d);
        }
        assert!("cosine".parse::<InitialDatum>().is_err());
    }

    fn panel() -> Panel {
        Panel::from_rows(vec![
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0.0, 2.0, 2.0, 2.0, 2.0],
            vec![3.0, -1.0, 0.5, 0.25, 8.0],
        ])
    }

    #[test]
    fn panel_statistics_match_direct_computation() {
        let p = panel();
        let s = p.step_stats();
        assert_eq!(s.values[0], 4.0 / 3.0);
        // two-pass by hand for step 0: deviations -1/3, -4/3, 5/3
        let var = (1.0 / 9.0 + 16.0 / 9.0 + 25.0 / 9.0) / 2.0;
        assert!((s.stderrs[0] - (var / 3.0f64).sqrt()).abs() < 1e-15);

        let (steps, means, errs) = p.running_average(1);
        assert_eq!(steps, vec![2, 3, 4]);
        // per-path running averages at step 4: (3+4+5)/3, 2, (0.5+0.25+8)/3
        let at4 = [4.0, 2.0, 8.75 / 3.0];
        let direct = mean_stderr(&at4);
        assert!((means[2] - direct.mean).abs() < 1e-15);
        assert!((errs[2] - direct.stderr).abs() < 1e-15);
        // pooled mean of all logged values
        let all: f64 = (0..3).map(|r| p.row(r)[2..].iter().sum::<f64>()).sum();
        assert!((means[2] - all / 9.0).abs() < 1e-15);

        let w = p.window_mean(3, 4);
        assert!((w.mean - (4.5 + 2.0 + 4.125) / 3.0).abs() < 1e-15);
        assert_eq!(mean_stderr(&[2.0]).stderr, 0.0);
    }

    #[test]
    fn max_in_window() {
        let m = MomentSeries {
            steps: vec![0, 1, 2, 3],
            values: vec![5.0, 1.0, 7.0, 2.0],
            stderrs: vec![0.1, 0.2, 0.3, 0.4],
        };
        assert_eq!(m.max_in(0, 3), Some((7.0, 0.3, 2)));
        assert_eq!(m.max_in(0, 1), Some((5.0, 0.1, 0)));
        assert_eq!(m.max_in(5, 9), None);
    }

    fn heat_cfg(diffusion: DiffusionSpec, initial: InitialDatum, paths: usize, steps: u64) -> EnsembleConfig {
        EnsembleConfig::new(SchemeParams::new(6, 0.05), ModelSpec::heat(diffusion), initial, paths, steps, 1)
    }

    #[test]
    fn deterministic_ensemble_matches_direct_computation() {
        let cfg = heat_cfg(DiffusionSpec::Zero, InitialDatum::MixPlus, 3, 40);
        let out = run_ensemble(&cfg).unwrap();
        let mut x = initial_datum(InitialDatum::MixPlus, 6);
        let mut norms = Vec::new();
        for _ in 0..40 {
            x = resolvent_apply(&x, 0.05);
            norms.push(x.norm_sq());
        }
        let series = out.report.series_for(FunctionalId::NormSq).unwrap();
        for (n, avg) in series.running_avg.iter().enumerate() {
            let direct = norms[..=n].iter().sum::<f64>() / (n + 1) as f64;
            assert!((avg - direct).abs() < 1e-12);
        }
        assert!(series.stderr.iter().all(|e| *e < 1e-15));
        // strictly decreasing second moment without noise or drift
        assert!(out.x_moments.values.windows(2).all(|w| w[1] < w[0]));
        assert!(out.w_moments.iter().all(|(_, m)| m.values.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_path_single_step_matches_scheme_step() {
        let cfg = EnsembleConfig::new(
            SchemeParams::new(10, 0.05),
            ModelSpec::allen_cahn(0.5, DiffusionSpec::Paper),
            InitialDatum::Sine,
            1,
            1,
            99,
        );
        let out = run_ensemble(&cfg).unwrap();
        let dieg = Dieg::new(cfg.params, cfg.model.build().unwrap()).unwrap();
        let step = dieg
            .step(&crate::scheme::PathState::new(initial_datum(InitialDatum::Sine, 10), NoiseStream::new(99, 0)))
            .unwrap();
        let n2 = step.state.x.norm_sq();
        for f in FunctionalId::ALL {
            let s = out.report.series_for(f).unwrap();
            assert_eq!(s.steps, vec![1]);
            assert_eq!(s.final_value, f.of_norm_sq(n2));
        }
        assert_eq!(out.x_moments.values, vec![initial_datum(InitialDatum::Sine, 10).norm_sq(), n2]);
        let w0 = sobolev_norm_sq(step.state.w.as_slice(), 0.4);
        assert_eq!(out.w_moments[2].1.values[1], w0);
    }

    #[test]
    fn ensemble_is_reproducible_and_validated() {
        let cfg = heat_cfg(DiffusionSpec::Paper, InitialDatum::Sine, 8, 30);
        let a = run_ensemble(&cfg).unwrap();
        let b = run_ensemble(&cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.x_panel, b.x_panel);

        let mut bad = cfg.clone();
        bad.burn_in = 30;
        bad.moment_betas = vec![0.5];
        bad.moment_p = 3;
        match run_ensemble(&bad) {
            Err(Error::InvalidParams(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failing_paths_fail_the_ensemble() {
        let mut cfg = EnsembleConfig::new(
            SchemeParams::new(4, 0.05),
            ModelSpec::allen_cahn(0.5, DiffusionSpec::Paper),
            InitialDatum::MixPlus,
            3,
            5,
            0,
        );
        cfg.params.newton_max_iter = 1;
        cfg.params.newton_tol = 1e-300;
        match run_ensemble(&cfg) {
            Err(e @ Error::Ensemble(_)) => {
                assert!(e.is_numerical());
                if let Error::Ensemble(v) = e {
                    assert_eq!(v.len(), 3);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    fn report(initial: InitialDatum, finals: [f64; 3], se: f64) -> ErgodicReport {
        ErgodicReport {
            initial,
            config_key: "k".into(),
            n_paths: 10,
            n_steps: 10,
            burn_in: 0,
            series: FunctionalId::ALL
                .iter()
                .zip(finals)
                .map(|(&functional, v)| FunctionalSeries {
                    functional,
                    steps: vec![10],
                    running_avg: vec![v],
                    stderr: vec![se],
                    final_value: v,
                    final_stderr: se,
                })
                .collect(),
        }
    }

    #[test]
    fn agreement_verdicts() {
        let tol = AgreementTolerance::default();
        let a = report(InitialDatum::Sine, [0.7, 0.3, 0.4], 0.01);
        let same = agreement_check(&[a.clone(), ErgodicReport { initial: InitialDatum::MixPlus, ..a.clone() }], &tol).unwrap();
        assert!(same.pass && !same.skipped);
        assert!(same.functionals.iter().all(|f| f.max_diff == 0.0));

        let shifted = report(InitialDatum::MixMinus, [0.8, 0.3, 0.4], 0.01);
        let r = agreement_check(&[a.clone(), shifted], &tol).unwrap();
        assert!(!r.pass);
        assert!(!r.functionals[0].pass && r.functionals[1].pass);
        assert!((r.functionals[0].max_diff - 0.1).abs() < 1e-12);
        assert!((r.functionals[0].pooled_stderr - 0.01 * 2f64.sqrt()).abs() < 1e-15);

        // within the absolute floor although many standard errors apart
        let close = report(InitialDatum::MixPlus, [0.708, 0.3, 0.4], 1e-4);
        assert!(agreement_check(&[report(InitialDatum::Sine, [0.7, 0.3, 0.4], 1e-4), close], &tol).unwrap().pass);
        // norm_sq uses the relative floor
        let rel = report(InitialDatum::MixPlus, [0.7, 0.3, 0.407], 1e-4);
        let r = agreement_check(&[report(InitialDatum::Sine, [0.7, 0.3, 0.4], 1e-4), rel], &tol).unwrap();
        assert!(r.functionals[2].pass);

        let single = agreement_check(std::slice::from_ref(&a), &tol).unwrap();
        assert!(single.skipped && single.pass);

        let mut other = a.clone();
        other.config_key = "different".into();
        assert!(matches!(agreement_check(&[a, other], &tol), Err(Error::MismatchedReports(_))));
    }

    #[test]
    fn lyapunov_reference_rate() {
        let r = LyapunovReference::new(-1.0, 0.05, 0.1);
        let a = 1.9 * PI * PI + 2.0;
        assert!((r.gamma - a / (1.0 + 0.05 * a)).abs() < 1e-12);
        assert!(r.gamma > 0.0);
    }

    #[test]
    fn lyapunov_report_on_linear_decay() {
        // deterministic heat flow decays at least at γ̃ = 2 ln(1 + τλ1)/τ,
        // faster than the reference rate, so the envelope is zero (at j = 0)
        let cfg = heat_cfg(DiffusionSpec::Zero, InitialDatum::MixPlus, 1, 60);
        let out = run_ensemble(&cfg).unwrap();
        let reference = LyapunovReference::new(0.0, 0.05, 0.1);
        let exact_rate = 2.0 * (0.05 * PI * PI).ln_1p() / 0.05;
        assert!(reference.gamma <= exact_rate);
        let rep = lyapunov_series(&out.x_moments, &reference, 5.0 * 6.0 / 10.0, 0);
        assert!(rep.envelope.abs() < 1e-12, "{}", rep.envelope);
        assert!(rep.eventually_below_x0);
        assert!(rep.late_max < rep.early_max);

        let zero = MomentSeries { steps: vec![0, 1, 2], values: vec![0.0; 3], stderrs: vec![0.0; 3] };
        let rep = lyapunov_series(&zero, &reference, 0.0, 0);
        assert_eq!((rep.max_after_burn_in, rep.envelope), (0.0, 0.0));
    }

    #[test]
    fn window_agreement_uses_combined_stderr() {
        let s = |mean, stderr| WindowStat { mean, stderr };
        let ok = window_agreement(vec!["a".into(), "b".into()], vec![s(1.0, 0.1), s(1.4, 0.1)], 3.0);
        assert!(ok.pass);
        assert!((ok.max_z - 0.4 / 0.02f64.sqrt()).abs() < 1e-12);
        let bad = window_agreement(vec!["a".into(), "b".into(), "c".into()], vec![s(1.0, 0.1), s(1.0, 0.1), s(1.5, 0.1)], 3.0);
        assert!(!bad.pass);
        assert!(window_agreement(vec![], vec![], 3.0).pass);
    }

    #[test]
    fn convolution_report_flags_growth_and_n_dependence() {
        let flat = |n: usize, level: f64| {
            let rows = (0..4).map(|p| (0..=20).map(|j| if j == 0 { 0.0 } else { level + 0.01 * p as f64 }).collect()).collect();
            ConvolutionSeries::from_panel(n, 0.4, &Panel::from_rows(rows))
        };
        let ok = convolution_moment_report(&[flat(10, 1.0), flat(20, 1.1)], 2, &UniformityCriteria::default());
        assert!(ok.pass);
        assert_eq!(ok.n_uniformity.len(), 1);
        assert!((ok.n_uniformity[0].sup_ratio - 1.115 / 1.015).abs() < 1e-12);

        let bad_n = convolution_moment_report(&[flat(10, 1.0), flat(40, 2.0)], 2, &UniformityCriteria::default());
        assert!(!bad_n.pass && !bad_n.n_uniformity[0].ok);

        let rows = (0..4).map(|_| (0..=20).map(|j| j as f64).collect()).collect();
        let growing = ConvolutionSeries::from_panel(10, 0.0, &Panel::from_rows(rows));
        let r = convolution_moment_report(&[growing], 2, &UniformityCriteria::default());
        assert!(!r.entries[0].growth_ok && !r.pass);
        assert!(r.n_uniformity.is_empty());
    }
}
