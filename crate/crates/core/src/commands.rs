//! Experiment subcommands. Each writes its artifacts into an [`OutputDir`]
//! and returns a verdict; the binary maps outcomes to exit codes.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::config::{OutputFormat, RunConfig};
use crate::ergodic::{
    agreement_check, convolution_moment_report, initial_datum, lyapunov_series, run_ensemble, window_agreement,
    ConvolutionSeries, EnsembleOutput, ErgodicReport, LyapunovReference, UniformityCriteria,
};
use crate::error::{Error, Result};
use crate::model::DiffusionSpec;
use crate::noise::NoiseStream;
use crate::output::{fmt_f64, write_moments, write_time_averages, MomentBlock, MomentKind, OutputDir, Provenance};
use crate::scheme::Dieg;
use crate::selftest::{run_selftest, SelftestOptions, SelftestReport};
use crate::spectral::{eigenvalue, geometric_decay_sum, Horizon, SpectralCoeffs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERDICT: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

/// What a finished command reports back.
#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub verdict: bool,
    pub files: Vec<PathBuf>,
    /// human-readable summary lines
    pub messages: Vec<String>,
}

impl CommandOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.verdict {
            EXIT_OK
        } else {
            EXIT_VERDICT
        }
    }
}

/// Where the seed of a run came from, for the provenance record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedSource {
    Config,
    Env,
}

impl SeedSource {
    fn tag(&self) -> &'static str {
        match self {
            SeedSource::Config => "config",
            SeedSource::Env => crate::config::SEED_ENV,
        }
    }
}

fn write_common(cfg: &RunConfig, out: &OutputDir, command: &str, seed: &SeedSource, files: &mut Vec<PathBuf>) -> Result<()> {
    let doc = cfg.to_document();
    files.push(out.write_text("run.conf", &doc)?);
    if cfg.writes(OutputFormat::Json) {
        files.push(out.write_json("provenance.json", &Provenance::new(command, cfg.run.seed, seed.tag(), doc))?);
    }
    Ok(())
}

/// Runs one ensemble per configured initial datum on `n_modes` modes. On a
/// failure a non-authoritative summary is written before the error returns.
fn run_initials(cfg: &RunConfig, out: &OutputDir, command: &str, n_modes: usize) -> Result<Vec<EnsembleOutput>> {
    let mut done = Vec::new();
    for &initial in &cfg.run.initials {
        match run_ensemble(&cfg.ensemble_config(initial, n_modes)) {
            Ok(o) => done.push(o),
            Err(e) => {
                let completed: Vec<String> = done.iter().map(|o: &EnsembleOutput| o.config.initial.to_string()).collect();
                out.write_json(
                    "summary.json",
                    &json!({
                        "command": command,
                        "authoritative": false,
                        "error": e.to_string(),
                        "failed_initial": initial.tag(),
                        "completed_initials": completed,
                    }),
                )?;
                return Err(e);
            }
        }
    }
    Ok(done)
}

#[derive(Serialize)]
struct FinalValue {
    functional: String,
    initial: String,
    value: f64,
    stderr: f64,
}

fn finals(reports: &[ErgodicReport]) -> Vec<FinalValue> {
    reports
        .iter()
        .flat_map(|r| {
            r.series.iter().map(move |s| FinalValue {
                functional: s.functional.to_string(),
                initial: r.initial.to_string(),
                value: s.final_value,
                stderr: s.final_stderr,
            })
        })
        .collect()
}

/// Time averages for every initial datum and their agreement.
pub fn cmd_ergodic(cfg: &RunConfig, out: &OutputDir, seed: &SeedSource) -> Result<CommandOutcome> {
    let start = Instant::now();
    let mut files = Vec::new();
    write_common(cfg, out, "ergodic", seed, &mut files)?;
    let outputs = run_initials(cfg, out, "ergodic", cfg.scheme.n_modes)?;
    let reports: Vec<ErgodicReport> = outputs.iter().map(|o| o.report.clone()).collect();
    let agreement = agreement_check(&reports, &cfg.agreement_tolerance())?;

    if cfg.writes(OutputFormat::Csv) {
        files.push(out.write_with("time_averages.csv", |w| write_time_averages(w, cfg.scheme.tau, &reports))?);
    }
    let mut messages = Vec::new();
    if agreement.skipped {
        messages.push("agreement: single-initial, skipped".to_string());
    }
    for a in &agreement.functionals {
        messages.push(format!(
            "{:<16} max diff {:.3e}  threshold {:.3e}  {}",
            a.functional.tag(),
            a.max_diff,
            a.threshold,
            if a.pass { "pass" } else { "FAIL" }
        ));
    }
    let agreement_json = if agreement.skipped {
        json!({ "status": "single-initial, skipped" })
    } else {
        serde_json::to_value(&agreement)?
    };
    if cfg.writes(OutputFormat::Json) {
        let solver: Vec<_> = outputs.iter().map(|o| json!({ "initial": o.config.initial.tag(), "solver": o.solver })).collect();
        files.push(out.write_json(
            "summary.json",
            &json!({
                "command": "ergodic",
                "authoritative": true,
                "config": cfg,
                "seed": cfg.run.seed,
                "finals": finals(&reports),
                "agreement": agreement_json,
                "solver": solver,
                "verdict": agreement.pass,
                "wall_clock_seconds": start.elapsed().as_secs_f64(),
            }),
        )?);
    }
    Ok(CommandOutcome {
        verdict: agreement.pass,
        files,
        messages,
    })
}

/// Second moments `E‖X_j‖²` per initial datum against the Lyapunov bound.
///
/// The verdict needs (a) the datum with the largest `‖X_0‖²` to stay below
/// its early maximum over the second half of the run and (b) the last-half
/// averages of all data to agree within three combined standard errors.
pub fn cmd_lyapunov(cfg: &RunConfig, out: &OutputDir, seed: &SeedSource) -> Result<CommandOutcome> {
    let start = Instant::now();
    let mut files = Vec::new();
    write_common(cfg, out, "lyapunov", seed, &mut files)?;
    let n = cfg.scheme.n_modes;
    let outputs = run_initials(cfg, out, "lyapunov", n)?;
    let model = cfg.model.build()?;
    let reference = LyapunovReference::for_model(model.constants(), cfg.scheme.tau);
    let steps = cfg.run.steps;

    let mut per_initial = Vec::new();
    let mut windows = Vec::new();
    let mut largest: Option<(f64, bool)> = None;
    for o in &outputs {
        let x0 = initial_datum(o.config.initial, n).norm_sq();
        let rep = lyapunov_series(&o.x_moments, &reference, x0, cfg.run.burn_in);
        if largest.is_none_or(|(v, _)| x0 > v) {
            largest = Some((x0, rep.late_max <= rep.early_max));
        }
        windows.push(o.x_panel.window_mean(steps / 2, steps));
        per_initial.push(json!({ "initial": o.config.initial.tag(), "report": rep }));
        if cfg.writes(OutputFormat::Csv) {
            let name = format!("moments_{}.csv", o.config.initial);
            let block = MomentBlock { kind: MomentKind::XNormSq, n_modes: n, beta: None, series: &o.x_moments };
            files.push(out.write_with(&name, |w| write_moments(w, cfg.scheme.tau, &[block]))?);
        }
    }
    let labels = outputs.iter().map(|o| o.config.initial.to_string()).collect();
    let last_half = window_agreement(labels, windows, 3.0);
    let decay_ok = largest.is_some_and(|(_, ok)| ok);
    let finite = outputs.iter().all(|o| o.x_moments.values.iter().all(|v| v.is_finite()));
    let verdict = finite && decay_ok && last_half.pass;

    let messages = vec![
        format!("gamma = {:.6} (auxiliary epsilon {})", reference.gamma, reference.epsilon_aux),
        format!("late max <= early max for largest initial datum: {decay_ok}"),
        format!("last-half averages agree (max z = {:.3}): {}", last_half.max_z, last_half.pass),
    ];
    if cfg.writes(OutputFormat::Json) {
        files.push(out.write_json(
            "summary.json",
            &json!({
                "command": "lyapunov",
                "authoritative": true,
                "config": cfg,
                "seed": cfg.run.seed,
                "reference": reference,
                "initials": per_initial,
                "last_half_agreement": last_half,
                "verdict": verdict,
                "wall_clock_seconds": start.elapsed().as_secs_f64(),
            }),
        )?);
    }
    Ok(CommandOutcome { verdict, files, messages })
}

#[derive(Debug, Clone, Serialize)]
struct ClosedFormRow {
    n_modes: usize,
    beta: f64,
    step: u64,
    exact: f64,
    mean: f64,
    stderr: f64,
    within_3_stderr: bool,
}

/// `E‖W_j‖_β²` for constant diffusion `c`: `c² τ Σ_k λ_k^β Σ_{i=1}^{j} (1+τλ_k)^{-2i}`
/// over the modes that receive noise.
pub fn convolution_second_moment(c: f64, tau: f64, beta: f64, active_modes: usize, step: u64) -> f64 {
    (1..=active_modes)
        .map(|k| {
            let l = eigenvalue(k).expect("k >= 1");
            l.powf(beta) * geometric_decay_sum(l, tau, Horizon::Steps(step))
        })
        .sum::<f64>()
        * c
        * c
        * tau
}

/// Convolution moments over the `(N, β)` sweep and their uniformity report.
pub fn cmd_convolution(cfg: &RunConfig, out: &OutputDir, seed: &SeedSource) -> Result<CommandOutcome> {
    let start = Instant::now();
    if cfg.run.steps < 4 || cfg.run.moment_betas.is_empty() {
        return Err(Error::ConfigInvalid(vec![
            "the convolution sweep needs run.steps >= 4 and at least one beta".into(),
        ]));
    }
    let mut files = Vec::new();
    write_common(cfg, out, "convolution", seed, &mut files)?;
    let initial = cfg.run.initials[0];
    let mut outputs = Vec::new();
    for &n in &cfg.run.convolution_modes {
        match run_ensemble(&cfg.ensemble_config(initial, n)) {
            Ok(o) => outputs.push(o),
            Err(e) => {
                out.write_json(
                    "summary.json",
                    &json!({ "command": "convolution", "authoritative": false, "error": e.to_string(), "failed_n": n }),
                )?;
                return Err(e);
            }
        }
    }
    let mut series = Vec::new();
    for o in &outputs {
        for (panel, &beta) in o.w_panels.iter().zip(&o.config.moment_betas) {
            series.push(ConvolutionSeries::from_panel(o.config.params.n_modes, beta, panel));
        }
    }
    let report = convolution_moment_report(&series, cfg.run.moment_p, &UniformityCriteria::default());

    let closed_form: Vec<ClosedFormRow> = match cfg.model.diffusion {
        DiffusionSpec::Constant(c) if cfg.run.moment_p == 2 => series
            .iter()
            .map(|s| {
                let step = *s.series.steps.last().expect("non-empty");
                let active = s.n_modes.min(cfg.scheme_params(s.n_modes).noise_modes);
                let exact = convolution_second_moment(c, cfg.scheme.tau, s.beta, active, step);
                let (mean, stderr) = (*s.series.values.last().expect("non-empty"), *s.series.stderrs.last().expect("non-empty"));
                ClosedFormRow {
                    n_modes: s.n_modes,
                    beta: s.beta,
                    step,
                    exact,
                    mean,
                    stderr,
                    within_3_stderr: (mean - exact).abs() <= 3.0 * stderr,
                }
            })
            .collect(),
        _ => Vec::new(),
    };

    if cfg.writes(OutputFormat::Csv) {
        let blocks: Vec<MomentBlock<'_>> = series
            .iter()
            .map(|s| MomentBlock { kind: MomentKind::WSobolev, n_modes: s.n_modes, beta: Some(s.beta), series: &s.series })
            .collect();
        files.push(out.write_with("moments.csv", |w| write_moments(w, cfg.scheme.tau, &blocks))?);
    }
    let mut messages: Vec<String> = report
        .entries
        .iter()
        .map(|e| {
            format!(
                "N = {:>3}  beta = {:.2}  sup {:.4e}  growth ratio {:.4}  {}",
                e.n_modes,
                e.beta,
                e.sup,
                e.growth_ratio,
                if e.growth_ok { "ok" } else { "GROWS" }
            )
        })
        .collect();
    messages.extend(report.n_uniformity.iter().map(|u| {
        format!(
            "beta = {:.2}: sup(N={}) / sup(N={}) = {:.4}  {}",
            u.beta,
            u.n_large,
            u.n_small,
            u.sup_ratio,
            if u.ok { "ok" } else { "NOT UNIFORM" }
        )
    }));
    if cfg.writes(OutputFormat::Json) {
        files.push(out.write_json(
            "summary.json",
            &json!({
                "command": "convolution",
                "authoritative": true,
                "config": cfg,
                "seed": cfg.run.seed,
                "initial": initial.tag(),
                "uniformity": report,
                "closed_form": closed_form,
                "verdict": report.pass,
                "wall_clock_seconds": start.elapsed().as_secs_f64(),
            }),
        )?);
    }
    Ok(CommandOutcome {
        verdict: report.pass,
        files,
        messages,
    })
}

/// One path from the first configured initial datum: the full coefficient
/// trajectory and the random-PDE residuals. Passes when every residual is
/// within `10 · newton_tol`.
pub fn cmd_simulate(cfg: &RunConfig, out: &OutputDir, seed: &SeedSource) -> Result<CommandOutcome> {
    let mut files = Vec::new();
    write_common(cfg, out, "simulate", seed, &mut files)?;
    let params = cfg.scheme_params(cfg.scheme.n_modes);
    let dieg = Dieg::new(params, cfg.model.build()?)?;
    let initial = cfg.run.initials[0];
    let mut xs: Vec<SpectralCoeffs> = Vec::new();
    let mut ws: Vec<SpectralCoeffs> = Vec::new();
    let mut record = |_: u64, x: &SpectralCoeffs, w: &SpectralCoeffs| {
        xs.push(x.clone());
        ws.push(w.clone());
    };
    let stream = NoiseStream::new(cfg.seed_for(initial), 0);
    let (_, summary) = dieg.run_path(initial_datum(initial, params.n_modes), cfg.run.steps, stream, &mut [&mut record])?;
    let residuals = dieg.random_pde_residual(&xs, &ws)?;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let bound = 10.0 * params.newton_tol;
    let verdict = max_residual <= bound;

    if cfg.writes(OutputFormat::Csv) {
        let tau = params.tau;
        files.push(out.write_with("trajectory.csv", |w| {
            use std::io::Write;
            writeln!(w, "step,t,mode,x,w")?;
            for (j, (x, wc)) in xs.iter().zip(&ws).enumerate() {
                for k in 0..x.n_modes() {
                    writeln!(w, "{},{},{},{},{}", j, fmt_f64(j as f64 * tau), k + 1, fmt_f64(x[k]), fmt_f64(wc[k]))?;
                }
            }
            Ok(())
        })?);
        files.push(out.write_with("residuals.csv", |w| {
            use std::io::Write;
            writeln!(w, "step,residual")?;
            for (j, r) in residuals.iter().enumerate() {
                writeln!(w, "{},{}", j + 1, fmt_f64(*r))?;
            }
            Ok(())
        })?);
    }
    if cfg.writes(OutputFormat::Json) {
        files.push(out.write_json(
            "summary.json",
            &json!({
                "command": "simulate",
                "authoritative": true,
                "config": cfg,
                "seed": cfg.run.seed,
                "initial": initial.tag(),
                "solver": summary,
                "max_random_pde_residual": max_residual,
                "residual_bound": bound,
                "verdict": verdict,
            }),
        )?);
    }
    Ok(CommandOutcome {
        verdict,
        files,
        messages: vec![
            format!(
                "{} steps, {} Newton iterations (max {} per step)",
                summary.steps, summary.newton_iters_total, summary.newton_iters_max
            ),
            format!("max random-PDE residual {max_residual:.3e} (bound {bound:.1e})"),
        ],
    })
}

pub fn cmd_selftest(opts: &SelftestOptions) -> (SelftestReport, CommandOutcome) {
    let report = run_selftest(opts);
    let messages = report
        .suites
        .iter()
        .map(|s| {
            format!(
                "{:<18} {}  worst {:.3e} (tol {:.0e})  {}",
                s.name,
                if s.pass { "PASS" } else { "FAIL" },
                s.worst,
                s.tolerance,
                s.detail
            )
        })
        .collect();
    let outcome = CommandOutcome {
        verdict: report.pass,
        files: Vec::new(),
        messages,
    };
    (report, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use std::fs;

    fn small(diffusion: &str, extra: &str) -> RunConfig {
        parse_config(&format!(
            "model.name = allen_cahn\nmodel.epsilon = 0.5\nmodel.diffusion = {diffusion}\n\
             scheme.n_modes = 4\nscheme.tau = 0.05\nrun.steps = 40\nrun.paths = 6\nrun.seed = 3\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn ergodic_single_initial_skips_agreement() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        let cfg = small("paper", "run.initials = sine\n");
        let o = cmd_ergodic(&cfg, &out, &SeedSource::Config).unwrap();
        assert!(o.verdict);
        assert!(o.messages[0].contains("single-initial, skipped"));
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["agreement"]["status"], "single-initial, skipped");
        let csv = fs::read_to_string(out.path("time_averages.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 40 * 3);
        let replay = parse_config(&fs::read_to_string(out.path("run.conf")).unwrap()).unwrap();
        assert_eq!(replay, cfg);
    }

    #[test]
    fn deterministic_config_has_zero_stderr() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        cmd_ergodic(&small("zero", ""), &out, &SeedSource::Config).unwrap();
        let csv = fs::read_to_string(out.path("time_averages.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let se: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!(se.abs() < 1e-15, "{line}");
        }
    }

    #[test]
    fn lyapunov_zero_model_and_files() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        let cfg = parse_config(
            "model.name = heat\nmodel.diffusion = zero\nscheme.n_modes = 4\nscheme.tau = 0.05\n\
             run.steps = 20\nrun.paths = 2\nrun.seed = 0\nrun.initials = mix_plus\n",
        )
        .unwrap();
        let o = cmd_lyapunov(&cfg, &out, &SeedSource::Config).unwrap();
        assert!(o.verdict);
        let csv = fs::read_to_string(out.path("moments_mix_plus.csv")).unwrap();
        let means: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(5).unwrap().parse().unwrap()).collect();
        assert_eq!(means.len(), 21);
        // exact geometric decay of each mode
        for (j, m) in means.iter().enumerate() {
            let exact: f64 = (1..=4)
                .map(|k| 0.5 * (1.0 + 0.05 * eigenvalue(k).unwrap()).powi(-2 * j as i32))
                .sum();
            assert!((m - exact).abs() <= 1e-14 * exact.max(1e-300), "{j}: {m} vs {exact}");
        }
    }

    #[test]
    fn convolution_zero_diffusion_is_zero() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        cmd_convolution(&small("zero", "run.convolution_modes = 4, 8\n"), &out, &SeedSource::Config).unwrap();
        let csv = fs::read_to_string(out.path("moments.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 3 * 41);
        assert!(csv.lines().skip(1).all(|l| l.split(',').nth(5) == Some("0.0000000000000000e0")));
    }

    #[test]
    fn convolution_closed_form_row() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        let cfg = parse_config(
            "model.name = heat\nmodel.diffusion = constant:1.0\nscheme.n_modes = 6\nscheme.tau = 0.05\n\
             run.steps = 200\nrun.paths = 400\nrun.seed = 11\nrun.moment_betas = 0.0\n",
        )
        .unwrap();
        cmd_convolution(&cfg, &out, &SeedSource::Config).unwrap();
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path("summary.json")).unwrap()).unwrap();
        let row = &summary["closed_form"][0];
        let exact = row["exact"].as_f64().unwrap();
        // τ Σ_k 1/(τλ_k(2+τλ_k)), the stationary level, by direct arithmetic
        let limit: f64 = (1..=6)
            .map(|k| {
                let a = 0.05 * (k as f64 * std::f64::consts::PI).powi(2);
                0.05 / (a * (2.0 + a))
            })
            .sum();
        assert!((exact - limit).abs() < 1e-12 * limit);
        assert!(row["within_3_stderr"].as_bool().unwrap(), "{row}");
    }

    #[test]
    fn simulate_writes_trajectory_and_small_residuals() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        let o = cmd_simulate(&small("paper", ""), &out, &SeedSource::Env).unwrap();
        assert!(o.verdict, "{:?}", o.messages);
        let traj = fs::read_to_string(out.path("trajectory.csv")).unwrap();
        assert_eq!(traj.lines().next(), Some("step,t,mode,x,w"));
        assert_eq!(traj.lines().count(), 1 + 41 * 4);
        let prov: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path("provenance.json")).unwrap()).unwrap();
        assert_eq!(prov["seed_source"], "SPDE_ERGO_SEED");
    }

    #[test]
    fn numerical_failures_map_to_exit_code_two() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path()).unwrap();
        let cfg = small("paper", "scheme.newton_max_iter = 1\nscheme.newton_tol = 1e-300\nrun.initials = mix_plus\n");
        let err = cmd_ergodic(&cfg, &out, &SeedSource::Config).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_NUMERICAL);
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["authoritative"], false);
        assert_eq!(exit_code(&Error::ConfigInvalid(vec![])), EXIT_VALIDATION);
    }
}
