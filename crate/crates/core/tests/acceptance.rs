//! Acceptance criteria AC-1 .. AC-7. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use spde_ergo::commands::{cmd_ergodic, SeedSource};
use spde_ergo::config::RunConfig;
use spde_ergo::ergodic::{
    agreement_check, convolution_moment_report, initial_datum, run_ensemble, window_agreement, ConvolutionSeries,
    EnsembleConfig, EnsembleOutput, FunctionalId, InitialDatum, UniformityCriteria,
};
use spde_ergo::model::{nemytskii_drift, paper_diffusion, DiffusionSpec, ModelSpec};
use spde_ergo::output::OutputDir;
use spde_ergo::scheme::{Dieg, SchemeParams};
use spde_ergo::selftest::{self, SelftestOptions};
use spde_ergo::{CoefficientModel, NoiseStream, SpectralCoeffs};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Stationary variance of `X' = S(X + δβ)` in one mode is `τ / ((1+τλ)² - 1)`.
fn linear_reference(n: usize, tau: f64) -> f64 {
    (1..=n)
        .map(|k| {
            let lambda = (k as f64 * PI).powi(2);
            tau / ((1.0 + tau * lambda).powi(2) - 1.0)
        })
        .sum()
}

fn ac1() -> Verdict {
    let reference = linear_reference(10, 0.05);
    let mut cfg = EnsembleConfig::new(
        SchemeParams::new(10, 0.05),
        ModelSpec::heat(DiffusionSpec::Constant(1.0)),
        InitialDatum::Sine,
        100,
        20_000,
        101,
    );
    cfg.functionals = vec![FunctionalId::NormSq];
    cfg.moment_betas = vec![];
    cfg.burn_in = 500;
    match run_ensemble(&cfg) {
        Ok(out) => {
            let s = out.report.series_for(FunctionalId::NormSq).expect("configured");
            let rel = (s.final_value - reference).abs() / reference;
            verdict(
                rel <= 0.05,
                format!(
                    "time average {:.6} (stderr {:.2e}) vs reference {:.7}: relative error {:.3}%",
                    s.final_value,
                    s.final_stderr,
                    reference,
                    100.0 * rel
                ),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn ac2(outputs: &[EnsembleOutput], cfg: &RunConfig) -> Verdict {
    let reports: Vec<_> = outputs.iter().map(|o| o.report.clone()).collect();
    match agreement_check(&reports, &cfg.agreement_tolerance()) {
        Ok(a) => {
            let parts: Vec<String> = a
                .functionals
                .iter()
                .map(|f| format!("{} {:.2e}<={:.2e}", f.functional, f.max_diff, f.threshold))
                .collect();
            verdict(a.pass && !a.skipped, parts.join(", "))
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn ac3(outputs: &[EnsembleOutput], steps: u64) -> Verdict {
    let mix = outputs
        .iter()
        .find(|o| o.config.initial == InitialDatum::MixPlus)
        .expect("mix_plus is configured");
    let early = mix.x_moments.max_in(0, 10).expect("steps recorded").0;
    let late = mix.x_moments.max_in(steps / 2, steps).expect("steps recorded").0;
    let labels = outputs.iter().map(|o| o.config.initial.to_string()).collect();
    let stats = outputs.iter().map(|o| o.x_panel.window_mean(steps / 2, steps)).collect();
    let agree = window_agreement(labels, stats, 3.0);
    verdict(
        late <= early && agree.pass,
        format!(
            "(a) max_[{}..{}] {:.4} <= max_[0..10] {:.4}; (b) last-half averages max z = {:.2} (<= 3)",
            steps / 2,
            steps,
            late,
            early,
            agree.max_z
        ),
    )
}

fn ac4(desk: &RunConfig, sine_n10: &EnsembleOutput) -> Verdict {
    let beta = 0.4;
    let idx = sine_n10
        .config
        .moment_betas
        .iter()
        .position(|&b| b == beta)
        .expect("beta 0.4 recorded");
    let mut series = vec![ConvolutionSeries::from_panel(10, beta, &sine_n10.w_panels[idx])];
    for n in [20, 40] {
        let mut cfg = desk.ensemble_config(InitialDatum::Sine, n);
        cfg.moment_betas = vec![beta];
        match run_ensemble(&cfg) {
            Ok(o) => series.push(ConvolutionSeries::from_panel(n, beta, &o.w_panels[0])),
            Err(e) => return verdict(false, format!("N = {n}: {e}")),
        }
    }
    let r = convolution_moment_report(&series, 2, &UniformityCriteria::default());
    let growth: Vec<String> = r
        .entries
        .iter()
        .map(|e| format!("N={} ratio {:.3}{}", e.n_modes, e.growth_ratio, if e.growth_ok { "" } else { " GROWS" }))
        .collect();
    let u = &r.n_uniformity[0];
    verdict(
        r.pass,
        format!("{}; sup N=40/N=10 = {:.4}{}", growth.join(", "), u.sup_ratio, if u.ok { "" } else { " NOT UNIFORM" }),
    )
}

fn ac5() -> Verdict {
    let start = Instant::now();
    let opts = SelftestOptions::default();
    let suites = [
        selftest::parseval(&opts),
        selftest::geometric_sum(&opts),
        selftest::monotonicity(&opts),
        selftest::newton_uniqueness(&opts),
        selftest::jacobian_fd(&opts),
    ];
    // single-mode cubic: ∫(√2 sin πξ)^4 = 3/2 and ∫(√2)^4 sin³πξ sin 3πξ = -1/2
    let model = CoefficientModel::allen_cahn(0.5, paper_diffusion(), 3.0).expect("valid");
    let mut cubic_err = 0.0f64;
    for a in [-1.3, -0.4, 0.25, 1.0, 2.0] {
        let mut c = vec![0.0; 10];
        c[0] = a;
        let out = nemytskii_drift(&SpectralCoeffs::new(c).expect("finite"), &model, 40).expect("floor");
        let mut expected = [0.0; 10];
        expected[0] = 4.0 * a - 6.0 * a * a * a;
        expected[2] = 2.0 * a * a * a;
        for (o, e) in out.as_slice().iter().zip(expected) {
            cubic_err = cubic_err.max((o - e).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut parts: Vec<String> = suites.iter().map(|s| format!("{} {:.1e}", s.name, s.worst)).collect();
    parts.push(format!("cubic {cubic_err:.1e}"));
    parts.push(format!("{elapsed:.2}s"));
    let pass = suites.iter().all(|s| s.pass) && cubic_err <= 1e-10 && elapsed < 5.0;
    verdict(pass, parts.join(", "))
}

fn ac6(desk: &RunConfig) -> Verdict {
    let mut worst = 0.0f64;
    let mut tol = 0.0;
    for &initial in &desk.run.initials {
        let cfg = desk.ensemble_config(initial, desk.scheme.n_modes);
        tol = cfg.params.newton_tol;
        let dieg = Dieg::new(cfg.params, cfg.model.build().expect("valid")).expect("valid");
        for path in 0..5 {
            let (mut xs, mut ws) = (Vec::new(), Vec::new());
            let mut rec = |_: u64, x: &SpectralCoeffs, w: &SpectralCoeffs| {
                xs.push(x.clone());
                ws.push(w.clone());
            };
            let stream = NoiseStream::new(cfg.master_seed, path);
            if let Err(e) = dieg.run_path(initial_datum(initial, cfg.params.n_modes), cfg.n_steps, stream, &mut [&mut rec]) {
                return verdict(false, e.to_string());
            }
            match dieg.random_pde_residual(&xs, &ws) {
                Ok(r) => worst = r.into_iter().fold(worst, f64::max),
                Err(e) => return verdict(false, e.to_string()),
            }
        }
    }
    verdict(
        worst <= 10.0 * tol,
        format!("max residual {worst:.3e} over 15 paths x 2000 steps (bound {:.1e})", 10.0 * tol),
    )
}

fn ac7(desk: &RunConfig) -> Verdict {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = OutputDir::create(tmp.path().join(run)).expect("output dir");
        if let Err(e) = cmd_ergodic(desk, &out, &SeedSource::Config) {
            return verdict(false, e.to_string());
        }
        csvs.push(std::fs::read(out.path("time_averages.csv")).expect("csv written"));
    }
    verdict(
        csvs[0] == csvs[1] && !csvs[0].is_empty(),
        format!("time_averages.csv {} bytes, identical: {}", csvs[0].len(), csvs[0] == csvs[1]),
    )
}

fn report(name: &str, v: &Verdict, secs: f64) {
    println!("{name} {}: {} [{secs:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn main() -> ExitCode {
    let desk = RunConfig::preset(false);
    let mut all = true;
    let mut run = |name: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        report(name, &v, t.elapsed().as_secs_f64());
        all &= v.pass;
    };

    run("AC-1", &mut ac1);

    let t = Instant::now();
    let outputs: Result<Vec<EnsembleOutput>, _> = desk
        .run
        .initials
        .iter()
        .map(|&i| run_ensemble(&desk.ensemble_config(i, desk.scheme.n_modes)))
        .collect();
    println!("(desk-scale ensembles: {:.1}s)", t.elapsed().as_secs_f64());
    match outputs {
        Ok(outputs) => {
            run("AC-2", &mut || ac2(&outputs, &desk));
            run("AC-3", &mut || ac3(&outputs, desk.run.steps));
            let sine = outputs.iter().find(|o| o.config.initial == InitialDatum::Sine).expect("sine configured");
            run("AC-4", &mut || ac4(&desk, sine));
        }
        Err(e) => {
            for name in ["AC-2", "AC-3", "AC-4"] {
                run(name, &mut || verdict(false, e.to_string()));
            }
        }
    }
    run("AC-5", &mut ac5);
    run("AC-6", &mut || ac6(&desk));
    run("AC-7", &mut || ac7(&desk));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
