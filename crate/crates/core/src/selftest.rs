//! Fast invariant suites run by `spde-ergo selftest`.
//!
//! Each suite checks one exact property on seeded random inputs and reports
//! the worst deviation it saw. [`SelftestOptions`] can perturb the setup so
//! that a suite is seen to fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ergodic::{run_ensemble, EnsembleConfig, InitialDatum};
use crate::model::{
    default_quadrature, nemytskii_drift, nemytskii_jacobian, paper_diffusion, validate_step_constraint,
    CoefficientModel, DiffusionSpec, ModelSpec,
};
use crate::scheme::{Dieg, SchemeParams};
use crate::spectral::{analyze_weighted, eigenvalues, geometric_decay_sum, synthesize, Horizon, SpectralCoeffs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelftestOptions {
    pub epsilon: f64,
    pub tau: f64,
    pub n_modes: usize,
    /// multiplies the analysis quadrature weight
    pub analyze_weight_scale: f64,
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            tau: 0.05,
            n_modes: 10,
            analyze_weight_scale: 1.0,
            seed: 12345,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub pass: bool,
    /// worst observed deviation
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub options: SelftestOptions,
    pub suites: Vec<SuiteResult>,
    pub pass: bool,
}

fn random_coeffs(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SpectralCoeffs {
    SpectralCoeffs::new((0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).expect("finite")
}

fn suite(name: &'static str, worst: f64, tolerance: f64, detail: String) -> SuiteResult {
    SuiteResult {
        name,
        pass: worst <= tolerance,
        worst,
        tolerance,
        detail,
    }
}

fn failed(name: &'static str, detail: String) -> SuiteResult {
    SuiteResult {
        name,
        pass: false,
        worst: f64::NAN,
        tolerance: f64::NAN,
        detail,
    }
}

pub fn parseval(opts: &SelftestOptions) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=16);
        let q = n + rng.random_range(0..48);
        let c = random_coeffs(&mut rng, n, 10.0);
        let grid = synthesize(&c, q).expect("q >= n");
        let weight = opts.analyze_weight_scale / (q + 1) as f64;
        let back = analyze_weighted(&grid, n, weight).expect("q >= n");
        worst = back
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    suite("parseval", worst, 1e-12, "max |analyze(synthesize(c)) - c| over 200 random c".into())
}

pub fn monotonicity(opts: &SelftestOptions) -> SuiteResult {
    const NAME: &str = "monotonicity";
    let model = match CoefficientModel::allen_cahn(opts.epsilon, paper_diffusion(), 3.0) {
        Ok(m) => m,
        Err(e) => return failed(NAME, e.to_string()),
    };
    let c0 = validate_step_constraint(model.constants(), opts.tau).c0;
    if c0 <= 0.0 {
        return failed(NAME, format!("C0 = 1 - (K1 - λ1)·tau = {c0:.6} is not positive"));
    }
    let n = opts.n_modes;
    let q = default_quadrature(n, n);
    let lambda = eigenvalues(n);
    let f_hat = |x: &SpectralCoeffs| -> SpectralCoeffs {
        let f = nemytskii_drift(x, &model, q).expect("quadrature above floor");
        let v = x
            .as_slice()
            .iter()
            .zip(&lambda)
            .zip(f.as_slice())
            .map(|((x, l), f)| (1.0 + opts.tau * l) * x - opts.tau * f)
            .collect();
        SpectralCoeffs::new(v).expect("finite")
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 1);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let x = random_coeffs(&mut rng, n, 2.0);
        let y = random_coeffs(&mut rng, n, 2.0);
        let d = x.sub(&y);
        let fd = f_hat(&x).sub(&f_hat(&y));
        let inner = c0 * d.norm_sq() - d.dot(&fd);
        let expand = c0 * d.norm() - fd.norm();
        worst = worst.max(inner).max(expand);
    }
    suite(
        NAME,
        worst,
        1e-8,
        format!("C0 = {c0:.6}; max shortfall of <x-y, F(x)-F(y)> and |F(x)-F(y)| over 1000 pairs"),
    )
}

fn scheme(opts: &SelftestOptions) -> std::result::Result<Dieg, String> {
    let model = CoefficientModel::allen_cahn(opts.epsilon, paper_diffusion(), 3.0).map_err(|e| e.to_string())?;
    Dieg::new(SchemeParams::new(opts.n_modes, opts.tau), model).map_err(|e| e.to_string())
}

pub fn newton_uniqueness(opts: &SelftestOptions) -> SuiteResult {
    const NAME: &str = "newton_uniqueness";
    let dieg = match scheme(opts) {
        Ok(d) => d,
        Err(e) => return failed(NAME, e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let rhs = random_coeffs(&mut rng, opts.n_modes, 2.0);
        let g1 = random_coeffs(&mut rng, opts.n_modes, 3.0);
        let g2 = random_coeffs(&mut rng, opts.n_modes, 3.0);
        match (dieg.implicit_solve(&rhs, &g1), dieg.implicit_solve(&rhs, &g2)) {
            (Ok((a, _)), Ok((b, _))) => worst = worst.max(a.sub(&b).norm()),
            (Err(e), _) | (_, Err(e)) => return failed(NAME, e.to_string()),
        }
    }
    suite(NAME, worst, 1e-8, "max distance of roots from two random starts, 50 systems".into())
}

pub fn jacobian_fd(opts: &SelftestOptions) -> SuiteResult {
    const NAME: &str = "jacobian_fd";
    let model = match CoefficientModel::allen_cahn(opts.epsilon, paper_diffusion(), 3.0) {
        Ok(m) => m,
        Err(e) => return failed(NAME, e.to_string()),
    };
    let n = opts.n_modes;
    let q = default_quadrature(n, n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 3);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = random_coeffs(&mut rng, n, 1.0);
        let jac = nemytskii_jacobian(&x, &model, q).expect("quadrature above floor");
        let scale = jac.amax().max(1.0);
        for m in 0..n {
            let mut plus = x.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[m] += h;
            minus[m] -= h;
            let fp = nemytskii_drift(&SpectralCoeffs::new(plus).expect("finite"), &model, q).expect("floor");
            let fm = nemytskii_drift(&SpectralCoeffs::new(minus).expect("finite"), &model, q).expect("floor");
            for k in 0..n {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                worst = worst.max((jac[(k, m)] - fd).abs() / scale);
            }
        }
    }
    suite(NAME, worst, 1e-6, "max relative Jacobian vs central-difference gap, 20 states".into())
}

pub fn geometric_sum(opts: &SelftestOptions) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let lambda: f64 = rng.random_range(0.1..1.0e4);
        let tau: f64 = rng.random_range(1e-3..0.99);
        let j = rng.random_range(1..=1000u64);
        let r2 = (1.0 + tau * lambda).powi(-2);
        let mut terms: Vec<f64> = (1..=j).map(|i| r2.powf(i as f64)).collect();
        terms.reverse();
        let brute: f64 = terms.iter().sum();
        let closed = geometric_decay_sum(lambda, tau, Horizon::Steps(j));
        worst = worst.max((closed - brute).abs() / brute);
    }
    suite("geometric_sum", worst, 1e-12, "max relative gap to direct summation, 100 draws".into())
}

pub fn determinism(opts: &SelftestOptions) -> SuiteResult {
    const NAME: &str = "determinism";
    let mut cfg = EnsembleConfig::new(
        SchemeParams::new(opts.n_modes, opts.tau),
        ModelSpec::allen_cahn(opts.epsilon, DiffusionSpec::Paper),
        InitialDatum::MixPlus,
        8,
        50,
        opts.seed,
    );
    cfg.burn_in = 10;
    match (run_ensemble(&cfg), run_ensemble(&cfg)) {
        (Ok(a), Ok(b)) => {
            let same = a.report == b.report && a.x_panel == b.x_panel && a.w_panels == b.w_panels;
            suite(
                NAME,
                if same { 0.0 } else { 1.0 },
                0.0,
                "two identical 8-path ensembles compared bit for bit".into(),
            )
        }
        (Err(e), _) | (_, Err(e)) => failed(NAME, e.to_string()),
    }
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let suites = vec![
        parseval(opts),
        monotonicity(opts),
        newton_uniqueness(opts),
        jacobian_fd(opts),
        geometric_sum(opts),
        determinism(opts),
    ];
    SelftestReport {
        options: *opts,
        pass: suites.iter().all(|s| s.pass),
        suites,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_build_passes() {
        let r = run_selftest(&SelftestOptions::default());
        for s in &r.suites {
            assert!(s.pass, "{s:?}");
        }
        assert!(r.pass);
    }

    #[test]
    fn step_violation_fails_monotonicity() {
        // ε = 0.1 gives K1 = 100 and C0 = 1 - (100 - π²)·0.05 < 0
        let opts = SelftestOptions { epsilon: 0.1, ..Default::default() };
        let m = monotonicity(&opts);
        assert!(!m.pass);
        assert!(m.detail.contains("not positive"), "{}", m.detail);
        assert!(!newton_uniqueness(&opts).pass);
    }

    #[test]
    fn perturbed_weights_fail_parseval() {
        let opts = SelftestOptions { analyze_weight_scale: 1.0 + 1e-6, ..Default::default() };
        assert!(!parseval(&opts).pass);
        assert!(monotonicity(&opts).pass);
    }
}
