//! Run configuration documents.
//!
//! A document is a list of `section.key = value` lines with `#` comments.
//! Sections are `model`, `scheme`, `run` and `output`; lists are
//! comma-separated. Unknown or repeated keys are syntax errors, and every
//! constraint violation is collected before the document is rejected.
//!
//! ```text
//! model.name = allen_cahn
//! model.epsilon = 0.5
//! model.diffusion = paper          # or zero, constant:<value>
//! scheme.n_modes = 10
//! scheme.tau = 0.05
//! run.steps = 2000
//! run.paths = 200
//! run.seed = 1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::ergodic::{AgreementTolerance, EnsembleConfig, FunctionalId, InitialDatum};
use crate::error::{Error, Result};
use crate::model::{default_quadrature, DiffusionSpec, DriftSpec, ModelSpec};
use crate::noise::derive_seed;
use crate::scheme::SchemeParams;

/// Environment variable that overrides `run.seed`.
pub const SEED_ENV: &str = "SPDE_ERGO_SEED";

/// The full-size Allen–Cahn experiment: 1000 paths.
pub const PAPER_PRESET: &str = include_str!("../../../configs/paper.conf");
/// The same experiment at 200 paths.
pub const DESK_PRESET: &str = include_str!("../../../configs/desk.conf");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn tag(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unknown output format '{s}' (expected csv or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeSection {
    pub n_modes: usize,
    pub tau: f64,
    /// defaults to `n_modes`
    pub noise_modes: Option<usize>,
    /// defaults to `max(4N, N + N_w + 1)`
    pub quadrature: Option<usize>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub steps: u64,
    pub paths: usize,
    pub seed: u64,
    pub burn_in: u64,
    pub initials: Vec<InitialDatum>,
    pub functionals: Vec<FunctionalId>,
    pub moment_betas: Vec<f64>,
    pub moment_p: u32,
    /// mode counts of the convolution sweep
    pub convolution_modes: Vec<usize>,
    pub agreement_abs_tol: f64,
    pub agreement_rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSection {
    pub directory: Option<String>,
    pub formats: Vec<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub scheme: SchemeSection,
    pub run: RunSection,
    pub output: OutputSection,
}

const KEYS: &[&str] = &[
    "model.name",
    "model.epsilon",
    "model.diffusion",
    "scheme.n_modes",
    "scheme.tau",
    "scheme.noise_modes",
    "scheme.quadrature",
    "scheme.newton_tol",
    "scheme.newton_max_iter",
    "run.steps",
    "run.paths",
    "run.seed",
    "run.burn_in",
    "run.initials",
    "run.functionals",
    "run.moment_betas",
    "run.moment_p",
    "run.convolution_modes",
    "run.agreement_abs_tol",
    "run.agreement_rel_tol",
    "output.directory",
    "output.formats",
];

const REQUIRED: &[&str] = &[
    "model.name",
    "model.diffusion",
    "scheme.n_modes",
    "scheme.tau",
    "run.steps",
    "run.paths",
    "run.seed",
];

/// Keys whose value may be an empty list.
const LIST_KEYS: &[&str] = &[
    "run.initials",
    "run.functionals",
    "run.moment_betas",
    "run.convolution_modes",
    "output.formats",
];

/// Splits a document into `key -> (line, value)`.
fn tokenize(text: &str) -> Result<BTreeMap<&str, (usize, &str)>> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let syntax = |message: String| Error::ConfigSyntax { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected 'section.key = value', found '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(syntax(format!("unknown key '{key}'")));
        }
        if value.is_empty() && !LIST_KEYS.contains(&key) {
            return Err(syntax(format!("missing value for '{key}'")));
        }
        if let Some((first, _)) = entries.insert(key, (line, value)) {
            return Err(syntax(format!("duplicate key '{key}' (first set on line {first})")));
        }
    }
    Ok(entries)
}

struct Fields<'a> {
    entries: BTreeMap<&'a str, (usize, &'a str)>,
    problems: Vec<String>,
}

impl<'a> Fields<'a> {
    fn get<T: FromStr>(&mut self, key: &str) -> Option<T> {
        let &(line, value) = self.entries.get(key)?;
        match value.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.problems.push(format!("line {line}: cannot parse {key} = '{value}'"));
                None
            }
        }
    }

    fn list<T: FromStr<Err = E>, E: std::fmt::Display>(&mut self, key: &str) -> Option<Vec<T>> {
        let &(line, value) = self.entries.get(key)?;
        let mut out = Vec::new();
        if value.is_empty() {
            return Some(out);
        }
        for item in value.split(',').map(str::trim) {
            match item.parse() {
                Ok(v) => out.push(v),
                Err(e) => {
                    self.problems.push(format!("line {line}: {key}: bad item '{item}': {e}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let entries = tokenize(text)?;
    let mut f = Fields {
        entries,
        problems: Vec::new(),
    };
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !f.has(k)).collect();
    if !missing.is_empty() {
        f.problems.push(format!("missing required keys: {}", missing.join(", ")));
    }
    let name: Option<String> = f.get("model.name");
    let epsilon: Option<f64> = f.get("model.epsilon");
    let diffusion: Option<DiffusionSpec> = match f.entries.get("model.diffusion").copied() {
        Some((line, v)) => v.parse().map_err(|e| f.problems.push(format!("line {line}: {e}"))).ok(),
        None => None,
    };
    let drift = match name.as_deref() {
        Some("allen_cahn") => match epsilon {
            Some(eps) if eps > 0.0 && eps.is_finite() => Some(DriftSpec::AllenCahn { epsilon: eps }),
            Some(eps) => {
                f.problems.push(format!("model.epsilon = {eps} must be positive"));
                None
            }
            None => {
                if f.has("model.name") && !f.has("model.epsilon") {
                    f.problems.push("model.epsilon is required for allen_cahn".into());
                }
                None
            }
        },
        Some("heat") => {
            if f.has("model.epsilon") {
                f.problems.push("model.epsilon does not apply to the heat model".into());
            }
            Some(DriftSpec::Zero)
        }
        Some(other) => {
            f.problems.push(format!("unknown model.name '{other}' (expected allen_cahn or heat)"));
            None
        }
        None => None,
    };

    let scheme = SchemeSection {
        n_modes: f.get("scheme.n_modes").unwrap_or(0),
        tau: f.get("scheme.tau").unwrap_or(f64::NAN),
        noise_modes: f.get("scheme.noise_modes"),
        quadrature: f.get("scheme.quadrature"),
        newton_tol: f.get("scheme.newton_tol").unwrap_or(1e-10),
        newton_max_iter: f.get("scheme.newton_max_iter").unwrap_or(50),
    };
    let n_modes = scheme.n_modes;
    let run = RunSection {
        steps: f.get("run.steps").unwrap_or(0),
        paths: f.get("run.paths").unwrap_or(0),
        seed: f.get("run.seed").unwrap_or(0),
        burn_in: f.get("run.burn_in").unwrap_or(0),
        initials: f.list("run.initials").unwrap_or_else(|| InitialDatum::ALL.to_vec()),
        functionals: f.list("run.functionals").unwrap_or_else(|| FunctionalId::ALL.to_vec()),
        moment_betas: f.list("run.moment_betas").unwrap_or_else(|| vec![0.0, 0.25, 0.4]),
        moment_p: f.get("run.moment_p").unwrap_or(2),
        convolution_modes: f.list("run.convolution_modes").unwrap_or_else(|| vec![n_modes]),
        agreement_abs_tol: f.get("run.agreement_abs_tol").unwrap_or(0.01),
        agreement_rel_tol: f.get("run.agreement_rel_tol").unwrap_or(0.02),
    };
    let output = OutputSection {
        directory: f.get("output.directory"),
        formats: f
            .list("output.formats")
            .unwrap_or_else(|| vec![OutputFormat::Csv, OutputFormat::Json]),
    };

    let mut problems = f.problems;
    let (Some(drift), Some(diffusion)) = (drift, diffusion) else {
        return Err(Error::ConfigInvalid(problems));
    };
    let cfg = RunConfig {
        model: ModelSpec { drift, diffusion },
        scheme,
        run,
        output,
    };
    problems.extend(cfg.problems());
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::ConfigInvalid(problems))
    }
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}

impl RunConfig {
    /// Parses one of the shipped presets.
    pub fn preset(paper: bool) -> Self {
        parse_config(if paper { PAPER_PRESET } else { DESK_PRESET }).expect("shipped preset is valid")
    }

    /// Every violated constraint, including the scheme checks for each mode
    /// count that will be simulated.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let s = &self.scheme;
        let r = &self.run;
        if s.n_modes == 0 {
            p.push("scheme.n_modes must be positive".into());
        }
        if s.newton_tol.is_nan() || s.newton_tol <= 0.0 {
            p.push(format!("scheme.newton_tol = {} must be positive", s.newton_tol));
        }
        if r.steps == 0 {
            p.push("run.steps must be positive".into());
        }
        if r.paths == 0 {
            p.push("run.paths must be positive".into());
        }
        if r.burn_in >= r.steps && r.steps > 0 {
            p.push(format!("run.burn_in = {} must be below run.steps = {}", r.burn_in, r.steps));
        }
        if r.initials.is_empty() || has_duplicates(&r.initials) {
            p.push("run.initials must list distinct initial data".into());
        }
        if r.functionals.is_empty() || has_duplicates(&r.functionals) {
            p.push("run.functionals must list distinct functionals".into());
        }
        for &b in &r.moment_betas {
            if !(0.0..0.5).contains(&b) {
                p.push(format!("run.moment_betas: beta = {b} must lie in [0, 1/2)"));
            }
        }
        if r.moment_p < 2 || !r.moment_p.is_multiple_of(2) {
            p.push(format!("run.moment_p = {} must be even and >= 2", r.moment_p));
        }
        if r.convolution_modes.is_empty() || r.convolution_modes.contains(&0) {
            p.push("run.convolution_modes must list positive mode counts".into());
        }
        if [r.agreement_abs_tol, r.agreement_rel_tol].iter().any(|t| t.is_nan() || *t < 0.0) {
            p.push("agreement tolerances must be nonnegative".into());
        }
        if self.output.formats.is_empty() {
            p.push("output.formats must not be empty".into());
        }
        if s.n_modes == 0 || s.tau.is_nan() {
            return p;
        }
        match self.model.build() {
            Ok(model) => {
                let mut modes = vec![s.n_modes];
                modes.extend(r.convolution_modes.iter().filter(|&&n| n > 0));
                modes.dedup();
                for n in modes {
                    if let Err(Error::InvalidParams(v)) = self.scheme_params(n).validate(&model) {
                        for msg in v {
                            let msg = if n == s.n_modes { msg } else { format!("N = {n}: {msg}") };
                            if !p.contains(&msg) {
                                p.push(msg);
                            }
                        }
                    }
                }
            }
            Err(e) => p.push(e.to_string()),
        }
        p
    }

    /// Scheme parameters for `n_modes` modes; omitted noise modes and
    /// quadrature take their defaults for that mode count.
    pub fn scheme_params(&self, n_modes: usize) -> SchemeParams {
        let nw = self.scheme.noise_modes.unwrap_or(n_modes);
        SchemeParams {
            n_modes,
            tau: self.scheme.tau,
            noise_modes: nw,
            quadrature: self.scheme.quadrature.unwrap_or_else(|| default_quadrature(n_modes, nw)),
            newton_tol: self.scheme.newton_tol,
            newton_max_iter: self.scheme.newton_max_iter,
        }
    }

    /// Seed of the ensemble started from `initial`; each initial datum gets
    /// independent noise.
    pub fn seed_for(&self, initial: InitialDatum) -> u64 {
        derive_seed(self.run.seed, initial.index())
    }

    pub fn ensemble_config(&self, initial: InitialDatum, n_modes: usize) -> EnsembleConfig {
        EnsembleConfig {
            params: self.scheme_params(n_modes),
            model: self.model,
            initial,
            n_paths: self.run.paths,
            n_steps: self.run.steps,
            master_seed: self.seed_for(initial),
            functionals: self.run.functionals.clone(),
            moment_betas: self.run.moment_betas.clone(),
            moment_p: self.run.moment_p,
            burn_in: self.run.burn_in,
        }
    }

    pub fn agreement_tolerance(&self) -> AgreementTolerance {
        AgreementTolerance {
            abs_bounded: self.run.agreement_abs_tol,
            rel_norm_sq: self.run.agreement_rel_tol,
            ..AgreementTolerance::default()
        }
    }

    pub fn writes(&self, format: OutputFormat) -> bool {
        self.output.formats.contains(&format)
    }

    /// Applies a seed from [`SEED_ENV`] if set; returns whether it did.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<bool> {
        match value {
            None => Ok(false),
            Some(v) => {
                self.run.seed = v.trim().parse().map_err(|_| {
                    Error::ConfigInvalid(vec![format!("{SEED_ENV} = '{v}' is not an unsigned integer")])
                })?;
                Ok(true)
            }
        }
    }

    /// Serializes to a document that parses back to an equal config.
    pub fn to_document(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
        }
        let mut d = String::new();
        let s = &self.scheme;
        let r = &self.run;
        match self.model.drift {
            DriftSpec::AllenCahn { epsilon } => {
                let _ = writeln!(d, "model.name = allen_cahn");
                let _ = writeln!(d, "model.epsilon = {epsilon:?}");
            }
            DriftSpec::Zero => {
                let _ = writeln!(d, "model.name = heat");
            }
        }
        let _ = writeln!(d, "model.diffusion = {}", self.model.diffusion);
        let _ = writeln!(d, "scheme.n_modes = {}", s.n_modes);
        let _ = writeln!(d, "scheme.tau = {:?}", s.tau);
        if let Some(nw) = s.noise_modes {
            let _ = writeln!(d, "scheme.noise_modes = {nw}");
        }
        if let Some(q) = s.quadrature {
            let _ = writeln!(d, "scheme.quadrature = {q}");
        }
        let _ = writeln!(d, "scheme.newton_tol = {:?}", s.newton_tol);
        let _ = writeln!(d, "scheme.newton_max_iter = {}", s.newton_max_iter);
        let _ = writeln!(d, "run.steps = {}", r.steps);
        let _ = writeln!(d, "run.paths = {}", r.paths);
        let _ = writeln!(d, "run.seed = {}", r.seed);
        let _ = writeln!(d, "run.burn_in = {}", r.burn_in);
        let _ = writeln!(d, "run.initials = {}", join(&r.initials));
        let _ = writeln!(d, "run.functionals = {}", join(&r.functionals));
        let betas: Vec<String> = r.moment_betas.iter().map(|b| format!("{b:?}")).collect();
        let _ = writeln!(d, "run.moment_betas = {}", betas.join(", "));
        let _ = writeln!(d, "run.moment_p = {}", r.moment_p);
        let _ = writeln!(d, "run.convolution_modes = {}", join(&r.convolution_modes));
        let _ = writeln!(d, "run.agreement_abs_tol = {:?}", r.agreement_abs_tol);
        let _ = writeln!(d, "run.agreement_rel_tol = {:?}", r.agreement_rel_tol);
        if let Some(dir) = &self.output.directory {
            let _ = writeln!(d, "output.directory = {dir}");
        }
        let formats: Vec<&str> = self.output.formats.iter().map(OutputFormat::tag).collect();
        let _ = writeln!(d, "output.formats = {}", formats.join(", "));
        d
    }
}
