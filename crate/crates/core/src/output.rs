//! CSV and JSON artifacts.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every `f64`; with deterministic ensembles this makes reruns byte-identical.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::ergodic::{ErgodicReport, MomentSeries};
use crate::error::Result;

pub const TIME_AVERAGES_HEADER: &str = "step,t,functional,initial,running_avg,stderr";
pub const MOMENTS_HEADER: &str = "series,N,beta,step,t,mean,stderr";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per `(step, functional, initial)`, grouped by step.
pub fn write_time_averages<W: Write>(mut w: W, tau: f64, reports: &[ErgodicReport]) -> io::Result<()> {
    writeln!(w, "{TIME_AVERAGES_HEADER}")?;
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let n_rows = first.series.first().map_or(0, |s| s.steps.len());
    for row in 0..n_rows {
        let step = first.series[0].steps[row];
        for (fi, fs) in first.series.iter().enumerate() {
            for r in reports {
                let s = &r.series[fi];
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    step,
                    fmt_f64(step as f64 * tau),
                    fs.functional,
                    r.initial,
                    fmt_f64(s.running_avg[row]),
                    fmt_f64(s.stderr[row])
                )?;
            }
        }
    }
    Ok(())
}

/// Which quantity a moment series holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    /// `E‖X_j‖²`
    XNormSq,
    /// `E‖W_j‖_β^p`
    WSobolev,
}

impl MomentKind {
    pub fn tag(&self) -> &'static str {
        match self {
            MomentKind::XNormSq => "x_norm_sq",
            MomentKind::WSobolev => "w_sobolev_sq",
        }
    }
}

pub struct MomentBlock<'a> {
    pub kind: MomentKind,
    pub n_modes: usize,
    /// empty for `x_norm_sq`
    pub beta: Option<f64>,
    pub series: &'a MomentSeries,
}

pub fn write_moments<W: Write>(mut w: W, tau: f64, blocks: &[MomentBlock<'_>]) -> io::Result<()> {
    writeln!(w, "{MOMENTS_HEADER}")?;
    for b in blocks {
        let beta = b.beta.map(fmt_f64).unwrap_or_default();
        for ((&step, &mean), &se) in b.series.steps.iter().zip(&b.series.values).zip(&b.series.stderrs) {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                b.kind.tag(),
                b.n_modes,
                beta,
                step,
                fmt_f64(step as f64 * tau),
                fmt_f64(mean),
                fmt_f64(se)
            )?;
        }
    }
    Ok(())
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    /// `config`, or the environment variable that overrode it
    pub seed_source: String,
    /// the effective configuration as a reparseable document
    pub config: String,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, seed_source: &str, config: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            seed_source: seed_source.to_string(),
            config,
        }
    }
}

/// Output directory of one command invocation.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_with<F>(&self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
    {
        let path = self.path(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text)?;
        Ok(path)
    }
}
