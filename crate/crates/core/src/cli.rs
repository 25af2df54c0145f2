//! Command-line driver: convergence tables, adaptive runs, kernel reports
//! and field export.
//!
//! Every option can come from a TOML file (`--config run.toml`) using the
//! field names of [`RunConfig`]; flags given on the command line win.
//!
//! ```toml
//! preset = "conv2d"
//! family = "box"
//! p = 1
//! levels = 5
//! csv = "table.csv"
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::{adaptive_loop, solve_and_estimate, AdaptError, AdaptiveHistory, AdaptiveOptions, StepRecord};
use crate::estimate::{true_error, EstimateError};
use crate::mesh::{ElementFamily, MeshError, SpaceTimeMesh};
use crate::problem::{conv2d, preset, ProblemError, WaveProblem, PRESET_NAMES};
use crate::solve::{kernel_report, KernelReport, SolveError, Technique};
use crate::spaces::{SpaceError, SpaceLayout};
use crate::vtk::{export_fields, VtkError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Vtk(#[from] VtkError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    /// Defaults to simplices.
    pub family: Option<ElementFamily>,
    pub p: usize,
    pub m: Option<usize>,
    pub technique: Technique,
    pub tol: f64,
    pub alpha: f64,
    /// Number of uniform meshes in a convergence study.
    pub levels: usize,
    /// Cells per axis on the coarsest convergence mesh.
    pub coarse: usize,
    /// Explicit cells per axis for adaptive, kernel-report and export runs.
    pub counts: Option<Vec<usize>>,
    pub steps: usize,
    pub theta: f64,
    /// Overrides the preset's wave speed; several values sweep kernel reports.
    pub wave_speeds: Vec<f64>,
    /// Levels whose unknown count exceeds this are skipped.
    pub max_dofs: usize,
    /// Worker threads; 0 runs serially.
    pub threads: Option<usize>,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    /// VTK file for `export`, directory for `adaptive`.
    pub vtk: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "conv2d".into(),
            family: None,
            p: 1,
            m: None,
            technique: Technique::Cg,
            tol: 1e-10,
            alpha: 1e-9,
            levels: 4,
            coarse: 2,
            counts: None,
            steps: 22,
            theta: 0.5,
            wave_speeds: Vec::new(),
            max_dofs: 3_000_000,
            threads: None,
            csv: None,
            json: None,
            vtk: None,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stdpg", version, about = "Spacetime DPG solver for the acoustic wave system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Convergence,
    Adaptive,
    KernelReport,
    Export,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Uniform refinement study with observed orders
    Convergence(Args),
    /// Solve, estimate, mark and bisect
    Adaptive(Args),
    /// Dimension and facet support of ker B1
    KernelReport(Args),
    /// Solve once and write cell data as legacy VTK
    Export(Args),
}

impl Command {
    pub fn split(self) -> (CommandKind, Args) {
        match self {
            Command::Convergence(a) => (CommandKind::Convergence, a),
            Command::Adaptive(a) => (CommandKind::Adaptive, a),
            Command::KernelReport(a) => (CommandKind::KernelReport, a),
            Command::Export(a) => (CommandKind::Export, a),
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Args {
    /// TOML file with `RunConfig` keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// simplex | box
    #[arg(long)]
    pub family: Option<ElementFamily>,
    #[arg(short, long)]
    pub p: Option<usize>,
    #[arg(short, long)]
    pub m: Option<usize>,
    /// cg | regularized
    #[arg(long)]
    pub technique: Option<Technique>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub coarse: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long = "wave-speed", value_delimiter = ',')]
    pub wave_speeds: Option<Vec<f64>>,
    #[arg(long)]
    pub max_dofs: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub vtk: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path)
    }

    /// Config file first (if any), then every flag that was given.
    pub fn resolve(args: Args) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = args.$f { cfg.$f = v; }
            )*};
        }
        macro_rules! take_opt {
            ($($f:ident),*) => {$(
                if args.$f.is_some() { cfg.$f = args.$f; }
            )*};
        }
        take!(preset, p, technique, tol, alpha, levels, coarse, steps, theta, wave_speeds, max_dofs);
        take_opt!(family, m, counts, threads, csv, json, vtk);
        Ok(cfg)
    }

    pub fn family(&self) -> ElementFamily {
        self.family.unwrap_or(ElementFamily::Simplex)
    }

    pub fn validate(&self, kind: CommandKind) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !PRESET_NAMES.contains(&self.preset.as_str()) {
            return bad(format!("unknown preset `{}` (one of {})", self.preset, PRESET_NAMES.join(", ")));
        }
        let problem = preset::<f64>(&self.preset)?;
        let dim = problem.dim();
        if self.p > 4 {
            return bad(format!("p = {} exceeds the supported maximum 4", self.p));
        }
        if let Some(m) = self.m {
            if m < self.p + 1 {
                return bad(format!("m = {m} must be at least p + 1 = {}", self.p + 1));
            }
        }
        if !(self.tol > 0.0) || !(self.alpha > 0.0) {
            return bad("tol and alpha must be positive".into());
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("theta = {} must lie in (0, 1]", self.theta));
        }
        if self.levels == 0 || self.coarse == 0 {
            return bad("levels and coarse must be at least 1".into());
        }
        if self.wave_speeds.iter().any(|c| !(*c > 0.0)) {
            return bad("wave speeds must be positive".into());
        }
        if let Some(counts) = &self.counts {
            if counts.len() != dim {
                return bad(format!("preset `{}` needs {dim} counts, got {}", self.preset, counts.len()));
            }
            if counts.contains(&0) {
                return bad("mesh counts must be positive (empty mesh)".into());
            }
        }
        match kind {
            CommandKind::Convergence if !problem.has_exact() => {
                bad(format!("preset `{}` has no exact solution to converge to", self.preset))
            }
            CommandKind::Adaptive if self.family() != ElementFamily::Simplex || dim != 2 => {
                bad("adaptive bisection needs triangles (a preset in one space dimension)".into())
            }
            CommandKind::Adaptive if self.steps == 0 => bad("steps must be at least 1".into()),
            _ => Ok(()),
        }
    }

    fn options(&self) -> AdaptiveOptions<f64> {
        let mut opts = AdaptiveOptions::new(self.p, self.theta, self.steps);
        opts.m = self.m;
        opts.technique = self.technique;
        opts.tol = self.tol;
        opts.alpha = self.alpha;
        opts
    }
}

/// The configured preset, with wave speed `c` when given. Manufactured
/// sources are regenerated so the exact solution stays consistent.
pub fn build_problem(cfg: &RunConfig, c: Option<f64>) -> Result<WaveProblem<f64>, CliError> {
    let mut problem = preset::<f64>(&cfg.preset)?;
    if let Some(c) = c {
        if cfg.preset == "conv2d" {
            problem = conv2d(c);
        } else {
            problem.wave_speed = c;
            if problem.has_exact() {
                problem.source = problem.manufacture_sources()?;
            }
        }
    }
    Ok(problem)
}

fn first_speed(cfg: &RunConfig) -> Option<f64> {
    cfg.wave_speeds.first().copied()
}

fn mesh_for(problem: &WaveProblem<f64>, counts: &[usize], family: ElementFamily) -> Result<SpaceTimeMesh<f64>, CliError> {
    Ok(SpaceTimeMesh::build_box_mesh(&problem.extents, counts, family)?)
}

fn layout_for(cfg: &RunConfig, mesh: &SpaceTimeMesh<f64>) -> Result<SpaceLayout<f64>, CliError> {
    Ok(match cfg.m {
        Some(m) => SpaceLayout::build(mesh, cfg.p, m)?,
        None => SpaceLayout::with_default_enrichment(mesh, cfg.p)?,
    })
}

/// Unknowns of the Schur system `(u, z_free)` without assembling it.
pub fn unknown_count(mesh: &SpaceTimeMesh<f64>, layout: &SpaceLayout<f64>) -> usize {
    layout.num_trial_dofs(mesh) + layout.essential_mask().iter().filter(|e| !**e).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub elements: usize,
    pub dofs: usize,
    pub error: f64,
    pub order: Option<f64>,
    pub eta: f64,
    pub iterations: usize,
    pub seconds: f64,
}

/// Uniform meshes with `coarse · 2^k` cells per axis, `k < levels`.
pub fn convergence(cfg: &RunConfig) -> Result<Vec<ConvergenceRow>, CliError> {
    cfg.validate(CommandKind::Convergence)?;
    let problem = build_problem(cfg, first_speed(cfg))?;
    let opts = cfg.options();
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for level in 0..cfg.levels {
        let n = cfg.coarse << level;
        let mesh = mesh_for(&problem, &vec![n; problem.dim()], cfg.family())?;
        let probe = layout_for(cfg, &mesh)?;
        let planned = unknown_count(&mesh, &probe);
        if planned > cfg.max_dofs {
            log::warn!("h = 1/{n}: {planned} unknowns exceed the budget of {}, stopping", cfg.max_dofs);
            break;
        }
        let clock = Instant::now();
        let (layout, sol, _, eta, dofs) = solve_and_estimate(&problem, &mesh, &opts)?;
        let seconds = clock.elapsed().as_secs_f64();
        let error = true_error(&problem, &mesh, &layout, &sol.u)?;
        if !sol.converged {
            log::warn!("h = 1/{n}: solver stopped at relative residual {:.2e}", sol.relative_residual);
        }
        let order = rows.last().map(|prev| (prev.error / error).log2());
        let row = ConvergenceRow {
            h: (problem.extents[0].1 - problem.extents[0].0) / n as f64,
            elements: mesh.num_elements(),
            dofs,
            error,
            order,
            eta,
            iterations: sol.iterations,
            seconds,
        };
        log::info!("{row:?}");
        rows.push(row);
    }
    Ok(rows)
}

pub fn adaptive(cfg: &RunConfig) -> Result<AdaptiveHistory<f64>, CliError> {
    cfg.validate(CommandKind::Adaptive)?;
    let problem = build_problem(cfg, first_speed(cfg))?;
    let counts = cfg.counts.clone().unwrap_or_else(|| problem.coarse_counts.clone());
    let mesh = mesh_for(&problem, &counts, ElementFamily::Simplex)?;
    let mut opts = cfg.options();
    opts.export_dir = cfg.vtk.clone();
    Ok(adaptive_loop(&problem, mesh, &opts)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSummary {
    pub wave_speed: f64,
    pub elements: usize,
    pub report: KernelReport,
}

/// One report per wave speed (the preset's own when none are configured).
pub fn kernel(cfg: &RunConfig) -> Result<Vec<KernelSummary>, CliError> {
    cfg.validate(CommandKind::KernelReport)?;
    let base = preset::<f64>(&cfg.preset)?;
    let speeds = if cfg.wave_speeds.is_empty() {
        vec![base.wave_speed]
    } else {
        cfg.wave_speeds.clone()
    };
    let counts = cfg.counts.clone().unwrap_or_else(|| vec![cfg.coarse; base.dim()]);
    speeds
        .into_iter()
        .map(|c| {
            let problem = build_problem(cfg, Some(c))?;
            let mesh = mesh_for(&problem, &counts, cfg.family())?;
            let layout = layout_for(cfg, &mesh)?;
            let report = kernel_report(&mesh, &layout, &problem)?;
            Ok(KernelSummary {
                wave_speed: c,
                elements: mesh.num_elements(),
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub elements: usize,
    pub dofs: usize,
    pub eta: f64,
    pub error: Option<f64>,
}

pub fn export(cfg: &RunConfig) -> Result<ExportSummary, CliError> {
    cfg.validate(CommandKind::Export)?;
    let problem = build_problem(cfg, first_speed(cfg))?;
    let counts = cfg.counts.clone().unwrap_or_else(|| vec![cfg.coarse; problem.dim()]);
    let mesh = mesh_for(&problem, &counts, cfg.family())?;
    let (layout, sol, indicators, eta, dofs) = solve_and_estimate(&problem, &mesh, &cfg.options())?;
    let error = match problem.has_exact() {
        true => Some(true_error(&problem, &mesh, &layout, &sol.u)?),
        false => None,
    };
    let path = cfg.vtk.clone().unwrap_or_else(|| PathBuf::from("solution.vtk"));
    export_fields(&path, &mesh, &layout, &sol.u, Some(&indicators))?;
    Ok(ExportSummary {
        path,
        elements: mesh.num_elements(),
        dofs,
        eta,
        error,
    })
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunRecord<'a, R: Serialize> {
    command: CommandKind,
    config: &'a RunConfig,
    seconds: f64,
    results: R,
}

fn write_json<R: Serialize>(
    path: &Path,
    kind: CommandKind,
    cfg: &RunConfig,
    seconds: f64,
    results: R,
) -> Result<(), CliError> {
    let record = RunRecord {
        command: kind,
        config: cfg,
        seconds,
        results,
    };
    let text = serde_json::to_string_pretty(&record)?;
    fs::write(path, text).map_err(io_err(path))
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

pub fn render_convergence(rows: &[ConvergenceRow]) -> String {
    let mut out = format!(
        "{:>9} {:>8} {:>9} {:>11} {:>6} {:>11} {:>6} {:>8}\n",
        "h", "elements", "dofs", "error", "order", "eta", "iters", "seconds"
    );
    for r in rows {
        out += &format!(
            "{:>9} {:>8} {:>9} {:>11.4e} {:>6} {:>11.4e} {:>6} {:>8.2}\n",
            format!("1/{}", (1.0 / r.h).round()),
            r.elements,
            r.dofs,
            r.error,
            fmt_opt(r.order, 2),
            r.eta,
            r.iterations,
            r.seconds
        );
    }
    out
}

pub fn render_history(records: &[StepRecord]) -> String {
    let mut out = format!(
        "{:>4} {:>8} {:>9} {:>11} {:>11} {:>7} {:>8}\n",
        "step", "elements", "dofs", "eta", "error", "marked", "seconds"
    );
    for r in records {
        out += &format!(
            "{:>4} {:>8} {:>9} {:>11.4e} {:>11} {:>7} {:>8.2}\n",
            r.step,
            r.elements,
            r.dofs,
            r.eta,
            r.true_error.map_or_else(|| "-".into(), |e| format!("{e:.4e}")),
            r.marked,
            r.seconds
        );
    }
    out
}

pub fn render_kernel(summaries: &[KernelSummary]) -> String {
    let mut out = String::new();
    for s in summaries {
        let r = &s.report;
        out += &format!(
            "c = {}: {} elements, {} free skeleton dofs, rank {}, dim ker B1 = {}\n",
            s.wave_speed, s.elements, r.columns, r.rank, r.kernel_dimension
        );
        out += &format!(
            "  sigma_max {:.3e}, gap {:.3e} | {:.3e}, characteristic facets {:?}\n",
            r.sigma_max, r.gap.0, r.gap.1, r.characteristic_facets
        );
        for (i, sup) in r.supports.iter().enumerate() {
            out += &format!("  kernel vector {i}: facets {sup:?}\n");
        }
    }
    out
}

fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global().is_err() {
            log::warn!("thread pool already initialised");
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (kind, args) = cli.command.split();
    let cfg = RunConfig::resolve(args)?;
    cfg.validate(kind)?;
    init_threads(cfg.threads);
    let clock = Instant::now();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let seconds = || clock.elapsed().as_secs_f64();
    match kind {
        CommandKind::Convergence => {
            let rows = convergence(&cfg)?;
            let _ = write!(out, "{}", render_convergence(&rows));
            if let Some(p) = &cfg.csv {
                write_csv(p, &rows)?;
            }
            if let Some(p) = &cfg.json {
                write_json(p, kind, &cfg, seconds(), &rows)?;
            }
        }
        CommandKind::Adaptive => {
            let history = adaptive(&cfg)?;
            let _ = write!(out, "{}", render_history(&history.records));
            if let Some(p) = &cfg.csv {
                write_csv(p, &history.records)?;
            }
            if let Some(p) = &cfg.json {
                write_json(p, kind, &cfg, seconds(), &history.records)?;
            }
        }
        CommandKind::KernelReport => {
            let summaries = kernel(&cfg)?;
            let _ = write!(out, "{}", render_kernel(&summaries));
            if let Some(p) = &cfg.json {
                write_json(p, kind, &cfg, seconds(), &summaries)?;
            }
        }
        CommandKind::Export => {
            let s = export(&cfg)?;
            let _ = writeln!(
                out,
                "wrote {} ({} elements, {} dofs, eta {:.4e}, error {})",
                s.path.display(),
                s.elements,
                s.dofs,
                s.eta,
                fmt_opt(s.error, 6)
            );
            if let Some(p) = &cfg.json {
                write_json(p, kind, &cfg, seconds(), &s)?;
            }
        }
    }
    Ok(())
}
