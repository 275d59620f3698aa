//! Batch entry points: `run`, `verify`, `converge-study` and `extend`.
//!
//! A run is configured by a flat JSON object (see [`RunConfig`]); missing keys
//! take the benchmark defaults and the effective configuration is echoed into
//! every manifest.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 invalid config or
//! missing artifacts, 3 the Picard iteration did not converge, 4 I/O failure,
//! 5 continuation refused.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::characteristics::{flow_roundtrip_error, trace_path};
use crate::diagnostics::{
    check_lemma1, check_lemma2, check_lemma4, check_support, decay_exponents, duhamel_residual, field_bound_ratio,
    field_compatibility, field_impulse, halton, neutrality_drift, volume_defect, Lemma1Settings, LemmaReport,
    SyntheticFieldSpec, SyntheticProfile,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::export::{
    read_field_csv, read_manifest, summary_rows, write_f_snapshots, write_field_snapshots, write_json,
    write_manifest, write_path_csv, write_probes_csv, write_summary_csv, write_table_csv,
};
use crate::field::{derivative_mismatch, TailMode};
use crate::grid::PhaseGrid;
use crate::oracle::{max_node_difference, splitting_solve, OracleConfig};
use crate::picard::{extend_outcome, solve_outcome, IterationTrace, SolutionHistory, SolveOptions};
use crate::profiles::{make_initial_data, BackgroundProfile, InitialData, PerturbationShape};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_REFUSED: i32 = 5;

/// Limit on `K = max|∂_x E - ρ| / (Δx² max|ρ|)` for stored and computed fields.
pub const FIELD_COMPATIBILITY_LIMIT: f64 = 2.0;
pub const ROUNDTRIP_LIMIT: f64 = 1e-8;
pub const VOLUME_LIMIT: f64 = 1e-4;
pub const FIELD_BOUND_SLACK: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeTag {
    #[default]
    QuarticBump,
    ScaledBump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub x_count: usize,
    pub v_count: usize,
    pub t_count: usize,
}

/// Flat run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub support_radius: f64,
    pub background_amplitude: f64,
    pub perturbation_amplitude: f64,
    pub decay_exponent: f64,
    pub shape: ShapeTag,
    pub shape_radius: Option<f64>,

    pub half_width: f64,
    pub x_count: usize,
    pub v_half_width: f64,
    pub v_count: usize,
    pub t_end: f64,
    pub t_count: usize,
    pub substeps: usize,

    pub tol: f64,
    pub max_iters: usize,
    /// Cap on `sup_t ‖|g(t)|‖` for continuation; `null` means no cap.
    pub norm_cap: Option<f64>,
    pub tail_mode: TailMode,

    pub out_dir: Option<PathBuf>,
    /// Write `f` at every n-th time node.
    pub f_snapshot_stride: usize,

    pub lemma1_samples: usize,
    pub probe_count: usize,
    pub lemma_s: Option<f64>,
    pub lemma_t: Option<f64>,
    pub h_radius: Option<f64>,
    pub synthetic_bound: f64,
    pub synthetic_scale: f64,
    pub duhamel_tol: f64,
    pub volume_samples: usize,

    pub extend_delta: Option<f64>,

    pub resolutions: Vec<Resolution>,
    pub oracle_steps_per_interval: usize,
    pub min_order: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            support_radius: 1.0,
            background_amplitude: 1.0,
            perturbation_amplitude: 0.05,
            decay_exponent: 2.0,
            shape: ShapeTag::QuarticBump,
            shape_radius: None,
            half_width: 20.0,
            x_count: 401,
            v_half_width: 4.0,
            v_count: 129,
            t_end: 0.5,
            t_count: 51,
            substeps: 4,
            tol: 1e-10,
            max_iters: 25,
            norm_cap: None,
            tail_mode: TailMode::PowerLaw,
            out_dir: None,
            f_snapshot_stride: 1,
            lemma1_samples: 10_000,
            probe_count: 24,
            lemma_s: None,
            lemma_t: None,
            h_radius: None,
            synthetic_bound: 1.0,
            synthetic_scale: 2.0,
            duhamel_tol: 5e-4,
            volume_samples: 64,
            extend_delta: None,
            resolutions: Vec::new(),
            oracle_steps_per_interval: 1,
            min_order: 1.8,
        }
    }
}

/// Everything a pipeline needs, built from a validated config.
pub struct Setup {
    pub grid: PhaseGrid,
    pub data: InitialData,
    pub opts: SolveOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("config {}: {e}", path.display())))
    }

    fn grid_with(&self, r: Resolution) -> PhaseGrid {
        PhaseGrid {
            x_half_width: self.half_width,
            x_count: r.x_count,
            v_half_width: self.v_half_width,
            v_count: r.v_count,
            time_horizon: self.t_end,
            time_count: r.t_count,
        }
    }

    pub fn grid(&self) -> PhaseGrid {
        self.grid_with(Resolution {
            x_count: self.x_count,
            v_count: self.v_count,
            t_count: self.t_count,
        })
    }

    fn shape_value(&self) -> PerturbationShape {
        match self.shape {
            ShapeTag::QuarticBump => PerturbationShape::QuarticBump,
            ShapeTag::ScaledBump => PerturbationShape::ScaledBump {
                radius: self.shape_radius.unwrap_or(self.support_radius),
            },
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            substeps: self.substeps,
            tail_mode: self.tail_mode,
            execution: Execution::Parallel,
        }
    }

    /// Every problem with the numeric parameters, without computing anything.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let finite_pos = |name: &str, v: f64, out: &mut Vec<String>| {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be finite and > 0 (got {v})"));
            }
        };
        finite_pos("support_radius", self.support_radius, &mut out);
        finite_pos("background_amplitude", self.background_amplitude, &mut out);
        if !self.perturbation_amplitude.is_finite() {
            out.push(format!("perturbation_amplitude must be finite (got {})", self.perturbation_amplitude));
        }
        if !(self.decay_exponent.is_finite() && self.decay_exponent > 1.0) {
            out.push(format!("decay_exponent must exceed 1 (got {})", self.decay_exponent));
        }
        match (self.shape, self.shape_radius) {
            (ShapeTag::ScaledBump, Some(r)) if !(r.is_finite() && r > 0.0) => {
                out.push(format!("shape_radius must be > 0 (got {r})"))
            }
            (ShapeTag::QuarticBump, Some(_)) => out.push("shape_radius only applies to scaled-bump".into()),
            _ => {}
        }
        out.extend(self.grid().problems());
        let radius = self.shape_value().radius(&BackgroundProfile {
            support_radius: self.support_radius,
            amplitude: self.background_amplitude,
        });
        if self.v_half_width <= self.support_radius.max(radius) {
            out.push(format!(
                "v_half_width ({}) must exceed the velocity support ({})",
                self.v_half_width,
                self.support_radius.max(radius)
            ));
        }
        out.extend(self.solve_options().problems());
        if let Some(c) = self.norm_cap {
            if !(c >= 0.0) {
                out.push(format!("norm_cap must be >= 0 (got {c})"));
            }
        }
        if self.f_snapshot_stride == 0 {
            out.push("f_snapshot_stride must be >= 1".into());
        }
        if self.lemma1_samples == 0 {
            out.push("lemma1_samples must be >= 1".into());
        }
        if self.probe_count < 4 {
            out.push(format!("probe_count must be >= 4 (got {})", self.probe_count));
        }
        for (name, v) in [("lemma_s", self.lemma_s), ("lemma_t", self.lemma_t)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v <= self.t_end) {
                    out.push(format!("{name} must lie in [0, t_end] (got {v})"));
                }
            }
        }
        if let (Some(s), Some(t)) = (self.lemma_s, self.lemma_t) {
            if s > t {
                out.push(format!("lemma_s ({s}) must not exceed lemma_t ({t})"));
            }
        }
        if let Some(h) = self.h_radius {
            finite_pos("h_radius", h, &mut out);
        }
        finite_pos("synthetic_bound", self.synthetic_bound, &mut out);
        finite_pos("synthetic_scale", self.synthetic_scale, &mut out);
        finite_pos("duhamel_tol", self.duhamel_tol, &mut out);
        if let Some(d) = self.extend_delta {
            finite_pos("extend_delta", d, &mut out);
        }
        for (k, r) in self.resolutions.iter().enumerate() {
            for p in self.grid_with(*r).problems() {
                out.push(format!("resolutions[{k}]: {p}"));
            }
        }
        if self.oracle_steps_per_interval == 0 {
            out.push("oracle_steps_per_interval must be >= 1".into());
        }
        out
    }

    /// Validate and build grid, initial data and solver options.
    pub fn setup(&self) -> Result<Setup> {
        let problems = self.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidParameter(problems.join("; ")));
        }
        let grid = self.grid();
        let data = self.initial_data(&grid)?;
        Ok(Setup {
            grid,
            data,
            opts: self.solve_options(),
        })
    }

    pub fn initial_data(&self, grid: &PhaseGrid) -> Result<InitialData> {
        let bg = BackgroundProfile::new(self.support_radius, self.background_amplitude)?;
        make_initial_data(bg, self.perturbation_amplitude, self.decay_exponent, self.shape_value(), grid)
    }

    /// Time node used as `s` in the weighted-integral experiments.
    pub fn effective_lemma_s(&self) -> f64 {
        let g = self.grid();
        let target = self.lemma_s.unwrap_or(0.5 * self.t_end);
        g.t(((target / g.dt()).round() as usize).min(g.time_count - 1))
    }

    pub fn effective_lemma_t(&self) -> f64 {
        self.lemma_t.unwrap_or(self.t_end).max(self.effective_lemma_s())
    }

    /// The config with every optional parameter resolved.
    pub fn effective(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.lemma_s = Some(self.effective_lemma_s());
        c.lemma_t = Some(self.effective_lemma_t());
        c.h_radius = Some(self.h_radius.unwrap_or(self.support_radius));
        if self.shape == ShapeTag::ScaledBump {
            c.shape_radius = Some(self.shape_radius.unwrap_or(self.support_radius));
        }
        serde_json::to_value(c).unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Debug, Parser)]
#[command(name = "vp1d", version, about = "1D Vlasov-Poisson solver with a neutralizing background")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Run configuration (flat JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; affects speed only.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve and write the solution, trace and summary.
    Run(CommonArgs),
    /// Check a finished run against the diagnostic suite.
    Verify(CommonArgs),
    /// Solve and cross-check at several resolutions.
    ConvergeStudy(CommonArgs),
    /// Solve, then continue the solution by `extend_delta`.
    Extend(CommonArgs),
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonConvergence { .. } => EXIT_NON_CONVERGENCE,
        Error::Io(_) => EXIT_IO,
        Error::ContinuationRefused { .. } => EXIT_REFUSED,
        Error::InvalidParameter(_)
        | Error::InvalidProfile(_)
        | Error::PositivityViolation { .. }
        | Error::InsufficientData(_)
        | Error::InvalidComparison(_)
        | Error::Json(_) => EXIT_INVALID,
        Error::OutOfRange(_) | Error::IntegrationFailure(_) => EXIT_CHECK_FAILED,
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::InvalidParameter("--threads must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(())
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let (name, common) = match &cli.command {
        Command::Run(a) => ("run", a),
        Command::Verify(a) => ("verify", a),
        Command::ConvergeStudy(a) => ("converge-study", a),
        Command::Extend(a) => ("extend", a),
    };
    let result = configure_threads(common.threads).and_then(|_| {
        let cfg = RunConfig::load(&common.config)?;
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        match name {
            "run" => cmd_run(&cfg, &out),
            "verify" => cmd_verify(&cfg, &out),
            "converge-study" => cmd_converge_study(&cfg, &out),
            _ => cmd_extend(&cfg, &out),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("vp1d {name}: {e}");
            exit_code(&e)
        }
    }
}

fn prepare_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub converged: bool,
    pub iterations: usize,
    pub final_distance: f64,
    pub c1_meas: f64,
    pub fitted_ratio: Option<f64>,
    pub fitted_c3: Option<f64>,
    pub duhamel_residual: Option<f64>,
    pub field_compatibility: f64,
    pub field_bound_ratio: f64,
    pub max_impulse: Option<f64>,
    pub traced_nodes: Option<usize>,
    pub culled_nodes: Option<usize>,
    pub left_box_nodes: Option<usize>,
    pub sup_triple_norm: f64,
    pub max_rho_norm: f64,
}

fn run_summary(sol: &SolutionHistory, trace: &IterationTrace) -> Result<RunSummary> {
    let stats = sol.stats.as_ref();
    Ok(RunSummary {
        converged: trace.converged,
        iterations: trace.iterations,
        final_distance: trace.distances.last().copied().unwrap_or(0.0),
        c1_meas: field_impulse(&sol.field),
        fitted_ratio: trace.fit.map(|f| f.ratio),
        fitted_c3: trace.fit.map(|f| f.c3),
        duhamel_residual: if stats.is_some() { Some(duhamel_residual(sol)?) } else { None },
        field_compatibility: field_compatibility(sol),
        field_bound_ratio: field_bound_ratio(sol),
        max_impulse: stats.map(|s| s.max_impulse),
        traced_nodes: stats.map(|s| s.traced),
        culled_nodes: stats.map(|s| s.culled),
        left_box_nodes: stats.map(|s| s.left_box),
        sup_triple_norm: sol.triple_norms(Execution::Parallel)?.into_iter().fold(0.0, f64::max),
        max_rho_norm: sol.densities.iter().map(|d| d.norm).fold(0.0, f64::max),
    })
}

/// Solution CSVs, summary CSV, trace and summary JSON.
fn write_solution_artifacts(
    out: &Path,
    cfg: &RunConfig,
    sol: &SolutionHistory,
    trace: &IterationTrace,
) -> Result<Vec<PathBuf>> {
    let mut files = write_f_snapshots(out, sol, cfg.f_snapshot_stride)?;
    files.extend(write_field_snapshots(out, sol)?);
    files.push(write_summary_csv(out, &summary_rows(sol, Execution::Parallel)?)?);
    files.push(write_json(out, "trace.json", trace)?);
    files.push(write_json(out, "summary.json", &run_summary(sol, trace)?)?);
    Ok(files)
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let setup = cfg.setup()?;
    prepare_dir(out)?;
    let outcome = solve_outcome(&setup.data, &setup.grid, &setup.opts, &mut |_, _| {})?;
    let files = write_solution_artifacts(out, cfg, &outcome.solution, &outcome.trace)?;
    let code = if outcome.trace.converged {
        EXIT_OK
    } else {
        eprintln!(
            "vp1d run: no convergence after {} iterations (last distance {:e})",
            outcome.trace.iterations,
            outcome.trace.distances.last().copied().unwrap_or(f64::NAN)
        );
        EXIT_NON_CONVERGENCE
    };
    write_manifest(out, "run", cfg.effective(), code, &files)?;
    Ok(code)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

fn check(name: &str, value: f64, limit: f64) -> CheckLine {
    CheckLine {
        name: name.into(),
        value,
        limit,
        pass: value <= limit,
    }
}

fn report_line(r: &LemmaReport) -> CheckLine {
    CheckLine {
        name: r.lemma.clone(),
        value: r.worst_violation,
        limit: 0.0,
        pass: r.pass,
    }
}

/// Normalised compatibility `max|∂_x E - ρ| / (Δx² max|ρ|)` of stored field files.
fn stored_field_mismatch(out: &Path, files: &[String]) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut seen = 0;
    for name in files.iter().filter(|f| f.starts_with("field_t") && f.ends_with(".csv")) {
        let t = read_field_csv(&out.join(name))?;
        if t.x.len() < 3 {
            return Err(Error::InvalidProfile(format!("{name}: too few rows")));
        }
        let dx = t.x[1] - t.x[0];
        let scale = t.rho.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let mismatch = derivative_mismatch(&t.e, &t.rho, dx);
        let rel = if mismatch <= 1e-13 { 0.0 } else { mismatch / (dx * dx * scale.max(1e-300)) };
        worst = worst.max(rel);
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::InvalidParameter("manifest lists no field files".into()));
    }
    Ok(worst)
}

/// Probes in `[0, L - Vmax (t - s)]`: no sampled characteristic leaves the
/// box, where `∂_v g` is not available.
pub fn lemma4_probes(cfg: &RunConfig, s: f64, t: f64) -> Vec<f64> {
    let reach = (cfg.half_width - cfg.v_half_width * (t - s)).max(0.5 * cfg.half_width);
    (0..cfg.probe_count)
        .map(|k| reach * k as f64 / (cfg.probe_count - 1) as f64)
        .collect()
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let setup = cfg.setup()?;
    let manifest = match read_manifest(out) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("vp1d verify: no run artifacts in {}: {e}", out.display());
            return Ok(EXIT_INVALID);
        }
    };
    let names: Vec<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    let missing: Vec<&String> = names.iter().filter(|n| !out.join(n).exists()).collect();
    if !missing.is_empty() {
        eprintln!("vp1d verify: missing artifacts: {missing:?}");
        return Ok(EXIT_INVALID);
    }
    let mut lines = vec![check("stored-field-compatibility", stored_field_mismatch(out, &names)?, FIELD_COMPATIBILITY_LIMIT)];

    let vdir = out.join("verify");
    prepare_dir(&vdir)?;
    let mut files = Vec::new();

    let mut early: Vec<SolutionHistory> = Vec::new();
    let outcome = solve_outcome(&setup.data, &setup.grid, &setup.opts, &mut |k, s| {
        if k < 2 {
            early.push(s.clone());
        }
    })?;
    let sol = &outcome.solution;
    lines.push(CheckLine {
        name: "converged".into(),
        value: outcome.trace.iterations as f64,
        limit: cfg.max_iters as f64,
        pass: outcome.trace.converged,
    });
    let exec = Execution::Parallel;
    let p = cfg.decay_exponent;

    let l1 = check_lemma1(
        sol,
        &Lemma1Settings {
            samples: cfg.lemma1_samples,
            substeps: cfg.substeps,
            c1_scale: 1.0,
            execution: exec,
        },
    )?;
    lines.push(report_line(&l1));
    files.push(write_json(&vdir, "lemma1.json", &l1)?);

    let probes: Vec<f64> = (0..cfg.probe_count)
        .map(|k| cfg.half_width * k as f64 / (cfg.probe_count - 1) as f64)
        .collect();
    let (s, t) = (cfg.effective_lemma_s(), cfg.effective_lemma_t());
    let h_radius = cfg.h_radius.unwrap_or(cfg.support_radius);
    let spec = SyntheticFieldSpec::new(cfg.synthetic_bound, SyntheticProfile::Primitive, h_radius, p)?;
    let (bound_e, bound_de) = spec.verify_bounds(10.0 * cfg.half_width);
    lines.push(check("synthetic-field-bounds", bound_e.max(bound_de), 1.01));
    let l2 = check_lemma2(&spec, &sol.field, &probes, s, t, cfg.substeps, exec)?;
    let scaled = SyntheticFieldSpec::new(cfg.synthetic_bound * cfg.synthetic_scale, SyntheticProfile::Primitive, h_radius, p)?;
    let l2s = check_lemma2(&scaled, &sol.field, &probes, s, t, cfg.substeps, exec)?;
    let sup = l2.constants["sup_weighted"];
    let linearity = if sup == 0.0 {
        l2s.constants["sup_weighted"]
    } else {
        (l2s.constants["sup_weighted"] / (cfg.synthetic_scale * sup) - 1.0).abs()
    };
    lines.push(report_line(&l2));
    lines.push(check("lemma2-linearity", linearity, 1e-10));
    files.push(write_json(&vdir, "lemma2.json", &l2)?);
    files.push(write_probes_csv(&vdir, "lemma2_probes.csv", &l2.probes)?);

    let l3 = check_support(sol);
    lines.push(report_line(&l3));
    files.push(write_json(&vdir, "lemma3.json", &l3)?);

    let (a, b) = match early.len() {
        2 => (&early[1], &early[0]),
        _ => (sol, sol),
    };
    let l4 = check_lemma4(a, b, s, t, &lemma4_probes(cfg, s, t), cfg.substeps, exec)?;
    lines.push(report_line(&l4));
    files.push(write_json(&vdir, "lemma4.json", &l4)?);
    files.push(write_probes_csv(&vdir, "lemma4_probes.csv", &l4.probes)?);

    let exps = decay_exponents(sol);
    let fitted: Vec<f64> = exps.iter().flatten().copied().collect();
    let decay_gap = fitted
        .iter()
        .map(|&e| (p - 0.2 - e).max(e - (p + 0.4)))
        .fold(f64::NEG_INFINITY, f64::max);
    lines.push(CheckLine {
        name: "decay-exponent".into(),
        value: decay_gap.max(-1e300),
        limit: 0.0,
        pass: fitted.is_empty() && cfg.perturbation_amplitude == 0.0 || (!fitted.is_empty() && decay_gap <= 0.0),
    });
    files.push(write_json(&vdir, "decay.json", &exps)?);

    let duhamel = duhamel_residual(sol)?;
    lines.push(check("duhamel-residual", duhamel, cfg.duhamel_tol));
    let rho_scale = sol.densities.iter().flat_map(|d| d.values.iter()).fold(0.0f64, |a, r| a.max(r.abs()));
    let mismatch = field_compatibility(sol);
    let k_field = if mismatch <= 1e-13 { 0.0 } else { mismatch / (sol.grid.dx().powi(2) * rho_scale) };
    lines.push(check("field-compatibility-k", k_field, FIELD_COMPATIBILITY_LIMIT));
    lines.push(check("field-bound", field_bound_ratio(sol), FIELD_BOUND_SLACK));

    let grid = sol.grid;
    let mut roundtrip = 0.0f64;
    for k in 1..=64 {
        let x = grid.x_half_width * (2.0 * halton(k, 2) - 1.0);
        let v = grid.v_half_width * (2.0 * halton(k, 3) - 1.0);
        roundtrip = roundtrip.max(flow_roundtrip_error(grid.time_horizon, x, v, &sol.field, cfg.substeps)?);
    }
    lines.push(check("flow-roundtrip", roundtrip, ROUNDTRIP_LIMIT));
    lines.push(check("volume-preservation", volume_defect(sol, cfg.volume_samples, cfg.substeps)?, VOLUME_LIMIT));

    let neutral = neutrality_drift(sol, 10.0 * grid.dx() * grid.dx() * sol.densities[0].norm + 1e-12);
    lines.push(check("charge-drift", neutral.worst_excess, 0.0));
    files.push(write_json(&vdir, "neutrality.json", &neutral)?);

    let path = trace_path(grid.time_horizon, 0.5, 0.5 * cfg.support_radius, &sol.field, cfg.substeps)?;
    files.push(write_path_csv(&vdir, "path_sample.csv", &path)?);

    let all = lines.iter().all(|l| l.pass);
    for l in &lines {
        eprintln!("{} {:<30} {:>14.6e} (limit {:e})", if l.pass { "PASS" } else { "FAIL" }, l.name, l.value, l.limit);
    }
    files.push(write_json(&vdir, "verify_summary.json", &lines)?);
    let code = if all { EXIT_OK } else { EXIT_CHECK_FAILED };
    write_manifest(&vdir, "verify", cfg.effective(), code, &files)?;
    Ok(code)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub x_count: usize,
    pub v_count: usize,
    pub t_count: usize,
    pub dx: f64,
    pub max_difference: f64,
    /// Order against the previous resolution; `None` for the first row or
    /// when both differences vanish.
    pub order: Option<f64>,
    pub exact: bool,
    pub duhamel_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fitted_ratio: Option<f64>,
    pub ratios_decreasing: bool,
    pub oracle_cfl: f64,
}

/// Whether `r_k` is strictly decreasing from `k = 1` on.
pub fn ratios_decreasing(trace: &IterationTrace) -> bool {
    trace.ratios.iter().skip(1).collect::<Vec<_>>().windows(2).all(|w| w[1] < w[0])
}

pub fn cmd_converge_study(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidParameter(problems.join("; ")));
    }
    if cfg.resolutions.len() < 3 {
        eprintln!(
            "vp1d converge-study: {} resolutions given, at least 3 are needed",
            cfg.resolutions.len()
        );
        return Ok(EXIT_INVALID);
    }
    prepare_dir(out)?;
    let opts = cfg.solve_options();
    let mut rows: Vec<StudyRow> = Vec::new();
    for r in &cfg.resolutions {
        let grid = cfg.grid_with(*r);
        let data = cfg.initial_data(&grid)?;
        let outcome = solve_outcome(&data, &grid, &opts, &mut |_, _| {})?;
        let mut ocfg = OracleConfig::new(grid);
        ocfg.steps_per_interval = cfg.oracle_steps_per_interval;
        ocfg.tail_mode = cfg.tail_mode;
        let (oracle, report) = splitting_solve(&data, &ocfg)?;
        let diff = max_node_difference(&outcome.solution, &oracle)?;
        let (order, exact) = match rows.last() {
            None => (None, diff == 0.0),
            Some(prev) if prev.max_difference == 0.0 && diff == 0.0 => (None, true),
            Some(prev) => (Some((prev.max_difference / diff).ln() / (prev.dx / grid.dx()).ln()), false),
        };
        rows.push(StudyRow {
            x_count: r.x_count,
            v_count: r.v_count,
            t_count: r.t_count,
            dx: grid.dx(),
            max_difference: diff,
            order,
            exact,
            duhamel_residual: duhamel_residual(&outcome.solution)?,
            iterations: outcome.trace.iterations,
            converged: outcome.trace.converged,
            fitted_ratio: outcome.trace.fit.map(|f| f.ratio),
            ratios_decreasing: ratios_decreasing(&outcome.trace),
            oracle_cfl: report.cfl,
        });
    }
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            vec![
                r.x_count as f64,
                r.v_count as f64,
                r.t_count as f64,
                r.dx,
                r.max_difference,
                r.order.unwrap_or(f64::NAN),
                r.duhamel_residual,
                r.iterations as f64,
                r.fitted_ratio.unwrap_or(f64::NAN),
            ]
        })
        .collect();
    let mut files = vec![write_table_csv(
        out,
        "convergence.csv",
        "x_count,v_count,t_count,dx,max_difference,order,duhamel_residual,iterations,fitted_ratio",
        &table,
    )?];
    files.push(write_json(out, "study.json", &rows)?);
    let converged = rows.iter().all(|r| r.converged);
    let orders_ok = rows.iter().skip(1).all(|r| r.exact || r.order.is_some_and(|o| o >= cfg.min_order));
    let ratios_ok = rows.iter().all(|r| r.ratios_decreasing);
    for r in &rows {
        eprintln!(
            "{:>5} {:>5} {:>5}  diff {:.4e}  order {}  iterations {}",
            r.x_count,
            r.v_count,
            r.t_count,
            r.max_difference,
            match (r.exact, r.order) {
                (true, _) => "exact".to_string(),
                (_, Some(o)) => format!("{o:.3}"),
                _ => "-".to_string(),
            },
            r.iterations
        );
    }
    let code = if !converged {
        EXIT_NON_CONVERGENCE
    } else if orders_ok && ratios_ok {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    };
    write_manifest(out, "converge-study", cfg.effective(), code, &files)?;
    Ok(code)
}

pub fn cmd_extend(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let Some(delta) = cfg.extend_delta else {
        return Err(Error::InvalidParameter("extend needs extend_delta in the config".into()));
    };
    let setup = cfg.setup()?;
    prepare_dir(out)?;
    let first = solve_outcome(&setup.data, &setup.grid, &setup.opts, &mut |_, _| {})?;
    let mut files = vec![write_json(out, "initial_trace.json", &first.trace)?];
    if !first.trace.converged {
        write_manifest(out, "extend", cfg.effective(), EXIT_NON_CONVERGENCE, &files)?;
        return Ok(EXIT_NON_CONVERGENCE);
    }
    let cap = cfg.norm_cap.unwrap_or(f64::INFINITY);
    let ext = match extend_outcome(&first.solution, &setup.data, delta, &setup.opts, cap) {
        Ok(e) => e,
        Err(Error::ContinuationRefused { norm, cap }) => {
            eprintln!("vp1d extend: continuation refused, sup triple norm {norm:e} exceeds cap {cap:e}");
            files.push(write_json(
                out,
                "refused.json",
                &serde_json::json!({ "sup_triple_norm": norm, "norm_cap": cap }),
            )?);
            write_manifest(out, "extend", cfg.effective(), EXIT_REFUSED, &files)?;
            return Ok(EXIT_REFUSED);
        }
        Err(e) => return Err(e),
    };
    files.extend(write_solution_artifacts(out, cfg, &ext.solution, &ext.trace)?);
    let code = if !ext.trace.converged {
        EXIT_NON_CONVERGENCE
    } else if ext.trace.continuation.as_ref().is_some_and(|c| !c.cap_respected) {
        eprintln!("vp1d extend: triple norm exceeds norm_cap on the extension");
        EXIT_REFUSED
    } else {
        EXIT_OK
    };
    write_manifest(out, "extend", cfg.effective(), code, &files)?;
    Ok(code)
}
