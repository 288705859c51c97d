//! Experiment driver: parses a TOML config, runs one study and writes
//! `report.json` plus CSV data files into the output directory.

pub mod config;

use config::{Command, ExperimentConfig};
use fosb::error::Error;
use fosb::geometry::{build_hierarchy, build_surface, Point};
use fosb::krylov::{cluster_fraction, condition_number, GmresReport};
use fosb::montecarlo::{write_samples_csv, McConfig};
use fosb::postproc::{
    dof_points, variance_field, write_far_field_csv, write_variance_csv, FarField,
};
use fosb::scattering::{build_system, solve_first_moment, Spaces};
use fosb::spaces::Family;
use fosb::studies::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Config,
    Validation,
    Geometry,
    Solver,
    Limit,
    Io,
}

impl Category {
    pub fn exit_code(&self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Validation => 3,
            Category::Geometry => 4,
            Category::Solver => 5,
            Category::Limit => 6,
            Category::Io => 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    fn new(category: Category, message: impl Into<String>) -> Self {
        CliError {
            category,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.category, self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let category = match &e {
            Error::InvalidInput(_) | Error::Mismatch(_) => Category::Validation,
            Error::Degenerate(_) => Category::Geometry,
            Error::NotConverged(_) | Error::Resonance(_) => Category::Solver,
            Error::SizeLimit(_) => Category::Limit,
            Error::Format(_) | Error::Io(_) => Category::Io,
        };
        CliError::new(category, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(Category::Io, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct Stage {
    name: String,
    seconds: f64,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    stages: Vec<Stage>,
}

impl Outputs {
    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut wr = csv::Writer::from_path(self.dir.join(name))
            .map_err(|e| CliError::new(Category::Io, e.to_string()))?;
        let io = |e: csv::Error| CliError::new(Category::Io, e.to_string());
        wr.write_record(header).map_err(io)?;
        for r in rows {
            wr.write_record(r).map_err(io)?;
        }
        wr.flush()?;
        self.files.push(name.into());
        Ok(())
    }

    fn file(&mut self, name: &str) -> CliResult<fs::File> {
        self.files.push(name.into());
        Ok(fs::File::create(self.dir.join(name))?)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> fosb::error::Result<T>) -> CliResult<T> {
        let t0 = Instant::now();
        let out = f()?;
        self.stages.push(Stage {
            name: name.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn history_rows(reports: &[(String, &GmresReport)]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (label, r) in reports {
        for (m, res, q) in r.history_rows() {
            rows.push(vec![label.clone(), m.to_string(), num(res), num(q)]);
        }
    }
    rows
}

const HISTORY_HEADER: [&str; 4] = ["solve", "iteration", "preconditioned_residual", "q_m"];

/// Loads, validates and runs one experiment. Validation happens before any
/// computation or output.
pub fn run(command: Command, opts: &RunOptions) -> CliResult<Value> {
    let text = fs::read_to_string(&opts.config).map_err(|e| {
        CliError::new(
            Category::Config,
            format!("cannot read {}: {e}", opts.config.display()),
        )
    })?;
    let mut cfg = ExperimentConfig::parse(&text)
        .map_err(|e| CliError::new(Category::Config, e.to_string()))?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.validate(command)?;
    if opts.threads == Some(0) {
        return Err(CliError::new(
            Category::Validation,
            "--threads must be positive",
        ));
    }
    fs::create_dir_all(&opts.out)?;
    let mut out = Outputs {
        dir: opts.out.clone(),
        files: Vec::new(),
        stages: Vec::new(),
    };
    fs::write(opts.out.join("config.toml"), &text)?;
    out.files.push("config.toml".into());
    let start = Instant::now();
    let summary = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::new(Category::Validation, e.to_string()))?
            .install(|| execute(command, &cfg, &mut out))?,
        None => execute(command, &cfg, &mut out)?,
    };
    let report = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "config_text": text,
        "seed": cfg.seed,
        "threads": opts.threads.unwrap_or_else(rayon::current_num_threads),
        "wall_seconds": start.elapsed().as_secs_f64(),
        "stages": out.stages,
        "outputs": out.files,
        "summary": summary,
    });
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::new(Category::Io, e.to_string()))?;
    fs::write(opts.out.join("report.json"), body)?;
    Ok(report)
}

fn execute(command: Command, cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<Value> {
    match command {
        Command::Converge => converge(cfg, out),
        Command::Foa => foa(cfg, out),
        Command::Ct => ct(cfg, out),
        Command::Mc => mc(cfg, out),
        Command::Diagnose => diagnose(cfg, out),
    }
}

fn converge(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<Value> {
    let reference = cfg.levels.reference.unwrap_or(cfg.levels.max + 2);
    let s = out.stage("convergence", || {
        convergence_study(
            &cfg.problem,
            &cfg.geometry,
            cfg.levels.min..=cfg.levels.max,
            reference,
            &cfg.discretization,
            &cfg.solver,
        )
    })?;
    let rows: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                r.dofs.to_string(),
                num(r.meshwidth),
                opt(r.error_dirichlet),
                opt(r.error_neumann),
                r.iterations.to_string(),
            ]
        })
        .collect();
    out.csv(
        "convergence.csv",
        &[
            "level",
            "dofs",
            "meshwidth",
            "rel_error_dirichlet_H1/2",
            "rel_error_neumann_H-1/2",
            "gmres_iterations",
        ],
        &rows,
    )?;
    let labelled: Vec<(String, &GmresReport)> = s
        .rows
        .iter()
        .zip(&s.reports)
        .map(|(r, rep)| (format!("level{}", r.level), rep))
        .collect();
    out.csv(
        "gmres_history.csv",
        &HISTORY_HEADER,
        &history_rows(&labelled),
    )?;
    Ok(json!({
        "reference_level": s.reference_level,
        "slope_dirichlet": s.slope_dirichlet,
        "slope_neumann": s.slope_neumann,
        "rows": s.rows,
    }))
}

fn foa(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<Value> {
    let field = cfg.field.as_ref().expect("validated");
    let level = cfg.levels.max;
    let s = out.stage("foa", || {
        foa_study(
            &cfg.problem,
            &cfg.geometry,
            level,
            field,
            &cfg.foa.t,
            cfg.foa.directions,
            &cfg.discretization,
            &cfg.solver,
        )
    })?;
    let rows: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.t),
                num(r.zoa_error),
                num(r.foa_error),
                r.iterations.to_string(),
            ]
        })
        .collect();
    out.csv(
        "foa.csv",
        &[
            "t",
            "zoa_rel_l2_far_field",
            "foa_rel_l2_far_field",
            "gmres_iterations",
        ],
        &rows,
    )?;
    let nominal = out.stage("nominal", || {
        let mesh = build_surface(&cfg.geometry, level)?;
        let dirs = directions_for(mesh.dim(), cfg.foa.directions);
        nominal_solution(
            &cfg.problem,
            &mesh,
            field,
            &dirs,
            &cfg.discretization,
            &cfg.solver,
        )
    })?;
    let amp = cfg.problem.amplitude;
    write_far_field_csv(&nominal.far, amp, out.file("far_field.csv")?)?;
    write_far_field_csv(
        &nominal.far_prime,
        amp,
        out.file("far_field_derivative.csv")?,
    )?;
    let mut summary = json!({
        "level": level,
        "dofs": s.dofs,
        "slope_zoa": s.slope_zoa,
        "slope_foa": s.slope_foa,
        "rows": s.rows,
    });
    if !cfg.foa.kappas.is_empty() {
        let sweep = out.stage("kappa_sweep", || {
            foa_kappa_sweep(
                &cfg.problem,
                &cfg.geometry,
                level,
                field,
                cfg.foa.t[0],
                &cfg.foa.kappas,
                cfg.foa.directions,
                &cfg.discretization,
                &cfg.solver,
            )
        })?;
        let rows: Vec<Vec<String>> = sweep
            .rows
            .iter()
            .map(|r| vec![num(r.kappa), num(r.zoa_error), num(r.foa_error)])
            .collect();
        out.csv(
            "kappa_sweep.csv",
            &["kappa", "zoa_rel_l2_far_field", "foa_rel_l2_far_field"],
            &rows,
        )?;
        summary["kappa_sweep"] = json!(sweep);
    }
    Ok(summary)
}

fn ct_settings(cfg: &ExperimentConfig) -> CtSettings {
    CtSettings {
        level: cfg.levels.max,
        min_level: cfg.levels.min,
        symmetric: cfg.ct.symmetric,
        conjugate: cfg.ct.conjugate,
        subblock_tol: cfg.ct.subblock_tol,
        full_cap: cfg.ct.full_cap,
        reference_level: cfg.ct.reference_level,
        compare_rank: cfg.ct.compare_rank,
    }
}

/// Coordinates of the unknown trace of problem `beta`.
fn unknown_points(beta: usize, spaces: &Spaces) -> Vec<Point> {
    match beta {
        0 => dof_points(&spaces.neumann),
        1 | 2 => dof_points(&spaces.dirichlet),
        _ => {
            let mut p = dof_points(&spaces.dirichlet);
            p.extend(dof_points(&spaces.neumann));
            p
        }
    }
}

fn ct(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<Value> {
    let field = cfg.field.as_ref().expect("validated");
    let (modal, _) = field.random_modes()?;
    let settings = ct_settings(cfg);
    let s = out.stage("combination", || {
        ct_study(
            &cfg.problem,
            &cfg.geometry,
            modal,
            &settings,
            &cfg.discretization,
            &cfg.solver,
        )
    })?;
    let rows: Vec<Vec<String>> = s
        .blocks
        .iter()
        .map(|b| {
            vec![
                b.entry.l1.to_string(),
                b.entry.l2.to_string(),
                b.entry.coeff.to_string(),
                b.entry.multiplicity.to_string(),
                b.dofs.to_string(),
                b.iterations.to_string(),
                opt(b.rank_difference),
            ]
        })
        .collect();
    out.csv(
        "ct_plan.csv",
        &[
            "l1",
            "l2",
            "coeff",
            "multiplicity",
            "dofs",
            "gmres_iterations",
            "rel_frobenius_rank_vs_kronecker",
        ],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = s
        .levels
        .iter()
        .map(|(l, d, a, b)| vec![l.to_string(), d.to_string(), a.to_string(), b.to_string()])
        .collect();
    out.csv(
        "ct_levels.csv",
        &[
            "level",
            "dofs",
            "first_moment_iterations",
            "shape_derivative_iterations",
        ],
        &rows,
    )?;
    let labelled: Vec<(String, &GmresReport)> = s
        .blocks
        .iter()
        .zip(&s.subblock_reports)
        .map(|(b, r)| (format!("block{}_{}", b.entry.l1, b.entry.l2), r))
        .collect();
    out.csv(
        "gmres_history.csv",
        &HISTORY_HEADER,
        &history_rows(&labelled),
    )?;
    if settings.conjugate {
        let mesh = build_surface(&cfg.geometry, settings.level)?;
        let spaces = Spaces::new(mesh, cfg.discretization.neumann);
        let pts = unknown_points(cfg.problem.beta(), &spaces);
        let var = variance_field(&s.combined, cfg.ct.t)?;
        write_variance_csv(&pts, &var, out.file("variance.csv")?)?;
    }
    Ok(json!(s))
}

fn far_moment_rows(
    fosb: &FarField,
    mc: &FarField,
    fosb_std: &[f64],
    mc_var: &[f64],
) -> Vec<Vec<String>> {
    (0..fosb.values.len())
        .map(|j| {
            let d = fosb.directions[j];
            let mut row = if fosb.dim == 2 {
                vec![num(d[1].atan2(d[0]))]
            } else {
                vec![num(d[0]), num(d[1]), num(d[2])]
            };
            row.extend([
                num(fosb.values[j].re),
                num(fosb.values[j].im),
                num(mc.values[j].re),
                num(mc.values[j].im),
                num(fosb_std[j]),
                num(mc_var[j].sqrt()),
            ]);
            row
        })
        .collect()
}

fn mc(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<Value> {
    let field = cfg.field.as_ref().expect("validated");
    let mc_cfg = McConfig {
        samples: cfg.mc.samples,
        seed: cfg.seed,
        t: cfg.mc.t,
        unbiased: cfg.mc.unbiased,
    };
    let c = out.stage("fosb_and_monte_carlo", || {
        mc_comparison(
            &cfg.problem,
            &cfg.geometry,
            field,
            &mc_cfg,
            &ct_settings(cfg),
            cfg.mc.directions,
            &cfg.discretization,
            &cfg.solver,
        )
    })?;
    write_samples_csv(&c.mc.samples, out.file("mc_samples.csv")?)?;
    let mut header: Vec<&str> = if c.fosb.mean.dim == 2 {
        vec!["theta_rad"]
    } else {
        vec!["dir_x", "dir_y", "dir_z"]
    };
    header.extend([
        "fosb_mean_re",
        "fosb_mean_im",
        "mc_mean_re",
        "mc_mean_im",
        "fosb_std_abs",
        "mc_std_abs",
    ]);
    out.csv(
        "far_field_moments.csv",
        &header,
        &far_moment_rows(
            &c.fosb.mean,
            &c.mc.far_mean,
            &c.fosb.std,
            &c.mc.far_variance,
        ),
    )?;
    Ok(json!({
        "mean_rel_l2": c.mean_error,
        "std_rel_l2": c.std_error,
        "samples": c.mc.samples.len(),
        "ct_total_dofs": c.fosb.ct.total_dofs,
        "full_tensor_dofs": c.fosb.ct.full_dofs,
        "mc_total_dofs": c.mc.samples.len() * c.fosb.ct.levels.last().map_or(0, |l| l.1),
        "ct_blocks": c.fosb.ct.blocks,
    }))
}

fn diagnose(cfg: &ExperimentConfig, out: &mut Outputs) -> CliResult<Value> {
    let meshes = out.stage("meshes", || build_hierarchy(&cfg.geometry, cfg.levels.max))?;
    let calderon = if cfg.discretization.neumann == Family::P1 {
        Some(out.stage("calderon", || {
            calderon_study(
                &cfg.problem,
                &cfg.geometry,
                cfg.levels.min..=cfg.levels.max,
                &cfg.extinction_points(),
                &cfg.discretization,
            )
        })?)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut levels = Vec::new();
    for l in cfg.levels.min..=cfg.levels.max {
        let (dofs, report, spectrum) = out.stage(&format!("level{l}"), || {
            let system = build_system(&cfg.problem, &meshes[l], &cfg.discretization)?;
            let (_, report) = solve_first_moment(&system, &cfg.solver)?;
            let spectrum = if system.dim() <= cfg.diagnose.spectrum_cap {
                let (eigs, prod) = tensor_spectrum(&system, false, cfg.diagnose.spectrum_cap)?;
                let r = cfg.diagnose.cluster_radius;
                Some((
                    cluster_fraction(&eigs, r),
                    cluster_fraction(&prod, r),
                    condition_number(&system.preconditioned_matrix()),
                ))
            } else {
                None
            };
            Ok((system.dim(), report, spectrum))
        })?;
        let q = if report.iterations > 0 {
            report.convergence_factor(report.iterations).ok()
        } else {
            None
        };
        let cal = calderon
            .as_ref()
            .and_then(|c| c.iter().find(|r| r.level == l));
        rows.push(vec![
            l.to_string(),
            dofs.to_string(),
            report.iterations.to_string(),
            opt(q),
            opt(spectrum.map(|s| s.0)),
            opt(spectrum.map(|s| s.1)),
            opt(spectrum.map(|s| s.2)),
            opt(cal.map(|c| c.projector_residual)),
            opt(cal.map(|c| c.extinction)),
        ]);
        levels.push(json!({
            "level": l,
            "dofs": dofs,
            "iterations": report.iterations,
            "q_final": q,
            "cluster_fraction_k1": spectrum.map(|s| s.0),
            "cluster_fraction_k2": spectrum.map(|s| s.1),
            "condition_number": spectrum.map(|s| s.2),
        }));
        reports.push((format!("level{l}"), report));
    }
    out.csv(
        "diagnose.csv",
        &[
            "level",
            "dofs",
            "gmres_iterations",
            "q_final",
            "cluster_fraction_k1",
            "cluster_fraction_k2",
            "condition_number_2norm",
            "projector_residual_mass_norm",
            "extinction_max_abs",
        ],
        &rows,
    )?;
    let labelled: Vec<(String, &GmresReport)> =
        reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    out.csv(
        "gmres_history.csv",
        &HISTORY_HEADER,
        &history_rows(&labelled),
    )?;
    Ok(json!({ "levels": levels, "calderon": calderon }))
}

/// Default output directory for a command.
pub fn default_out(command: Command) -> PathBuf {
    Path::new("out").join(command.name())
}
