//! Experiment drivers shared by the command-line tool and the acceptance suite.

use crate::analytic::{circle_series, circle_shape_derivative, mie_sphere, SeriesSolution};
use crate::error::{Error, Result};
use crate::geometry::{
    build_hierarchy, build_surface, deform, AnalyticSurface, Mesh, Point, SurfaceSpec,
};
use crate::krylov::{spectrum_diagnostic, GmresConfig, GmresReport};
use crate::montecarlo::{mc_estimate, McConfig, McEstimate};
use crate::postproc::{
    circle_directions, dof_points, error_norm, far_field, far_field_matrices, meridian_directions,
    potential, relative_l2, FarField, NormOrder, NormSurrogate,
};
use crate::scattering::{
    build_system, calderon_projector_residual, incident_traces, solve_first_moment,
    BoundaryCondition, CauchyData, DiscretizationConfig, ProblemSpec, ProblemSystem, Spaces,
};
use crate::shape_uq::{
    normal_velocity, sd_rhs, solve_shape_derivative, ModalField, VelocityFieldSpec,
};
use crate::spaces::{prolong, Family, TraceSpace};
use crate::tensor_ct::{
    combination_plan, combine, full_tensor_solve, mode_data, rank_solve, solve_subblock,
    unknown_space_prolongation, CombinationPlan, MomentMatrix, PlanEntry, RankTerm,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::sync::Arc;
use std::time::Instant;

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Series oracle matching an analytic circle or sphere.
pub fn series_oracle(spec: &ProblemSpec, surface: &AnalyticSurface) -> Result<SeriesSolution> {
    match *surface {
        AnalyticSurface::Circle { radius, center } => circle_series(spec, radius, center, None),
        AnalyticSurface::Sphere { radius, center } => mie_sphere(spec, radius, center, None),
        _ => Err(Error::InvalidInput(
            "series oracles exist for circles and spheres only".into(),
        )),
    }
}

/// Oracle Cauchy data interpolated at the vertices of a mesh (P1 on both traces).
pub fn oracle_traces(oracle: &SeriesSolution, spaces: &Spaces) -> Result<CauchyData> {
    if spaces.neumann.family() != Family::P1 {
        return Err(Error::InvalidInput(
            "oracle traces are interpolated into P1".into(),
        ));
    }
    let mesh = spaces.mesh();
    let lambda = (0..mesh.num_vertices())
        .map(|v| oracle.dirichlet_trace(mesh.vertex(v)))
        .collect();
    let sigma = (0..mesh.num_vertices())
        .map(|v| oracle.neumann_trace(mesh.vertex(v)))
        .collect();
    Ok(CauchyData {
        lambda,
        sigma,
        level: spaces.level(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub dofs: usize,
    pub meshwidth: f64,
    /// Relative `H^{1/2}` error of the Dirichlet trace (absent when it vanishes identically).
    pub error_dirichlet: Option<f64>,
    /// Relative `H^{-1/2}` error of the Neumann trace (absent when it vanishes identically).
    pub error_neumann: Option<f64>,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub reference_level: usize,
    pub slope_dirichlet: Option<f64>,
    pub slope_neumann: Option<f64>,
    #[serde(skip)]
    pub reports: Vec<GmresReport>,
}

/// Solves on `levels` and measures trace errors against the series oracle on a
/// reference level, to which all solutions are prolonged.
pub fn convergence_study(
    spec: &ProblemSpec,
    surface: &SurfaceSpec,
    levels: RangeInclusive<usize>,
    reference_level: usize,
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<ConvergenceStudy> {
    if config.neumann != Family::P1 {
        return Err(Error::InvalidInput(
            "convergence studies use P1 Neumann traces".into(),
        ));
    }
    if reference_level < *levels.end() {
        return Err(Error::InvalidInput(
            "reference level below the finest studied level".into(),
        ));
    }
    let oracle = series_oracle(spec, &surface.shape)?;
    let meshes = build_hierarchy(surface, reference_level)?;
    let reference = Spaces::new(meshes[reference_level].clone(), Family::P1);
    let exact = oracle_traces(&oracle, &reference)?;
    let has_d = spec.beta() != 0;
    let has_n = spec.beta() != 1;
    let norm_d = if has_d {
        Some(NormSurrogate::new(
            &reference.dirichlet,
            NormOrder::PlusHalf,
            &config.quad,
        )?)
    } else {
        None
    };
    let norm_n = if has_n {
        Some(NormSurrogate::new(
            &reference.neumann,
            NormOrder::MinusHalf,
            &config.quad,
        )?)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for level in levels {
        let start = Instant::now();
        let sys = build_system(spec, &meshes[level], config)?;
        let (xi, rep) = solve_first_moment(&sys, gmres)?;
        let lift = |c: &[Complex64], from: &TraceSpace| prolong(c, from, &reference.dirichlet);
        let error_dirichlet = match &norm_d {
            Some(n) => Some(error_norm(
                &lift(&xi.lambda, &sys.spaces.dirichlet)?,
                &exact.lambda,
                n,
            )?),
            None => None,
        };
        let error_neumann = match &norm_n {
            Some(n) => Some(error_norm(
                &lift(&xi.sigma, &sys.spaces.neumann)?,
                &exact.sigma,
                n,
            )?),
            None => None,
        };
        rows.push(ConvergenceRow {
            level,
            dofs: sys.dim(),
            meshwidth: meshes[level].meshwidth(),
            error_dirichlet,
            error_neumann,
            iterations: rep.iterations,
            seconds: start.elapsed().as_secs_f64(),
        });
        reports.push(rep);
    }
    let h: Vec<f64> = rows.iter().map(|r| r.meshwidth).collect();
    let slope = |f: &dyn Fn(&ConvergenceRow) -> Option<f64>| -> Option<f64> {
        let e: Option<Vec<f64>> = rows.iter().map(f).collect();
        e.filter(|v| v.len() >= 2).map(|v| fit_slope(&h, &v))
    };
    let slope_dirichlet = slope(&|r| r.error_dirichlet);
    let slope_neumann = slope(&|r| r.error_neumann);
    Ok(ConvergenceStudy {
        rows,
        reference_level,
        slope_dirichlet,
        slope_neumann,
        reports,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FoaRow {
    pub t: f64,
    /// `[F − F_t]` in relative L²(S^{d−1}).
    pub zoa_error: f64,
    /// `[F + tF' − F_t]`.
    pub foa_error: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoaStudy {
    pub kappa: f64,
    pub dofs: usize,
    pub rows: Vec<FoaRow>,
    pub slope_zoa: f64,
    pub slope_foa: f64,
}

/// Nominal and shape-derivative far fields of one problem on one mesh.
pub struct NominalSolution {
    pub system: ProblemSystem,
    pub xi: CauchyData,
    pub xi_prime: CauchyData,
    pub far: FarField,
    pub far_prime: FarField,
    pub reports: [GmresReport; 2],
}

pub fn nominal_solution(
    spec: &ProblemSpec,
    mesh: &Arc<Mesh>,
    field: &VelocityFieldSpec,
    directions: &[Point],
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<NominalSolution> {
    let system = build_system(spec, mesh, config)?;
    let (xi, r0) = solve_first_moment(&system, gmres)?;
    let vn = normal_velocity(mesh, &|x| field.velocity(x).unwrap_or([0.0; 3]));
    field.velocity(mesh.vertex(0))?;
    let sd = sd_rhs(&system, &xi, &vn)?;
    let (xi_prime, r1) = solve_shape_derivative(&system, &sd, gmres)?;
    let far = far_field(spec.kappa, &system.spaces, &xi, directions)?;
    let far_prime = far_field(spec.kappa, &system.spaces, &xi_prime, directions)?;
    Ok(NominalSolution {
        system,
        xi,
        xi_prime,
        far,
        far_prime,
        reports: [r0, r1],
    })
}

/// Far field of the problem posed on the deformed mesh `x + t v(x)`.
pub fn perturbed_far_field(
    spec: &ProblemSpec,
    mesh: &Mesh,
    field: &dyn Fn(&Point) -> Point,
    t: f64,
    directions: &[Point],
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<(FarField, GmresReport)> {
    let deformed = Arc::new(deform(mesh, field, t)?);
    let system = build_system(spec, &deformed, config)?;
    let (xi, rep) = solve_first_moment(&system, gmres)?;
    Ok((far_field(spec.kappa, &system.spaces, &xi, directions)?, rep))
}

/// Zeroth- and first-order far-field errors against deformed-domain solves.
pub fn foa_study(
    spec: &ProblemSpec,
    surface: &SurfaceSpec,
    level: usize,
    field: &VelocityFieldSpec,
    ts: &[f64],
    num_directions: usize,
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<FoaStudy> {
    if ts.len() < 2 || ts.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidInput(
            "FOA studies need at least two positive t".into(),
        ));
    }
    let mesh = build_surface(surface, level)?;
    let dirs = directions_for(mesh.dim(), num_directions);
    let nom = nominal_solution(spec, &mesh, field, &dirs, config, gmres)?;
    let v = |x: &Point| field.velocity(x).unwrap_or([0.0; 3]);
    let mut rows = Vec::new();
    for &t in ts {
        let (ft, rep) = perturbed_far_field(spec, &mesh, &v, t, &dirs, config, gmres)?;
        let foa = nom.far.combine(
            Complex64::new(1.0, 0.0),
            &nom.far_prime,
            Complex64::new(t, 0.0),
        )?;
        rows.push(FoaRow {
            t,
            zoa_error: relative_l2(&nom.far.values, &ft.values)?,
            foa_error: relative_l2(&foa.values, &ft.values)?,
            iterations: rep.iterations,
        });
    }
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let slope_zoa = fit_slope(&t, &rows.iter().map(|r| r.zoa_error).collect::<Vec<_>>());
    let slope_foa = fit_slope(&t, &rows.iter().map(|r| r.foa_error).collect::<Vec<_>>());
    Ok(FoaStudy {
        kappa: spec.kappa,
        dofs: nom.system.dim(),
        rows,
        slope_zoa,
        slope_foa,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaRow {
    pub kappa: f64,
    pub foa_error: f64,
    pub zoa_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaSweep {
    pub t: f64,
    pub rows: Vec<KappaRow>,
    pub slope_foa: f64,
}

/// FOA error at fixed `t` across wavenumbers.
pub fn foa_kappa_sweep(
    base: &ProblemSpec,
    surface: &SurfaceSpec,
    level: usize,
    field: &VelocityFieldSpec,
    t: f64,
    kappas: &[f64],
    num_directions: usize,
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<KappaSweep> {
    let mut rows = Vec::new();
    for &kappa in kappas {
        let spec = ProblemSpec {
            kappa,
            ..base.clone()
        };
        let s = foa_study(
            &spec,
            surface,
            level,
            field,
            &[t, 2.0 * t],
            num_directions,
            config,
            gmres,
        )?;
        rows.push(KappaRow {
            kappa,
            foa_error: s.rows[0].foa_error,
            zoa_error: s.rows[0].zoa_error,
        });
    }
    let k: Vec<f64> = rows.iter().map(|r| r.kappa).collect();
    let slope_foa = fit_slope(&k, &rows.iter().map(|r| r.foa_error).collect::<Vec<_>>());
    Ok(KappaSweep { t, rows, slope_foa })
}

#[derive(Debug, Clone, Serialize)]
pub struct CtSettings {
    pub level: usize,
    pub min_level: usize,
    pub symmetric: bool,
    /// Compute `α_{1;1}` (second factor conjugated) instead of `α_{2;0}`.
    pub conjugate: bool,
    pub subblock_tol: f64,
    /// Largest number of entries for which the full-tensor reference is formed.
    pub full_cap: usize,
    /// Level on which the exact circle covariance is sampled, when available.
    pub reference_level: Option<usize>,
    /// Also solve every block by rank-one first-moment solves and record the difference.
    pub compare_rank: bool,
}

impl Default for CtSettings {
    fn default() -> Self {
        CtSettings {
            level: 3,
            min_level: 0,
            symmetric: true,
            conjugate: false,
            subblock_tol: 1e-8,
            full_cap: 4_000_000,
            reference_level: None,
            compare_rank: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CtBlockRow {
    pub entry: PlanEntry,
    pub dofs: usize,
    pub iterations: usize,
    pub seconds: f64,
    /// `‖Σ_rank − Σ_kron‖ / ‖Σ_rank‖` when requested.
    pub rank_difference: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CtStudy {
    pub plan: CombinationPlan,
    pub blocks: Vec<CtBlockRow>,
    /// `(level, dofs, first-moment iterations, shape-derivative iterations)`.
    pub levels: Vec<(usize, usize, usize, usize)>,
    pub total_dofs: usize,
    pub full_dofs: usize,
    /// `‖Σ̂_L − Σ_L‖ / ‖Σ_L‖` in the entrywise Frobenius norm.
    pub combined_vs_full: Option<f64>,
    pub error_combined: Option<f64>,
    pub error_full: Option<f64>,
    pub seconds: f64,
    #[serde(skip)]
    pub combined: DMatrix<Complex64>,
    #[serde(skip)]
    pub full: Option<DMatrix<Complex64>>,
    #[serde(skip)]
    pub subblock_reports: Vec<GmresReport>,
}

/// Second moment of the shape derivative by the sparse combination technique,
/// compared with the full tensor on the finest level and, for sound-soft or
/// sound-hard circles, with the exact covariance.
pub fn ct_study(
    spec: &ProblemSpec,
    surface: &SurfaceSpec,
    field: &ModalField,
    settings: &CtSettings,
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<CtStudy> {
    field.validate()?;
    let start = Instant::now();
    let plan = combination_plan(settings.level, settings.min_level, settings.symmetric)?;
    let top = settings
        .reference_level
        .map_or(settings.level, |r| r.max(settings.level));
    let meshes = build_hierarchy(surface, top)?;
    let mut systems = BTreeMap::new();
    let mut data = BTreeMap::new();
    let mut levels = Vec::new();
    for l in settings.min_level..=settings.level {
        let system = build_system(spec, &meshes[l], config)?;
        let (xi, r0) = solve_first_moment(&system, gmres)?;
        let g = mode_data(&system, &xi, field)?;
        let sd_its = match g.first() {
            Some(g0) => system.solve(&system.apply_b(g0)?, gmres)?.1.iterations,
            None => 0,
        };
        levels.push((l, system.dim(), r0.iterations, sd_its));
        systems.insert(l, system);
        data.insert(l, g);
    }
    let terms = |l1: usize, l2: usize| -> Vec<RankTerm> {
        field
            .modes
            .iter()
            .enumerate()
            .filter(|(_, m)| m.weight != 0.0)
            .map(|(i, m)| RankTerm {
                weight: m.weight,
                g1: data[&l1][i].clone(),
                g2: data[&l2][i].clone(),
            })
            .collect()
    };
    let sub_cfg = GmresConfig {
        tol: settings.subblock_tol,
        ..gmres.clone()
    };
    let solved: Vec<Result<(MomentMatrix, GmresReport, f64, Option<f64>)>> = plan
        .entries
        .par_iter()
        .map(|e| {
            let (s1, s2) = (&systems[&e.l1], &systems[&e.l2]);
            let rhs = terms(e.l1, e.l2);
            let t0 = Instant::now();
            let (m, rep) = solve_subblock(s1, s2, &rhs, settings.conjugate, &sub_cfg)?;
            let secs = t0.elapsed().as_secs_f64();
            let diff = if settings.compare_rank {
                let (r, _) = rank_solve(s1, s2, &rhs, settings.conjugate, &sub_cfg)?;
                Some((&r.matrix - &m.matrix).norm() / r.matrix.norm().max(f64::MIN_POSITIVE))
            } else {
                None
            };
            Ok((m, rep, secs, diff))
        })
        .collect();
    let mut blocks = BTreeMap::new();
    let mut rows = Vec::new();
    let mut subblock_reports = Vec::new();
    for (e, r) in plan.entries.iter().zip(solved) {
        let (m, rep, secs, rank_difference) = r?;
        rows.push(CtBlockRow {
            entry: *e,
            dofs: m.matrix.nrows() * m.matrix.ncols(),
            iterations: rep.iterations,
            seconds: secs,
            rank_difference,
        });
        subblock_reports.push(rep);
        blocks.insert((e.l1, e.l2), m);
    }
    let beta = spec.beta();
    let finest = &systems[&settings.level];
    let mut prolongations = vec![DMatrix::zeros(0, 0); settings.level + 1];
    for l in settings.min_level..=settings.level {
        prolongations[l] = unknown_space_prolongation(beta, &systems[&l].spaces, &finest.spaces)?;
    }
    let combined = combine(&plan, &blocks, &prolongations, settings.conjugate)?;
    let n = finest.dim();
    let full = if n * n <= settings.full_cap {
        Some(
            full_tensor_solve(
                finest,
                &terms(settings.level, settings.level),
                settings.conjugate,
                settings.full_cap,
            )?
            .matrix,
        )
    } else {
        None
    };
    let combined_vs_full = full
        .as_ref()
        .map(|f| (&combined - f).norm() / f.norm().max(f64::MIN_POSITIVE));
    let (mut error_combined, mut error_full) = (None, None);
    if let Some(r) = settings.reference_level {
        if let Some((exact, norm, lift)) = exact_circle_covariance(
            spec,
            surface,
            field,
            &meshes[r],
            finest,
            settings.conjugate,
            config,
        )? {
            let lifted = |m: &DMatrix<Complex64>| {
                let l2 = if settings.conjugate {
                    lift.conjugate()
                } else {
                    lift.clone()
                };
                &lift * m * l2.transpose()
            };
            let denom = norm.tensor_norm(&exact)?;
            error_combined = Some(norm.tensor_norm(&(lifted(&combined) - &exact))? / denom);
            if let Some(f) = &full {
                error_full = Some(norm.tensor_norm(&(lifted(f) - &exact))? / denom);
            }
        }
    }
    let level_dofs: Vec<usize> = (0..=settings.level)
        .map(|l| systems.get(&l).map_or(0, |s| s.dim()))
        .collect();
    Ok(CtStudy {
        total_dofs: plan.total_dofs(&level_dofs)?,
        full_dofs: n * n,
        plan,
        blocks: rows,
        levels,
        combined_vs_full,
        error_combined,
        error_full,
        seconds: start.elapsed().as_secs_f64(),
        combined,
        full,
        subblock_reports,
    })
}

/// Exact `Σ_i var_i u'_i ⊗ u'_i` of the unknown trace on `reference`, with the
/// norm surrogate there and the prolongation from the finest solve level.
/// `None` unless the surface is a centered circle with a sound-soft or sound-hard condition.
#[allow(clippy::type_complexity)]
fn exact_circle_covariance(
    spec: &ProblemSpec,
    surface: &SurfaceSpec,
    field: &ModalField,
    reference: &Arc<Mesh>,
    finest: &ProblemSystem,
    conjugate: bool,
    config: &DiscretizationConfig,
) -> Result<Option<(DMatrix<Complex64>, NormSurrogate, DMatrix<Complex64>)>> {
    let radius = match surface.shape {
        AnalyticSurface::Circle { radius, center } if center == [0.0, 0.0] => radius,
        _ => return Ok(None),
    };
    let beta = spec.beta();
    if beta > 1 {
        return Ok(None);
    }
    let nominal = circle_series(spec, radius, [0.0, 0.0], None)?;
    let spaces = Spaces::new(reference.clone(), config.neumann);
    let (space, order) = if beta == 0 {
        (&spaces.neumann, NormOrder::MinusHalf)
    } else {
        (&spaces.dirichlet, NormOrder::PlusHalf)
    };
    let angles: Vec<f64> = dof_points(space).iter().map(|x| x[1].atan2(x[0])).collect();
    let n = angles.len();
    let mut exact = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (i, m) in field.modes.iter().enumerate() {
        if m.weight == 0.0 {
            continue;
        }
        let vn = |phi: f64| {
            let (c, s) = (phi.cos(), phi.sin());
            let x = [radius * c, radius * s, 0.0];
            let d = field.direction_at(&x);
            field.mode_value(i, &x) * (d[0] * c + d[1] * s)
        };
        let sd = circle_shape_derivative(&nominal, vn, 256)?;
        let u = DVector::from_iterator(
            n,
            angles.iter().map(|&p| {
                let (d, nd) = sd.traces(p);
                if beta == 0 {
                    nd
                } else {
                    d
                }
            }),
        );
        let v = if conjugate { u.conjugate() } else { u.clone() };
        exact += &u * v.transpose() * Complex64::new(m.weight, 0.0);
    }
    let norm = NormSurrogate::new(space, order, &config.quad)?;
    let lift = unknown_space_prolongation(beta, &finest.spaces, &spaces)?;
    Ok(Some((exact, norm, lift)))
}

#[derive(Debug, Clone, Serialize)]
pub struct FosbFarField {
    /// First-order mean, equal to the nominal far field.
    pub mean: FarField,
    /// `t √Var[F′]` per direction.
    pub std: Vec<f64>,
    pub ct: CtStudy,
}

/// First-order far-field mean and standard deviation. The covariance of the
/// unknown trace comes from the combination technique (`α_{1;1}`); the data
/// covariance and the data–unknown cross covariance are formed on the finest level.
pub fn fosb_far_field(
    spec: &ProblemSpec,
    surface: &SurfaceSpec,
    field: &ModalField,
    t: f64,
    settings: &CtSettings,
    directions: &[Point],
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<FosbFarField> {
    let settings = CtSettings {
        conjugate: true,
        ..settings.clone()
    };
    let ct = ct_study(spec, surface, field, &settings, config, gmres)?;
    let mesh = build_surface(surface, settings.level)?;
    let system = build_system(spec, &mesh, config)?;
    let (xi, _) = solve_first_moment(&system, gmres)?;
    let mean = far_field(spec.kappa, &system.spaces, &xi, directions)?;
    let g = mode_data(&system, &xi, field)?;
    let ng = g.first().map_or(0, |v| v.len());
    let mut cgg = DMatrix::from_element(ng, ng, Complex64::new(0.0, 0.0));
    for (m, gi) in field.modes.iter().zip(&g) {
        let v = DVector::from_column_slice(gi);
        cgg += &v * v.adjoint() * Complex64::new(m.weight, 0.0);
    }
    let cug = system
        .z
        .clone()
        .lu()
        .solve(&(&system.b * &cgg))
        .ok_or_else(|| Error::Degenerate("singular system matrix".into()))?;
    let (ad, an) = far_field_matrices(spec.kappa, &system.spaces, directions)?;
    let nd = directions.len();
    let (ag, au) = match spec.bc {
        BoundaryCondition::SoundSoft => (ad, an),
        BoundaryCondition::SoundHard => (an, ad),
        BoundaryCondition::Impedance { eta } => {
            let au = &ad - &an * Complex64::new(0.0, eta);
            (an, au)
        }
        BoundaryCondition::Transmission { mu_exterior, .. } => {
            let mut au =
                DMatrix::from_element(nd, ad.ncols() + an.ncols(), Complex64::new(0.0, 0.0));
            au.columns_mut(0, ad.ncols()).copy_from(&ad);
            au.columns_mut(ad.ncols(), an.ncols())
                .copy_from(&(an * Complex64::new(mu_exterior, 0.0)));
            (DMatrix::from_element(nd, ng, Complex64::new(0.0, 0.0)), au)
        }
    };
    let cov = &ag * &cgg * ag.adjoint()
        + &ag * cug.adjoint() * au.adjoint()
        + &au * &cug * ag.adjoint()
        + &au * &ct.combined * au.adjoint();
    let std = (0..nd)
        .map(|j| t * cov[(j, j)].re.max(0.0).sqrt())
        .collect();
    Ok(FosbFarField { mean, std, ct })
}

#[derive(Debug, Clone, Serialize)]
pub struct McComparison {
    pub fosb: FosbFarField,
    pub mc: McEstimate,
    /// Relative `L²(S¹)` difference of the mean far fields.
    pub mean_error: f64,
    /// Relative `L²(S¹)` difference of the standard-deviation far fields.
    pub std_error: f64,
}

/// FOSB against Monte Carlo on the finest mesh of the same hierarchy.
pub fn mc_comparison(
    spec: &ProblemSpec,
    surface: &SurfaceSpec,
    field: &VelocityFieldSpec,
    mc: &McConfig,
    settings: &CtSettings,
    num_directions: usize,
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<McComparison> {
    let (modal, _) = field.random_modes()?;
    let mesh = build_surface(surface, settings.level)?;
    let dirs = directions_for(mesh.dim(), num_directions);
    let fosb = fosb_far_field(spec, surface, modal, mc.t, settings, &dirs, config, gmres)?;
    let est = mc_estimate(spec, &mesh, field, mc, &dirs, &[], config, gmres)?;
    let real =
        |v: &[f64]| -> Vec<Complex64> { v.iter().map(|x| Complex64::new(*x, 0.0)).collect() };
    let mc_std: Vec<f64> = est.far_variance.iter().map(|v| v.sqrt()).collect();
    Ok(McComparison {
        mean_error: relative_l2(&est.far_mean.values, &fosb.mean.values)?,
        std_error: relative_l2(&real(&mc_std), &real(&fosb.std))?,
        fosb,
        mc: est,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CalderonRow {
    pub level: usize,
    pub meshwidth: f64,
    /// `‖P²ξ − Pξ‖ / ‖ξ‖` for the incident Cauchy data.
    pub projector_residual: f64,
    /// `max |−SL σ^inc + DL λ^inc|` over exterior points.
    pub extinction: f64,
}

/// Discrete Calderón identities for the incident wave across refinements.
pub fn calderon_study(
    spec: &ProblemSpec,
    surface: &SurfaceSpec,
    levels: RangeInclusive<usize>,
    points: &[Point],
    config: &DiscretizationConfig,
) -> Result<Vec<CalderonRow>> {
    let meshes = build_hierarchy(surface, *levels.end())?;
    let mut rows = Vec::new();
    for l in levels {
        let spaces = Spaces::new(meshes[l].clone(), config.neumann);
        let xi = incident_traces(spec, &spaces)?;
        let projector_residual =
            calderon_projector_residual(spec.kappa, &spaces, &config.quad, &xi)?;
        let extinction = potential(spec.kappa, &spaces, &xi, points, &config.quad)?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        rows.push(CalderonRow {
            level: l,
            meshwidth: meshes[l].meshwidth(),
            projector_residual,
            extinction,
        });
    }
    Ok(rows)
}

/// Eigenvalues of the preconditioned first-moment matrix and the products
/// `λᵢλⱼ` (or `λᵢ conj λⱼ`) forming the spectrum of the preconditioned tensor operator.
pub fn tensor_spectrum(
    system: &ProblemSystem,
    conjugate: bool,
    cap: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let eigs = spectrum_diagnostic(&system.preconditioned_matrix(), cap)?;
    let mut prod = Vec::with_capacity(eigs.len() * eigs.len());
    for a in &eigs {
        for b in &eigs {
            prod.push(if conjugate { a * b.conj() } else { a * b });
        }
    }
    Ok((eigs, prod))
}

/// Equispaced circle directions in 2D, meridian directions in 3D.
pub fn directions_for(dim: usize, n: usize) -> Vec<Point> {
    if dim == 2 {
        circle_directions(n)
    } else {
        meridian_directions(n)
    }
}
