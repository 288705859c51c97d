//! Acceptance suite: runs the twelve criteria at their stated tolerances and
//! prints one line per criterion. Criteria listed in `KNOWN_FAILURES` are
//! reported but do not fail the run; any other failure exits nonzero.

use fosb::geometry::{AnalyticSurface, SurfaceSpec};
use fosb::krylov::{cluster_fraction, GmresConfig, GmresReport};
use fosb::montecarlo::{sample_field, McConfig};
use fosb::scattering::{
    build_system, solve_first_moment, BoundaryCondition, DiscretizationConfig, ProblemSpec,
};
use fosb::shape_uq::{
    Direction, Distribution, Face, ModalField, Mode, ModeShape, VelocityFieldSpec,
};
use fosb::studies::*;
use fosb::tensor_ct::combination_plan;
use std::time::Instant;

/// Measured misses documented in the README.
const KNOWN_FAILURES: [usize; 3] = [2, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn circle(base: usize) -> SurfaceSpec {
    SurfaceSpec {
        shape: AnalyticSurface::Circle {
            radius: 1.0,
            center: [0.0; 2],
        },
        base_segments: base,
    }
}

fn spec(kappa: f64, bc: BoundaryCondition) -> ProblemSpec {
    ProblemSpec::new(kappa, bc, [1.0, 0.0, 0.0])
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn fourier_field() -> ModalField {
    let mut modes = Vec::new();
    for n in 1..=3 {
        modes.push(Mode {
            shape: ModeShape::Cosine { n },
            weight: 1.0 / 3.0,
        });
        modes.push(Mode {
            shape: ModeShape::Sine { n },
            weight: 1.0 / 3.0,
        });
    }
    ModalField {
        modes,
        direction: Direction::Radial,
        face: None,
    }
}

fn box_field() -> VelocityFieldSpec {
    let mut modes = Vec::new();
    for (q, starts) in [
        (2, [-0.5, 0.0]),
        (4, [-0.375, 0.125]),
        (6, [-0.25, 1.0 / 12.0]),
    ] {
        for start in starts {
            modes.push(Mode {
                shape: ModeShape::SineSpline { q, start },
                weight: 1.0 / 3.0,
            });
        }
    }
    VelocityFieldSpec::Random {
        field: ModalField {
            modes,
            direction: Direction::Fixed {
                vector: [0.0, 1.0, 0.0],
            },
            face: Some(Face {
                normal_axis: 1,
                level: 0.5,
                along_axis: 0,
            }),
        },
        distribution: Distribution::Uniform,
    }
}

struct Context {
    reports: Vec<GmresReport>,
    ct: Option<[CtStudy; 2]>,
}

fn c1(ctx: &mut Context) -> Outcome {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, bc) in [
        ("soft", BoundaryCondition::SoundSoft),
        ("hard", BoundaryCondition::SoundHard),
        ("impedance", BoundaryCondition::Impedance { eta: 1.0 }),
    ] {
        let s = convergence_study(
            &spec(1.0, bc),
            &circle(16),
            0..=4,
            6,
            &DiscretizationConfig::default(),
            &GmresConfig::with_tol(1e-8),
        )
        .unwrap();
        if let Some(d) = s.slope_dirichlet {
            pass &= within(d, 1.2, 1.8);
            parts.push(format!("{name} D {d:.3}"));
        }
        if let Some(n) = s.slope_neumann {
            pass &= within(n, 1.7, 2.3);
            parts.push(format!("{name} N {n:.3}"));
        }
        ctx.reports.extend(s.reports);
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    Outcome {
        pass,
        detail: format!("{} ({secs:.0}s)", parts.join(", ")),
    }
}

fn c2(ctx: &mut Context) -> Outcome {
    let t0 = Instant::now();
    let surface = SurfaceSpec {
        shape: AnalyticSurface::Sphere {
            radius: 1.0,
            center: [0.0; 3],
        },
        base_segments: 16,
    };
    let s = convergence_study(
        &spec(
            0.4,
            BoundaryCondition::Transmission {
                kappa_interior: 1.0,
                mu_exterior: 1.0,
                mu_interior: 1.0,
            },
        ),
        &surface,
        0..=3,
        3,
        &DiscretizationConfig::default(),
        &GmresConfig::with_tol(1e-8),
    )
    .unwrap();
    let d = s.slope_dirichlet.unwrap();
    let n = s.slope_neumann.unwrap();
    ctx.reports.extend(s.reports);
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: within(d, 1.15, 1.85) && within(n, 1.65, 2.35) && secs < 600.0,
        detail: format!("D {d:.3} (band 1.5 ± 0.35), N {n:.3} ({secs:.0}s)"),
    }
}

fn c3(ctx: &mut Context) -> Outcome {
    let t0 = Instant::now();
    let kite = SurfaceSpec {
        shape: AnalyticSurface::Kite2d {
            a: 0.65,
            b: 1.5,
            scale: 1.0,
            center: [0.0; 2],
        },
        base_segments: 16,
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, bc) in [
        ("soft", BoundaryCondition::SoundSoft),
        ("hard", BoundaryCondition::SoundHard),
    ] {
        let s = foa_study(
            &spec(1.0, bc),
            &kite,
            5,
            &VelocityFieldSpec::Kite,
            &[0.025, 0.05, 0.075, 0.1, 0.125, 0.25],
            64,
            &DiscretizationConfig::default(),
            &GmresConfig::with_tol(1e-10),
        )
        .unwrap();
        pass &= within(s.slope_zoa, 0.8, 1.2) && within(s.slope_foa, 1.7, 2.3);
        parts.push(format!(
            "{name} ZOA {:.3} FOA {:.3}",
            s.slope_zoa, s.slope_foa
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    let _ = ctx;
    Outcome {
        pass: pass && secs < 300.0,
        detail: format!("{} ({secs:.0}s)", parts.join(", ")),
    }
}

fn c4(_: &mut Context) -> Outcome {
    let s = foa_kappa_sweep(
        &spec(1.0, BoundaryCondition::SoundSoft),
        &circle(16),
        5,
        &VelocityFieldSpec::Kite,
        0.1,
        &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        64,
        &DiscretizationConfig::default(),
        &GmresConfig::with_tol(1e-10),
    )
    .unwrap();
    Outcome {
        pass: within(s.slope_foa, 1.1, 1.9),
        detail: format!("FOA error slope in κ {:.3} (band 1.5 ± 0.4)", s.slope_foa),
    }
}

fn c5(ctx: &mut Context) -> Outcome {
    let t0 = Instant::now();
    let run = |min_level| {
        ct_study(
            &spec(1.0, BoundaryCondition::SoundSoft),
            &circle(16),
            &fourier_field(),
            &CtSettings {
                level: 3,
                min_level,
                reference_level: Some(5),
                compare_rank: true,
                full_cap: 60_000,
                ..Default::default()
            },
            &DiscretizationConfig::default(),
            &GmresConfig::with_tol(1e-8),
        )
        .unwrap()
    };
    let studies = [run(0), run(1)];
    let mut pass = true;
    let mut parts = Vec::new();
    for s in &studies {
        let ratio = s.error_combined.unwrap() / s.error_full.unwrap();
        pass &= ratio <= 1.3;
        parts.push(format!(
            "L0={} ratio {ratio:.3} (CT {:.3e}, full {:.3e})",
            s.plan.min_level,
            s.error_combined.unwrap(),
            s.error_full.unwrap()
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    ctx.ct = Some(studies);
    Outcome {
        pass: pass && secs < 600.0,
        detail: format!("{} ({secs:.0}s)", parts.join(", ")),
    }
}

fn c6(ctx: &mut Context) -> Outcome {
    let studies = ctx.ct.as_ref().unwrap();
    let worst = studies
        .iter()
        .flat_map(|s| s.blocks.iter().map(|b| b.rank_difference.unwrap()))
        .fold(0.0, f64::max);
    Outcome {
        pass: worst <= 10.0 * 1e-8,
        detail: format!("max block difference {worst:.2e} (bound 1e-7)"),
    }
}

fn c7(_: &mut Context) -> Outcome {
    let n = [52, 100, 196, 388, 772, 1540, 3076, 6148];
    let p = combination_plan(7, 0, false).unwrap();
    let d = p.block_dofs(&n).unwrap();
    let get = |a: usize, b: usize| {
        p.entries
            .iter()
            .position(|e| e.l1 == a && e.l2 == b)
            .map(|i| d[i])
    };
    let got = [get(0, 7), get(1, 6), get(0, 6)];
    let s = combination_plan(7, 0, true).unwrap();
    let off =
        |q: &fosb::tensor_ct::CombinationPlan| q.entries.iter().filter(|e| e.l1 != e.l2).count();
    let pass = got == [Some(319_696), Some(307_600), Some(159_952)] && off(&p) == 2 * off(&s);
    Outcome {
        pass,
        detail: format!(
            "blocks {:?}, off-diagonal {} vs symmetric {}",
            got.map(|g| g.unwrap_or(0)),
            off(&p),
            off(&s)
        ),
    }
}

fn c8(ctx: &mut Context) -> Outcome {
    let meshes = fosb::geometry::build_hierarchy(&circle(16), 4).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, bc) in [
        ("β0", BoundaryCondition::SoundSoft),
        ("β1", BoundaryCondition::SoundHard),
        ("β2", BoundaryCondition::Impedance { eta: 1.0 }),
        (
            "β3",
            BoundaryCondition::Transmission {
                kappa_interior: 2.0,
                mu_exterior: 1.0,
                mu_interior: 1.5,
            },
        ),
    ] {
        let its: Vec<usize> = (2..=4)
            .map(|l| {
                let sys =
                    build_system(&spec(1.0, bc), &meshes[l], &DiscretizationConfig::default())
                        .unwrap();
                let (_, r) = solve_first_moment(&sys, &GmresConfig::default()).unwrap();
                let n = r.iterations;
                ctx.reports.push(r);
                n
            })
            .collect();
        let spread = its.iter().max().unwrap() - its.iter().min().unwrap();
        pass &= spread <= 2;
        parts.push(format!("{name} {its:?}"));
    }
    let studies = ctx.ct.as_ref().unwrap();
    for s in studies {
        let blocks: Vec<usize> = s.blocks.iter().map(|b| b.iterations).collect();
        let first = s.levels.iter().map(|l| l.2).max().unwrap();
        let spread = blocks.iter().max().unwrap() - blocks.iter().min().unwrap();
        pass &= spread <= 4 && *blocks.iter().max().unwrap() <= first * first + 2;
        parts.push(format!(
            "k=2 L0={} blocks {blocks:?} vs k=1 {first}",
            s.plan.min_level
        ));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn c9(_: &mut Context) -> Outcome {
    let pts = [[2.0, 0.5, 0.0], [-1.5, -1.5, 0.0], [0.0, 3.0, 0.0]];
    let rows = calderon_study(
        &spec(1.0, BoundaryCondition::SoundSoft),
        &circle(16),
        1..=4,
        &pts,
        &DiscretizationConfig::default(),
    )
    .unwrap();
    let h: Vec<f64> = rows.iter().map(|r| r.meshwidth).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.projector_residual).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.extinction).collect();
    let dec = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let (sp, se) = (fit_slope(&h, &p), fit_slope(&h, &e));
    Outcome {
        pass: dec(&p) && dec(&e) && sp >= 1.0 && se >= 1.0,
        detail: format!(
            "projector rate {sp:.2}, extinction rate {se:.2}, monotone {}",
            dec(&p) && dec(&e)
        ),
    }
}

fn c10(_: &mut Context) -> Outcome {
    let meshes = fosb::geometry::build_hierarchy(&circle(16), 2).unwrap();
    let mut prev = 0.0;
    let mut pass = true;
    let mut parts = Vec::new();
    for l in 1..=2 {
        let sys = build_system(
            &spec(1.0, BoundaryCondition::SoundSoft),
            &meshes[l],
            &DiscretizationConfig::default(),
        )
        .unwrap();
        let (eigs, prod) = tensor_spectrum(&sys, false, 4096).unwrap();
        let (f1, f2) = (cluster_fraction(&eigs, 0.5), cluster_fraction(&prod, 0.5));
        pass &= f2 >= f1 - 0.1 && f2 >= prev;
        prev = f2;
        parts.push(format!("L={l} k=1 {f1:.3} k=2 {f2:.3}"));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn c11(ctx: &mut Context) -> Outcome {
    let t0 = Instant::now();
    let c = mc_comparison(
        &spec(5.0, BoundaryCondition::SoundSoft),
        &SurfaceSpec {
            shape: AnalyticSurface::unit_box(0.5),
            base_segments: 16,
        },
        &box_field(),
        &McConfig {
            samples: 200,
            seed: 2024,
            t: 0.075,
            unbiased: false,
        },
        &CtSettings {
            level: 2,
            min_level: 0,
            ..Default::default()
        },
        128,
        &DiscretizationConfig::default(),
        &GmresConfig::default(),
    )
    .unwrap();
    ctx.reports.extend(c.mc.reports.iter().cloned());
    ctx.reports
        .extend(c.fosb.ct.subblock_reports.iter().cloned());
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: c.mean_error <= 0.15 && c.std_error <= 0.25 && secs < 1200.0,
        detail: format!(
            "mean {:.1}%, std {:.1}% ({secs:.0}s)",
            100.0 * c.mean_error,
            100.0 * c.std_error
        ),
    }
}

fn c12(ctx: &mut Context) -> Outcome {
    if let Some(s) = &ctx.ct {
        for st in s {
            ctx.reports.extend(st.subblock_reports.iter().cloned());
        }
    }
    let converged: Vec<&GmresReport> = ctx.reports.iter().filter(|r| r.converged).collect();
    let worst = converged
        .iter()
        .flat_map(|r| r.history_rows().into_iter().map(|(_, _, q)| q))
        .fold(0.0, f64::max);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let run = || {
        pool.install(|| {
            let mesh = fosb::geometry::build_surface(&circle(16), 2).unwrap();
            let sys = build_system(
                &spec(1.0, BoundaryCondition::SoundHard),
                &mesh,
                &DiscretizationConfig::default(),
            )
            .unwrap();
            let (_, r) = solve_first_moment(&sys, &GmresConfig::with_tol(1e-10)).unwrap();
            let y = sample_field(&box_field(), 99, 3).unwrap();
            (r.residuals, y)
        })
    };
    let same = run() == run();
    Outcome {
        pass: worst <= 1.0 && same && !converged.is_empty(),
        detail: format!(
            "max Q_m {worst:.3} over {} converged solves, reproducible {same}",
            converged.len()
        ),
    }
}

fn main() {
    let criteria: [(usize, fn(&mut Context) -> Outcome); 12] = [
        (1, c1),
        (2, c2),
        (3, c3),
        (4, c4),
        (5, c5),
        (6, c6),
        (7, c7),
        (8, c8),
        (9, c9),
        (10, c10),
        (11, c11),
        (12, c12),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut ctx = Context {
        reports: Vec::new(),
        ct: None,
    };
    let mut unexpected = Vec::new();
    let wanted = |id: usize| {
        only.is_empty()
            || only.contains(&id)
            || (id == 5 && only.iter().any(|o| *o == 6 || *o == 8))
    };
    for (id, f) in criteria {
        if !wanted(id) {
            continue;
        }
        let o = f(&mut ctx);
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_FAILURES.contains(&id) {
            " [known]"
        } else {
            ""
        };
        println!("criterion {id:>2}: {status}{note}  {}", o.detail);
        if !o.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
