use fosb::geometry::{AnalyticSurface, SurfaceSpec};
use fosb::krylov::GmresConfig;
use fosb::montecarlo::McConfig;
use fosb::scattering::{BoundaryCondition, DiscretizationConfig, ProblemSpec};
use fosb::shape_uq::{Direction, Distribution, ModalField, Mode, ModeShape, VelocityFieldSpec};
use fosb::studies::{calderon_study, ct_study, mc_comparison, CtSettings};

fn circle() -> SurfaceSpec {
    SurfaceSpec {
        shape: AnalyticSurface::Circle {
            radius: 1.0,
            center: [0.0, 0.0],
        },
        base_segments: 12,
    }
}

fn field() -> ModalField {
    ModalField {
        modes: vec![
            Mode {
                shape: ModeShape::Cosine { n: 1 },
                weight: 0.5,
            },
            Mode {
                shape: ModeShape::Sine { n: 2 },
                weight: 0.5,
            },
        ],
        direction: Direction::Radial,
        face: None,
    }
}

fn soft() -> ProblemSpec {
    ProblemSpec::new(1.0, BoundaryCondition::SoundSoft, [1.0, 0.0, 0.0])
}

#[test]
fn combination_matches_full_tensor_and_is_hermitian() {
    let settings = CtSettings {
        level: 2,
        min_level: 1,
        conjugate: true,
        ..CtSettings::default()
    };
    let s = ct_study(
        &soft(),
        &circle(),
        &field(),
        &settings,
        &DiscretizationConfig::default(),
        &GmresConfig::with_tol(1e-10),
    )
    .unwrap();
    let d = s.combined.nrows();
    assert_eq!(d, s.levels.last().unwrap().1);
    let herm = (&s.combined - s.combined.adjoint()).norm() / s.combined.norm();
    assert!(herm < 1e-6, "{herm}");
    assert!(s.combined_vs_full.unwrap() < 0.2);
    assert!(s.total_dofs < s.full_dofs);
    for i in 0..d {
        assert!(s.combined[(i, i)].re > -1e-8 * s.combined.norm());
    }
}

#[test]
fn fosb_statistics_agree_with_small_monte_carlo() {
    let spec = VelocityFieldSpec::Random {
        field: field(),
        distribution: Distribution::Uniform,
    };
    let mc = McConfig {
        samples: 40,
        seed: 5,
        t: 0.02,
        unbiased: false,
    };
    let settings = CtSettings {
        level: 2,
        min_level: 1,
        ..CtSettings::default()
    };
    let c = mc_comparison(
        &soft(),
        &circle(),
        &spec,
        &mc,
        &settings,
        16,
        &DiscretizationConfig::default(),
        &GmresConfig::with_tol(1e-8),
    )
    .unwrap();
    assert!(c.mean_error < 0.01, "{}", c.mean_error);
    assert!(c.std_error < 0.25, "{}", c.std_error);
    assert_eq!(c.mc.samples.len(), 40);
}

#[test]
fn calderon_residuals_decrease_under_refinement() {
    let rows = calderon_study(
        &soft(),
        &circle(),
        0..=3,
        &[[3.0, 0.5, 0.0], [0.0, -4.0, 0.0]],
        &DiscretizationConfig::default(),
    )
    .unwrap();
    for w in rows.windows(2) {
        assert!(w[1].projector_residual < w[0].projector_residual);
        assert!(w[1].extinction < w[0].extinction);
    }
}
