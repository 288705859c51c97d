//! Field and far-field reconstruction, radar cross sections, discrete
//! fractional Sobolev error norms and variance extraction.

use crate::error::{Error, Result};
use crate::geometry::{dist, dot, norm, sub, Mesh, Point};
use crate::operators::{assemble_many, AssemblyRequest, Kernel, KernelKind, QuadratureConfig};
use crate::scattering::{BoundaryCondition, CauchyData, ProblemSpec, Spaces};
use crate::spaces::{element_quadrature, mass_matrix, value_at, Family, TraceSpace};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Points closer to the vertices or centroid of an element than this multiple
/// of its diameter are rejected.
pub const NEAR_FIELD_RATIO: f64 = 0.25;

fn check_sizes(spaces: &Spaces, xi: &CauchyData) -> Result<()> {
    if xi.lambda.len() != spaces.dirichlet.dim() || xi.sigma.len() != spaces.neumann.dim() {
        return Err(Error::Mismatch(
            "Cauchy data do not match the trace spaces".into(),
        ));
    }
    Ok(())
}

/// `−SL_κ σ + DL_κ λ` at points off the boundary.
pub fn potential(
    kappa: f64,
    spaces: &Spaces,
    xi: &CauchyData,
    points: &[Point],
    quad: &QuadratureConfig,
) -> Result<Vec<Complex64>> {
    check_sizes(spaces, xi)?;
    let mesh = spaces.mesh();
    let d = mesh.dim();
    let kernel = Kernel::Helmholtz { kappa };
    points
        .par_iter()
        .map(|x| {
            let mut acc = ZERO;
            for e in 0..mesh.num_elements() {
                let pts = mesh.element_points(e);
                let near = pts[..d]
                    .iter()
                    .map(|p| dist(x, p))
                    .fold(dist(x, &mesh.centroid(e)), f64::min);
                let ratio = near / mesh.diameter(e);
                if ratio < NEAR_FIELD_RATIO {
                    return Err(Error::InvalidInput(format!(
                        "evaluation point {x:?} lies too close to the boundary"
                    )));
                }
                let order = quad.regular_order(ratio);
                let n = mesh.normal(e);
                for (y, sh, w) in element_quadrature(mesh, e, order) {
                    let r_vec = sub(x, &y);
                    let r = norm(&r_vec);
                    let (g, dg) = kernel.eval(d, r);
                    // ∂G/∂n_y = G'(r) ∂r/∂n_y
                    let dn = dg * (-dot(&r_vec, n) / r);
                    let s = value_at(&spaces.neumann, &xi.sigma, e, &sh);
                    let l = value_at(&spaces.dirichlet, &xi.lambda, e, &sh);
                    acc += (dn * l - g * s) * w;
                }
            }
            Ok(acc)
        })
        .collect()
}

/// Whether `x` lies inside the closed boundary, from the Laplace double layer of 1.
pub fn is_inside(mesh: &Mesh, x: &Point) -> bool {
    let kernel = Kernel::Laplace { log_scale: 1.0 };
    let d = mesh.dim();
    let mut acc = 0.0;
    for e in 0..mesh.num_elements() {
        let n = mesh.normal(e);
        for (y, _, w) in element_quadrature(mesh, e, 6) {
            let r_vec = sub(x, &y);
            let r = norm(&r_vec);
            acc += kernel.eval(d, r).1.re * (-dot(&r_vec, n) / r) * w;
        }
    }
    acc < -0.5
}

/// Total field: `U^inc − SL σ + DL λ` outside; for transmission problems the
/// transmitted field `SL_{κ₁} σ₁ − DL_{κ₁} λ₁` inside, with `λ₁ = λ`, `σ₁ = (μ₁/μ₀) σ`.
pub fn evaluate_field(
    spec: &ProblemSpec,
    spaces: &Spaces,
    xi: &CauchyData,
    points: &[Point],
    quad: &QuadratureConfig,
) -> Result<Vec<Complex64>> {
    spec.validate()?;
    let (spec, _) = spec.normalized();
    let mesh = spaces.mesh();
    let inside: Vec<bool> = points.iter().map(|x| is_inside(mesh, x)).collect();
    let outer: Vec<Point> = points
        .iter()
        .zip(&inside)
        .filter(|(_, &i)| !i)
        .map(|(x, _)| *x)
        .collect();
    let inner: Vec<Point> = points
        .iter()
        .zip(&inside)
        .filter(|(_, &i)| i)
        .map(|(x, _)| *x)
        .collect();
    let mut out_vals = potential(spec.kappa, spaces, xi, &outer, quad)?.into_iter();
    let mut in_vals = if inner.is_empty() {
        Vec::new().into_iter()
    } else {
        let BoundaryCondition::Transmission {
            kappa_interior,
            mu_exterior,
            mu_interior,
        } = spec.bc
        else {
            return Err(Error::InvalidInput(
                "evaluation point lies inside an impenetrable scatterer".into(),
            ));
        };
        let interior = CauchyData {
            lambda: xi.lambda.clone(),
            sigma: xi
                .sigma
                .iter()
                .map(|s| s * (mu_interior / mu_exterior))
                .collect(),
            level: xi.level,
        };
        potential(kappa_interior, spaces, &interior, &inner, quad)?
            .into_iter()
            .map(|z| -z)
            .collect::<Vec<_>>()
            .into_iter()
    };
    Ok(points
        .iter()
        .zip(&inside)
        .map(|(x, &i)| {
            if i {
                in_vals.next().unwrap()
            } else {
                spec.incident(x) + out_vals.next().unwrap()
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FarField {
    pub directions: Vec<Point>,
    pub values: Vec<Complex64>,
    pub kappa: f64,
    pub dim: usize,
}

/// `n` equispaced directions on the unit circle, starting at angle 0.
pub fn circle_directions(n: usize) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            [a.cos(), a.sin(), 0.0]
        })
        .collect()
}

/// Directions in the plane spanned by `e_x` and `e_z`, angle measured from `e_z`.
pub fn meridian_directions(n: usize) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            [a.sin(), 0.0, a.cos()]
        })
        .collect()
}

/// Far-field constant of the fundamental solution: `e^{iπ/4}/√(8πκ)` in 2D, `1/(4π)` in 3D.
pub fn far_field_constant(d: usize, kappa: f64) -> Complex64 {
    if d == 2 {
        Complex64::from_polar(1.0 / (8.0 * PI * kappa).sqrt(), PI / 4.0)
    } else {
        Complex64::new(1.0 / (4.0 * PI), 0.0)
    }
}

/// Far field of `−SL σ + DL λ`.
pub fn far_field(
    kappa: f64,
    spaces: &Spaces,
    xi: &CauchyData,
    directions: &[Point],
) -> Result<FarField> {
    check_sizes(spaces, xi)?;
    for x in directions {
        if (norm(x) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(
                "far-field directions must be unit vectors".into(),
            ));
        }
    }
    let mesh = spaces.mesh();
    let d = mesh.dim();
    if d == 2 && directions.iter().any(|x| x[2] != 0.0) {
        return Err(Error::InvalidInput(
            "2D far-field directions must lie in the plane".into(),
        ));
    }
    let c = far_field_constant(d, kappa);
    let rules: Vec<Vec<(Point, [f64; 3], f64)>> = (0..mesh.num_elements())
        .map(|e| element_quadrature(mesh, e, 4))
        .collect();
    let values = directions
        .par_iter()
        .map(|xh| {
            let mut acc = ZERO;
            for (e, rule) in rules.iter().enumerate() {
                let n = mesh.normal(e);
                for (y, sh, w) in rule {
                    let ph = Complex64::from_polar(1.0, -kappa * dot(xh, y));
                    let s = value_at(&spaces.neumann, &xi.sigma, e, sh);
                    let l = value_at(&spaces.dirichlet, &xi.lambda, e, sh);
                    acc += ph * (-s - I * kappa * dot(xh, n) * l) * *w;
                }
            }
            c * acc
        })
        .collect();
    Ok(FarField {
        directions: directions.to_vec(),
        values,
        kappa,
        dim: d,
    })
}

/// Matrices `(A_D, A_N)` with `F = A_D λ + A_N σ`, one row per direction.
pub fn far_field_matrices(
    kappa: f64,
    spaces: &Spaces,
    directions: &[Point],
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let probe = CauchyData::zeros(spaces);
    far_field(kappa, spaces, &probe, directions)?;
    let mesh = spaces.mesh();
    let c = far_field_constant(mesh.dim(), kappa);
    let (nd, nn) = (spaces.dirichlet.dim(), spaces.neumann.dim());
    let mut ad = DMatrix::from_element(directions.len(), nd, ZERO);
    let mut an = DMatrix::from_element(directions.len(), nn, ZERO);
    let local = |space: &TraceSpace, e: usize, sh: &[f64; 3]| -> Vec<(usize, f64)> {
        match space.family() {
            Family::P0 => vec![(e, 1.0)],
            Family::P1 => mesh
                .element(e)
                .iter()
                .copied()
                .zip(sh.iter().copied())
                .collect(),
        }
    };
    for e in 0..mesh.num_elements() {
        let n = mesh.normal(e);
        for (y, sh, w) in element_quadrature(mesh, e, 4) {
            for (j, xh) in directions.iter().enumerate() {
                let ph = c * Complex64::from_polar(1.0, -kappa * dot(xh, &y)) * w;
                for (i, s) in local(&spaces.neumann, e, &sh) {
                    an[(j, i)] -= ph * s;
                }
                let dl = -I * kappa * dot(xh, n);
                for (i, s) in local(&spaces.dirichlet, e, &sh) {
                    ad[(j, i)] += ph * dl * s;
                }
            }
        }
    }
    Ok((ad, an))
}

impl FarField {
    /// Pointwise `a F + b G` of two far fields on the same directions.
    pub fn combine(&self, a: Complex64, other: &FarField, b: Complex64) -> Result<FarField> {
        if self.directions != other.directions {
            return Err(Error::Mismatch("far fields on different directions".into()));
        }
        Ok(FarField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            ..self.clone()
        })
    }

    /// Discrete relative L² distance `‖F − G‖/‖G‖` over equal-weight directions.
    pub fn relative_error(&self, reference: &[Complex64]) -> Result<f64> {
        relative_l2(&self.values, reference)
    }
}

/// `‖a − b‖₂ / ‖b‖₂` for equally weighted samples.
pub fn relative_l2(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(
            "sample vectors of different lengths".into(),
        ));
    }
    let den: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::InvalidInput("reference vanishes".into()));
    }
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    Ok((num / den).sqrt())
}

/// Radar cross section `10 log₁₀(c |F|²/|A|²)` with `c = 4π` in 3D and `2π` in 2D.
pub fn rcs(ff: &FarField, amplitude: f64) -> Result<Vec<f64>> {
    if amplitude == 0.0 {
        return Err(Error::InvalidInput(
            "incident amplitude must be nonzero".into(),
        ));
    }
    let c = if ff.dim == 3 { 4.0 * PI } else { 2.0 * PI };
    Ok(ff
        .values
        .iter()
        .map(|f| 10.0 * (c * f.norm_sqr() / (amplitude * amplitude)).log10())
        .collect())
}

/// Sobolev order of a discrete error norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    /// `H^{-1/2}`: Laplace single layer.
    MinusHalf,
    /// `L²`: mass matrix.
    Zero,
    /// `H^{1/2}`: Laplace hypersingular plus `|⟨u, 1⟩|²`.
    PlusHalf,
}

/// Real symmetric positive definite matrix realizing a discrete norm on one space.
#[derive(Debug, Clone)]
pub struct NormSurrogate {
    pub order: NormOrder,
    pub matrix: DMatrix<f64>,
}

impl NormSurrogate {
    pub fn new(space: &TraceSpace, order: NormOrder, quad: &QuadratureConfig) -> Result<Self> {
        let mesh = space.mesh();
        let fam = space.family();
        let n = space.dim();
        let laplace = || {
            let c = (0..mesh.num_vertices()).fold([0.0; 3], |acc, v| {
                let p = mesh.vertex(v);
                [acc[0] + p[0], acc[1] + p[1], acc[2] + p[2]]
            });
            let c = [
                c[0] / n.max(1) as f64,
                c[1] / n.max(1) as f64,
                c[2] / n.max(1) as f64,
            ];
            let extent = mesh
                .vertices()
                .iter()
                .map(|p| dist(p, &c))
                .fold(0.0, f64::max);
            Kernel::Laplace {
                log_scale: 8.0 * extent.max(f64::MIN_POSITIVE),
            }
        };
        let matrix = match order {
            NormOrder::Zero => mass_matrix(space, space)?.to_dense(),
            NormOrder::MinusHalf => {
                let req = [AssemblyRequest::new(KernelKind::SingleLayer, fam, fam)];
                let m = assemble_many(laplace(), mesh, &req, quad)?
                    .pop()
                    .unwrap()
                    .matrix;
                m.map(|z| z.re)
            }
            NormOrder::PlusHalf => {
                if fam != Family::P1 {
                    return Err(Error::InvalidInput(
                        "the H^1/2 surrogate needs P1 functions".into(),
                    ));
                }
                let req = [AssemblyRequest::new(KernelKind::Hypersingular, fam, fam)];
                let w = assemble_many(laplace(), mesh, &req, quad)?
                    .pop()
                    .unwrap()
                    .matrix;
                let ones = vec![1.0; n];
                let m = mass_matrix(space, space)?;
                let l = m.mul_vec_real(&ones);
                let mut out = w.map(|z| z.re);
                for i in 0..n {
                    for j in 0..n {
                        out[(i, j)] += l[i] * l[j];
                    }
                }
                out
            }
        };
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(NormSurrogate { order, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn norm(&self, u: &[Complex64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::Mismatch(
                "vector does not match the norm surrogate".into(),
            ));
        }
        let mut s = 0.0;
        for j in 0..u.len() {
            let mut col = ZERO;
            for i in 0..u.len() {
                col += u[i].conj() * self.matrix[(i, j)];
            }
            s += (col * u[j]).re;
        }
        Ok(s.max(0.0).sqrt())
    }

    /// Tensor norm `(Σ_{ijkl} conj(E_ij) A_ik A_jl E_kl)^{1/2}` of a coefficient matrix.
    pub fn tensor_norm(&self, e: &DMatrix<Complex64>) -> Result<f64> {
        if e.nrows() != self.dim() || e.ncols() != self.dim() {
            return Err(Error::Mismatch(
                "matrix does not match the norm surrogate".into(),
            ));
        }
        let a = self.matrix.map(|x| Complex64::new(x, 0.0));
        let ae = &a * e * &a;
        let s: Complex64 = e.iter().zip(ae.iter()).map(|(x, y)| x.conj() * y).sum();
        Ok(s.re.max(0.0).sqrt())
    }
}

/// Relative error `[a − b] = ‖a − b‖/‖b‖` in the given norm.
pub fn error_norm(a: &[Complex64], b: &[Complex64], norm: &NormSurrogate) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Mismatch("vectors of different lengths".into()));
    }
    let nb = norm.norm(b)?;
    if nb == 0.0 {
        return Err(Error::InvalidInput("reference has zero norm".into()));
    }
    let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(norm.norm(&diff)? / nb)
}

/// `t² Re diag Σ`, the nodal variance surrogate of a second moment.
pub fn variance_field(sigma: &DMatrix<Complex64>, t: f64) -> Result<Vec<f64>> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::Mismatch(
            "variance needs a moment on equal levels".into(),
        ));
    }
    Ok((0..sigma.nrows())
        .map(|i| t * t * sigma[(i, i)].re)
        .collect())
}

/// Coordinates of the degrees of freedom: vertices (P1) or element centroids (P0).
pub fn dof_points(space: &TraceSpace) -> Vec<Point> {
    let mesh = space.mesh();
    match space.family() {
        Family::P1 => mesh.vertices().to_vec(),
        Family::P0 => (0..mesh.num_elements()).map(|e| mesh.centroid(e)).collect(),
    }
}

/// Far-field CSV: angle (2D) or direction (3D), real and imaginary parts, RCS in dB.
pub fn write_far_field_csv(ff: &FarField, amplitude: f64, w: impl std::io::Write) -> Result<()> {
    let db = rcs(ff, amplitude)?;
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    if ff.dim == 2 {
        wr.write_record([
            "theta_rad",
            "re_F",
            "im_F",
            if ff.dim == 2 {
                "rcs_db_2pi"
            } else {
                "rcs_db_4pi"
            },
        ])
        .map_err(fmt)?;
    } else {
        wr.write_record(["dir_x", "dir_y", "dir_z", "re_F", "im_F", "rcs_db_4pi"])
            .map_err(fmt)?;
    }
    for ((x, f), r) in ff.directions.iter().zip(&ff.values).zip(&db) {
        let mut row: Vec<String> = if ff.dim == 2 {
            vec![format!("{:.12e}", x[1].atan2(x[0]))]
        } else {
            x.iter().map(|c| format!("{c:.12e}")).collect()
        };
        row.extend([
            format!("{:.12e}", f.re),
            format!("{:.12e}", f.im),
            format!("{r:.12e}"),
        ]);
        wr.write_record(&row).map_err(fmt)?;
    }
    wr.flush()?;
    Ok(())
}

/// Variance CSV with columns `x, y, z, variance`.
pub fn write_variance_csv(
    points: &[Point],
    variance: &[f64],
    w: impl std::io::Write,
) -> Result<()> {
    if points.len() != variance.len() {
        return Err(Error::Mismatch(
            "points and variance values differ in length".into(),
        ));
    }
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["x", "y", "z", "variance"]).map_err(fmt)?;
    for (p, v) in points.iter().zip(variance) {
        wr.write_record([p[0], p[1], p[2], *v].iter().map(|c| format!("{c:.12e}")))
            .map_err(fmt)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::circle_series;
    use crate::geometry::{build_surface, AnalyticSurface, SurfaceSpec};
    use crate::krylov::GmresConfig;
    use crate::scattering::{
        build_system, incident_traces, solve_first_moment, DiscretizationConfig,
    };
    use std::sync::Arc;

    fn circle(level: usize) -> Arc<Mesh> {
        build_surface(
            &SurfaceSpec {
                shape: AnalyticSurface::Circle {
                    radius: 1.0,
                    center: [0.0; 2],
                },
                base_segments: 16,
            },
            level,
        )
        .unwrap()
    }

    fn sound_soft() -> ProblemSpec {
        ProblemSpec::new(1.0, BoundaryCondition::SoundSoft, [1.0, 0.0, 0.0])
    }

    #[test]
    fn incident_data_extinguish_outside() {
        let spec = sound_soft();
        let pts = [[2.0, 0.5, 0.0], [-1.5, -1.5, 0.0], [0.0, 3.0, 0.0]];
        let mut errs = Vec::new();
        for level in [1, 2, 3] {
            let spaces = Spaces::new(circle(level), Family::P1);
            let xi = incident_traces(&spec, &spaces).unwrap();
            let u = potential(1.0, &spaces, &xi, &pts, &QuadratureConfig::default()).unwrap();
            errs.push(u.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        assert!(errs[0] < 1e-2);
        assert!(
            errs[1] < errs[0] / 3.0 && errs[2] < errs[1] / 3.0,
            "{errs:?}"
        );
    }

    #[test]
    fn sound_soft_field_and_far_field_match_series() {
        let spec = sound_soft();
        let series = circle_series(&spec, 1.0, [0.0; 2], None).unwrap();
        let cfg = GmresConfig::with_tol(1e-10);
        let dirs = circle_directions(32);
        let exact: Vec<Complex64> = dirs.iter().map(|x| series.far_field(x)).collect();
        let pts = [[3.0, 0.0, 0.0], [0.0, -3.0, 0.0], [2.0, 2.0, 0.0]];
        let mut ff_err = Vec::new();
        for level in [2, 3] {
            let sys =
                build_system(&spec, &circle(level), &DiscretizationConfig::default()).unwrap();
            let (xi, _) = solve_first_moment(&sys, &cfg).unwrap();
            let ff = far_field(1.0, &sys.spaces, &xi, &dirs).unwrap();
            ff_err.push(ff.relative_error(&exact).unwrap());
            let u = evaluate_field(&spec, &sys.spaces, &xi, &pts, &QuadratureConfig::default())
                .unwrap();
            for (x, v) in pts.iter().zip(&u) {
                assert!((v - series.field(x).unwrap()).norm() < 1e-3);
            }
        }
        assert!(
            ff_err[0] < 1e-2 && ff_err[1] < ff_err[0] / 3.0,
            "{ff_err:?}"
        );
    }

    #[test]
    fn far_field_matrices_reproduce_far_field() {
        for fam in [Family::P1, Family::P0] {
            let spaces = Spaces::new(circle(1), fam);
            let mut xi = incident_traces(&sound_soft(), &spaces).unwrap_or(CauchyData {
                lambda: vec![ZERO; spaces.dirichlet.dim()],
                sigma: vec![ZERO; spaces.neumann.dim()],
                level: 1,
            });
            xi.sigma = (0..spaces.neumann.dim())
                .map(|i| Complex64::new(1.0 + i as f64, -0.5 * i as f64))
                .collect();
            let dirs = circle_directions(7);
            let ff = far_field(1.3, &spaces, &xi, &dirs).unwrap();
            let (ad, an) = far_field_matrices(1.3, &spaces, &dirs).unwrap();
            let v = ad * DMatrix::from_column_slice(xi.lambda.len(), 1, &xi.lambda)
                + an * DMatrix::from_column_slice(xi.sigma.len(), 1, &xi.sigma);
            assert!(relative_l2(v.as_slice(), &ff.values).unwrap() < 1e-12);
        }
    }

    #[test]
    fn far_field_is_asymptotic_limit() {
        let spaces = Spaces::new(circle(1), Family::P1);
        let spec = sound_soft();
        let mut xi = incident_traces(&spec, &spaces).unwrap();
        xi.lambda
            .iter_mut()
            .enumerate()
            .for_each(|(i, z)| *z *= 1.0 + 0.1 * i as f64);
        let xhat = [0.6, 0.8, 0.0];
        let ff = far_field(1.0, &spaces, &xi, &[xhat]).unwrap().values[0];
        let err = |r: f64| {
            let u = potential(
                1.0,
                &spaces,
                &xi,
                &[[r * 0.6, r * 0.8, 0.0]],
                &QuadratureConfig::default(),
            )
            .unwrap()[0];
            (u - Complex64::from_polar(r.powf(-0.5), r) * ff).norm()
        };
        let slope = (err(100.0) / err(50.0)).log2();
        assert!((slope + 1.5).abs() < 0.2, "{slope}");
    }

    #[test]
    fn too_close_points_and_inside_points_are_rejected() {
        let spaces = Spaces::new(circle(0), Family::P1);
        let xi = CauchyData::zeros(&spaces);
        let q = QuadratureConfig::default();
        assert!(potential(1.0, &spaces, &xi, &[[1.0, 0.0, 0.0]], &q).is_err());
        assert!(evaluate_field(&sound_soft(), &spaces, &xi, &[[0.1, 0.0, 0.0]], &q).is_err());
        assert!(is_inside(spaces.mesh(), &[0.2, 0.1, 0.0]));
        assert!(!is_inside(spaces.mesh(), &[1.5, 0.1, 0.0]));
        let ff = far_field(1.0, &spaces, &xi, &circle_directions(4)).unwrap();
        assert!(ff.values.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn rcs_values() {
        let ff = FarField {
            directions: vec![[0.0, 0.0, 1.0]; 2],
            values: vec![Complex64::new(1.0, 0.0), 2.0 * I],
            kappa: 1.0,
            dim: 3,
        };
        let db = rcs(&ff, 1.0).unwrap();
        assert!((db[0] - 10.0 * (4.0 * PI).log10()).abs() < 1e-12);
        assert!((db[1] - db[0] - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!(rcs(&ff, 0.0).is_err());
    }

    #[test]
    fn norms_are_homogeneous_and_positive() {
        let spaces = Spaces::new(circle(1), Family::P1);
        let q = QuadratureConfig::default();
        let b: Vec<Complex64> = (0..spaces.dirichlet.dim())
            .map(|i| Complex64::new((i as f64).sin(), 0.3))
            .collect();
        let a: Vec<Complex64> = b.iter().map(|z| 2.0 * z).collect();
        for ord in [NormOrder::MinusHalf, NormOrder::Zero, NormOrder::PlusHalf] {
            let s = NormSurrogate::new(&spaces.dirichlet, ord, &q).unwrap();
            assert!(error_norm(&b, &b, &s).unwrap() == 0.0);
            assert!((error_norm(&a, &b, &s).unwrap() - 1.0).abs() < 1e-12);
            let eig = s.matrix.clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.0, "{ord:?}");
        }
    }

    #[test]
    fn variance_of_rank_one_conjugated_moment() {
        let g =
            nalgebra::DVector::from_vec(vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.0)]);
        let s = &g * g.adjoint();
        let v = variance_field(&s, 0.1).unwrap();
        assert!((v[0] - 0.01 * 5.0).abs() < 1e-15 && (v[1] - 0.01 * 0.25).abs() < 1e-15);
        assert!(variance_field(&s, 0.0).unwrap().iter().all(|x| *x == 0.0));
    }
}
