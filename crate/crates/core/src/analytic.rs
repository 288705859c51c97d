//! Separation-of-variables solutions for plane-wave scattering by a circle
//! (Fourier–Hankel series) and a sphere (Mie series).

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, sub, Point};
use crate::scattering::{BoundaryCondition, ProblemSpec};
use crate::special::{legendre_array, CylinderTable, SphericalTable};
use num_complex::Complex64;
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeriesGeometry {
    Circle { radius: f64, center: Point },
    Sphere { radius: f64, center: Point },
}

/// Mode `n` of the field is `w_n iⁿ [Z_n] P_n` with `w_n = ε_n` and `P_n = cos nφ`
/// on the circle, `w_n = 2n + 1` and `P_n` Legendre on the sphere. The exterior
/// radial function is `j_n(κ₀r) + a_n h_n(κ₀r)`, the interior one `b_n j_n(κ₁r)`.
#[derive(Debug, Clone)]
pub struct SeriesSolution {
    pub geometry: SeriesGeometry,
    pub spec: ProblemSpec,
    pub order: usize,
    pub scattered: Vec<Complex64>,
    pub interior: Vec<Complex64>,
    /// Largest residual of the per-mode interface systems (transmission only).
    pub mode_residual: f64,
}

pub fn default_order(kappa_a: f64) -> usize {
    kappa_a.ceil() as usize + 20
}

struct Radial {
    j: Vec<f64>,
    dj: Vec<f64>,
    h: Vec<Complex64>,
    dh: Vec<Complex64>,
}

fn radial(sphere: bool, nmax: usize, x: f64) -> Radial {
    if sphere {
        let t = SphericalTable::new(nmax, x);
        Radial {
            j: t.j,
            dj: t.dj,
            h: t.h,
            dh: t.dh,
        }
    } else {
        let t = CylinderTable::new(nmax, x);
        Radial {
            j: t.j,
            dj: t.dj,
            h: t.h,
            dh: t.dh,
        }
    }
}

fn solve_modes(
    spec: &ProblemSpec,
    sphere: bool,
    a: f64,
    order: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>, f64)> {
    let k0 = spec.kappa;
    let ext = radial(sphere, order, k0 * a);
    let mut sc = Vec::with_capacity(order + 1);
    let mut int = Vec::with_capacity(order + 1);
    let mut worst: f64 = 0.0;
    let interior = spec
        .interior_kappa()
        .map(|k1| (k1, radial(sphere, order, k1 * a)));
    for n in 0..=order {
        let (j, dj, h, dh) = (ext.j[n], ext.dj[n], ext.h[n], ext.dh[n]);
        let (coef, inner) = match spec.bc {
            BoundaryCondition::SoundSoft => (-j / h, None),
            BoundaryCondition::SoundHard => (-dj / dh, None),
            BoundaryCondition::Impedance { eta } => {
                let num = k0 * dj + I * eta * j;
                (-num / (k0 * dh + I * eta * h), None)
            }
            BoundaryCondition::Transmission {
                mu_exterior,
                mu_interior,
                ..
            } => {
                let (k1, t) = interior.as_ref().unwrap();
                let (j1, dj1) = (t.j[n], t.dj[n]);
                let s0 = k0 / mu_exterior;
                let s1 = k1 / mu_interior;
                // [h, -j1; s0 h', -s1 j1'] [a; b] = [-j; -s0 j']
                let m = [
                    [h, Complex64::new(-j1, 0.0)],
                    [s0 * dh, Complex64::new(-s1 * dj1, 0.0)],
                ];
                let rhs = [Complex64::new(-j, 0.0), Complex64::new(-s0 * dj, 0.0)];
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                if det.norm() < 1e-12 * (m[0][0].norm() * m[1][1].norm()).max(f64::MIN_POSITIVE) {
                    return Err(Error::Resonance(format!(
                        "interface system singular in mode {n}"
                    )));
                }
                let an = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det;
                let bn = (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det;
                for r in 0..2 {
                    let res = (m[r][0] * an + m[r][1] * bn - rhs[r]).norm();
                    let scale = (m[r][0] * an).norm() + (m[r][1] * bn).norm() + rhs[r].norm();
                    worst = worst.max(res / scale.max(f64::MIN_POSITIVE));
                }
                (an, Some(bn))
            }
        };
        if !coef.is_finite() {
            return Err(Error::Resonance(format!(
                "mode {n} has a vanishing denominator"
            )));
        }
        sc.push(coef);
        if let Some(b) = inner {
            int.push(b);
        }
    }
    Ok((sc, int, worst))
}

fn check_denominators(spec: &ProblemSpec, sphere: bool, a: f64, order: usize) -> Result<()> {
    let t = radial(sphere, order, spec.kappa * a);
    for n in 0..=order {
        let den = match spec.bc {
            BoundaryCondition::SoundSoft => t.h[n],
            BoundaryCondition::SoundHard => t.dh[n],
            BoundaryCondition::Impedance { eta } => spec.kappa * t.dh[n] + I * eta * t.h[n],
            BoundaryCondition::Transmission { .. } => Complex64::new(1.0, 0.0),
        };
        if den.norm() < 1e-12 {
            return Err(Error::Resonance(format!(
                "mode {n} has a vanishing denominator"
            )));
        }
    }
    Ok(())
}

pub fn circle_series(
    spec: &ProblemSpec,
    radius: f64,
    center: [f64; 2],
    order: Option<usize>,
) -> Result<SeriesSolution> {
    build(
        spec,
        SeriesGeometry::Circle {
            radius,
            center: [center[0], center[1], 0.0],
        },
        order,
    )
}

pub fn mie_sphere(
    spec: &ProblemSpec,
    radius: f64,
    center: Point,
    order: Option<usize>,
) -> Result<SeriesSolution> {
    build(spec, SeriesGeometry::Sphere { radius, center }, order)
}

fn build(
    spec: &ProblemSpec,
    geometry: SeriesGeometry,
    order: Option<usize>,
) -> Result<SeriesSolution> {
    spec.validate()?;
    let (spec, _) = spec.normalized();
    let (a, sphere) = match geometry {
        SeriesGeometry::Circle { radius, .. } => (radius, false),
        SeriesGeometry::Sphere { radius, .. } => (radius, true),
    };
    if !(a > 0.0) {
        return Err(Error::InvalidInput("radius must be positive".into()));
    }
    if !sphere && spec.direction[2] != 0.0 {
        return Err(Error::InvalidInput(
            "circle problems need an in-plane direction".into(),
        ));
    }
    let kmax = spec.kappa.max(spec.interior_kappa().unwrap_or(0.0));
    let order = order.unwrap_or_else(|| default_order(kmax * a));
    check_denominators(&spec, sphere, a, order)?;
    let (scattered, interior, mode_residual) = solve_modes(&spec, sphere, a, order)?;
    Ok(SeriesSolution {
        geometry,
        spec,
        order,
        scattered,
        interior,
        mode_residual,
    })
}

impl SeriesSolution {
    fn is_sphere(&self) -> bool {
        matches!(self.geometry, SeriesGeometry::Sphere { .. })
    }

    fn radius_center(&self) -> (f64, Point) {
        match self.geometry {
            SeriesGeometry::Circle { radius, center }
            | SeriesGeometry::Sphere { radius, center } => (radius, center),
        }
    }

    fn weight(&self, n: usize) -> f64 {
        if self.is_sphere() {
            (2 * n + 1) as f64
        } else if n == 0 {
            1.0
        } else {
            2.0
        }
    }

    /// Angular basis values `P_n` for the angle between `x̂` and the incident direction.
    fn angular(&self, xhat: &Point) -> Vec<f64> {
        let c = dot(xhat, &self.spec.direction).clamp(-1.0, 1.0);
        if self.is_sphere() {
            legendre_array(self.order, c)
        } else {
            let d = &self.spec.direction;
            let phi = xhat[1].atan2(xhat[0]) - d[1].atan2(d[0]);
            (0..=self.order).map(|n| (n as f64 * phi).cos()).collect()
        }
    }

    fn in_pow(n: usize) -> Complex64 {
        match n % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => I,
            2 => Complex64::new(-1.0, 0.0),
            _ => -I,
        }
    }

    fn sum(&self, p: &[f64], f: impl Fn(usize) -> Complex64) -> Complex64 {
        (0..=self.order)
            .map(|n| Self::in_pow(n) * self.weight(n) * p[n] * f(n))
            .sum::<Complex64>()
            * self.spec.amplitude
    }

    fn local(&self, x: &Point) -> (f64, Point) {
        let (_, c) = self.radius_center();
        let y = sub(x, &c);
        let r = norm(&y);
        let xhat = if r > 0.0 {
            [y[0] / r, y[1] / r, y[2] / r]
        } else {
            self.spec.direction
        };
        (r, xhat)
    }

    /// Exterior total Dirichlet trace at the boundary point in the direction of `x`.
    pub fn dirichlet_trace(&self, x: &Point) -> Complex64 {
        let (a, _) = self.radius_center();
        let (_, xhat) = self.local(x);
        let t = radial(self.is_sphere(), self.order, self.spec.kappa * a);
        self.sum(&self.angular(&xhat), |n| {
            t.j[n] + self.scattered[n] * t.h[n]
        })
    }

    /// Exterior total Neumann trace (outward radial derivative).
    pub fn neumann_trace(&self, x: &Point) -> Complex64 {
        let (a, _) = self.radius_center();
        let (_, xhat) = self.local(x);
        let k = self.spec.kappa;
        let t = radial(self.is_sphere(), self.order, k * a);
        self.sum(&self.angular(&xhat), |n| {
            k * (t.dj[n] + self.scattered[n] * t.dh[n])
        })
    }

    /// `∂_φ` of the total Dirichlet trace on the circle at polar angle `φ`.
    pub fn angular_derivative(&self, phi: f64) -> Complex64 {
        let (a, _) = self.radius_center();
        let d = &self.spec.direction;
        let rel = phi - d[1].atan2(d[0]);
        let t = radial(false, self.order, self.spec.kappa * a);
        let p: Vec<f64> = (0..=self.order)
            .map(|n| -(n as f64) * (n as f64 * rel).sin())
            .collect();
        self.sum(&p, |n| t.j[n] + self.scattered[n] * t.h[n])
    }

    /// Scattered-field traces `(γ₀U^s, γ₁U^s)` on the boundary.
    pub fn scattered_traces(&self, x: &Point) -> (Complex64, Complex64) {
        let (a, _) = self.radius_center();
        let (_, xhat) = self.local(x);
        let k = self.spec.kappa;
        let t = radial(self.is_sphere(), self.order, k * a);
        let p = self.angular(&xhat);
        (
            self.sum(&p, |n| self.scattered[n] * t.h[n]),
            self.sum(&p, |n| k * self.scattered[n] * t.dh[n]),
        )
    }

    /// Total field: exterior `U^inc + U^s`, or the transmitted field inside.
    pub fn field(&self, x: &Point) -> Result<Complex64> {
        let (a, _) = self.radius_center();
        let (r, xhat) = self.local(x);
        let p = self.angular(&xhat);
        if r >= a {
            let t = radial(self.is_sphere(), self.order, self.spec.kappa * r);
            Ok(self.sum(&p, |n| t.j[n] + self.scattered[n] * t.h[n]))
        } else {
            match self.spec.interior_kappa() {
                Some(k1) => {
                    let t = radial(self.is_sphere(), self.order, k1 * r.max(1e-300));
                    Ok(self.sum(&p, |n| self.interior[n] * t.j[n]))
                }
                None => Err(Error::InvalidInput(
                    "point lies inside the scatterer".into(),
                )),
            }
        }
    }

    /// Scattered field only (exterior points).
    pub fn scattered_field(&self, x: &Point) -> Result<Complex64> {
        let (a, _) = self.radius_center();
        let (r, xhat) = self.local(x);
        if r < a {
            return Err(Error::InvalidInput(
                "point lies inside the scatterer".into(),
            ));
        }
        let t = radial(self.is_sphere(), self.order, self.spec.kappa * r);
        Ok(self.sum(&self.angular(&xhat), |n| self.scattered[n] * t.h[n]))
    }

    /// Far-field amplitude with `U^s ~ e^{iκr} r^{(1-d)/2} F(x̂)`.
    pub fn far_field(&self, xhat: &Point) -> Complex64 {
        let k = self.spec.kappa;
        let (_, c) = self.radius_center();
        // shift from the center to the origin
        let phase = Complex64::from_polar(1.0, -k * dot(xhat, &c));
        let p = self.angular(xhat);
        let amp = self.spec.amplitude;
        if self.is_sphere() {
            let s: Complex64 = (0..=self.order)
                .map(|n| self.weight(n) * p[n] * self.scattered[n])
                .sum::<Complex64>();
            -I / k * s * amp * phase
        } else {
            let s: Complex64 = (0..=self.order)
                .map(|n| self.weight(n) * p[n] * self.scattered[n])
                .sum::<Complex64>();
            (2.0 / (PI * k)).sqrt() * Complex64::from_polar(1.0, -PI / 4.0) * s * amp * phase
        }
    }

    /// Ratio of the largest tail coefficient (last five modes) to the largest one.
    pub fn tail_ratio(&self) -> f64 {
        let max = self.scattered.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let tail = self
            .scattered
            .iter()
            .rev()
            .take(5)
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if max == 0.0 {
            0.0
        } else {
            tail / max
        }
    }
}

/// Exact shape derivative on the circle for the sound-soft and sound-hard
/// problems, for a normal velocity `vn(φ)` given as a function of the polar
/// angle. The boundary datum is expanded by a discrete Fourier transform on
/// `samples` points.
#[derive(Debug, Clone)]
pub struct CircleShapeDerivative {
    pub kappa: f64,
    pub radius: f64,
    /// Coefficients `c_m` of `U' = Σ c_m H_m(κr)/H_m(κa)` (sound-soft) or
    /// `Σ c_m H_m(κr)/(κ H'_m(κa))` (sound-hard), index `m + order`.
    pub coeffs: Vec<Complex64>,
    pub order: usize,
    pub hard: bool,
}

pub fn circle_shape_derivative(
    nominal: &SeriesSolution,
    vn: impl Fn(f64) -> f64,
    samples: usize,
) -> Result<CircleShapeDerivative> {
    let (a, c) = nominal.radius_center();
    if nominal.is_sphere() || c != [0.0; 3] {
        return Err(Error::InvalidInput(
            "shape derivative oracle needs a centered circle".into(),
        ));
    }
    let hard = match nominal.spec.bc {
        BoundaryCondition::SoundSoft => false,
        BoundaryCondition::SoundHard => true,
        _ => {
            return Err(Error::InvalidInput(
                "shape derivative oracle covers sound-soft and sound-hard only".into(),
            ))
        }
    };
    let k = nominal.spec.kappa;
    let order = nominal.order;
    let pt = |phi: f64| [a * phi.cos(), a * phi.sin(), 0.0];
    let n = samples;
    let angles: Vec<f64> = (0..n).map(|s| 2.0 * PI * s as f64 / n as f64).collect();
    let dft = |vals: &[Complex64], m: i64| -> Complex64 {
        vals.iter()
            .zip(&angles)
            .map(|(g, p)| g * Complex64::from_polar(1.0, -(m as f64) * p))
            .sum::<Complex64>()
            / n as f64
    };
    let data_modes: Vec<Complex64> = if !hard {
        let g: Vec<Complex64> = angles
            .iter()
            .map(|&p| -vn(p) * nominal.neumann_trace(&pt(p)))
            .collect();
        (-(order as i64)..=(order as i64))
            .map(|m| dft(&g, m))
            .collect()
    } else {
        // (1/a²) ∂_φ(vn ∂_φU) + κ² vn U
        let flux: Vec<Complex64> = angles
            .iter()
            .map(|&p| vn(p) * nominal.angular_derivative(p))
            .collect();
        let mass: Vec<Complex64> = angles
            .iter()
            .map(|&p| k * k * vn(p) * nominal.dirichlet_trace(&pt(p)))
            .collect();
        (-(order as i64)..=(order as i64))
            .map(|m| I * m as f64 / (a * a) * dft(&flux, m) + dft(&mass, m))
            .collect()
    };
    let t = CylinderTable::new(order, k * a);
    let mut coeffs = Vec::with_capacity(2 * order + 1);
    for m in -(order as i64)..=(order as i64) {
        let gm = data_modes[(m + order as i64) as usize];
        let (h, dh) = t.h_at(m);
        let den = if hard { k * dh } else { h };
        coeffs.push(gm / den);
    }
    Ok(CircleShapeDerivative {
        kappa: k,
        radius: a,
        coeffs,
        order,
        hard,
    })
}

impl CircleShapeDerivative {
    fn mode_sum(&self, phi: f64, f: impl Fn(i64) -> Complex64) -> Complex64 {
        (-(self.order as i64)..=(self.order as i64))
            .map(|m| {
                self.coeffs[(m + self.order as i64) as usize]
                    * f(m)
                    * Complex64::from_polar(1.0, m as f64 * phi)
            })
            .sum()
    }

    /// `(γ₀U', γ₁U')` at polar angle `φ`.
    pub fn traces(&self, phi: f64) -> (Complex64, Complex64) {
        let t = CylinderTable::new(self.order, self.kappa * self.radius);
        let k = self.kappa;
        (
            self.mode_sum(phi, |m| t.h_at(m).0),
            self.mode_sum(phi, |m| k * t.h_at(m).1),
        )
    }

    /// Far field of `U'` in direction angle `φ`.
    pub fn far_field(&self, phi: f64) -> Complex64 {
        let k = self.kappa;
        let c = (2.0 / (PI * k)).sqrt() * Complex64::from_polar(1.0, -PI / 4.0);
        // H_m(κr) ~ sqrt(2/(πκr)) e^{i(κr - mπ/2 - π/4)}
        c * self.mode_sum(phi, |m| Complex64::from_polar(1.0, -(m as f64) * PI / 2.0))
    }
}
