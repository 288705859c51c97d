//! Helmholtz (and Laplace) kernels and dense Galerkin matrices of the single
//! layer, double layer, adjoint double layer and hypersingular operators.

use crate::error::{Error, Result};
use crate::geometry::{cross, dist, dot, sub, Mesh, Point};
use crate::quadrature::{
    gauss_legendre, gauss_log, reference_shape, sauter_schwab, triangle_rule, Adjacency, PairRule,
    Rule1d, TriangleRule,
};
use crate::spaces::{basis_gradients, Family, TraceSpace};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    SingleLayer,
    DoubleLayer,
    AdjointDoubleLayer,
    Hypersingular,
}

/// Fundamental solution family. The Laplace variant carries the length scale
/// `R` of the 2D logarithm `-(1/2π) log(r/R)`, ignored in 3D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Helmholtz { kappa: f64 },
    Laplace { log_scale: f64 },
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Helmholtz { kappa } if !(*kappa > 0.0) || !kappa.is_finite() => Err(
                Error::InvalidInput(format!("wavenumber must be positive, got {kappa}")),
            ),
            Kernel::Laplace { log_scale } if !(*log_scale > 0.0) => Err(Error::InvalidInput(
                "logarithm scale must be positive".into(),
            )),
            _ => Ok(()),
        }
    }

    fn kappa_sq(&self) -> f64 {
        match self {
            Kernel::Helmholtz { kappa } => kappa * kappa,
            Kernel::Laplace { .. } => 0.0,
        }
    }

    /// `(G(r), dG/dr)`.
    #[inline]
    pub fn eval(&self, d: usize, r: f64) -> (Complex64, Complex64) {
        match (*self, d) {
            (Kernel::Helmholtz { kappa }, 3) => {
                let e = Complex64::from_polar(1.0, kappa * r);
                let c = 1.0 / (4.0 * PI * r);
                (e * c, e * Complex64::new(-1.0, kappa * r) * (c / r))
            }
            (Kernel::Laplace { .. }, 3) => {
                let c = 1.0 / (4.0 * PI * r);
                (Complex64::new(c, 0.0), Complex64::new(-c / r, 0.0))
            }
            (Kernel::Helmholtz { kappa }, _) => {
                let (h0, h1) = crate::special::hankel01(kappa * r);
                (0.25 * I * h0, -0.25 * I * kappa * h1)
            }
            (Kernel::Laplace { log_scale }, _) => (
                Complex64::new(-(r / log_scale).ln() / (2.0 * PI), 0.0),
                Complex64::new(-1.0 / (2.0 * PI * r), 0.0),
            ),
        }
    }

    /// 2D splitting `G(r) = A(r) log r + B(r)` with smooth `A`, `B`; returns `(A, G)`.
    #[inline]
    fn log_split_2d(&self, r: f64) -> (f64, Complex64) {
        match *self {
            Kernel::Helmholtz { kappa } => {
                let (h0, _) = crate::special::hankel01(kappa * r);
                (-h0.re / (2.0 * PI), 0.25 * I * h0)
            }
            Kernel::Laplace { log_scale } => (
                -1.0 / (2.0 * PI),
                Complex64::new(-(r / log_scale).ln() / (2.0 * PI), 0.0),
            ),
        }
    }

    /// Leading coefficient `A(0)` of the logarithmic part (2D).
    fn log_coefficient(&self, r: f64) -> f64 {
        match *self {
            Kernel::Helmholtz { kappa } => {
                if r == 0.0 {
                    -1.0 / (2.0 * PI)
                } else {
                    -crate::special::hankel01(kappa * r).0.re / (2.0 * PI)
                }
            }
            Kernel::Laplace { .. } => -1.0 / (2.0 * PI),
        }
    }
}

/// Fundamental solution of `-Δu - κ²u = 0`.
pub fn greens(d: usize, kappa: f64, r: f64) -> Result<Complex64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!(
            "distance must be positive, got {r}"
        )));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidInput(format!(
            "wavenumber must be positive, got {kappa}"
        )));
    }
    if d != 2 && d != 3 {
        return Err(Error::InvalidInput(format!(
            "dimension must be 2 or 3, got {d}"
        )));
    }
    Ok(Kernel::Helmholtz { kappa }.eval(d, r).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Gauss points per direction of the singular pair rules (3D).
    pub singular_order: usize,
    /// Points of the log-weighted and companion rules for touching segments (2D).
    pub log_order: usize,
    /// Target relative accuracy used to pick regular orders from the panel distance.
    pub tolerance: f64,
    pub min_regular_order: usize,
    pub max_regular_order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            singular_order: 5,
            log_order: 8,
            tolerance: 1e-8,
            min_regular_order: 2,
            max_regular_order: 10,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.singular_order < 1 || self.log_order < 1 || self.min_regular_order < 1 {
            return Err(Error::InvalidInput(
                "quadrature orders must be at least 1".into(),
            ));
        }
        if self.max_regular_order < self.min_regular_order {
            return Err(Error::InvalidInput(
                "maximal regular order below minimal order".into(),
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidInput(
                "quadrature tolerance must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Gauss order for two separated panels whose centroid distance is `ratio`
    /// times the larger diameter.
    pub fn regular_order(&self, ratio: f64) -> usize {
        let base = (4.0 * ratio).max(1.5);
        let n = (-self.tolerance.ln() / (2.0 * base.ln())).ceil() as usize + 1;
        n.clamp(self.min_regular_order, self.max_regular_order)
    }

    fn doubled(&self) -> Self {
        QuadratureConfig {
            singular_order: self.singular_order * 2,
            log_order: self.log_order * 2,
            tolerance: self.tolerance * self.tolerance,
            min_regular_order: self.min_regular_order * 2,
            max_regular_order: self.max_regular_order * 2,
        }
    }
}

/// A dense Galerkin matrix `A_ij = <op φ_j, ψ_i>` with its provenance.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub matrix: DMatrix<Complex64>,
    pub kind: KernelKind,
    pub kernel: Kernel,
    pub test: Family,
    pub trial: Family,
    pub quad: QuadratureConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssemblyRequest {
    pub kind: KernelKind,
    pub test: Family,
    pub trial: Family,
}

impl AssemblyRequest {
    pub fn new(kind: KernelKind, test: Family, trial: Family) -> Self {
        AssemblyRequest { kind, test, trial }
    }
}

/// Assembles one Helmholtz operator.
pub fn assemble(
    kind: KernelKind,
    kappa: f64,
    test: &TraceSpace,
    trial: &TraceSpace,
    quad: &QuadratureConfig,
) -> Result<OperatorMatrix> {
    if !Arc::ptr_eq(test.mesh(), trial.mesh()) {
        return Err(Error::Mismatch(
            "test and trial spaces live on different meshes".into(),
        ));
    }
    let req = AssemblyRequest::new(kind, test.family(), trial.family());
    Ok(
        assemble_many(Kernel::Helmholtz { kappa }, test.mesh(), &[req], quad)?
            .pop()
            .unwrap(),
    )
}

#[derive(Clone, Copy, Default)]
struct Needs {
    v: bool,
    k: bool,
    kp: bool,
}

#[derive(Clone, Copy)]
struct Local {
    v: [[Complex64; 3]; 3],
    k: [[Complex64; 3]; 3],
    kp: [[Complex64; 3]; 3],
}

impl Local {
    fn zero() -> Self {
        Local {
            v: [[ZERO; 3]; 3],
            k: [[ZERO; 3]; 3],
            kp: [[ZERO; 3]; 3],
        }
    }
}

struct ElementData {
    pts: [Point; 3],
    normal: Point,
    jac: f64,
    centroid: Point,
    diam: f64,
    curls: [Point; 3],
}

struct Assembler<'a> {
    mesh: &'a Mesh,
    kernel: Kernel,
    quad: QuadratureConfig,
    elems: Vec<ElementData>,
    gauss: Vec<Rule1d>,
    tri: Vec<TriangleRule>,
    log_rule: Rule1d,
    log_gauss: Rule1d,
    ss: [PairRule; 3],
}

impl<'a> Assembler<'a> {
    fn new(mesh: &'a Mesh, kernel: Kernel, quad: QuadratureConfig) -> Self {
        let d = mesh.dim();
        let elems = (0..mesh.num_elements())
            .map(|e| {
                let pts = mesh.element_points(e);
                let normal = *mesh.normal(e);
                let grads = basis_gradients(mesh, e);
                let curls = if d == 3 {
                    [
                        cross(&grads[0], &normal),
                        cross(&grads[1], &normal),
                        cross(&grads[2], &normal),
                    ]
                } else {
                    let h = mesh.measure(e);
                    [[-1.0 / h, 0.0, 0.0], [1.0 / h, 0.0, 0.0], [0.0; 3]]
                };
                ElementData {
                    pts,
                    normal,
                    jac: if d == 3 {
                        2.0 * mesh.measure(e)
                    } else {
                        mesh.measure(e)
                    },
                    centroid: mesh.centroid(e),
                    diam: mesh.diameter(e),
                    curls,
                }
            })
            .collect();
        let maxo = quad.max_regular_order.max(quad.log_order);
        let gauss = (0..=maxo).map(|n| gauss_legendre(n.max(1))).collect();
        let tri = (0..=quad.max_regular_order)
            .map(|n| triangle_rule(n.max(1)))
            .collect();
        let ss = if d == 3 {
            [
                sauter_schwab(Adjacency::Identical, quad.singular_order),
                sauter_schwab(Adjacency::CommonEdge, quad.singular_order),
                sauter_schwab(Adjacency::CommonVertex, quad.singular_order),
            ]
        } else {
            let empty = || PairRule {
                x: vec![],
                y: vec![],
                weights: vec![],
            };
            [empty(), empty(), empty()]
        };
        Assembler {
            mesh,
            kernel,
            quad,
            elems,
            gauss,
            tri,
            log_rule: gauss_log(quad.log_order),
            log_gauss: gauss_legendre(quad.log_order),
            ss,
        }
    }

    fn order_for(&self, e: usize, f: usize) -> usize {
        let a = &self.elems[e];
        let b = &self.elems[f];
        let ratio = dist(&a.centroid, &b.centroid) / a.diam.max(b.diam);
        self.quad.regular_order(ratio)
    }

    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        loc: &mut Local,
        needs: Needs,
        x: &Point,
        y: &Point,
        nx: &Point,
        ny: &Point,
        sx: &[f64],
        sy: &[f64],
        px: &[usize],
        py: &[usize],
        w: f64,
    ) {
        let diff = sub(y, x);
        let r = dot(&diff, &diff).sqrt();
        let (g, dg) = self.kernel.eval(self.mesh.dim(), r);
        let gv = g * w;
        let kv = if needs.k {
            dg * (w * dot(&diff, ny) / r)
        } else {
            ZERO
        };
        let kpv = if needs.kp {
            dg * (-w * dot(&diff, nx) / r)
        } else {
            ZERO
        };
        for (i, &a) in px.iter().enumerate() {
            for (j, &b) in py.iter().enumerate() {
                let s = sx[i] * sy[j];
                if needs.v {
                    loc.v[a][b] += gv * s;
                }
                if needs.k {
                    loc.k[a][b] += kv * s;
                }
                if needs.kp {
                    loc.kp[a][b] += kpv * s;
                }
            }
        }
    }

    fn pair(&self, e: usize, f: usize, needs: Needs) -> Local {
        if self.mesh.dim() == 3 {
            self.pair_3d(e, f, needs)
        } else {
            self.pair_2d(e, f, needs)
        }
    }

    fn pair_3d(&self, e: usize, f: usize, needs: Needs) -> Local {
        let ce = self.mesh.element(e);
        let cf = self.mesh.element(f);
        let mut loc = Local::zero();
        let a = &self.elems[e];
        let b = &self.elems[f];
        let shared: Vec<(usize, usize)> = (0..3)
            .flat_map(|i| (0..3).filter(move |&j| ce[i] == cf[j]).map(move |j| (i, j)))
            .collect();
        let (adj, px, py) = if e == f {
            (Adjacency::Identical, [0, 1, 2], [0, 1, 2])
        } else {
            match shared.len() {
                2 => {
                    let (i0, j0) = shared[0];
                    let (i1, j1) = shared[1];
                    (
                        Adjacency::CommonEdge,
                        [i0, i1, 3 - i0 - i1],
                        [j0, j1, 3 - j0 - j1],
                    )
                }
                1 => {
                    let (i0, j0) = shared[0];
                    (
                        Adjacency::CommonVertex,
                        [i0, (i0 + 1) % 3, (i0 + 2) % 3],
                        [j0, (j0 + 1) % 3, (j0 + 2) % 3],
                    )
                }
                _ => (Adjacency::Disjoint, [0, 1, 2], [0, 1, 2]),
            }
        };
        let needs = if adj == Adjacency::Identical {
            Needs {
                k: false,
                kp: false,
                ..needs
            }
        } else {
            needs
        };
        let jac = a.jac * b.jac;
        let chi = |pts: &[Point; 3], p: &[usize; 3], xr: &[f64; 2]| -> Point {
            let (p0, p1, p2) = (pts[p[0]], pts[p[1]], pts[p[2]]);
            [
                p0[0] + xr[0] * (p1[0] - p0[0]) + xr[1] * (p2[0] - p1[0]),
                p0[1] + xr[0] * (p1[1] - p0[1]) + xr[1] * (p2[1] - p1[1]),
                p0[2] + xr[0] * (p1[2] - p0[2]) + xr[1] * (p2[2] - p1[2]),
            ]
        };
        if adj == Adjacency::Disjoint {
            let n = self.order_for(e, f);
            let t = &self.tri[n];
            let xs: Vec<Point> = t.points.iter().map(|q| chi(&a.pts, &px, q)).collect();
            let ys: Vec<Point> = t.points.iter().map(|q| chi(&b.pts, &py, q)).collect();
            let sh: Vec<[f64; 3]> = t.points.iter().map(|q| reference_shape(*q)).collect();
            for (i, x) in xs.iter().enumerate() {
                for (j, y) in ys.iter().enumerate() {
                    let w = t.weights[i] * t.weights[j] * jac;
                    self.accumulate(
                        &mut loc, needs, x, y, &a.normal, &b.normal, &sh[i], &sh[j], &px, &py, w,
                    );
                }
            }
            return loc;
        }
        let rule = match adj {
            Adjacency::Identical => &self.ss[0],
            Adjacency::CommonEdge => &self.ss[1],
            _ => &self.ss[2],
        };
        for q in 0..rule.len() {
            let x = chi(&a.pts, &px, &rule.x[q]);
            let y = chi(&b.pts, &py, &rule.y[q]);
            let sx = reference_shape(rule.x[q]);
            let sy = reference_shape(rule.y[q]);
            self.accumulate(
                &mut loc,
                needs,
                &x,
                &y,
                &a.normal,
                &b.normal,
                &sx,
                &sy,
                &px,
                &py,
                rule.weights[q] * jac,
            );
        }
        loc
    }

    fn pair_2d(&self, e: usize, f: usize, needs: Needs) -> Local {
        let ce = self.mesh.element(e);
        let cf = self.mesh.element(f);
        let a = &self.elems[e];
        let b = &self.elems[f];
        let mut loc = Local::zero();
        if e == f {
            self.identical_2d(&mut loc, a, needs);
            return loc;
        }
        // Touching segments: parametrize both from the shared vertex.
        let shared = if ce[1] == cf[0] {
            Some((1usize, 0usize))
        } else if ce[0] == cf[1] {
            Some((0, 1))
        } else {
            None
        };
        if let Some((ix, iy)) = shared {
            self.adjacent_2d(&mut loc, a, b, ix, iy, needs);
            return loc;
        }
        let n = self.order_for(e, f);
        let g = &self.gauss[n];
        let jac = a.jac * b.jac;
        let px = [0usize, 1];
        for (sx, wx) in g.points.iter().zip(&g.weights) {
            let x = lerp(&a.pts[0], &a.pts[1], *sx);
            let shx = [1.0 - sx, *sx];
            for (sy, wy) in g.points.iter().zip(&g.weights) {
                let y = lerp(&b.pts[0], &b.pts[1], *sy);
                let shy = [1.0 - sy, *sy];
                self.accumulate(
                    &mut loc,
                    needs,
                    &x,
                    &y,
                    &a.normal,
                    &b.normal,
                    &shx,
                    &shy,
                    &px,
                    &px,
                    wx * wy * jac,
                );
            }
        }
        loc
    }

    fn identical_2d(&self, loc: &mut Local, a: &ElementData, needs: Needs) {
        if !needs.v {
            return;
        }
        let h = a.jac;
        let inner = &self.gauss[3];
        let logr = &self.log_rule;
        let gr = &self.log_gauss;
        // Halves s > s' and s < s' with u = |s - s'|, the other variable (1-u) q.
        for half in 0..2 {
            let mut add = |u: f64, weight: f64, value: Complex64| {
                for (q, wq) in inner.points.iter().zip(&inner.weights) {
                    let lo = (1.0 - u) * q;
                    let (s, sp) = if half == 0 {
                        (lo + u, lo)
                    } else {
                        (lo, lo + u)
                    };
                    let shx = [1.0 - s, s];
                    let shy = [1.0 - sp, sp];
                    let w = weight * wq * (1.0 - u) * h * h;
                    for i in 0..2 {
                        for j in 0..2 {
                            loc.v[i][j] += value * (w * shx[i] * shy[j]);
                        }
                    }
                }
            };
            for (u, w) in logr.points.iter().zip(&logr.weights) {
                let amp = self.kernel.log_coefficient(h * u);
                add(*u, -*w, Complex64::new(amp, 0.0));
            }
            for (u, w) in gr.points.iter().zip(&gr.weights) {
                let r = h * u;
                let (amp, g) = self.kernel.log_split_2d(r);
                // smooth remainder A ln h + B = G - A ln u
                add(*u, *w, g - amp * u.ln());
            }
        }
    }

    fn adjacent_2d(
        &self,
        loc: &mut Local,
        a: &ElementData,
        b: &ElementData,
        ix: usize,
        iy: usize,
        needs: Needs,
    ) {
        let p = a.pts[ix];
        let ex = sub(&a.pts[1 - ix], &p);
        let ey = sub(&b.pts[1 - iy], &p);
        let jac = a.jac * b.jac;
        let logr = &self.log_rule;
        let gr = &self.log_gauss;
        for half in 0..2 {
            let point = |xi: f64, eta: f64| -> (f64, f64) {
                if half == 0 {
                    (xi, xi * eta)
                } else {
                    (xi * eta, xi)
                }
            };
            let mut put = |sig: f64, sigp: f64, wv: Complex64, wk: Complex64, wkp: Complex64| {
                let mut shx = [0.0; 2];
                shx[ix] = 1.0 - sig;
                shx[1 - ix] = sig;
                let mut shy = [0.0; 2];
                shy[iy] = 1.0 - sigp;
                shy[1 - iy] = sigp;
                for i in 0..2 {
                    for j in 0..2 {
                        let s = shx[i] * shy[j];
                        loc.v[i][j] += wv * s;
                        loc.k[i][j] += wk * s;
                        loc.kp[i][j] += wkp * s;
                    }
                }
            };
            // log ξ part of the single layer
            if needs.v {
                for (xi, wxi) in logr.points.iter().zip(&logr.weights) {
                    for (eta, weta) in gr.points.iter().zip(&gr.weights) {
                        let (sig, sigp) = point(*xi, *eta);
                        let x = add_scaled(&p, &ex, sig);
                        let y = add_scaled(&p, &ey, sigp);
                        let amp = self.kernel.log_coefficient(dist(&x, &y));
                        let w = -wxi * weta * xi * jac;
                        put(sig, sigp, Complex64::new(amp * w, 0.0), ZERO, ZERO);
                    }
                }
            }
            for (xi, wxi) in gr.points.iter().zip(&gr.weights) {
                for (eta, weta) in gr.points.iter().zip(&gr.weights) {
                    let (sig, sigp) = point(*xi, *eta);
                    let x = add_scaled(&p, &ex, sig);
                    let y = add_scaled(&p, &ey, sigp);
                    let diff = sub(&y, &x);
                    let r = dot(&diff, &diff).sqrt();
                    let w = wxi * weta * xi * jac;
                    let wv = if needs.v {
                        let (amp, g) = self.kernel.log_split_2d(r);
                        (g - amp * xi.ln()) * w
                    } else {
                        ZERO
                    };
                    let (wk, wkp) = if needs.k || needs.kp {
                        let (_, dg) = self.kernel.eval(2, r);
                        (
                            dg * (w * dot(&diff, &b.normal) / r),
                            dg * (-w * dot(&diff, &a.normal) / r),
                        )
                    } else {
                        (ZERO, ZERO)
                    };
                    put(sig, sigp, wv, wk, wkp);
                }
            }
        }
    }
}

#[inline]
fn lerp(a: &Point, b: &Point, s: f64) -> Point {
    [
        a[0] + s * (b[0] - a[0]),
        a[1] + s * (b[1] - a[1]),
        a[2] + s * (b[2] - a[2]),
    ]
}

#[inline]
fn add_scaled(p: &Point, e: &Point, s: f64) -> Point {
    [p[0] + s * e[0], p[1] + s * e[1], p[2] + s * e[2]]
}

/// Assembles several operators on one mesh sharing a single pass over panel pairs.
pub fn assemble_many(
    kernel: Kernel,
    mesh: &Arc<Mesh>,
    requests: &[AssemblyRequest],
    quad: &QuadratureConfig,
) -> Result<Vec<OperatorMatrix>> {
    kernel.validate()?;
    quad.validate()?;
    for r in requests {
        if r.kind == KernelKind::Hypersingular && (r.test != Family::P1 || r.trial != Family::P1) {
            return Err(Error::InvalidInput(
                "the hypersingular operator needs P1 test and trial spaces".into(),
            ));
        }
    }
    let d = mesh.dim();
    let nloc = d;
    let mut needs = Needs::default();
    for r in requests {
        match r.kind {
            KernelKind::SingleLayer | KernelKind::Hypersingular => needs.v = true,
            KernelKind::DoubleLayer => needs.k = true,
            KernelKind::AdjointDoubleLayer => needs.kp = true,
        }
    }
    let asm = Assembler::new(mesh, kernel, *quad);
    let ne = mesh.num_elements();
    let dims = |f: Family| {
        if f == Family::P0 {
            ne
        } else {
            mesh.num_vertices()
        }
    };
    let mut out: Vec<DMatrix<Complex64>> = requests
        .iter()
        .map(|r| DMatrix::zeros(dims(r.test), dims(r.trial)))
        .collect();
    let kappa_sq = kernel.kappa_sq();
    let batch = 64usize;
    let mut start = 0;
    while start < ne {
        let end = (start + batch).min(ne);
        let strips: Vec<Vec<DMatrix<Complex64>>> = (start..end)
            .into_par_iter()
            .map(|e| {
                let mut strips: Vec<DMatrix<Complex64>> = requests
                    .iter()
                    .map(|r| {
                        DMatrix::zeros(if r.test == Family::P0 { 1 } else { nloc }, dims(r.trial))
                    })
                    .collect();
                let ex = &asm.elems[e];
                for f in 0..ne {
                    let loc = asm.pair(e, f, needs);
                    let ey = &asm.elems[f];
                    let cf = mesh.element(f);
                    for (r, strip) in requests.iter().zip(strips.iter_mut()) {
                        let block = match r.kind {
                            KernelKind::SingleLayer => loc.v,
                            KernelKind::DoubleLayer => loc.k,
                            KernelKind::AdjointDoubleLayer => loc.kp,
                            KernelKind::Hypersingular => {
                                let mut total = ZERO;
                                for i in 0..nloc {
                                    for j in 0..nloc {
                                        total += loc.v[i][j];
                                    }
                                }
                                let nn = dot(&ex.normal, &ey.normal);
                                let mut w = [[ZERO; 3]; 3];
                                for i in 0..nloc {
                                    for j in 0..nloc {
                                        let cc = dot(&ex.curls[i], &ey.curls[j]);
                                        w[i][j] = total * cc - loc.v[i][j] * (kappa_sq * nn);
                                    }
                                }
                                w
                            }
                        };
                        for i in 0..nloc {
                            let row = if r.test == Family::P0 { 0 } else { i };
                            for j in 0..nloc {
                                let col = if r.trial == Family::P0 { f } else { cf[j] };
                                strip[(row, col)] += block[i][j];
                            }
                        }
                    }
                }
                strips
            })
            .collect();
        for (e, st) in (start..end).zip(strips) {
            let ce = mesh.element(e);
            for ((r, m), strip) in requests.iter().zip(out.iter_mut()).zip(st) {
                for row in 0..strip.nrows() {
                    let g = if r.test == Family::P0 { e } else { ce[row] };
                    for c in 0..strip.ncols() {
                        m[(g, c)] += strip[(row, c)];
                    }
                }
            }
        }
        start = end;
    }
    Ok(requests
        .iter()
        .zip(out)
        .map(|(r, matrix)| OperatorMatrix {
            matrix,
            kind: r.kind,
            kernel,
            test: r.test,
            trial: r.trial,
            quad: *quad,
        })
        .collect())
}

/// Reassembles with every quadrature order doubled; used to check assembly accuracy.
pub fn assemble_refined_quadrature(
    kernel: Kernel,
    mesh: &Arc<Mesh>,
    requests: &[AssemblyRequest],
    quad: &QuadratureConfig,
) -> Result<Vec<OperatorMatrix>> {
    assemble_many(kernel, mesh, requests, &quad.doubled())
}
