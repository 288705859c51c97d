//! Closed boundary meshes: segment meshes of curves (d = 2) and surface
//! triangulations (d = 3), nested refinement, deformation and file I/O.

use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

pub type Point = [f64; 3];

#[inline]
pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    norm(&sub(a, b))
}

/// Exact geometry attached to a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticSurface {
    Circle {
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    Sphere {
        radius: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// `(cos θ + a cos 2θ - a, b sin θ)`, scaled and shifted.
    Kite2d {
        #[serde(default = "default_kite_a")]
        a: f64,
        #[serde(default = "default_kite_b")]
        b: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// Closed polygon with counter-clockwise corners; faces are its sides.
    Polygon2d { corners: Vec<[f64; 2]> },
}

fn default_kite_a() -> f64 {
    0.65
}
fn default_kite_b() -> f64 {
    1.5
}
fn one() -> f64 {
    1.0
}

impl AnalyticSurface {
    pub fn unit_box(half: f64) -> Self {
        AnalyticSurface::Polygon2d {
            corners: vec![[-half, -half], [half, -half], [half, half], [-half, half]],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticSurface::Sphere { .. } => 3,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AnalyticSurface::Circle { radius, .. } | AnalyticSurface::Sphere { radius, .. } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return invalid(format!("radius must be positive, got {radius}"));
                }
            }
            AnalyticSurface::Kite2d { a, b, scale, .. } => {
                if !(*scale > 0.0) || !(*b > 0.0) || !a.is_finite() {
                    return invalid("kite parameters must be finite with positive scale and b");
                }
            }
            AnalyticSurface::Polygon2d { corners } => {
                if corners.len() < 3 {
                    return invalid("polygon needs at least three corners");
                }
                let mut area = 0.0;
                for i in 0..corners.len() {
                    let p = corners[i];
                    let q = corners[(i + 1) % corners.len()];
                    if (p[0] - q[0]).hypot(p[1] - q[1]) == 0.0 {
                        return invalid("polygon has repeated corners");
                    }
                    area += p[0] * q[1] - p[1] * q[0];
                }
                if area <= 0.0 {
                    return invalid("polygon corners must be counter-clockwise");
                }
            }
        }
        Ok(())
    }

    /// Point on a closed curve for parameter `s` in `[0, 1)`.
    pub fn curve_point(&self, s: f64) -> [f64; 2] {
        match self {
            AnalyticSurface::Circle { radius, center } => {
                let th = 2.0 * PI * s;
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
            AnalyticSurface::Kite2d {
                a,
                b,
                scale,
                center,
            } => {
                let th = 2.0 * PI * s;
                [
                    center[0] + scale * (th.cos() + a * (2.0 * th).cos() - a),
                    center[1] + scale * b * th.sin(),
                ]
            }
            AnalyticSurface::Polygon2d { corners } => {
                let k = corners.len();
                let u = s.rem_euclid(1.0) * k as f64;
                let i = (u.floor() as usize).min(k - 1);
                let f = u - i as f64;
                let p = corners[i];
                let q = corners[(i + 1) % k];
                [p[0] + f * (q[0] - p[0]), p[1] + f * (q[1] - p[1])]
            }
            AnalyticSurface::Sphere { .. } => panic!("sphere is not a curve"),
        }
    }

    fn curve_derivatives(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        match self {
            AnalyticSurface::Circle { radius, .. } => {
                let w = 2.0 * PI;
                let th = w * s;
                (
                    [-w * radius * th.sin(), w * radius * th.cos()],
                    [-w * w * radius * th.cos(), -w * w * radius * th.sin()],
                )
            }
            AnalyticSurface::Kite2d { a, b, scale, .. } => {
                let w = 2.0 * PI;
                let th = w * s;
                (
                    [
                        w * scale * (-th.sin() - 2.0 * a * (2.0 * th).sin()),
                        w * scale * b * th.cos(),
                    ],
                    [
                        w * w * scale * (-th.cos() - 4.0 * a * (2.0 * th).cos()),
                        -w * w * scale * b * th.sin(),
                    ],
                )
            }
            AnalyticSurface::Polygon2d { corners } => {
                let k = corners.len();
                let u = s.rem_euclid(1.0) * k as f64;
                let i = (u.floor() as usize).min(k - 1);
                let p = corners[i];
                let q = corners[(i + 1) % k];
                let kf = k as f64;
                ([kf * (q[0] - p[0]), kf * (q[1] - p[1])], [0.0, 0.0])
            }
            AnalyticSurface::Sphere { .. } => panic!("sphere is not a curve"),
        }
    }

    /// Curve parameter of the closest point.
    pub fn closest_parameter(&self, x: &Point) -> f64 {
        match self {
            AnalyticSurface::Circle { center, .. } => {
                (x[1] - center[1])
                    .atan2(x[0] - center[0])
                    .rem_euclid(2.0 * PI)
                    / (2.0 * PI)
            }
            AnalyticSurface::Polygon2d { corners } => {
                let k = corners.len();
                let mut best = (f64::INFINITY, 0.0);
                for i in 0..k {
                    let p = corners[i];
                    let q = corners[(i + 1) % k];
                    let d = [q[0] - p[0], q[1] - p[1]];
                    let len2 = d[0] * d[0] + d[1] * d[1];
                    let f = (((x[0] - p[0]) * d[0] + (x[1] - p[1]) * d[1]) / len2).clamp(0.0, 1.0);
                    let c = [p[0] + f * d[0], p[1] + f * d[1]];
                    let dd = (x[0] - c[0]).hypot(x[1] - c[1]);
                    if dd < best.0 - 1e-15 {
                        best = (dd, (i as f64 + f) / k as f64);
                    }
                }
                best.1.rem_euclid(1.0)
            }
            AnalyticSurface::Kite2d { .. } => {
                let samples = 720;
                let mut best = (f64::INFINITY, 0.0);
                for i in 0..samples {
                    let s = i as f64 / samples as f64;
                    let p = self.curve_point(s);
                    let d = (p[0] - x[0]).hypot(p[1] - x[1]);
                    if d < best.0 {
                        best = (d, s);
                    }
                }
                let mut s = best.1;
                for _ in 0..50 {
                    let p = self.curve_point(s);
                    let (d1, d2) = self.curve_derivatives(s);
                    let r = [p[0] - x[0], p[1] - x[1]];
                    let g = r[0] * d1[0] + r[1] * d1[1];
                    let h = d1[0] * d1[0] + d1[1] * d1[1] + r[0] * d2[0] + r[1] * d2[1];
                    if h <= 0.0 {
                        break;
                    }
                    let step = g / h;
                    s -= step;
                    if step.abs() < 1e-16 {
                        break;
                    }
                }
                s.rem_euclid(1.0)
            }
            AnalyticSurface::Sphere { .. } => panic!("sphere is not a curve"),
        }
    }

    /// Outward unit normal at a curve parameter.
    pub fn curve_normal(&self, s: f64) -> Point {
        let (d1, _) = self.curve_derivatives(s);
        let l = d1[0].hypot(d1[1]);
        [d1[1] / l, -d1[0] / l, 0.0]
    }

    /// Exact outward unit normal at (the projection of) `x`.
    pub fn normal(&self, x: &Point) -> Point {
        match self {
            AnalyticSurface::Sphere { center, .. } => {
                let d = sub(x, center);
                scale(&d, 1.0 / norm(&d))
            }
            _ => self.curve_normal(self.closest_parameter(x)),
        }
    }

    /// Mean curvature `div n`.
    pub fn mean_curvature(&self, x: &Point) -> f64 {
        match self {
            AnalyticSurface::Sphere { radius, .. } => 2.0 / radius,
            AnalyticSurface::Circle { radius, .. } => 1.0 / radius,
            AnalyticSurface::Polygon2d { .. } => 0.0,
            AnalyticSurface::Kite2d { .. } => {
                let s = self.closest_parameter(x);
                let (d1, d2) = self.curve_derivatives(s);
                let l = d1[0].hypot(d1[1]);
                (d1[0] * d2[1] - d1[1] * d2[0]) / (l * l * l)
            }
        }
    }

    /// Closest point on the surface.
    pub fn project(&self, x: &Point) -> Point {
        match self {
            AnalyticSurface::Sphere { radius, center } => {
                let d = sub(x, center);
                add(center, &scale(&d, radius / norm(&d)))
            }
            _ => {
                let p = self.curve_point(self.closest_parameter(x));
                [p[0], p[1], 0.0]
            }
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            AnalyticSurface::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            AnalyticSurface::Circle { radius, .. } => 2.0 * PI * radius,
            AnalyticSurface::Polygon2d { corners } => (0..corners.len())
                .map(|i| {
                    let p = corners[i];
                    let q = corners[(i + 1) % corners.len()];
                    (q[0] - p[0]).hypot(q[1] - p[1])
                })
                .sum(),
            AnalyticSurface::Kite2d { .. } => {
                let g = crate::quadrature::gauss_legendre(32);
                let panels = 64;
                let mut total = 0.0;
                for p in 0..panels {
                    for (x, w) in g.points.iter().zip(&g.weights) {
                        let s = (p as f64 + x) / panels as f64;
                        let (d1, _) = self.curve_derivatives(s);
                        total += w * d1[0].hypot(d1[1]) / panels as f64;
                    }
                }
                total
            }
        }
    }
}

/// Surface kind plus the coarse resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    #[serde(flatten)]
    pub shape: AnalyticSurface,
    /// Segments of the level-0 curve mesh (per side for polygons); ignored for spheres.
    #[serde(default = "default_base")]
    pub base_segments: usize,
}

fn default_base() -> usize {
    16
}

/// A closed boundary mesh at one refinement level.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    level: usize,
    parent: Option<Vec<usize>>,
    vertex_origin: Option<Vec<[usize; 2]>>,
    coarser: Option<Arc<Mesh>>,
    normals: Vec<Point>,
    measures: Vec<f64>,
    surface: Option<AnalyticSurface>,
    params: Option<Vec<f64>>,
}

impl Mesh {
    /// Builds a mesh from raw data, orienting nothing; normals follow vertex order.
    pub fn from_raw(dim: usize, vertices: Vec<Point>, cells: Vec<usize>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return invalid(format!("dimension must be 2 or 3, got {dim}"));
        }
        if cells.len() % dim != 0 {
            return invalid("cell index list length is not a multiple of the dimension");
        }
        if let Some(bad) = cells.iter().find(|&&i| i >= vertices.len()) {
            return invalid(format!("vertex index {bad} out of range"));
        }
        let mut mesh = Mesh {
            dim,
            vertices,
            cells,
            level: 0,
            parent: None,
            vertex_origin: None,
            coarser: None,
            normals: Vec::new(),
            measures: Vec::new(),
            surface: None,
            params: None,
        };
        mesh.update_geometry()?;
        Ok(mesh)
    }

    fn update_geometry(&mut self) -> Result<()> {
        let ne = self.num_elements();
        self.normals = Vec::with_capacity(ne);
        self.measures = Vec::with_capacity(ne);
        for e in 0..ne {
            let (n, m) = if self.dim == 2 {
                let [a, b] = [self.cells[2 * e], self.cells[2 * e + 1]];
                let t = sub(&self.vertices[b], &self.vertices[a]);
                let l = norm(&t);
                ([t[1] / l, -t[0] / l, 0.0], l)
            } else {
                let c = self.element(e);
                let p = [
                    self.vertices[c[0]],
                    self.vertices[c[1]],
                    self.vertices[c[2]],
                ];
                let cr = cross(&sub(&p[1], &p[0]), &sub(&p[2], &p[0]));
                let l = norm(&cr);
                (scale(&cr, 1.0 / l), 0.5 * l)
            };
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::Degenerate(format!("element {e} has zero measure")));
            }
            self.normals.push(n);
            self.measures.push(m);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.cells.len() / self.dim
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &Point {
        &self.vertices[i]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.cells[self.dim * e..self.dim * (e + 1)]
    }

    pub fn element_points(&self, e: usize) -> [Point; 3] {
        let c = self.element(e);
        let z = [0.0; 3];
        [
            self.vertices[c[0]],
            self.vertices[c[1]],
            if self.dim == 3 {
                self.vertices[c[2]]
            } else {
                z
            },
        ]
    }

    /// Outward unit normal of element `e`.
    pub fn normal(&self, e: usize) -> &Point {
        &self.normals[e]
    }

    /// Length (d = 2) or area (d = 3) of element `e`.
    pub fn measure(&self, e: usize) -> f64 {
        self.measures[e]
    }

    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }

    pub fn centroid(&self, e: usize) -> Point {
        let c = self.element(e);
        let mut s = [0.0; 3];
        for &v in c {
            s = add(&s, &self.vertices[v]);
        }
        scale(&s, 1.0 / c.len() as f64)
    }

    /// Largest element diameter.
    pub fn meshwidth(&self) -> f64 {
        (0..self.num_elements())
            .map(|e| self.diameter(e))
            .fold(0.0, f64::max)
    }

    pub fn diameter(&self, e: usize) -> f64 {
        let c = self.element(e);
        let mut d: f64 = 0.0;
        for i in 0..c.len() {
            for j in (i + 1)..c.len() {
                d = d.max(dist(&self.vertices[c[i]], &self.vertices[c[j]]));
            }
        }
        d
    }

    pub fn parent(&self) -> Option<&[usize]> {
        self.parent.as_deref()
    }

    /// For each vertex, the two coarse vertices whose midpoint created it
    /// (an old vertex maps to itself twice).
    pub fn vertex_origin(&self) -> Option<&[[usize; 2]]> {
        self.vertex_origin.as_deref()
    }

    /// The mesh this one was refined from.
    pub fn coarser(&self) -> Option<&Arc<Mesh>> {
        self.coarser.as_ref()
    }

    pub fn surface(&self) -> Option<&AnalyticSurface> {
        self.surface.as_ref()
    }

    /// Curve parameters of the vertices, for analytic curves.
    pub fn curve_params(&self) -> Option<&[f64]> {
        self.params.as_deref()
    }

    /// Outward unit normal at a vertex: exact when an analytic surface is attached,
    /// measure-weighted average of adjacent element normals otherwise.
    pub fn vertex_normals(&self) -> Vec<Point> {
        if let Some(s) = &self.surface {
            return (0..self.num_vertices())
                .map(|i| match (&self.params, s) {
                    (Some(p), AnalyticSurface::Polygon2d { .. }) => {
                        self.polygon_vertex_normal(i, p[i])
                    }
                    (Some(p), _) => s.curve_normal(p[i]),
                    (None, _) => s.normal(&self.vertices[i]),
                })
                .collect();
        }
        let mut acc = vec![[0.0; 3]; self.num_vertices()];
        for e in 0..self.num_elements() {
            let w = scale(&self.normals[e], self.measures[e]);
            for &v in self.element(e) {
                acc[v] = add(&acc[v], &w);
            }
        }
        acc.iter().map(|a| scale(a, 1.0 / norm(a))).collect()
    }

    fn polygon_vertex_normal(&self, i: usize, s: f64) -> Point {
        let surface = self.surface.as_ref().unwrap();
        let k = match surface {
            AnalyticSurface::Polygon2d { corners } => corners.len() as f64,
            _ => unreachable!(),
        };
        let u = s * k;
        if (u - u.round()).abs() < 1e-12 {
            let mut acc = [0.0; 3];
            for e in 0..self.num_elements() {
                if self.element(e).contains(&i) {
                    acc = add(&acc, &self.normals[e]);
                }
            }
            return scale(&acc, 1.0 / norm(&acc));
        }
        surface.curve_normal(s)
    }

    /// Mean curvature at each vertex, from the analytic surface when present or a
    /// discrete estimate otherwise (turning angle in 2D, cotangent formula in 3D).
    pub fn vertex_curvature(&self) -> Vec<f64> {
        if let Some(s) = &self.surface {
            return match (&self.params, s) {
                (_, AnalyticSurface::Polygon2d { .. }) => vec![0.0; self.num_vertices()],
                (Some(p), _) => (0..self.num_vertices())
                    .map(|i| {
                        let q = s.curve_point(p[i]);
                        s.mean_curvature(&[q[0], q[1], 0.0])
                    })
                    .collect(),
                (None, _) => self.vertices.iter().map(|x| s.mean_curvature(x)).collect(),
            };
        }
        if self.dim == 2 {
            let mut angle = vec![0.0; self.num_vertices()];
            let mut len = vec![0.0; self.num_vertices()];
            let mut incoming = vec![usize::MAX; self.num_vertices()];
            for e in 0..self.num_elements() {
                let c = self.element(e);
                incoming[c[1]] = e;
                len[c[0]] += 0.5 * self.measures[e];
                len[c[1]] += 0.5 * self.measures[e];
            }
            for e in 0..self.num_elements() {
                let c = self.element(e);
                let prev = incoming[c[0]];
                if prev == usize::MAX {
                    continue;
                }
                let n0 = self.normals[prev];
                let n1 = self.normals[e];
                let turn = (n0[0] * n1[1] - n0[1] * n1[0]).atan2(dot(&n0, &n1));
                angle[c[0]] = turn;
            }
            return angle.iter().zip(&len).map(|(a, l)| a / l).collect();
        }
        let mut lap = vec![[0.0; 3]; self.num_vertices()];
        let mut area = vec![0.0; self.num_vertices()];
        for e in 0..self.num_elements() {
            let c = self.element(e);
            for k in 0..3 {
                let i = c[k];
                let j = c[(k + 1) % 3];
                let o = c[(k + 2) % 3];
                let u = sub(&self.vertices[i], &self.vertices[o]);
                let v = sub(&self.vertices[j], &self.vertices[o]);
                let cot = dot(&u, &v) / norm(&cross(&u, &v));
                let d = sub(&self.vertices[i], &self.vertices[j]);
                lap[i] = add(&lap[i], &scale(&d, 0.5 * cot));
                lap[j] = add(&lap[j], &scale(&d, -0.5 * cot));
                let voronoi = 0.125 * cot * dot(&d, &d);
                area[i] += voronoi;
                area[j] += voronoi;
            }
        }
        let normals = self.vertex_normals();
        (0..self.num_vertices())
            .map(|i| dot(&lap[i], &normals[i]) / area[i])
            .collect()
    }

    /// Checks that every edge (d = 3) or vertex (d = 2) is shared by exactly two elements,
    /// with consistent orientation.
    pub fn check_closed(&self) -> Result<()> {
        if self.dim == 2 {
            let mut out = vec![0usize; self.num_vertices()];
            let mut inn = vec![0usize; self.num_vertices()];
            for e in 0..self.num_elements() {
                let c = self.element(e);
                out[c[0]] += 1;
                inn[c[1]] += 1;
            }
            for v in 0..self.num_vertices() {
                if out[v] != 1 || inn[v] != 1 {
                    return Err(Error::Degenerate(format!(
                        "vertex {v} is not shared by exactly two segments"
                    )));
                }
            }
        } else {
            let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
            for e in 0..self.num_elements() {
                let c = self.element(e);
                for k in 0..3 {
                    *edges.entry((c[k], c[(k + 1) % 3])).or_default() += 1;
                }
            }
            for (&(a, b), &count) in &edges {
                if count != 1 || edges.get(&(b, a)) != Some(&1) {
                    return Err(Error::Degenerate(format!(
                        "edge ({a},{b}) is not shared by two consistently oriented triangles"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ratio of circumradius to inradius, maximized over elements (1 for d = 2).
    pub fn shape_regularity(&self) -> f64 {
        if self.dim == 2 {
            return 1.0;
        }
        let mut worst: f64 = 0.0;
        for e in 0..self.num_elements() {
            let p = self.element_points(e);
            let a = dist(&p[1], &p[2]);
            let b = dist(&p[0], &p[2]);
            let c = dist(&p[0], &p[1]);
            let area = self.measures[e];
            let circ = a * b * c / (4.0 * area);
            let inr = 2.0 * area / (a + b + c);
            worst = worst.max(circ / inr);
        }
        worst
    }
}

fn icosahedron() -> (Vec<Point>, Vec<usize>) {
    let phi = 0.5 * (1.0 + 5f64.sqrt());
    let mut v = Vec::new();
    for &s1 in &[-1.0, 1.0] {
        for &s2 in &[-1.0, 1.0] {
            v.push([0.0, s1, s2 * phi]);
            v.push([s1, s2 * phi, 0.0]);
            v.push([s2 * phi, 0.0, s1]);
        }
    }
    let mut cells = Vec::new();
    let n = v.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let close = |a: usize, b: usize| (dist(&v[a], &v[b]) - 2.0).abs() < 1e-9;
                if close(i, j) && close(j, k) && close(i, k) {
                    let nrm = cross(&sub(&v[j], &v[i]), &sub(&v[k], &v[i]));
                    if dot(&nrm, &v[i]) > 0.0 {
                        cells.extend_from_slice(&[i, j, k]);
                    } else {
                        cells.extend_from_slice(&[i, k, j]);
                    }
                }
            }
        }
    }
    (v, cells)
}

/// Builds the level-`level` mesh of an analytic surface, with its full coarse chain.
pub fn build_surface(spec: &SurfaceSpec, level: usize) -> Result<Arc<Mesh>> {
    Ok(build_hierarchy(spec, level)?.pop().unwrap())
}

/// Meshes of levels `0..=level`, each linked to its predecessor.
pub fn build_hierarchy(spec: &SurfaceSpec, level: usize) -> Result<Vec<Arc<Mesh>>> {
    let shape = &spec.shape;
    shape.validate()?;
    let base = match shape {
        AnalyticSurface::Sphere { radius, center } => {
            let (v, cells) = icosahedron();
            let v = v
                .iter()
                .map(|p| add(center, &scale(p, radius / norm(p))))
                .collect();
            let mut m = Mesh::from_raw(3, v, cells)?;
            m.surface = Some(shape.clone());
            m
        }
        _ => {
            if spec.base_segments < 3 && !matches!(shape, AnalyticSurface::Polygon2d { .. }) {
                return invalid("a closed curve needs at least three segments");
            }
            if spec.base_segments == 0 {
                return invalid("at least one segment per side is required");
            }
            let n = match shape {
                AnalyticSurface::Polygon2d { corners } => corners.len() * spec.base_segments,
                _ => spec.base_segments,
            };
            let params: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            let v = params
                .iter()
                .map(|&s| {
                    let p = shape.curve_point(s);
                    [p[0], p[1], 0.0]
                })
                .collect();
            let cells = (0..n).flat_map(|i| [i, (i + 1) % n]).collect();
            let mut m = Mesh::from_raw(2, v, cells)?;
            m.surface = Some(shape.clone());
            m.params = Some(params);
            m
        }
    };
    let mut out = vec![Arc::new(base)];
    for _ in 0..level {
        let next = refine(out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

fn curve_midpoint(a: f64, b: f64) -> f64 {
    let b = if b <= a { b + 1.0 } else { b };
    (0.5 * (a + b)).rem_euclid(1.0)
}

/// Uniform refinement: segments are halved, triangles split into four.
/// New vertices are placed on the analytic surface when one is attached.
pub fn refine(mesh: &Arc<Mesh>) -> Result<Arc<Mesh>> {
    let mut vertices = mesh.vertices.clone();
    let mut origin: Vec<[usize; 2]> = (0..mesh.num_vertices()).map(|i| [i, i]).collect();
    let mut params = mesh.params.clone();
    let mut cells = Vec::with_capacity(mesh.cells.len() * if mesh.dim == 2 { 2 } else { 4 });
    let mut parent = Vec::new();
    if mesh.dim == 2 {
        for e in 0..mesh.num_elements() {
            let c = mesh.element(e);
            let (a, b) = (c[0], c[1]);
            let m = vertices.len();
            let p = match (&mesh.surface, &mesh.params) {
                (Some(s), Some(pr)) => {
                    let t = curve_midpoint(pr[a], pr[b]);
                    params.as_mut().unwrap().push(t);
                    let q = s.curve_point(t);
                    [q[0], q[1], 0.0]
                }
                _ => scale(&add(&mesh.vertices[a], &mesh.vertices[b]), 0.5),
            };
            vertices.push(p);
            origin.push([a, b]);
            cells.extend_from_slice(&[a, m, m, b]);
            parent.extend_from_slice(&[e, e]);
        }
    } else {
        let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid =
            |a: usize, b: usize, vertices: &mut Vec<Point>, origin: &mut Vec<[usize; 2]>| {
                let key = (a.min(b), a.max(b));
                *edge_mid.entry(key).or_insert_with(|| {
                    let p = scale(&add(&mesh.vertices[a], &mesh.vertices[b]), 0.5);
                    let p = match &mesh.surface {
                        Some(s) => s.project(&p),
                        None => p,
                    };
                    vertices.push(p);
                    origin.push([key.0, key.1]);
                    vertices.len() - 1
                })
            };
        for e in 0..mesh.num_elements() {
            let c = mesh.element(e).to_vec();
            let ab = mid(c[0], c[1], &mut vertices, &mut origin);
            let bc = mid(c[1], c[2], &mut vertices, &mut origin);
            let ca = mid(c[2], c[0], &mut vertices, &mut origin);
            cells.extend_from_slice(&[c[0], ab, ca, ab, c[1], bc, ca, bc, c[2], ab, bc, ca]);
            parent.extend_from_slice(&[e, e, e, e]);
        }
    }
    let mut out = Mesh::from_raw(mesh.dim, vertices, cells)?;
    out.level = mesh.level + 1;
    out.parent = Some(parent);
    out.vertex_origin = Some(origin);
    out.coarser = Some(mesh.clone());
    out.surface = mesh.surface.clone();
    out.params = params;
    Ok(Arc::new(out))
}

/// Moves every vertex `x` to `x + t v(x)`. Fails if any element collapses or flips.
pub fn deform(mesh: &Mesh, field: &dyn Fn(&Point) -> Point, t: f64) -> Result<Mesh> {
    if !t.is_finite() {
        return invalid("deformation amplitude must be finite");
    }
    let vertices: Vec<Point> = if t == 0.0 {
        mesh.vertices.clone()
    } else {
        mesh.vertices
            .iter()
            .map(|x| add(x, &scale(&field(x), t)))
            .collect()
    };
    let mut out = Mesh {
        dim: mesh.dim,
        vertices,
        cells: mesh.cells.clone(),
        level: mesh.level,
        parent: mesh.parent.clone(),
        vertex_origin: mesh.vertex_origin.clone(),
        coarser: None,
        normals: Vec::new(),
        measures: Vec::new(),
        surface: None,
        params: None,
    };
    out.update_geometry().map_err(|e| {
        Error::Degenerate(format!(
            "deformation with t = {t} degenerates the mesh: {e}"
        ))
    })?;
    for e in 0..out.num_elements() {
        if dot(&out.normals[e], &mesh.normals[e]) <= 0.0 {
            return Err(Error::Degenerate(format!(
                "element {e} flips under deformation with t = {t}"
            )));
        }
    }
    Ok(out)
}

/// Writes the plain ASCII format: `dim nv ne`, coordinates, 0-based connectivity.
pub fn write_ascii(mesh: &Mesh, w: &mut impl std::io::Write) -> Result<()> {
    writeln!(
        w,
        "{} {} {}",
        mesh.dim,
        mesh.num_vertices(),
        mesh.num_elements()
    )?;
    for v in &mesh.vertices {
        let coords: Vec<String> = v[..mesh.dim].iter().map(|c| format!("{c:.17e}")).collect();
        writeln!(w, "{}", coords.join(" "))?;
    }
    for e in 0..mesh.num_elements() {
        let idx: Vec<String> = mesh.element(e).iter().map(|i| i.to_string()).collect();
        writeln!(w, "{}", idx.join(" "))?;
    }
    Ok(())
}

pub fn read_ascii(text: &str) -> Result<Mesh> {
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| -> Result<&str> {
        tokens
            .next()
            .ok_or_else(|| Error::Format(format!("unexpected end of file reading {what}")))
    };
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::Format(format!("{s}: {e}")))
    };
    let dim = parse_usize(next("dim")?)?;
    let nv = parse_usize(next("nv")?)?;
    let ne = parse_usize(next("ne")?)?;
    if dim != 2 && dim != 3 {
        return Err(Error::Format(format!(
            "dimension must be 2 or 3, got {dim}"
        )));
    }
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut p = [0.0; 3];
        for c in p.iter_mut().take(dim) {
            let s = next("coordinate")?;
            *c = s.parse().map_err(|e| Error::Format(format!("{s}: {e}")))?;
        }
        vertices.push(p);
    }
    let mut cells = Vec::with_capacity(ne * dim);
    for _ in 0..ne * dim {
        cells.push(parse_usize(next("index")?)?);
    }
    Mesh::from_raw(dim, vertices, cells)
}

/// Reads triangles (or, failing those, line segments) from a Gmsh ASCII v2 file.
pub fn read_gmsh_v2(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().map(str::trim);
    let mut nodes: Vec<(usize, Point)> = Vec::new();
    let mut tris = Vec::new();
    let mut segs = Vec::new();
    while let Some(line) = lines.next() {
        match line {
            "$MeshFormat" => {
                let fmt = lines.next().unwrap_or("");
                if !fmt.starts_with('2') {
                    return Err(Error::Format(format!("unsupported Gmsh format '{fmt}'")));
                }
            }
            "$Nodes" => {
                let n: usize = lines
                    .next()
                    .and_then(|l| l.parse().ok())
                    .ok_or_else(|| Error::Format("bad node count".into()))?;
                for _ in 0..n {
                    let l = lines
                        .next()
                        .ok_or_else(|| Error::Format("truncated nodes".into()))?;
                    let f: Vec<f64> = l
                        .split_whitespace()
                        .filter_map(|s| s.parse().ok())
                        .collect();
                    if f.len() < 4 {
                        return Err(Error::Format(format!("bad node line '{l}'")));
                    }
                    nodes.push((f[0] as usize, [f[1], f[2], f[3]]));
                }
            }
            "$Elements" => {
                let n: usize = lines
                    .next()
                    .and_then(|l| l.parse().ok())
                    .ok_or_else(|| Error::Format("bad element count".into()))?;
                for _ in 0..n {
                    let l = lines
                        .next()
                        .ok_or_else(|| Error::Format("truncated elements".into()))?;
                    let f: Vec<usize> = l
                        .split_whitespace()
                        .map(|s| {
                            s.parse()
                                .map_err(|_| Error::Format(format!("bad element line '{l}'")))
                        })
                        .collect::<Result<_>>()?;
                    if f.len() < 3 {
                        return Err(Error::Format(format!("bad element line '{l}'")));
                    }
                    let ntags = f[2];
                    let conn = &f[3 + ntags..];
                    match f[1] {
                        1 if conn.len() >= 2 => segs.extend_from_slice(&conn[..2]),
                        2 if conn.len() >= 3 => tris.extend_from_slice(&conn[..3]),
                        _ => {}
                    }
                }
            }
            _ => {}
        }
    }
    let index: HashMap<usize, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (*id, i))
        .collect();
    let (dim, raw) = if !tris.is_empty() {
        (3, tris)
    } else {
        (2, segs)
    };
    let cells = raw
        .iter()
        .map(|id| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Format(format!("unknown node {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut used = vec![usize::MAX; nodes.len()];
    let mut vertices = Vec::new();
    let mut remapped = Vec::with_capacity(cells.len());
    for c in cells {
        if used[c] == usize::MAX {
            used[c] = vertices.len();
            vertices.push(nodes[c].1);
        }
        remapped.push(used[c]);
    }
    Mesh::from_raw(dim, vertices, remapped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize) -> SurfaceSpec {
        SurfaceSpec {
            shape: AnalyticSurface::Circle {
                radius: 1.0,
                center: [0.0, 0.0],
            },
            base_segments: n,
        }
    }

    fn sphere() -> SurfaceSpec {
        SurfaceSpec {
            shape: AnalyticSurface::Sphere {
                radius: 1.0,
                center: [0.0; 3],
            },
            base_segments: 0,
        }
    }

    #[test]
    fn base_meshes() {
        let c = build_surface(&circle(16), 0).unwrap();
        assert_eq!((c.num_elements(), c.num_vertices()), (16, 16));
        let s = build_surface(&sphere(), 0).unwrap();
        assert_eq!((s.num_elements(), s.num_vertices()), (20, 12));
        let s1 = build_surface(&sphere(), 1).unwrap();
        assert_eq!((s1.num_elements(), s1.num_vertices()), (80, 42));
        for m in [&c, &s, &s1] {
            m.check_closed().unwrap();
            for e in 0..m.num_elements() {
                assert!(dot(m.normal(e), &m.centroid(e)) > 0.0);
            }
        }
    }

    #[test]
    fn refinement_projects_and_converges() {
        let h = build_hierarchy(&sphere(), 4).unwrap();
        let mut prev_err = f64::INFINITY;
        let mut prev_angle = f64::INFINITY;
        let reg0 = h[0].shape_regularity();
        for m in &h {
            for v in m.vertices() {
                assert!((norm(v) - 1.0).abs() < 1e-14);
            }
            let err = (4.0 * PI - m.total_measure()).abs();
            assert!(err < prev_err);
            prev_err = err;
            let angle = (0..m.num_elements())
                .flat_map(|e| m.element(e).iter().map(move |&v| (e, v)))
                .map(|(e, v)| dot(m.vertex(v), m.normal(e)).clamp(-1.0, 1.0).acos())
                .fold(0.0, f64::max);
            if prev_angle.is_finite() {
                let ratio = prev_angle / angle;
                assert!(ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5, "ratio {ratio}");
            }
            prev_angle = angle;
            assert!(m.shape_regularity() < 2.0 * reg0);
            m.check_closed().unwrap();
        }
        let c = build_hierarchy(&circle(16), 4).unwrap();
        let mut prev = f64::INFINITY;
        for m in &c {
            let err = (2.0 * PI - m.total_measure()).abs();
            assert!(err < prev);
            prev = err;
            for v in m.vertices() {
                assert!((norm(v) - 1.0).abs() < 1e-14);
            }
        }
        assert_eq!(c[1].num_elements(), 32);
    }

    #[test]
    fn parent_maps_partition() {
        let h = build_hierarchy(&sphere(), 3).unwrap();
        let fine = &h[3];
        let mut count = vec![0usize; h[0].num_elements()];
        for e in 0..fine.num_elements() {
            let mut p = e;
            let mut m = fine.clone();
            while let Some(par) = m.parent() {
                p = par[p];
                m = m.coarser().unwrap().clone();
            }
            count[p] += 1;
        }
        assert!(count.iter().all(|&c| c == 64));
    }

    #[test]
    fn kite_and_polygon() {
        let kite = SurfaceSpec {
            shape: AnalyticSurface::Kite2d {
                a: 0.65,
                b: 1.5,
                scale: 1.0,
                center: [0.0, 0.0],
            },
            base_segments: 32,
        };
        let h = build_hierarchy(&kite, 3).unwrap();
        let exact = kite.shape.measure();
        let mut prev = f64::INFINITY;
        for m in &h {
            m.check_closed().unwrap();
            let err = (exact - m.total_measure()).abs();
            assert!(err < prev);
            prev = err;
        }
        let x = kite.shape.curve_point(0.3);
        let p = [x[0] + 1e-3, x[1] - 2e-3, 0.0];
        let q = kite.shape.project(&p);
        let q2 = kite.shape.project(&q);
        assert!(dist(&q, &q2) < 1e-14);
        let sq = SurfaceSpec {
            shape: AnalyticSurface::unit_box(0.5),
            base_segments: 4,
        };
        let m = build_surface(&sq, 1).unwrap();
        assert_eq!(m.num_elements(), 32);
        assert!((m.total_measure() - 4.0).abs() < 1e-14);
        m.check_closed().unwrap();
        for e in 0..m.num_elements() {
            assert!(dot(m.normal(e), &m.centroid(e)) > 0.0);
        }
    }

    #[test]
    fn deformation() {
        let m = build_surface(&circle(16), 2).unwrap();
        let same = deform(&m, &|_| [1.0, 2.0, 0.0], 0.0).unwrap();
        assert_eq!(same.vertices(), m.vertices());
        assert!(same.surface().is_none());
        let v = |_: &Point| [0.3, -0.1, 0.0];
        let moved = deform(&m, &v, 0.7).unwrap();
        let back = deform(&moved, &v, -0.7).unwrap();
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!(dist(a, b) < 1e-15);
        }
        let collapse = |x: &Point| scale(x, -1.0);
        assert!(matches!(
            deform(&m, &collapse, 1.0),
            Err(Error::Degenerate(_))
        ));
        let kite_v = |x: &Point| {
            let th = x[1].atan2(x[0]);
            [1.0 - th.cos(), 0.25 * th.sin(), 0.0]
        };
        assert_eq!(kite_v(&[1.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn ascii_and_gmsh_roundtrip() {
        let m = build_surface(&sphere(), 1).unwrap();
        let mut buf = Vec::new();
        write_ascii(&m, &mut buf).unwrap();
        let r = read_ascii(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(r.num_elements(), m.num_elements());
        for (a, b) in r.vertices().iter().zip(m.vertices()) {
            assert!(dist(a, b) < 1e-15);
        }
        r.check_closed().unwrap();
        let gmsh = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n$EndNodes\n$Elements\n4\n1 2 2 0 1 1 3 2\n2 2 2 0 1 1 2 4\n3 2 2 0 1 1 4 3\n4 2 2 0 1 2 3 4\n$EndElements\n";
        let t = read_gmsh_v2(gmsh).unwrap();
        assert_eq!((t.num_vertices(), t.num_elements()), (4, 4));
        t.check_closed().unwrap();
    }

    #[test]
    fn discrete_curvature_estimates() {
        let m = build_surface(&sphere(), 3).unwrap();
        let mut raw = Mesh::from_raw(3, m.vertices().to_vec(), m.cells.clone()).unwrap();
        raw.level = 3;
        let k = raw.vertex_curvature();
        assert!(k.iter().all(|v| (v - 2.0).abs() < 0.1), "{:?}", &k[..5]);
        let c = build_surface(&circle(16), 3).unwrap();
        let raw = Mesh::from_raw(2, c.vertices().to_vec(), c.cells.clone()).unwrap();
        assert!(raw
            .vertex_curvature()
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-3));
    }
}
