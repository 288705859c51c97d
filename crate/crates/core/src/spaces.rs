//! Boundary element trace spaces (piecewise constants, continuous piecewise
//! linears), mass matrices, prolongation and tangential gradients.

use crate::error::{Error, Result};
use crate::geometry::{cross, scale, sub, Mesh, Point};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    P0,
    P1,
}

#[derive(Debug, Clone)]
pub struct TraceSpace {
    mesh: Arc<Mesh>,
    family: Family,
}

impl TraceSpace {
    pub fn new(mesh: Arc<Mesh>, family: Family) -> Self {
        TraceSpace { mesh, family }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        match self.family {
            Family::P0 => self.mesh.num_elements(),
            Family::P1 => self.mesh.num_vertices(),
        }
    }

    /// Value of a coefficient vector at a point of element `e` given by its
    /// barycentric weights (vertex order of the element).
    pub fn evaluate(&self, coeffs: &[Complex64], e: usize, bary: &[f64]) -> Complex64 {
        match self.family {
            Family::P0 => coeffs[e],
            Family::P1 => self
                .mesh
                .element(e)
                .iter()
                .zip(bary)
                .map(|(&v, w)| coeffs[v] * *w)
                .sum(),
        }
    }

    /// Interpolation (P1: vertex values) or centroid sampling (P0) of a function.
    pub fn interpolate<T: Copy>(&self, f: impl Fn(&Point, usize) -> T) -> Vec<T> {
        match self.family {
            Family::P1 => {
                let mut owner = vec![usize::MAX; self.mesh.num_vertices()];
                for e in 0..self.mesh.num_elements() {
                    for &v in self.mesh.element(e) {
                        if owner[v] == usize::MAX {
                            owner[v] = e;
                        }
                    }
                }
                (0..self.mesh.num_vertices())
                    .map(|v| f(self.mesh.vertex(v), owner[v]))
                    .collect()
            }
            Family::P0 => (0..self.mesh.num_elements())
                .map(|e| f(&self.mesh.centroid(e), e))
                .collect(),
        }
    }
}

/// Compressed sparse row matrix with real entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Sums duplicate entries; column order within a row is ascending.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| x[self.col_idx[k]] * self.values[k])
                    .sum()
            })
            .collect()
    }

    pub fn mul_vec_real(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| x[self.col_idx[k]] * self.values[k])
                    .sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut t = Vec::with_capacity(self.values.len());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push((self.col_idx[k], i, self.values[k]));
            }
        }
        SparseMatrix::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }

    pub fn to_dense_complex(&self) -> DMatrix<Complex64> {
        self.to_dense().map(|v| Complex64::new(v, 0.0))
    }

    /// Product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                for l in other.row_ptr[j]..other.row_ptr[j + 1] {
                    t.push((i, other.col_idx[l], self.values[k] * other.values[l]));
                }
            }
        }
        SparseMatrix::from_triplets(self.nrows, other.ncols, t)
    }
}

fn same_mesh(a: &TraceSpace, b: &TraceSpace) -> Result<()> {
    if !Arc::ptr_eq(&a.mesh, &b.mesh) {
        return Err(Error::Mismatch("spaces live on different meshes".into()));
    }
    Ok(())
}

/// `M_ij = ∫ φ_j ψ_i` with `ψ` from the test space and `φ` from the trial space.
pub fn mass_matrix(test: &TraceSpace, trial: &TraceSpace) -> Result<SparseMatrix> {
    same_mesh(test, trial)?;
    let mesh = &test.mesh;
    let d = mesh.dim();
    let mut t = Vec::new();
    for e in 0..mesh.num_elements() {
        let m = mesh.measure(e);
        let c = mesh.element(e);
        match (test.family, trial.family) {
            (Family::P0, Family::P0) => t.push((e, e, m)),
            (Family::P0, Family::P1) => c.iter().for_each(|&v| t.push((e, v, m / d as f64))),
            (Family::P1, Family::P0) => c.iter().for_each(|&v| t.push((v, e, m / d as f64))),
            (Family::P1, Family::P1) => {
                let (diag, off) = if d == 2 {
                    (m / 3.0, m / 6.0)
                } else {
                    (m / 6.0, m / 12.0)
                };
                for (a, &va) in c.iter().enumerate() {
                    for (b, &vb) in c.iter().enumerate() {
                        t.push((va, vb, if a == b { diag } else { off }));
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(test.dim(), trial.dim(), t))
}

/// Dense Cholesky factorization of a symmetric positive definite mass matrix.
#[derive(Debug, Clone)]
pub struct MassSolver {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl MassSolver {
    pub fn new(m: &SparseMatrix) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::Mismatch("mass solver needs a square matrix".into()));
        }
        let chol = m
            .to_dense()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("mass matrix is not positive definite".into()))?;
        Ok(MassSolver { chol })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = b.len();
        let mut rhs = DMatrix::<f64>::zeros(n, 2);
        for (i, v) in b.iter().enumerate() {
            rhs[(i, 0)] = v.re;
            rhs[(i, 1)] = v.im;
        }
        self.chol.solve_mut(&mut rhs);
        (0..n)
            .map(|i| Complex64::new(rhs[(i, 0)], rhs[(i, 1)]))
            .collect()
    }

    pub fn solve_real(&self, b: &[f64]) -> Vec<f64> {
        let mut v = DVector::from_column_slice(b);
        self.chol.solve_mut(&mut v);
        v.as_slice().to_vec()
    }

    /// Applies the inverse to every column.
    pub fn solve_columns(&self, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let (n, m) = b.shape();
        let mut re = b.map(|z| z.re);
        let mut im = b.map(|z| z.im);
        self.chol.solve_mut(&mut re);
        self.chol.solve_mut(&mut im);
        DMatrix::from_fn(n, m, |i, j| Complex64::new(re[(i, j)], im[(i, j)]))
    }
}

fn single_step(fine: &Mesh, family: Family) -> Result<SparseMatrix> {
    let coarse = fine
        .coarser()
        .ok_or_else(|| Error::Mismatch("mesh has no coarser level".into()))?;
    let t = match family {
        Family::P0 => fine
            .parent()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(e, &p)| (e, p, 1.0))
            .collect(),
        Family::P1 => {
            let mut t = Vec::new();
            for (v, o) in fine.vertex_origin().unwrap().iter().enumerate() {
                if o[0] == o[1] {
                    t.push((v, o[0], 1.0));
                } else {
                    t.push((v, o[0], 0.5));
                    t.push((v, o[1], 0.5));
                }
            }
            t
        }
    };
    let ncols = match family {
        Family::P0 => coarse.num_elements(),
        Family::P1 => coarse.num_vertices(),
    };
    let nrows = match family {
        Family::P0 => fine.num_elements(),
        Family::P1 => fine.num_vertices(),
    };
    Ok(SparseMatrix::from_triplets(nrows, ncols, t))
}

/// Matrix of the exact embedding of `from` into the finer nested space `to`.
pub fn prolongation_matrix(from: &TraceSpace, to: &TraceSpace) -> Result<SparseMatrix> {
    if from.family != to.family {
        return Err(Error::Mismatch(
            "prolongation between different families".into(),
        ));
    }
    let mut steps = Vec::new();
    let mut cur = to.mesh.clone();
    while !Arc::ptr_eq(&cur, &from.mesh) {
        steps.push(single_step(&cur, from.family)?);
        cur = match cur.coarser() {
            Some(c) => c.clone(),
            None => {
                return Err(Error::Mismatch(
                    "source mesh is not an ancestor of the target mesh".into(),
                ))
            }
        };
    }
    let n = from.dim();
    let mut acc = SparseMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect());
    for s in steps.iter().rev() {
        acc = s.matmul(&acc);
    }
    Ok(acc)
}

pub fn prolong(coeffs: &[Complex64], from: &TraceSpace, to: &TraceSpace) -> Result<Vec<Complex64>> {
    if coeffs.len() != from.dim() {
        return Err(Error::Mismatch(
            "coefficient vector does not match the source space".into(),
        ));
    }
    Ok(prolongation_matrix(from, to)?.mul_vec(coeffs))
}

/// Quadrature on element `e`: physical points, local vertex shape values and
/// weights that include the element measure.
pub fn element_quadrature(mesh: &Mesh, e: usize, order: usize) -> Vec<(Point, [f64; 3], f64)> {
    let p = mesh.element_points(e);
    let m = mesh.measure(e);
    if mesh.dim() == 2 {
        let g = crate::quadrature::gauss_legendre(order);
        g.points
            .iter()
            .zip(&g.weights)
            .map(|(s, w)| {
                let x = [
                    p[0][0] + s * (p[1][0] - p[0][0]),
                    p[0][1] + s * (p[1][1] - p[0][1]),
                    0.0,
                ];
                (x, [1.0 - s, *s, 0.0], w * m)
            })
            .collect()
    } else {
        let t = crate::quadrature::triangle_rule(order);
        t.points
            .iter()
            .zip(&t.weights)
            .map(|(q, w)| {
                let sh = crate::quadrature::reference_shape(*q);
                let mut x = [0.0; 3];
                for k in 0..3 {
                    for c in 0..3 {
                        x[c] += sh[k] * p[k][c];
                    }
                }
                (x, sh, 2.0 * w * m)
            })
            .collect()
    }
}

/// Load vector `b_i = ∫ f ψ_i`, where `f(e, x, shape)` is evaluated at the
/// quadrature points of element `e`.
pub fn load_vector(
    space: &TraceSpace,
    order: usize,
    f: impl Fn(usize, &Point, &[f64; 3]) -> Complex64,
) -> Vec<Complex64> {
    let mesh = &space.mesh;
    let mut out = vec![Complex64::new(0.0, 0.0); space.dim()];
    for e in 0..mesh.num_elements() {
        let c = mesh.element(e);
        for (x, sh, w) in element_quadrature(mesh, e, order) {
            let v = f(e, &x, &sh) * w;
            match space.family {
                Family::P0 => out[e] += v,
                Family::P1 => {
                    for (k, &i) in c.iter().enumerate() {
                        out[i] += v * sh[k];
                    }
                }
            }
        }
    }
    out
}

/// Value of a coefficient vector at a quadrature point given by local shape values.
pub fn value_at(space: &TraceSpace, coeffs: &[Complex64], e: usize, shape: &[f64; 3]) -> Complex64 {
    match space.family {
        Family::P0 => coeffs[e],
        Family::P1 => space
            .mesh
            .element(e)
            .iter()
            .zip(shape)
            .map(|(&v, s)| coeffs[v] * *s)
            .sum(),
    }
}

/// Tangential gradients of the local P1 basis functions on element `e`.
pub fn basis_gradients(mesh: &Mesh, e: usize) -> [Point; 3] {
    let p = mesh.element_points(e);
    if mesh.dim() == 2 {
        let t = sub(&p[1], &p[0]);
        let h2 = t[0] * t[0] + t[1] * t[1];
        let g = scale(&t, 1.0 / h2);
        [scale(&g, -1.0), g, [0.0; 3]]
    } else {
        let n = mesh.normal(e);
        let s = 1.0 / (2.0 * mesh.measure(e));
        [
            scale(&cross(n, &sub(&p[2], &p[1])), s),
            scale(&cross(n, &sub(&p[0], &p[2])), s),
            scale(&cross(n, &sub(&p[1], &p[0])), s),
        ]
    }
}

/// Element-wise constant tangential gradient of a P1 function.
pub fn surface_gradient(space: &TraceSpace, coeffs: &[Complex64]) -> Result<Vec<[Complex64; 3]>> {
    if space.family != Family::P1 {
        return Err(Error::InvalidInput(
            "tangential gradient needs a P1 space".into(),
        ));
    }
    if coeffs.len() != space.dim() {
        return Err(Error::Mismatch(
            "coefficient vector does not match the space".into(),
        ));
    }
    let mesh = &space.mesh;
    Ok((0..mesh.num_elements())
        .map(|e| {
            let g = basis_gradients(mesh, e);
            let mut out = [Complex64::new(0.0, 0.0); 3];
            for (k, &v) in mesh.element(e).iter().enumerate() {
                for c in 0..3 {
                    out[c] += coeffs[v] * g[k][c];
                }
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_hierarchy, dot, AnalyticSurface, SurfaceSpec};

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn sphere(level: usize) -> Vec<Arc<Mesh>> {
        build_hierarchy(
            &SurfaceSpec {
                shape: AnalyticSurface::Sphere {
                    radius: 1.0,
                    center: [0.0; 3],
                },
                base_segments: 0,
            },
            level,
        )
        .unwrap()
    }

    fn circle(level: usize) -> Vec<Arc<Mesh>> {
        build_hierarchy(
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

    #[test]
    fn dimensions() {
        let m = circle(0).pop().unwrap();
        assert_eq!(TraceSpace::new(m.clone(), Family::P0).dim(), 16);
        assert_eq!(TraceSpace::new(m, Family::P1).dim(), 16);
        assert_eq!(
            TraceSpace::new(sphere(0).pop().unwrap(), Family::P1).dim(),
            12
        );
    }

    #[test]
    fn mass_matrices() {
        let m = sphere(1).pop().unwrap();
        let p1 = TraceSpace::new(m.clone(), Family::P1);
        let p0 = TraceSpace::new(m.clone(), Family::P0);
        let m11 = mass_matrix(&p1, &p1).unwrap().to_dense();
        assert!((m11.sum() - m.total_measure()).abs() < 1e-12);
        assert!((&m11 - m11.transpose()).amax() < 1e-15);
        let ev = m11.clone().symmetric_eigenvalues();
        assert!(ev.min() > 0.0);
        let m01 = mass_matrix(&p0, &p1).unwrap().to_dense();
        let m10 = mass_matrix(&p1, &p0).unwrap().to_dense();
        assert!((m01.transpose() - m10).amax() < 1e-15);
        let m00 = mass_matrix(&p0, &p0).unwrap();
        assert_eq!(m00.values.len(), m.num_elements());
        let other = TraceSpace::new(sphere(1).pop().unwrap(), Family::P1);
        assert!(mass_matrix(&p1, &other).is_err());
    }

    #[test]
    fn prolongation_is_exact() {
        let h = sphere(2);
        let coarse = TraceSpace::new(h[0].clone(), Family::P1);
        let fine = TraceSpace::new(h[2].clone(), Family::P1);
        let ones = vec![c(1.0); coarse.dim()];
        assert!(prolong(&ones, &coarse, &fine)
            .unwrap()
            .iter()
            .all(|v| (v - 1.0).norm() < 1e-15));
        let p0c = TraceSpace::new(h[1].clone(), Family::P0);
        let p0f = TraceSpace::new(h[2].clone(), Family::P0);
        let mut ind = vec![c(0.0); p0c.dim()];
        ind[7] = c(1.0);
        let out = prolong(&ind, &p0c, &p0f).unwrap();
        assert_eq!(out.iter().filter(|v| v.re == 1.0).count(), 4);
        assert!(prolong(&ones, &fine, &coarse).is_err());

        // Nested evaluation on a polygonal hierarchy, where refinement keeps the geometry.
        let ch = build_hierarchy(
            &SurfaceSpec {
                shape: AnalyticSurface::unit_box(1.0),
                base_segments: 3,
            },
            2,
        )
        .unwrap();
        let a = TraceSpace::new(ch[0].clone(), Family::P1);
        let b = TraceSpace::new(ch[2].clone(), Family::P1);
        let u: Vec<Complex64> = (0..a.dim())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), i as f64 * 0.1))
            .collect();
        let ub = prolong(&u, &a, &b).unwrap();
        for e in 0..b.mesh().num_elements() {
            let mut p = e;
            let mut m = b.mesh().clone();
            while let Some(par) = m.parent() {
                p = par[p];
                m = m.coarser().unwrap().clone();
            }
            let fine_val = b.evaluate(&ub, e, &[0.5, 0.5]);
            let x = b.mesh().centroid(e);
            let pts = a.mesh().element_points(p);
            let d = sub(&pts[1], &pts[0]);
            let s = dot(&sub(&x, &pts[0]), &d) / dot(&d, &d);
            let coarse_val = a.evaluate(&u, p, &[1.0 - s, s]);
            assert!((fine_val - coarse_val).norm() < 1e-13);
        }
    }

    #[test]
    fn mass_prolongation_consistency() {
        let h = circle(2);
        let a = TraceSpace::new(h[1].clone(), Family::P1);
        let b = TraceSpace::new(h[2].clone(), Family::P1);
        let p = prolongation_matrix(&a, &b).unwrap();
        let mb = mass_matrix(&b, &b).unwrap();
        // Both sides integrate products of functions living on the finer mesh.
        let lhs = p.transpose().matmul(&mb).matmul(&p).to_dense();
        let u: Vec<f64> = (0..a.dim()).map(|i| (i as f64).cos()).collect();
        let v: Vec<f64> = (0..a.dim()).map(|i| (2.0 * i as f64).sin()).collect();
        let pu = p.mul_vec_real(&u);
        let pv = p.mul_vec_real(&v);
        let direct: f64 = mb
            .mul_vec_real(&pu)
            .iter()
            .zip(&pv)
            .map(|(x, y)| x * y)
            .sum();
        let via: f64 = (0..a.dim())
            .map(|i| (0..a.dim()).map(|j| lhs[(i, j)] * u[j]).sum::<f64>() * v[i])
            .sum();
        assert!((direct - via).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn gradients() {
        let h = sphere(4);
        let mut prev = f64::INFINITY;
        let mut last_rate = 0.0;
        for m in &h[1..] {
            let s = TraceSpace::new(m.clone(), Family::P1);
            let u: Vec<Complex64> = m.vertices().iter().map(|x| c(x[2])).collect();
            let g = surface_gradient(&s, &u).unwrap();
            let ones = vec![c(1.0); s.dim()];
            assert!(surface_gradient(&s, &ones)
                .unwrap()
                .iter()
                .all(|v| v.iter().all(|z| z.norm() < 1e-12)));
            let mut err: f64 = 0.0;
            for e in 0..m.num_elements() {
                let n = m.normal(e);
                let gr = [g[e][0].re, g[e][1].re, g[e][2].re];
                assert!(dot(&gr, n).abs() < 1e-13);
                let x = m.centroid(e);
                let xn = scale(&x, 1.0 / crate::geometry::norm(&x));
                let exact = sub(&[0.0, 0.0, 1.0], &scale(&xn, xn[2]));
                err = err.max(crate::geometry::norm(&sub(&gr, &exact)));
            }
            if prev.is_finite() {
                let rate = (prev / err).log2();
                assert!(rate > 0.6 && rate < 1.3, "rate {rate}");
                last_rate = rate;
            }
            prev = err;
        }
        assert!(last_rate > 0.9);
        let p0 = TraceSpace::new(h[0].clone(), Family::P0);
        assert!(surface_gradient(&p0, &vec![c(0.0); p0.dim()]).is_err());
    }

    #[test]
    fn flat_gradient_is_tangential_projection() {
        let m = Mesh::from_raw(
            3,
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.2], [0.1, 1.0, 0.3]],
            vec![0, 1, 2],
        )
        .unwrap();
        let m = Arc::new(m);
        let s = TraceSpace::new(m.clone(), Family::P1);
        let e_dir = [0.3, -0.5, 0.8];
        let u: Vec<Complex64> = m.vertices().iter().map(|x| c(dot(x, &e_dir))).collect();
        let g = surface_gradient(&s, &u).unwrap()[0];
        let n = m.normal(0);
        let expect = sub(&e_dir, &scale(n, dot(&e_dir, n)));
        for k in 0..3 {
            assert!((g[k].re - expect[k]).abs() < 1e-14);
        }
    }
}
