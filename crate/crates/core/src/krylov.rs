//! Restarted, left-preconditioned GMRES with residual histories, the
//! convergence factor `Q_m`, and dense spectral diagnostics.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmresConfig {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig {
            tol: 1e-4,
            restart: 200,
            max_iter: 2000,
        }
    }
}

impl GmresConfig {
    pub fn with_tol(tol: f64) -> Self {
        GmresConfig {
            tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidInput(format!(
                "GMRES tolerance must lie in (0, 1), got {}",
                self.tol
            )));
        }
        if self.restart == 0 || self.max_iter == 0 {
            return Err(Error::InvalidInput(
                "GMRES restart and max_iter must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Residual history in the preconditioned norm; `residuals[0]` is the initial residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmresReport {
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restart: usize,
    pub tol: f64,
    pub breakdown: bool,
}

impl GmresReport {
    pub fn relative_residual(&self) -> f64 {
        let r0 = self.residuals[0];
        if r0 == 0.0 {
            0.0
        } else {
            self.residuals.last().copied().unwrap_or(0.0) / r0
        }
    }

    /// `Q_m = (|r_m| / |r_0|)^{1/m}`.
    pub fn convergence_factor(&self, m: usize) -> Result<f64> {
        convergence_factor(self, m)
    }

    /// Rows `(iteration, residual, Q_m)` with `Q_0` reported as 1.
    pub fn history_rows(&self) -> Vec<(usize, f64, f64)> {
        (0..self.residuals.len())
            .map(|m| {
                (
                    m,
                    self.residuals[m],
                    if m == 0 {
                        1.0
                    } else {
                        convergence_factor(self, m).unwrap_or(f64::NAN)
                    },
                )
            })
            .collect()
    }
}

pub fn convergence_factor(report: &GmresReport, m: usize) -> Result<f64> {
    if m == 0 || m >= report.residuals.len() {
        return Err(Error::InvalidInput(format!(
            "convergence factor index {m} outside 1..{}",
            report.residuals.len().saturating_sub(1)
        )));
    }
    let r0 = report.residuals[0];
    if r0 == 0.0 {
        return Err(Error::InvalidInput("initial residual is zero".into()));
    }
    Ok((report.residuals[m] / r0).powf(1.0 / m as f64))
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(y: &mut [Complex64], a: Complex64, x: &[Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Solves `P A x = P b` from `x0` (zero when `None`). Residuals are measured as
/// `|P(b - A x)|` and the stopping test is relative to `|P b|`.
pub fn gmres<A, P>(
    mut apply: A,
    mut precond: P,
    rhs: &[Complex64],
    x0: Option<&[Complex64]>,
    cfg: &GmresConfig,
) -> Result<(Vec<Complex64>, GmresReport)>
where
    A: FnMut(&[Complex64]) -> Vec<Complex64>,
    P: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    cfg.validate()?;
    let n = rhs.len();
    let mut x = match x0 {
        Some(v) if v.len() != n => {
            return Err(Error::Mismatch("initial guess has wrong length".into()))
        }
        Some(v) => v.to_vec(),
        None => vec![ZERO; n],
    };
    let pb = precond(rhs);
    if pb.len() != n {
        return Err(Error::Mismatch(
            "preconditioner changed the vector length".into(),
        ));
    }
    let bnorm = norm(&pb);
    let mut report = GmresReport {
        residuals: vec![],
        converged: false,
        iterations: 0,
        restart: cfg.restart,
        tol: cfg.tol,
        breakdown: false,
    };
    if bnorm == 0.0 {
        report.residuals.push(0.0);
        report.converged = true;
        return Ok((vec![ZERO; n], report));
    }
    let residual = |x: &[Complex64], apply: &mut A, precond: &mut P| -> Result<Vec<Complex64>> {
        let ax = apply(x);
        if ax.len() != n {
            return Err(Error::Mismatch("operator changed the vector length".into()));
        }
        let r: Vec<Complex64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        Ok(precond(&r))
    };
    let mut r = if x0.is_some() {
        residual(&x, &mut apply, &mut precond)?
    } else {
        pb.clone()
    };
    let mut beta = norm(&r);
    report.residuals.push(beta);
    let target = cfg.tol * bnorm;
    if beta <= target {
        report.converged = true;
        return Ok((x, report));
    }
    let m = cfg.restart.min(n.max(1));
    while report.iterations < cfg.max_iter {
        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|z| z / beta).collect());
        let mut h: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<Complex64> = Vec::with_capacity(m);
        let mut g = vec![ZERO; m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut k = 0;
        let mut done = false;
        while k < m && report.iterations < cfg.max_iter {
            let av = apply(&basis[k]);
            let mut w = precond(&av);
            let mut col = vec![ZERO; k + 2];
            let wnorm0 = norm(&w);
            for _ in 0..2 {
                for (j, v) in basis.iter().enumerate() {
                    let c = dotc(v, &w);
                    axpy(&mut w, -c, v);
                    col[j] += c;
                }
            }
            let hn = norm(&w);
            col[k + 1] = Complex64::new(hn, 0.0);
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i].conj() * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let (c, s, rr) = givens(col[k], col[k + 1]);
            col[k] = rr;
            col[k + 1] = ZERO;
            cs.push(c);
            sn.push(s);
            g[k + 1] = -s.conj() * g[k];
            g[k] *= c;
            h.push(col);
            k += 1;
            report.iterations += 1;
            let res = g[k].norm();
            report.residuals.push(res);
            if res <= target {
                done = true;
                break;
            }
            if hn <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE) {
                report.breakdown = true;
                break;
            }
            basis.push(w.iter().map(|z| z / hn).collect());
        }
        // back substitution for the upper-triangular least-squares system
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(&mut x, *yj, &basis[j]);
        }
        if done {
            report.converged = true;
            break;
        }
        r = residual(&x, &mut apply, &mut precond)?;
        beta = norm(&r);
        if let Some(last) = report.residuals.last_mut() {
            *last = beta;
        }
        if beta <= target {
            report.converged = true;
            break;
        }
        if report.breakdown {
            break;
        }
    }
    Ok((x, report))
}

fn givens(a: Complex64, b: Complex64) -> (f64, Complex64, Complex64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (1.0, ZERO, a);
    }
    if an == 0.0 {
        return (0.0, b.conj() / bn, Complex64::new(bn, 0.0));
    }
    let t = (an * an + bn * bn).sqrt();
    let phase = a / an;
    let c = an / t;
    let s = phase * b.conj() / t;
    (c, s, phase * t)
}

/// GMRES on a dense matrix with an optional dense left preconditioner.
pub fn gmres_dense(
    a: &DMatrix<Complex64>,
    p: Option<&DMatrix<Complex64>>,
    rhs: &[Complex64],
    cfg: &GmresConfig,
) -> Result<(Vec<Complex64>, GmresReport)> {
    if a.nrows() != rhs.len() || a.ncols() != rhs.len() {
        return Err(Error::Mismatch(
            "matrix and right-hand side sizes differ".into(),
        ));
    }
    let mv = |m: &DMatrix<Complex64>, v: &[Complex64]| -> Vec<Complex64> {
        (m * nalgebra::DVector::from_column_slice(v))
            .as_slice()
            .to_vec()
    };
    gmres(
        |v| mv(a, v),
        |v| p.map_or_else(|| v.to_vec(), |p| mv(p, v)),
        rhs,
        None,
        cfg,
    )
}

/// All eigenvalues of a dense matrix, refusing matrices larger than `cap`.
pub fn spectrum_diagnostic(matrix: &DMatrix<Complex64>, cap: usize) -> Result<Vec<Complex64>> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::Mismatch("eigenvalues need a square matrix".into()));
    }
    if matrix.nrows() > cap {
        return Err(Error::SizeLimit(format!(
            "matrix of size {} exceeds the cap {cap}",
            matrix.nrows()
        )));
    }
    let ev = matrix
        .clone()
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::NotConverged("Schur decomposition".into()))?;
    Ok(ev.iter().copied().collect())
}

/// Fraction of eigenvalues with `|z - 1| < radius`.
pub fn cluster_fraction(eigs: &[Complex64], radius: f64) -> f64 {
    if eigs.is_empty() {
        return 0.0;
    }
    eigs.iter()
        .filter(|z| (*z - Complex64::new(1.0, 0.0)).norm() < radius)
        .count() as f64
        / eigs.len() as f64
}

/// Spectral condition number from the singular values.
pub fn condition_number(matrix: &DMatrix<Complex64>) -> f64 {
    let sv = matrix.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn kronecker(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64, shift: f64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |i, j| {
            let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                / (n as f64).sqrt();
            if i == j {
                z + shift
            } else {
                z
            }
        })
    }

    fn random_vec(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn identity_converges_in_one_step() {
        let b = random_vec(7, 1);
        let (x, rep) = gmres(
            |v| v.to_vec(),
            |v| v.to_vec(),
            &b,
            None,
            &GmresConfig::with_tol(1e-12),
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        for (a, c) in x.iter().zip(&b) {
            assert!((a - c).norm() < 1e-14);
        }
    }

    #[test]
    fn two_eigenvalues_need_two_steps() {
        let d: Vec<f64> = (0..20)
            .map(|i| if i % 2 == 0 { 2.0 } else { 5.0 })
            .collect();
        let b = random_vec(20, 2);
        let (x, rep) = gmres(
            |v| v.iter().zip(&d).map(|(z, s)| z * s).collect(),
            |v| v.to_vec(),
            &b,
            None,
            &GmresConfig::with_tol(1e-12),
        )
        .unwrap();
        assert!(rep.iterations <= 2);
        for i in 0..20 {
            assert!((x[i] * d[i] - b[i]).norm() < 1e-11);
        }
    }

    #[test]
    fn matches_direct_solve_with_restarts() {
        let n = 60;
        let a = random_matrix(n, 3, 2.0);
        let b = random_vec(n, 4);
        let exact = a
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_vec(b.clone()))
            .unwrap();
        let tol = 1e-10;
        for restart in [5, 200] {
            let cfg = GmresConfig {
                tol,
                restart,
                max_iter: 500,
            };
            let (x, rep) = gmres_dense(&a, None, &b, &cfg).unwrap();
            assert!(rep.converged);
            let err = x
                .iter()
                .zip(exact.iter())
                .map(|(u, v)| (u - v).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / exact.norm();
            assert!(err < 10.0 * tol * 10.0, "restart {restart}: {err}");
            assert!(rep.relative_residual() <= tol);
        }
    }

    #[test]
    fn preconditioner_and_initial_guess() {
        let n = 30;
        let a = random_matrix(n, 5, 0.5);
        let p = a.clone().try_inverse().unwrap();
        let b = random_vec(n, 6);
        let (_, rep) = gmres_dense(&a, Some(&p), &b, &GmresConfig::with_tol(1e-10)).unwrap();
        assert!(rep.iterations <= 2);
        let (x, _) = gmres_dense(&a, None, &b, &GmresConfig::with_tol(1e-12)).unwrap();
        let mv = |v: &[Complex64]| {
            (&a * nalgebra::DVector::from_column_slice(v))
                .as_slice()
                .to_vec()
        };
        let (_, rep2) = gmres(
            mv,
            |v| v.to_vec(),
            &b,
            Some(&x),
            &GmresConfig::with_tol(1e-8),
        )
        .unwrap();
        assert_eq!(rep2.iterations, 0);
    }

    #[test]
    fn residuals_are_monotone_and_reproducible() {
        let a = random_matrix(40, 7, 1.0);
        let b = random_vec(40, 8);
        let cfg = GmresConfig {
            tol: 1e-10,
            restart: 200,
            max_iter: 100,
        };
        let (_, r1) = gmres_dense(&a, None, &b, &cfg).unwrap();
        let (_, r2) = gmres_dense(&a, None, &b, &cfg).unwrap();
        assert_eq!(r1, r2);
        for w in r1.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for m in 1..r1.residuals.len() {
            assert!(r1.convergence_factor(m).unwrap() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn convergence_factor_cases() {
        let rep = GmresReport {
            residuals: vec![1.0, 0.5, 0.25, 0.125],
            converged: true,
            iterations: 3,
            restart: 10,
            tol: 0.2,
            breakdown: false,
        };
        for m in 1..4 {
            assert!((rep.convergence_factor(m).unwrap() - 0.5).abs() < 1e-15);
        }
        assert!(rep.convergence_factor(0).is_err());
        assert!(rep.convergence_factor(4).is_err());
        let flat = GmresReport {
            residuals: vec![2.0, 2.0],
            ..rep
        };
        assert_eq!(flat.convergence_factor(1).unwrap(), 1.0);
    }

    #[test]
    fn spectra() {
        let id = DMatrix::<Complex64>::identity(5, 5);
        let ev = spectrum_diagnostic(&id, 10).unwrap();
        assert!(ev.iter().all(|z| (z - 1.0).norm() < 1e-14));
        assert_eq!(cluster_fraction(&ev, 0.5), 1.0);
        assert!(spectrum_diagnostic(&id, 4).is_err());
        let a = random_matrix(8, 9, 1.0);
        let b = random_matrix(8, 10, 0.3);
        let ea = spectrum_diagnostic(&a, 100).unwrap();
        let eb = spectrum_diagnostic(&b, 100).unwrap();
        let mut ek = spectrum_diagnostic(&kronecker(&a, &b), 100).unwrap();
        for x in &ea {
            for y in &eb {
                let p = x * y;
                let (i, d) = ek
                    .iter()
                    .enumerate()
                    .map(|(i, z)| (i, (z - p).norm()))
                    .min_by(|u, v| u.1.total_cmp(&v.1))
                    .unwrap();
                assert!(d < 1e-9, "{d}");
                ek.swap_remove(i);
            }
        }
        let ka = condition_number(&a);
        let kb = condition_number(&b);
        let kab = condition_number(&kronecker(&a, &b));
        assert!((kab / (ka * kb) - 1.0).abs() < 0.05);
    }
}
