//! Scattering problems and their first-kind boundary integral equations:
//! the operator `Z`, the Calderón preconditioner `C` and the right-hand side
//! operator `B` of the shape-derivative equation, per boundary condition.

use crate::error::{Error, Result};
use crate::geometry::{dot, Mesh, Point};
use crate::krylov::{gmres, GmresConfig, GmresReport};
use crate::operators::{
    assemble_many, AssemblyRequest, Kernel, KernelKind, OperatorMatrix, QuadratureConfig,
};
use crate::spaces::{load_vector, mass_matrix, Family, MassSolver, SparseMatrix, TraceSpace};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    SoundSoft,
    SoundHard,
    Impedance {
        eta: f64,
    },
    Transmission {
        kappa_interior: f64,
        mu_exterior: f64,
        mu_interior: f64,
    },
}

/// Plane-wave scattering problem. `kappa` is the exterior wavenumber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kappa: f64,
    pub bc: BoundaryCondition,
    pub direction: Point,
    #[serde(default = "unit_amplitude")]
    pub amplitude: f64,
}

fn unit_amplitude() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn new(kappa: f64, bc: BoundaryCondition, direction: Point) -> Self {
        ProblemSpec {
            kappa,
            bc,
            direction,
            amplitude: 1.0,
        }
    }

    pub fn beta(&self) -> usize {
        match self.bc {
            BoundaryCondition::SoundSoft => 0,
            BoundaryCondition::SoundHard => 1,
            BoundaryCondition::Impedance { .. } => 2,
            BoundaryCondition::Transmission { .. } => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return bad(format!("wavenumber must be positive, got {}", self.kappa));
        }
        if !self.amplitude.is_finite() || self.amplitude == 0.0 {
            return bad("incident amplitude must be finite and nonzero".into());
        }
        let dn = dot(&self.direction, &self.direction).sqrt();
        if !(dn > 0.0) || !dn.is_finite() {
            return bad("incident direction must be a nonzero vector".into());
        }
        match self.bc {
            BoundaryCondition::Impedance { eta } if !(eta > 0.0) || !eta.is_finite() => {
                bad(format!("impedance must be positive, got {eta}"))
            }
            BoundaryCondition::Transmission {
                kappa_interior,
                mu_exterior,
                mu_interior,
            } => {
                if !(kappa_interior > 0.0) || !(mu_exterior > 0.0) || !(mu_interior > 0.0) {
                    return bad("transmission wavenumbers and densities must be positive".into());
                }
                if kappa_interior == self.kappa && mu_exterior == mu_interior {
                    return bad(
                        "transmission problem needs a contrast in wavenumber or density".into(),
                    );
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Copy with a unit direction and whether normalization changed it.
    pub fn normalized(&self) -> (Self, bool) {
        let n = dot(&self.direction, &self.direction).sqrt();
        let changed = (n - 1.0).abs() > 1e-12;
        let mut out = *self;
        out.direction = [
            self.direction[0] / n,
            self.direction[1] / n,
            self.direction[2] / n,
        ];
        (out, changed)
    }

    pub fn interior_kappa(&self) -> Option<f64> {
        match self.bc {
            BoundaryCondition::Transmission { kappa_interior, .. } => Some(kappa_interior),
            _ => None,
        }
    }

    /// Densities `(μ₀, μ₁)`; `(1, 1)` for exterior problems.
    pub fn densities(&self) -> (f64, f64) {
        match self.bc {
            BoundaryCondition::Transmission {
                mu_exterior,
                mu_interior,
                ..
            } => (mu_exterior, mu_interior),
            _ => (1.0, 1.0),
        }
    }

    pub fn incident(&self, x: &Point) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.kappa * dot(x, &self.direction))
    }

    pub fn incident_normal_derivative(&self, x: &Point, n: &Point) -> Complex64 {
        I * self.kappa * dot(n, &self.direction) * self.incident(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizationConfig {
    /// Family of the Neumann trace space; the Dirichlet trace is always P1.
    pub neumann: Family,
    pub quad: QuadratureConfig,
    pub precondition: bool,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        DiscretizationConfig {
            neumann: Family::P1,
            quad: QuadratureConfig::default(),
            precondition: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spaces {
    pub dirichlet: TraceSpace,
    pub neumann: TraceSpace,
}

impl Spaces {
    pub fn new(mesh: Arc<Mesh>, neumann: Family) -> Self {
        Spaces {
            dirichlet: TraceSpace::new(mesh.clone(), Family::P1),
            neumann: TraceSpace::new(mesh, neumann),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.dirichlet.mesh()
    }

    pub fn level(&self) -> usize {
        self.mesh().level()
    }
}

/// Exterior Cauchy data `(λ, σ) = (γ₀U, γ₁U)` as coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyData {
    pub lambda: Vec<Complex64>,
    pub sigma: Vec<Complex64>,
    pub level: usize,
}

impl CauchyData {
    pub fn zeros(spaces: &Spaces) -> Self {
        CauchyData {
            lambda: vec![Complex64::new(0.0, 0.0); spaces.dirichlet.dim()],
            sigma: vec![Complex64::new(0.0, 0.0); spaces.neumann.dim()],
            level: spaces.level(),
        }
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        CauchyData {
            lambda: self.lambda.iter().map(|z| z * s).collect(),
            sigma: self.sigma.iter().map(|z| z * s).collect(),
            level: self.level,
        }
    }

    pub fn add(&self, other: &CauchyData) -> Result<Self> {
        if self.lambda.len() != other.lambda.len() || self.sigma.len() != other.sigma.len() {
            return Err(Error::Mismatch("Cauchy data of different sizes".into()));
        }
        Ok(CauchyData {
            lambda: self
                .lambda
                .iter()
                .zip(&other.lambda)
                .map(|(a, b)| a + b)
                .collect(),
            sigma: self
                .sigma
                .iter()
                .zip(&other.sigma)
                .map(|(a, b)| a + b)
                .collect(),
            level: self.level,
        })
    }
}

/// Interpolated incident traces; P1 Neumann values use vertex normals.
pub fn incident_traces(spec: &ProblemSpec, spaces: &Spaces) -> Result<CauchyData> {
    spec.validate()?;
    let (spec, _) = spec.normalized();
    let mesh = spaces.mesh();
    let lambda = spaces.dirichlet.interpolate(|x, _| spec.incident(x));
    let sigma = match spaces.neumann.family() {
        Family::P1 => {
            let normals = mesh.vertex_normals();
            (0..mesh.num_vertices())
                .map(|v| spec.incident_normal_derivative(mesh.vertex(v), &normals[v]))
                .collect()
        }
        Family::P0 => spaces
            .neumann
            .interpolate(|x, e| spec.incident_normal_derivative(x, mesh.normal(e))),
    };
    Ok(CauchyData {
        lambda,
        sigma,
        level: spaces.level(),
    })
}

pub(crate) fn load_order(mesh: &Mesh) -> usize {
    if mesh.dim() == 2 {
        6
    } else {
        4
    }
}

/// `(∫ U^inc ψ_i, ∫ ∂_n U^inc φ_i)` against the Neumann and Dirichlet test spaces,
/// using element normals.
pub fn incident_loads(spec: &ProblemSpec, spaces: &Spaces) -> (Vec<Complex64>, Vec<Complex64>) {
    let mesh = spaces.mesh().clone();
    let q = load_order(&mesh);
    let f0 = load_vector(&spaces.neumann, q, |_, x, _| spec.incident(x));
    let f1 = load_vector(&spaces.dirichlet, q, |e, x, _| {
        spec.incident_normal_derivative(x, mesh.normal(e))
    });
    (f0, f1)
}

/// Galerkin matrices of `Z`, `C` and `B` for one problem on one mesh.
#[derive(Debug, Clone)]
pub struct ProblemSystem {
    pub spec: ProblemSpec,
    pub spaces: Spaces,
    pub config: DiscretizationConfig,
    pub z: DMatrix<Complex64>,
    pub c: Option<DMatrix<Complex64>>,
    /// Strong-form preconditioner `M⁻¹ C M⁻¹`.
    pub precond: Option<DMatrix<Complex64>>,
    pub b: DMatrix<Complex64>,
    pub mass_d: SparseMatrix,
    pub mass_n: SparseMatrix,
    pub mass_nd: SparseMatrix,
    solver_d: MassSolver,
    solver_n: MassSolver,
}

fn to_dense(m: &SparseMatrix) -> DMatrix<Complex64> {
    m.to_dense_complex()
}

fn block2(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    c: &DMatrix<Complex64>,
    d: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let (r1, c1) = a.shape();
    let (r2, c2) = d.shape();
    let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a);
    out.view_mut((0, c1), (r1, c2)).copy_from(b);
    out.view_mut((r1, 0), (r2, c1)).copy_from(c);
    out.view_mut((r1, c1), (r2, c2)).copy_from(d);
    out
}

/// The four Galerkin blocks `V (N×N)`, `K (N×D)`, `K' (D×N)`, `W (D×D)`.
#[derive(Debug, Clone)]
pub struct CalderonBlocks {
    pub v: DMatrix<Complex64>,
    pub k: DMatrix<Complex64>,
    pub kp: DMatrix<Complex64>,
    pub w: DMatrix<Complex64>,
}

pub fn calderon_blocks(
    kappa: f64,
    spaces: &Spaces,
    quad: &QuadratureConfig,
) -> Result<CalderonBlocks> {
    let (n, d) = (spaces.neumann.family(), Family::P1);
    let reqs = [
        AssemblyRequest::new(KernelKind::SingleLayer, n, n),
        AssemblyRequest::new(KernelKind::DoubleLayer, n, d),
        AssemblyRequest::new(KernelKind::AdjointDoubleLayer, d, n),
        AssemblyRequest::new(KernelKind::Hypersingular, d, d),
    ];
    let mut m = assemble_many(Kernel::Helmholtz { kappa }, spaces.mesh(), &reqs, quad)?.into_iter();
    let mut take = || -> DMatrix<Complex64> { m.next().map(|o: OperatorMatrix| o.matrix).unwrap() };
    Ok(CalderonBlocks {
        v: take(),
        k: take(),
        kp: take(),
        w: take(),
    })
}

impl CalderonBlocks {
    /// `Â_{κ,μ} = [[-K, μV], [W/μ, K']]`.
    pub fn scaled_block(&self, mu: f64) -> DMatrix<Complex64> {
        block2(
            &(-&self.k),
            &(&self.v * Complex64::new(mu, 0.0)),
            &(&self.w / Complex64::new(mu, 0.0)),
            &self.kp,
        )
    }
}

pub fn build_system(
    spec: &ProblemSpec,
    mesh: &Arc<Mesh>,
    config: &DiscretizationConfig,
) -> Result<ProblemSystem> {
    spec.validate()?;
    let (spec, _) = spec.normalized();
    if mesh.dim() == 2 && spec.direction[2] != 0.0 {
        return Err(Error::InvalidInput(
            "2D problems need an in-plane incident direction".into(),
        ));
    }
    if config.neumann == Family::P0 && (spec.beta() != 0 || config.precondition) {
        return Err(Error::InvalidInput(
            "P0 Neumann traces are supported for the unpreconditioned sound-soft problem only"
                .into(),
        ));
    }
    let spaces = Spaces::new(mesh.clone(), config.neumann);
    let mass_d = mass_matrix(&spaces.dirichlet, &spaces.dirichlet)?;
    let mass_n = mass_matrix(&spaces.neumann, &spaces.neumann)?;
    let mass_nd = mass_matrix(&spaces.neumann, &spaces.dirichlet)?;
    let solver_d = MassSolver::new(&mass_d)?;
    let solver_n = MassSolver::new(&mass_n)?;
    let quad = &config.quad;
    let kernel = Kernel::Helmholtz { kappa: spec.kappa };
    let half = Complex64::new(0.5, 0.0);
    let (nf, df) = (config.neumann, Family::P1);
    let pre = config.precondition;
    let (z, c, b) = match spec.bc {
        BoundaryCondition::SoundSoft => {
            let mut reqs = vec![
                AssemblyRequest::new(KernelKind::SingleLayer, nf, nf),
                AssemblyRequest::new(KernelKind::DoubleLayer, nf, df),
            ];
            if pre {
                reqs.push(AssemblyRequest::new(KernelKind::Hypersingular, df, df));
            }
            let mut m = assemble_many(kernel, mesh, &reqs, quad)?;
            let c = if pre {
                Some(m.pop().unwrap().matrix * Complex64::new(4.0, 0.0))
            } else {
                None
            };
            let k = m.pop().unwrap().matrix;
            let v = m.pop().unwrap().matrix;
            let b = k - to_dense(&mass_nd) * half;
            (v, c, b)
        }
        BoundaryCondition::SoundHard | BoundaryCondition::Impedance { .. } => {
            let mut reqs = vec![
                AssemblyRequest::new(KernelKind::Hypersingular, df, df),
                AssemblyRequest::new(KernelKind::AdjointDoubleLayer, df, nf),
            ];
            if pre {
                reqs.push(AssemblyRequest::new(KernelKind::SingleLayer, nf, nf));
            }
            let mut m = assemble_many(kernel, mesh, &reqs, quad)?;
            let c = if pre {
                Some(m.pop().unwrap().matrix * Complex64::new(4.0, 0.0))
            } else {
                None
            };
            let kp = m.pop().unwrap().matrix;
            let w = m.pop().unwrap().matrix;
            let half_kp = to_dense(&mass_d) * half + &kp;
            let z = match spec.bc {
                BoundaryCondition::Impedance { eta } => &w - &half_kp * (I * eta),
                _ => w,
            };
            (z, c, -half_kp)
        }
        BoundaryCondition::Transmission {
            kappa_interior,
            mu_exterior,
            mu_interior,
        } => {
            let a0 = calderon_blocks(spec.kappa, &spaces, quad)?.scaled_block(mu_exterior);
            let a1 = calderon_blocks(kappa_interior, &spaces, quad)?.scaled_block(mu_interior);
            let zero_nn = DMatrix::zeros(spaces.neumann.dim(), spaces.neumann.dim());
            let zero_dd = DMatrix::zeros(spaces.dirichlet.dim(), spaces.dirichlet.dim());
            let mblock = block2(
                &to_dense(&mass_nd),
                &zero_nn,
                &zero_dd,
                &to_dense(&mass_nd.transpose()),
            );
            let z = &a0 + &a1;
            let b = &a1 - mblock * half;
            let c = if pre { Some(z.clone()) } else { None };
            (z, c, b)
        }
    };
    let mut sys = ProblemSystem {
        spec,
        spaces,
        config: *config,
        z,
        c,
        precond: None,
        b,
        mass_d,
        mass_n,
        mass_nd,
        solver_d,
        solver_n,
    };
    if let Some(c) = &sys.c {
        let left = sys.apply_mass_inverse_columns(c);
        let right = sys
            .apply_mass_inverse_columns(&left.transpose())
            .transpose();
        sys.precond = Some(right);
    }
    Ok(sys)
}

impl ProblemSystem {
    pub fn level(&self) -> usize {
        self.spaces.level()
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn solver_d(&self) -> &MassSolver {
        &self.solver_d
    }

    pub fn solver_n(&self) -> &MassSolver {
        &self.solver_n
    }

    /// Inverse of the (block) mass matrix of the unknown space applied to columns.
    pub fn apply_mass_inverse_columns(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        match self.spec.beta() {
            0 => self.solver_n.solve_columns(x),
            1 | 2 => self.solver_d.solve_columns(x),
            _ => {
                let nd = self.spaces.dirichlet.dim();
                let nn = self.spaces.neumann.dim();
                let top = self.solver_d.solve_columns(&x.rows(0, nd).into_owned());
                let bot = self.solver_n.solve_columns(&x.rows(nd, nn).into_owned());
                let mut out = DMatrix::zeros(nd + nn, x.ncols());
                out.rows_mut(0, nd).copy_from(&top);
                out.rows_mut(nd, nn).copy_from(&bot);
                out
            }
        }
    }

    /// Galerkin right-hand side of the first-moment equation.
    pub fn first_moment_rhs(&self) -> Vec<Complex64> {
        let (f0, f1) = incident_loads(&self.spec, &self.spaces);
        match self.spec.beta() {
            0 => f0,
            1 | 2 => f1,
            _ => {
                let mu0 = self.spec.densities().0;
                f0.into_iter()
                    .chain(f1.into_iter().map(|z| z / mu0))
                    .collect()
            }
        }
    }

    /// `P Z` as a dense matrix (identity preconditioner when none is built).
    pub fn preconditioned_matrix(&self) -> DMatrix<Complex64> {
        match &self.precond {
            Some(p) => p * &self.z,
            None => self.z.clone(),
        }
    }

    /// Solves `Z x = rhs` with left-preconditioned GMRES.
    pub fn solve(
        &self,
        rhs: &[Complex64],
        cfg: &GmresConfig,
    ) -> Result<(Vec<Complex64>, GmresReport)> {
        if rhs.len() != self.dim() {
            return Err(Error::Mismatch(
                "right-hand side does not match the system".into(),
            ));
        }
        let mv = |m: &DMatrix<Complex64>, v: &[Complex64]| -> Vec<Complex64> {
            (m * DVector::from_column_slice(v)).as_slice().to_vec()
        };
        let (x, rep) = gmres(
            |v| mv(&self.z, v),
            |v| match &self.precond {
                Some(p) => mv(p, v),
                None => v.to_vec(),
            },
            rhs,
            None,
            cfg,
        )?;
        if !rep.converged {
            return Err(Error::NotConverged(format!(
                "GMRES stopped after {} iterations at relative residual {:.3e}",
                rep.iterations,
                rep.relative_residual()
            )));
        }
        Ok((x, rep))
    }

    /// Cauchy data of the total exterior field from the unknown of the first-moment equation.
    pub fn cauchy_from_unknown(&self, x: &[Complex64]) -> CauchyData {
        let zero = Complex64::new(0.0, 0.0);
        let level = self.level();
        match self.spec.bc {
            BoundaryCondition::SoundSoft => CauchyData {
                lambda: vec![zero; self.spaces.dirichlet.dim()],
                sigma: x.to_vec(),
                level,
            },
            BoundaryCondition::SoundHard => CauchyData {
                lambda: x.to_vec(),
                sigma: vec![zero; self.spaces.neumann.dim()],
                level,
            },
            BoundaryCondition::Impedance { eta } => CauchyData {
                lambda: x.to_vec(),
                sigma: x.iter().map(|z| -I * eta * z).collect(),
                level,
            },
            BoundaryCondition::Transmission { mu_exterior, .. } => {
                let nd = self.spaces.dirichlet.dim();
                CauchyData {
                    lambda: x[..nd].to_vec(),
                    sigma: x[nd..].iter().map(|z| z * mu_exterior).collect(),
                    level,
                }
            }
        }
    }

    /// Unknown vector corresponding to given exterior Cauchy data (inverse of `cauchy_from_unknown`).
    pub fn unknown_from_cauchy(&self, xi: &CauchyData) -> Vec<Complex64> {
        match self.spec.bc {
            BoundaryCondition::SoundSoft => xi.sigma.clone(),
            BoundaryCondition::SoundHard | BoundaryCondition::Impedance { .. } => xi.lambda.clone(),
            BoundaryCondition::Transmission { mu_exterior, .. } => xi
                .lambda
                .iter()
                .copied()
                .chain(xi.sigma.iter().map(|z| z / mu_exterior))
                .collect(),
        }
    }

    /// `B g` for shape-derivative data given by trace coefficients.
    pub fn apply_b(&self, g: &[Complex64]) -> Result<Vec<Complex64>> {
        if g.len() != self.b.ncols() {
            return Err(Error::Mismatch(
                "shape-derivative data does not match B".into(),
            ));
        }
        Ok((&self.b * DVector::from_column_slice(g))
            .as_slice()
            .to_vec())
    }
}

/// Solves the first-moment equation and returns the exterior Cauchy data.
pub fn solve_first_moment(
    system: &ProblemSystem,
    cfg: &GmresConfig,
) -> Result<(CauchyData, GmresReport)> {
    let rhs = system.first_moment_rhs();
    let (x, rep) = system.solve(&rhs, cfg)?;
    Ok((system.cauchy_from_unknown(&x), rep))
}

/// `‖P²x − Px‖ / ‖x‖` in the mass norm for the exterior projector `P = ½ − M⁻¹A`.
pub fn calderon_projector_residual(
    kappa: f64,
    spaces: &Spaces,
    quad: &QuadratureConfig,
    xi: &CauchyData,
) -> Result<f64> {
    if spaces.neumann.family() != Family::P1 {
        return Err(Error::InvalidInput(
            "projector residual needs P1 Neumann traces".into(),
        ));
    }
    let blocks = calderon_blocks(kappa, spaces, quad)?;
    let a = blocks.scaled_block(1.0);
    let md = mass_matrix(&spaces.dirichlet, &spaces.dirichlet)?;
    let solver = MassSolver::new(&md)?;
    let nd = spaces.dirichlet.dim();
    let x: Vec<Complex64> = xi.lambda.iter().chain(&xi.sigma).copied().collect();
    let apply_p = |v: &[Complex64]| -> Vec<Complex64> {
        let av = (&a * DVector::from_column_slice(v)).as_slice().to_vec();
        let top = solver.solve(&av[..nd]);
        let bot = solver.solve(&av[nd..]);
        v.iter()
            .zip(top.iter().chain(&bot))
            .map(|(x, y)| 0.5 * x - y)
            .collect()
    };
    let mnorm = |v: &[Complex64]| -> f64 {
        let t = md.mul_vec(&v[..nd]);
        let b = md.mul_vec(&v[nd..]);
        let s: Complex64 = v[..nd]
            .iter()
            .zip(&t)
            .chain(v[nd..].iter().zip(&b))
            .map(|(u, w)| u.conj() * w)
            .sum();
        s.re.max(0.0).sqrt()
    };
    let px = apply_p(&x);
    let ppx = apply_p(&px);
    let diff: Vec<Complex64> = ppx.iter().zip(&px).map(|(a, b)| a - b).collect();
    Ok(mnorm(&diff) / mnorm(&x))
}
