//! Second moments of the shape derivative: covariance data, combination
//! technique plans, Kronecker-structured sub-block solves and recombination.

use crate::error::{Error, Result};
use crate::krylov::{gmres, GmresConfig, GmresReport};
use crate::scattering::{CauchyData, ProblemSystem, Spaces};
use crate::shape_uq::{mode_normal_velocities, sd_rhs, ModalField};
use crate::spaces::{prolongation_matrix, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use std::collections::BTreeMap;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlanEntry {
    pub l1: usize,
    pub l2: usize,
    pub coeff: i64,
    /// 2 for off-diagonal entries of a symmetric plan (the transpose is implied), else 1.
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CombinationPlan {
    pub k: usize,
    pub level: usize,
    pub min_level: usize,
    pub symmetric: bool,
    pub entries: Vec<PlanEntry>,
}

fn binomial(n: usize, r: usize) -> i64 {
    (0..r).fold(1i64, |acc, i| acc * (n - i) as i64 / (i + 1) as i64)
}

/// All multi-indices `l ∈ [L₀, L]^k` with `|l|₁ = L + (k−1)L₀ − q` and their signed
/// binomial coefficients `(−1)^q C(k−1, q)`, in lexicographic order.
pub fn combination_indices(
    k: usize,
    level: usize,
    min_level: usize,
) -> Result<Vec<(Vec<usize>, i64)>> {
    if k == 0 {
        return Err(Error::InvalidInput("tensor order must be positive".into()));
    }
    if min_level > level {
        return Err(Error::InvalidInput(format!(
            "minimal level {min_level} exceeds finest level {level}"
        )));
    }
    let top = level + (k - 1) * min_level;
    let mut out = Vec::new();
    let mut idx = vec![min_level; k];
    loop {
        let s: usize = idx.iter().sum();
        if s <= top && s + k > top {
            let q = top - s;
            let sign = if q % 2 == 0 { 1 } else { -1 };
            out.push((idx.clone(), sign * binomial(k - 1, q)));
        }
        let mut j = k;
        loop {
            if j == 0 {
                return Ok(out);
            }
            j -= 1;
            if idx[j] < level {
                idx[j] += 1;
                for r in idx.iter_mut().skip(j + 1) {
                    *r = min_level;
                }
                break;
            }
        }
    }
}

/// Plan for `k = 2`; the symmetric plan keeps `l₂ ≤ l₁`.
pub fn combination_plan(
    level: usize,
    min_level: usize,
    symmetric: bool,
) -> Result<CombinationPlan> {
    let entries = combination_indices(2, level, min_level)?
        .into_iter()
        .filter(|(l, _)| !symmetric || l[1] <= l[0])
        .map(|(l, c)| PlanEntry {
            l1: l[0],
            l2: l[1],
            coeff: c,
            multiplicity: if symmetric && l[0] != l[1] { 2 } else { 1 },
        })
        .collect();
    Ok(CombinationPlan {
        k: 2,
        level,
        min_level,
        symmetric,
        entries,
    })
}

impl CombinationPlan {
    /// `N_{l₁} N_{l₂}` per entry for the given per-level dimensions.
    pub fn block_dofs(&self, level_dofs: &[usize]) -> Result<Vec<usize>> {
        self.entries
            .iter()
            .map(|e| {
                let a = level_dofs
                    .get(e.l1)
                    .ok_or_else(|| Error::InvalidInput("missing level dimension".into()))?;
                let b = level_dofs
                    .get(e.l2)
                    .ok_or_else(|| Error::InvalidInput("missing level dimension".into()))?;
                Ok(a * b)
            })
            .collect()
    }

    /// Sum of the sub-block sizes that have to be solved.
    pub fn total_dofs(&self, level_dofs: &[usize]) -> Result<usize> {
        Ok(self.block_dofs(level_dofs)?.iter().sum())
    }
}

/// Coefficient matrix of a second moment over level `l₁` ⊗ level `l₂` unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    pub matrix: DMatrix<Complex64>,
    pub l1: usize,
    pub l2: usize,
}

impl MomentMatrix {
    /// The block `(l₂, l₁)`: transpose, or adjoint for conjugated moments.
    pub fn swapped(&self, conjugate: bool) -> MomentMatrix {
        MomentMatrix {
            matrix: if conjugate {
                self.matrix.adjoint()
            } else {
                self.matrix.transpose()
            },
            l1: self.l2,
            l2: self.l1,
        }
    }
}

/// One term `weight · g₁ ⊗ g₂` of a factored covariance right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTerm {
    pub weight: f64,
    pub g1: Vec<Complex64>,
    pub g2: Vec<Complex64>,
}

/// Shape-derivative data of each random mode on one level.
pub fn mode_data(
    system: &ProblemSystem,
    xi: &CauchyData,
    field: &ModalField,
) -> Result<Vec<Vec<Complex64>>> {
    mode_normal_velocities(system.spaces.mesh(), field)
        .iter()
        .map(|vn| Ok(sd_rhs(system, xi, vn)?.coeffs))
        .collect()
}

/// Factored `𝓜²[g] = Σᵢ varᵢ gᵢ ⊗ gᵢ` on the level pair, zero variances dropped.
pub fn covariance_rhs(
    first: (&ProblemSystem, &CauchyData),
    second: (&ProblemSystem, &CauchyData),
    field: &ModalField,
) -> Result<Vec<RankTerm>> {
    let a = mode_data(first.0, first.1, field)?;
    let b = mode_data(second.0, second.1, field)?;
    Ok(field
        .modes
        .iter()
        .zip(a.into_iter().zip(b))
        .filter(|(m, _)| m.weight != 0.0)
        .map(|(m, (g1, g2))| RankTerm {
            weight: m.weight,
            g1,
            g2,
        })
        .collect())
}

/// `Σ w (B₁g₁)(B₂g₂)ᵀ`, with the second factor conjugated when requested.
fn rhs_matrix(
    s1: &ProblemSystem,
    s2: &ProblemSystem,
    terms: &[RankTerm],
    conjugate: bool,
) -> Result<DMatrix<Complex64>> {
    let mut r = DMatrix::zeros(s1.dim(), s2.dim());
    for t in terms {
        let a = DVector::from_vec(s1.apply_b(&t.g1)?);
        let mut b = DVector::from_vec(s2.apply_b(&t.g2)?);
        if conjugate {
            b = b.conjugate();
        }
        r += a * b.transpose() * Complex64::new(t.weight, 0.0);
    }
    Ok(r)
}

fn second_side(m: &DMatrix<Complex64>, conjugate: bool) -> DMatrix<Complex64> {
    if conjugate {
        m.conjugate()
    } else {
        m.clone()
    }
}

/// Solves `Z₁ Σ Z₂ᵀ = B₁ G B₂ᵀ` by GMRES on `vec Σ` with the operator applied as
/// matrix products and the preconditioner `Σ ↦ P₁ Σ P₂ᵀ`. With `conjugate`, all
/// second-side factors are conjugated (moment `α_{1;1}`).
pub fn solve_subblock(
    s1: &ProblemSystem,
    s2: &ProblemSystem,
    terms: &[RankTerm],
    conjugate: bool,
    cfg: &GmresConfig,
) -> Result<(MomentMatrix, GmresReport)> {
    if s1.spec != s2.spec {
        return Err(Error::Mismatch(
            "sub-block systems must share the problem".into(),
        ));
    }
    let (n1, n2) = (s1.dim(), s2.dim());
    let rhs = rhs_matrix(s1, s2, terms, conjugate)?;
    let z1 = &s1.z;
    let z2t = second_side(&s2.z, conjugate).transpose();
    let p1 = s1.precond.clone();
    let p2t = s2
        .precond
        .as_ref()
        .map(|p| second_side(p, conjugate).transpose());
    let as_mat = |v: &[Complex64]| DMatrix::from_column_slice(n1, n2, v);
    let (x, rep) = gmres(
        |v| (z1 * as_mat(v) * &z2t).as_slice().to_vec(),
        |v| {
            let m = as_mat(v);
            let m = match &p1 {
                Some(p) => p * m,
                None => m,
            };
            let m = match &p2t {
                Some(p) => m * p,
                None => m,
            };
            m.as_slice().to_vec()
        },
        rhs.as_slice(),
        None,
        cfg,
    )?;
    if !rep.converged {
        return Err(Error::NotConverged(format!(
            "sub-block ({}, {}) stopped after {} iterations at relative residual {:.3e}",
            s1.level(),
            s2.level(),
            rep.iterations,
            rep.relative_residual()
        )));
    }
    Ok((
        MomentMatrix {
            matrix: as_mat(&x),
            l1: s1.level(),
            l2: s2.level(),
        },
        rep,
    ))
}

/// `Σ = Σᵢ wᵢ (Z₁⁻¹B₁g₁ᵢ)(Z₂⁻¹B₂g₂ᵢ)ᵀ` from first-moment solves.
pub fn rank_solve(
    s1: &ProblemSystem,
    s2: &ProblemSystem,
    terms: &[RankTerm],
    conjugate: bool,
    cfg: &GmresConfig,
) -> Result<(MomentMatrix, Vec<GmresReport>)> {
    let mut out = DMatrix::zeros(s1.dim(), s2.dim());
    let mut reports = Vec::new();
    for t in terms {
        let (u1, r1) = s1.solve(&s1.apply_b(&t.g1)?, cfg)?;
        let (u2, r2) = s2.solve(&s2.apply_b(&t.g2)?, cfg)?;
        let a = DVector::from_vec(u1);
        let mut b = DVector::from_vec(u2);
        if conjugate {
            b = b.conjugate();
        }
        out += a * b.transpose() * Complex64::new(t.weight, 0.0);
        reports.push(r1);
        reports.push(r2);
    }
    Ok((
        MomentMatrix {
            matrix: out,
            l1: s1.level(),
            l2: s2.level(),
        },
        reports,
    ))
}

/// Direct dense solve `Σ = Z⁻¹ R Z⁻ᵀ` on one level, refused above `cap` entries of `Σ`.
pub fn full_tensor_solve(
    system: &ProblemSystem,
    terms: &[RankTerm],
    conjugate: bool,
    cap: usize,
) -> Result<MomentMatrix> {
    let n = system.dim();
    if n * n > cap {
        return Err(Error::SizeLimit(format!(
            "full tensor solve needs {} entries, cap is {cap}",
            n * n
        )));
    }
    let rhs = rhs_matrix(system, system, terms, conjugate)?;
    let lu = system.z.clone().lu();
    let left = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular system matrix".into()))?;
    let z2 = second_side(&system.z, conjugate);
    // Σ Z₂ᵀ = left  ⇔  Z₂ Σᵀ = leftᵀ
    let sigma_t = z2
        .lu()
        .solve(&left.transpose())
        .ok_or_else(|| Error::Degenerate("singular system matrix".into()))?;
    Ok(MomentMatrix {
        matrix: sigma_t.transpose(),
        l1: system.level(),
        l2: system.level(),
    })
}

/// Embedding of the unknown space of `coarse` into that of `fine`.
pub fn unknown_prolongation(
    coarse: &ProblemSystem,
    fine: &ProblemSystem,
) -> Result<DMatrix<Complex64>> {
    unknown_space_prolongation(coarse.spec.beta(), &coarse.spaces, &fine.spaces)
}

/// Embedding of the unknown space of problem `beta` between nested trace spaces.
pub fn unknown_space_prolongation(
    beta: usize,
    coarse: &Spaces,
    fine: &Spaces,
) -> Result<DMatrix<Complex64>> {
    let dense = |m: SparseMatrix| m.to_dense_complex();
    Ok(match beta {
        0 => dense(prolongation_matrix(&coarse.neumann, &fine.neumann)?),
        1 | 2 => dense(prolongation_matrix(&coarse.dirichlet, &fine.dirichlet)?),
        _ => {
            let a = dense(prolongation_matrix(&coarse.dirichlet, &fine.dirichlet)?);
            let b = dense(prolongation_matrix(&coarse.neumann, &fine.neumann)?);
            let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
            out.view_mut((0, 0), a.shape()).copy_from(&a);
            out.view_mut((a.nrows(), a.ncols()), b.shape())
                .copy_from(&b);
            out
        }
    })
}

/// `Σ̂_L = Σ c P_{l₁} Σ_{l₁,l₂} P_{l₂}ᵀ`; `prolongations[l]` maps level `l` to level `L`.
/// Off-diagonal entries of a symmetric plan add their swapped block.
pub fn combine(
    plan: &CombinationPlan,
    blocks: &BTreeMap<(usize, usize), MomentMatrix>,
    prolongations: &[DMatrix<Complex64>],
    conjugate: bool,
) -> Result<DMatrix<Complex64>> {
    let n = prolongations
        .get(plan.level)
        .ok_or_else(|| Error::InvalidInput("missing prolongation for the finest level".into()))?
        .nrows();
    let mut out = DMatrix::from_element(n, n, ZERO);
    let lift = |m: &MomentMatrix| -> Result<DMatrix<Complex64>> {
        let p1 = prolongations
            .get(m.l1)
            .ok_or_else(|| Error::InvalidInput("missing prolongation".into()))?;
        let p2 = prolongations
            .get(m.l2)
            .ok_or_else(|| Error::InvalidInput("missing prolongation".into()))?;
        if p1.ncols() != m.matrix.nrows() || p2.ncols() != m.matrix.ncols() {
            return Err(Error::Mismatch(format!(
                "block ({}, {}) has inconsistent dimensions",
                m.l1, m.l2
            )));
        }
        Ok(p1 * &m.matrix * second_side(p2, conjugate).transpose())
    };
    for e in &plan.entries {
        let b = blocks
            .get(&(e.l1, e.l2))
            .ok_or_else(|| Error::InvalidInput(format!("missing block ({}, {})", e.l1, e.l2)))?;
        let c = Complex64::new(e.coeff as f64, 0.0);
        out += lift(b)? * c;
        if plan.symmetric && e.l1 != e.l2 {
            out += lift(&b.swapped(conjugate))? * c;
        }
    }
    Ok(out)
}

/// CSV with columns `l1, l2, coeff, dofs, iterations, solve_seconds`.
pub fn write_plan_csv(
    rows: &[(PlanEntry, usize, usize, f64)],
    w: impl std::io::Write,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["l1", "l2", "coeff", "dofs", "iterations", "solve_seconds"])
        .map_err(fmt)?;
    for (e, dofs, it, secs) in rows {
        wr.write_record([
            e.l1.to_string(),
            e.l2.to_string(),
            e.coeff.to_string(),
            dofs.to_string(),
            it.to_string(),
            format!("{secs:.6}"),
        ])
        .map_err(fmt)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_hierarchy, AnalyticSurface, SurfaceSpec};
    use crate::scattering::{
        build_system, solve_first_moment, BoundaryCondition, DiscretizationConfig, ProblemSpec,
    };
    use crate::shape_uq::{Direction, Mode, ModeShape};

    fn field(weights: &[f64]) -> ModalField {
        ModalField {
            modes: weights
                .iter()
                .enumerate()
                .map(|(i, w)| Mode {
                    shape: ModeShape::Cosine { n: i as u32 + 1 },
                    weight: *w,
                })
                .collect(),
            direction: Direction::Radial,
            face: None,
        }
    }

    fn systems(levels: usize) -> Vec<(ProblemSystem, CauchyData)> {
        let spec = ProblemSpec::new(1.0, BoundaryCondition::SoundSoft, [1.0, 0.0, 0.0]);
        let surf = SurfaceSpec {
            shape: AnalyticSurface::Circle {
                radius: 1.0,
                center: [0.0; 2],
            },
            base_segments: 12,
        };
        build_hierarchy(&surf, levels)
            .unwrap()
            .iter()
            .map(|m| {
                let s = build_system(&spec, m, &DiscretizationConfig::default()).unwrap();
                let (xi, _) = solve_first_moment(&s, &GmresConfig::with_tol(1e-10)).unwrap();
                (s, xi)
            })
            .collect()
    }

    #[test]
    fn small_plans() {
        let p = combination_plan(0, 0, false).unwrap();
        assert_eq!(
            p.entries,
            vec![PlanEntry {
                l1: 0,
                l2: 0,
                coeff: 1,
                multiplicity: 1
            }]
        );
        let p = combination_plan(1, 0, false).unwrap();
        let e: Vec<(usize, usize, i64)> = p.entries.iter().map(|e| (e.l1, e.l2, e.coeff)).collect();
        assert_eq!(e, vec![(0, 0, -1), (0, 1, 1), (1, 0, 1)]);
        assert!(combination_plan(1, 2, false).is_err());
    }

    #[test]
    fn reference_dof_table() {
        let n = [52, 100, 196, 388, 772, 1540, 3076, 6148];
        let p = combination_plan(7, 0, false).unwrap();
        let d = p.block_dofs(&n).unwrap();
        let get = |a: usize, b: usize| {
            d[p.entries
                .iter()
                .position(|e| e.l1 == a && e.l2 == b)
                .unwrap()]
        };
        assert_eq!(get(0, 7), 319_696);
        assert_eq!(get(1, 6), 307_600);
        assert_eq!(get(0, 6), 159_952);
        let s = combination_plan(7, 0, true).unwrap();
        let off = |q: &CombinationPlan| q.entries.iter().filter(|e| e.l1 != e.l2).count();
        assert_eq!(off(&p), 2 * off(&s));
    }

    #[test]
    fn plan_counts_and_general_k() {
        for l in 0..7 {
            for l0 in 0..=l {
                let c = combination_plan(l, l0, false).unwrap();
                assert_eq!(c.entries.len(), 2 * (l - l0) + 1);
                let s = combination_plan(l, l0, true).unwrap();
                assert_eq!(s.entries.len(), (l - l0 + 2) / 2 + (l - l0 + 1) / 2);
                let w: usize = s.entries.iter().map(|e| e.multiplicity).sum();
                assert_eq!(w, c.entries.len());
            }
        }
        // k = 3 coefficients sum to one (the combination reproduces constants)
        let idx = combination_indices(3, 4, 1).unwrap();
        assert_eq!(idx.iter().map(|(_, c)| c).sum::<i64>(), 1);
    }

    #[test]
    fn covariance_terms_and_densification() {
        let s = systems(0);
        let (sys, xi) = &s[0];
        let f = field(&[1.0 / 3.0, 0.0, 0.2]);
        let terms = covariance_rhs((sys, xi), (sys, xi), &f).unwrap();
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[0].weight, 1.0 / 3.0);
        assert!(covariance_rhs((sys, xi), (sys, xi), &field(&[0.0]))
            .unwrap()
            .is_empty());
        let dense = rhs_matrix(sys, sys, &terms, false).unwrap();
        let mut expect = DMatrix::zeros(sys.dim(), sys.dim());
        for t in &terms {
            let a = DVector::from_vec(sys.apply_b(&t.g1).unwrap());
            let b = DVector::from_vec(sys.apply_b(&t.g2).unwrap());
            for i in 0..sys.dim() {
                for j in 0..sys.dim() {
                    expect[(i, j)] += a[i] * b[j] * t.weight;
                }
            }
        }
        assert!((dense - expect).camax() < 1e-13);
    }

    #[test]
    fn oracles_agree() {
        let s = systems(1);
        let f = field(&[1.0 / 3.0, 0.25]);
        let cfg = GmresConfig::with_tol(1e-10);
        for conj in [false, true] {
            let t00 = covariance_rhs((&s[0].0, &s[0].1), (&s[0].0, &s[0].1), &f).unwrap();
            let (a, _) = solve_subblock(&s[0].0, &s[0].0, &t00, conj, &cfg).unwrap();
            let (b, _) = rank_solve(&s[0].0, &s[0].0, &t00, conj, &cfg).unwrap();
            let c = full_tensor_solve(&s[0].0, &t00, conj, 1 << 20).unwrap();
            let scale = b.matrix.camax();
            assert!((&a.matrix - &b.matrix).camax() < 1e-8 * scale);
            assert!((&c.matrix - &b.matrix).camax() < 1e-8 * scale);
            let sym = if conj {
                c.matrix.adjoint()
            } else {
                c.matrix.transpose()
            };
            assert!((&c.matrix - sym).camax() < 1e-8 * scale);
            let t01 = covariance_rhs((&s[0].0, &s[0].1), (&s[1].0, &s[1].1), &f).unwrap();
            let t10 = covariance_rhs((&s[1].0, &s[1].1), (&s[0].0, &s[0].1), &f).unwrap();
            let (x, _) = solve_subblock(&s[0].0, &s[1].0, &t01, conj, &cfg).unwrap();
            let (y, _) = solve_subblock(&s[1].0, &s[0].0, &t10, conj, &cfg).unwrap();
            assert!((&x.swapped(conj).matrix - &y.matrix).camax() < 1e-8 * scale);
        }
        assert!(full_tensor_solve(&s[1].0, &[], false, 10).is_err());
    }

    #[test]
    fn combination_of_coarse_solution_is_exact() {
        // every block is the prolongation of one symmetric coarse Σ, so the signed
        // sum of the L = 1 plan returns it unchanged
        let s = systems(1);
        let n0 = s[0].0.dim();
        let p = [
            unknown_prolongation(&s[0].0, &s[1].0).unwrap(),
            DMatrix::identity(s[1].0.dim(), s[1].0.dim()),
        ];
        let coarse = DMatrix::from_fn(n0, n0, |i, j| {
            Complex64::new((i + j) as f64, (i * j) as f64)
        });
        let lift = |l: usize| {
            if l == 0 {
                DMatrix::identity(n0, n0)
            } else {
                p[0].clone()
            }
        };
        let mut blocks = BTreeMap::new();
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            blocks.insert(
                (a, b),
                MomentMatrix {
                    matrix: lift(a) * &coarse * lift(b).transpose(),
                    l1: a,
                    l2: b,
                },
            );
        }
        let expect = &p[0] * &coarse * p[0].transpose();
        for sym in [false, true] {
            let plan = combination_plan(1, 0, sym).unwrap();
            let out = combine(&plan, &blocks, &p, false).unwrap();
            assert!((out - &expect).camax() < 1e-12);
        }
    }
}
