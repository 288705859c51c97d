//! Monte Carlo reference moments: each sample deforms the mesh by `x + t v(x, ω)`
//! and solves the nominal problem on the deformed boundary.

use crate::error::{Error, Result};
use crate::geometry::{deform, Mesh, Point};
use crate::krylov::{GmresConfig, GmresReport};
use crate::postproc::{evaluate_field, far_field, FarField};
use crate::scattering::{build_system, solve_first_moment, DiscretizationConfig, ProblemSpec};
use crate::shape_uq::{Distribution, VelocityFieldSpec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub t: f64,
    /// Divide the variance by `M − 1` instead of `M`.
    #[serde(default)]
    pub unbiased: bool,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidInput(
                "Monte Carlo needs at least one sample".into(),
            ));
        }
        if self.unbiased && self.samples < 2 {
            return Err(Error::InvalidInput(
                "the unbiased variance needs at least two samples".into(),
            ));
        }
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(Error::InvalidInput(
                "perturbation amplitude must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Mode coefficients `yᵢ` of sample `index`, drawn from stream `index` of a
/// ChaCha generator seeded with `seed`. Uniform draws lie in `±√(3 varᵢ)`.
pub fn sample_field(field: &VelocityFieldSpec, seed: u64, index: u64) -> Result<Vec<f64>> {
    let (modal, dist) = field.random_modes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    Ok(modal
        .modes
        .iter()
        .map(|m| {
            let sd = m.weight.max(0.0).sqrt();
            match dist {
                Distribution::Uniform => 3f64.sqrt() * sd * rng.random_range(-1.0..=1.0),
                Distribution::Gaussian => sd * rng.sample::<f64, _>(StandardNormal),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct McSample {
    pub index: usize,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub config: McConfig,
    pub far_mean: FarField,
    pub far_variance: Vec<f64>,
    pub points: Vec<Point>,
    pub field_mean: Vec<Complex64>,
    pub field_variance: Vec<f64>,
    pub samples: Vec<McSample>,
    #[serde(skip)]
    pub reports: Vec<GmresReport>,
}

struct SampleOutput {
    sample: McSample,
    far: FarField,
    field: Vec<Complex64>,
    report: GmresReport,
}

fn tag(index: usize, e: Error) -> Error {
    match e {
        Error::Degenerate(m) => Error::Degenerate(format!("sample {index}: {m}")),
        Error::NotConverged(m) => Error::NotConverged(format!("sample {index}: {m}")),
        Error::Resonance(m) => Error::Resonance(format!("sample {index}: {m}")),
        other => Error::InvalidInput(format!("sample {index}: {other}")),
    }
}

fn run_sample(
    spec: &ProblemSpec,
    mesh: &Mesh,
    field: &VelocityFieldSpec,
    cfg: &McConfig,
    index: usize,
    directions: &[Point],
    points: &[Point],
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<SampleOutput> {
    let start = Instant::now();
    let (modal, _) = field.random_modes()?;
    let y = sample_field(field, cfg.seed, index as u64)?;
    let deformed = Arc::new(deform(mesh, &|x| modal.evaluate(&y, x), cfg.t)?);
    let system = build_system(spec, &deformed, config)?;
    let (xi, report) = solve_first_moment(&system, gmres)?;
    let far = far_field(spec.kappa, &system.spaces, &xi, directions)?;
    let values = if points.is_empty() {
        Vec::new()
    } else {
        evaluate_field(spec, &system.spaces, &xi, points, &config.quad)?
    };
    Ok(SampleOutput {
        sample: McSample {
            index,
            coefficients: y,
            iterations: report.iterations,
            seconds: start.elapsed().as_secs_f64(),
        },
        far,
        field: values,
        report,
    })
}

fn moments(values: &[&[Complex64]], unbiased: bool) -> (Vec<Complex64>, Vec<f64>) {
    let m = values.len();
    let n = values.first().map_or(0, |v| v.len());
    let mut mean = vec![Complex64::new(0.0, 0.0); n];
    for v in values {
        for (a, b) in mean.iter_mut().zip(v.iter()) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut var = vec![0.0; n];
    for v in values {
        for ((s, b), a) in var.iter_mut().zip(v.iter()).zip(&mean) {
            *s += (b - a).norm_sqr();
        }
    }
    let denom = if unbiased { (m - 1) as f64 } else { m as f64 };
    var.iter_mut().for_each(|s| *s /= denom);
    (mean, var)
}

/// Sample mean and variance `(1/M) Σ |U(ω_m) − U^MC|²` of the far field (and of
/// the field at `points`) over deformations of `mesh`. Samples run in parallel
/// and are reduced in index order.
#[allow(clippy::too_many_arguments)]
pub fn mc_estimate(
    spec: &ProblemSpec,
    mesh: &Mesh,
    field: &VelocityFieldSpec,
    cfg: &McConfig,
    directions: &[Point],
    points: &[Point],
    config: &DiscretizationConfig,
    gmres: &GmresConfig,
) -> Result<McEstimate> {
    cfg.validate()?;
    field.validate()?;
    field.random_modes()?;
    let outputs: Vec<SampleOutput> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            run_sample(spec, mesh, field, cfg, i, directions, points, config, gmres)
                .map_err(|e| tag(i, e))
        })
        .collect::<Result<_>>()?;
    let far: Vec<&[Complex64]> = outputs.iter().map(|o| o.far.values.as_slice()).collect();
    let (far_values, far_variance) = moments(&far, cfg.unbiased);
    let vals: Vec<&[Complex64]> = outputs.iter().map(|o| o.field.as_slice()).collect();
    let (field_mean, field_variance) = moments(&vals, cfg.unbiased);
    let first = &outputs[0].far;
    let far_mean = FarField {
        directions: first.directions.clone(),
        values: far_values,
        kappa: first.kappa,
        dim: first.dim,
    };
    let (samples, reports) = outputs.into_iter().map(|o| (o.sample, o.report)).unzip();
    Ok(McEstimate {
        config: cfg.clone(),
        far_mean,
        far_variance,
        points: points.to_vec(),
        field_mean,
        field_variance,
        samples,
        reports,
    })
}

/// CSV with columns `index, iterations, seconds, y0, y1, …`.
pub fn write_samples_csv(samples: &[McSample], w: impl std::io::Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    let r = samples.first().map_or(0, |s| s.coefficients.len());
    let mut header = vec!["index".to_string(), "iterations".into(), "seconds".into()];
    header.extend((0..r).map(|i| format!("y{i}")));
    wr.write_record(&header).map_err(fmt)?;
    for s in samples {
        let mut row = vec![
            s.index.to_string(),
            s.iterations.to_string(),
            format!("{:.6}", s.seconds),
        ];
        row.extend(s.coefficients.iter().map(|c| format!("{c:.17e}")));
        wr.write_record(&row).map_err(fmt)?;
    }
    wr.flush()?;
    Ok(())
}
