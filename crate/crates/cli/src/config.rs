//! Experiment configuration read from TOML.

use fosb::error::{Error, Result};
use fosb::geometry::{AnalyticSurface, Point, SurfaceSpec};
use fosb::krylov::GmresConfig;
use fosb::scattering::{DiscretizationConfig, ProblemSpec};
use fosb::shape_uq::VelocityFieldSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Converge,
    Foa,
    Ct,
    Mc,
    Diagnose,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Converge => "converge",
            Command::Foa => "foa",
            Command::Ct => "ct",
            Command::Mc => "mc",
            Command::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Levels {
    #[serde(default)]
    pub min: usize,
    pub max: usize,
    /// Reference level for error norms; defaults to `max + 2` for `converge`.
    #[serde(default)]
    pub reference: Option<usize>,
}

impl Default for Levels {
    fn default() -> Self {
        Levels {
            min: 0,
            max: 3,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoaSection {
    pub t: Vec<f64>,
    pub directions: usize,
    /// Optional wavenumber sweep at `t[0]`.
    pub kappas: Vec<f64>,
}

impl Default for FoaSection {
    fn default() -> Self {
        FoaSection {
            t: vec![0.025, 0.05, 0.1, 0.2],
            directions: 64,
            kappas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtSection {
    pub symmetric: bool,
    pub conjugate: bool,
    pub subblock_tol: f64,
    pub full_cap: usize,
    pub reference_level: Option<usize>,
    pub compare_rank: bool,
    /// Perturbation amplitude used for the variance output.
    pub t: f64,
}

impl Default for CtSection {
    fn default() -> Self {
        CtSection {
            symmetric: true,
            conjugate: true,
            subblock_tol: 1e-8,
            full_cap: 4_000_000,
            reference_level: None,
            compare_rank: false,
            t: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub samples: usize,
    pub t: f64,
    pub unbiased: bool,
    pub directions: usize,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            samples: 200,
            t: 0.075,
            unbiased: false,
            directions: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub spectrum_cap: usize,
    pub cluster_radius: f64,
    /// Exterior points for the extinction check; defaults depend on the dimension.
    pub points: Vec<Point>,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            spectrum_cap: 2000,
            cluster_radius: 0.5,
            points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; must match the subcommand when given.
    #[serde(default)]
    pub command: Option<Command>,
    pub problem: ProblemSpec,
    pub geometry: SurfaceSpec,
    #[serde(default)]
    pub levels: Levels,
    #[serde(default)]
    pub solver: GmresConfig,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub field: Option<VelocityFieldSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub foa: FoaSection,
    #[serde(default)]
    pub ct: CtSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Checks every invariant the command relies on before any computation.
    pub fn validate(&self, command: Command) -> Result<()> {
        if let Some(c) = self.command {
            if c != command {
                return bad(format!(
                    "config is for `{}` but `{}` was requested",
                    c.name(),
                    command.name()
                ));
            }
        }
        self.problem.validate()?;
        self.geometry.shape.validate()?;
        self.solver.validate()?;
        if self.geometry.base_segments < 3 {
            return bad("base_segments must be at least 3");
        }
        if self.problem.direction[2] != 0.0 && self.geometry.shape.dim() == 2 {
            return bad("2D problems need an in-plane incident direction");
        }
        if self.levels.min > self.levels.max {
            return bad("levels.min exceeds levels.max");
        }
        if let Some(r) = self.levels.reference {
            if r < self.levels.max {
                return bad("levels.reference must be at least levels.max");
            }
        }
        if let Some(f) = &self.field {
            f.validate()?;
        }
        match command {
            Command::Converge => {
                if !matches!(
                    self.geometry.shape,
                    AnalyticSurface::Circle { .. } | AnalyticSurface::Sphere { .. }
                ) {
                    return bad("converge needs a circle or sphere (series oracle)");
                }
            }
            Command::Foa => {
                match &self.field {
                    Some(f) if !f.is_random() => {}
                    _ => return bad("foa needs a deterministic [field]"),
                }
                if self.foa.t.len() < 2 || self.foa.t.iter().any(|t| !(*t > 0.0)) {
                    return bad("foa.t needs at least two positive values");
                }
                if self.foa.directions == 0 {
                    return bad("foa.directions must be positive");
                }
                if self
                    .foa
                    .kappas
                    .iter()
                    .any(|k| !(*k > 0.0) || !k.is_finite())
                {
                    return bad("foa.kappas must be positive");
                }
            }
            Command::Ct | Command::Mc => {
                match &self.field {
                    Some(f) if f.is_random() => {}
                    _ => return bad("ct and mc need a random [field]"),
                }
                if !(self.ct.subblock_tol > 0.0 && self.ct.subblock_tol < 1.0) {
                    return bad("ct.subblock_tol must lie in (0, 1)");
                }
                if !self.ct.t.is_finite() {
                    return bad("ct.t must be finite");
                }
                if command == Command::Mc {
                    if self.mc.samples == 0 {
                        return bad("mc.samples must be positive");
                    }
                    if self.mc.unbiased && self.mc.samples < 2 {
                        return bad("the unbiased variance needs mc.samples ≥ 2");
                    }
                    if !(self.mc.t >= 0.0) || !self.mc.t.is_finite() {
                        return bad("mc.t must be finite and nonnegative");
                    }
                    if self.mc.directions == 0 {
                        return bad("mc.directions must be positive");
                    }
                }
            }
            Command::Diagnose => {
                if !(self.diagnose.cluster_radius > 0.0) {
                    return bad("diagnose.cluster_radius must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn extinction_points(&self) -> Vec<Point> {
        if !self.diagnose.points.is_empty() {
            return self.diagnose.points.clone();
        }
        if self.geometry.shape.dim() == 2 {
            vec![[4.0, 0.5, 0.0], [-3.0, -3.0, 0.0], [0.0, 5.0, 0.0]]
        } else {
            vec![[4.0, 0.5, 0.0], [-3.0, 0.0, -3.0], [0.0, 5.0, 1.0]]
        }
    }
}
