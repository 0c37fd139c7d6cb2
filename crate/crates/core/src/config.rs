//! TOML experiment configuration: parse, validate, build, fingerprint.
//!
//! A config file names a problem, a mesh, the fine-cell rule, a filter,
//! and the time-stepping parameters; [`Config::setup`] turns it into a
//! ready [`SchemeSetup`].  The fingerprint — an FNV-1a hash of the
//! canonically re-serialized document — tags every CSV row so results can
//! be traced back to the exact configuration that produced them.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dgspace::DgSpace;
use crate::filters::{CgSettings, FilterSpec};
use crate::integrators::{CflParams, IntegrateError, SchemeSetup, SourceQuadrature};
use crate::mesh::{classify, graded_boundaries, FineRule, Mesh, MeshError, Region};
use crate::operators::{FriedrichsPair, OperatorError};
use crate::problems::{self, ProblemCase};

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(String),
    Invalid(String),
    Mesh(MeshError),
    Operator(OperatorError),
    Integrate(IntegrateError),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "io: {e}"),
            ConfigError::Parse(msg) => write!(f, "parse: {msg}"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
            ConfigError::Mesh(e) => write!(f, "mesh: {e}"),
            ConfigError::Operator(e) => write!(f, "operators: {e}"),
            ConfigError::Integrate(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<MeshError> for ConfigError {
    fn from(e: MeshError) -> ConfigError {
        ConfigError::Mesh(e)
    }
}

impl From<OperatorError> for ConfigError {
    fn from(e: OperatorError) -> ConfigError {
        ConfigError::Operator(e)
    }
}

impl From<IntegrateError> for ConfigError {
    fn from(e: IntegrateError) -> ConfigError {
        ConfigError::Integrate(e)
    }
}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> ConfigError {
        ConfigError::Io(e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    pub space: SpaceSection,
    pub mesh: MeshSection,
    #[serde(default)]
    pub fine: FineSection,
    #[serde(default)]
    pub filter: FilterSection,
    pub time: TimeSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `wave-standing` (1d) or `te-cavity` (2d).
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    /// Polynomial degree per axis.
    pub degree: usize,
}

/// Mesh description.  One of `n`, `segments`, or `boundaries` fixes the
/// cells per axis; `refine` optionally splits base cells whose centers fall
/// in a box into `2^levels` pieces per axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub dim: usize,
    /// `[a, b]` in 1d, `[ax, bx, ay, by]` in 2d.
    pub domain: Vec<f64>,
    /// Uniform cell count per axis (one entry per dimension).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    /// Runs of `[count, width]`, 1d only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<(usize, f64)>>,
    /// Explicit cell boundaries, 1d only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSection {
    /// Box corners, one entry per dimension.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Each base cell in the box splits into `2^levels` per axis.
    pub levels: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FineSection {
    /// `none` (default), `diameter`, `min-side`, `cells`, `ball`, `rect`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// `leapfrog`, `crank-nicolson`, or `lfc`.
    pub variant: String,
    #[serde(default = "default_p")]
    pub p: u32,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_p() -> u32 {
    4
}

fn default_eta() -> f64 {
    1.0
}

impl Default for FilterSection {
    fn default() -> FilterSection {
        FilterSection { variant: "leapfrog".into(), p: default_p(), eta: default_eta() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    /// Explicit step sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    /// Geometric or linear step-size grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_theta_c")]
    pub theta_c: f64,
    /// `endpoint-average` (default) or `midpoint`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_quad: Option<String>,
    #[serde(default)]
    pub override_cfl: bool,
}

fn default_theta() -> f64 {
    0.95
}

fn default_theta_c() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub from: f64,
    pub to: f64,
    pub points: usize,
    /// `log` (default) or `linear`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Measure the error every this many steps (0: final time only).
    #[serde(default)]
    pub error_every: usize,
    /// Worker threads for step-size sweeps (0: one per available core).
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default = "default_cg_max_iters")]
    pub cg_max_iters: usize,
}

fn default_cg_tol() -> f64 {
    1e-10
}

fn default_cg_max_iters() -> usize {
    500
}

impl Default for RunSection {
    fn default() -> RunSection {
        RunSection {
            error_every: 0,
            threads: 0,
            cg_tol: default_cg_tol(),
            cg_max_iters: default_cg_max_iters(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    pub fn problem_case(&self) -> Result<ProblemCase, ConfigError> {
        match self.problem.kind.as_str() {
            "wave-standing" => Ok(problems::wave_standing()),
            "te-cavity" => Ok(problems::te_cavity()),
            other => Err(ConfigError::Invalid(format!(
                "unknown problem kind '{other}' (expected wave-standing or te-cavity)"
            ))),
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh, ConfigError> {
        let m = &self.mesh;
        let axes_given =
            m.n.is_some() as u8 + m.segments.is_some() as u8 + m.boundaries.is_some() as u8;
        if axes_given != 1 {
            return Err(ConfigError::Invalid(
                "mesh needs exactly one of n, segments, boundaries".into(),
            ));
        }
        match m.dim {
            1 => {
                if m.domain.len() != 2 {
                    return Err(ConfigError::Invalid("1d domain must be [a, b]".into()));
                }
                let domain = (m.domain[0], m.domain[1]);
                if let Some(segments) = &m.segments {
                    if m.refine.is_some() {
                        return Err(ConfigError::Invalid(
                            "refine does not combine with segments; list the widths directly".into(),
                        ));
                    }
                    let mut widths = Vec::new();
                    for &(count, w) in segments {
                        widths.extend(std::iter::repeat(w).take(count));
                    }
                    return Ok(Mesh::interval(domain, &widths)?);
                }
                if let Some(bounds) = &m.boundaries {
                    if m.refine.is_some() {
                        return Err(ConfigError::Invalid(
                            "refine does not combine with explicit boundaries".into(),
                        ));
                    }
                    let widths: Vec<f64> = bounds.windows(2).map(|w| w[1] - w[0]).collect();
                    return Ok(Mesh::interval(domain, &widths)?);
                }
                let n = self.axis_count(0)?;
                let refine = self.axis_refine(0)?;
                let bounds = graded_boundaries(domain, n, refine);
                let widths: Vec<f64> = bounds.windows(2).map(|w| w[1] - w[0]).collect();
                Ok(Mesh::interval(domain, &widths)?)
            }
            2 => {
                if m.domain.len() != 4 {
                    return Err(ConfigError::Invalid("2d domain must be [ax, bx, ay, by]".into()));
                }
                if m.segments.is_some() || m.boundaries.is_some() {
                    return Err(ConfigError::Invalid(
                        "segments/boundaries are 1d only; 2d meshes use n (+ refine)".into(),
                    ));
                }
                let dx = (m.domain[0], m.domain[1]);
                let dy = (m.domain[2], m.domain[3]);
                let xb = graded_boundaries(dx, self.axis_count(0)?, self.axis_refine(0)?);
                let yb = graded_boundaries(dy, self.axis_count(1)?, self.axis_refine(1)?);
                Ok(Mesh::tensor((dx, dy), xb, yb)?)
            }
            d => Err(ConfigError::Invalid(format!("dim must be 1 or 2, got {d}"))),
        }
    }

    fn axis_count(&self, axis: usize) -> Result<usize, ConfigError> {
        let n = self.mesh.n.as_ref().ok_or_else(|| {
            ConfigError::Invalid("mesh.n is required for this mesh form".into())
        })?;
        if n.len() != self.mesh.dim {
            return Err(ConfigError::Invalid(format!(
                "mesh.n must have one entry per dimension ({} expected, {} given)",
                self.mesh.dim,
                n.len()
            )));
        }
        Ok(n[axis])
    }

    fn axis_refine(&self, axis: usize) -> Result<Option<(f64, f64, u32)>, ConfigError> {
        let Some(r) = &self.mesh.refine else { return Ok(None) };
        if r.lo.len() != self.mesh.dim || r.hi.len() != self.mesh.dim {
            return Err(ConfigError::Invalid(
                "refine.lo/hi must have one entry per dimension".into(),
            ));
        }
        Ok(Some((r.lo[axis], r.hi[axis], r.levels)))
    }

    pub fn fine_rule(&self) -> Result<FineRule, ConfigError> {
        let f = &self.fine;
        let need = |opt: bool, what: &str, rule: &str| {
            if opt {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("fine rule '{rule}' needs fine.{what}")))
            }
        };
        let dim = self.mesh.dim;
        let point = |v: &Option<Vec<f64>>, what: &str, rule: &str| -> Result<[f64; 2], ConfigError> {
            let v = v.as_ref().ok_or_else(|| {
                ConfigError::Invalid(format!("fine rule '{rule}' needs fine.{what}"))
            })?;
            if v.len() != dim {
                return Err(ConfigError::Invalid(format!(
                    "fine.{what} must have one entry per dimension"
                )));
            }
            Ok([v[0], if dim == 2 { v[1] } else { 0.0 }])
        };
        match f.rule.as_deref().unwrap_or("none") {
            "none" => Ok(FineRule::Cells(Vec::new())),
            "diameter" => {
                need(f.threshold.is_some(), "threshold", "diameter")?;
                Ok(FineRule::DiameterBelow(f.threshold.unwrap()))
            }
            "min-side" => {
                need(f.threshold.is_some(), "threshold", "min-side")?;
                Ok(FineRule::MinSideBelow(f.threshold.unwrap()))
            }
            "cells" => {
                need(f.cells.is_some(), "cells", "cells")?;
                Ok(FineRule::Cells(f.cells.clone().unwrap()))
            }
            "ball" => {
                need(f.radius.is_some(), "radius", "ball")?;
                Ok(FineRule::CenterIn(Region::Ball {
                    center: point(&f.center, "center", "ball")?,
                    radius: f.radius.unwrap(),
                }))
            }
            "rect" => Ok(FineRule::CenterIn(Region::Rect {
                lo: point(&f.lo, "lo", "rect")?,
                hi: point(&f.hi, "hi", "rect")?,
            })),
            other => Err(ConfigError::Invalid(format!(
                "unknown fine rule '{other}' (none, diameter, min-side, cells, ball, rect)"
            ))),
        }
    }

    pub fn filter_spec(&self) -> Result<FilterSpec, ConfigError> {
        match self.filter.variant.as_str() {
            "leapfrog" => Ok(FilterSpec::Leapfrog),
            "crank-nicolson" => Ok(FilterSpec::CrankNicolson),
            "lfc" => Ok(FilterSpec::Lfc { p: self.filter.p, eta: self.filter.eta }),
            other => Err(ConfigError::Invalid(format!(
                "unknown filter variant '{other}' (leapfrog, crank-nicolson, lfc)"
            ))),
        }
    }

    pub fn cfl_params(&self) -> CflParams {
        CflParams { theta: self.time.theta, theta_c: self.time.theta_c }
    }

    pub fn source_quad(&self) -> Result<SourceQuadrature, ConfigError> {
        match self.time.source_quad.as_deref().unwrap_or("endpoint-average") {
            "endpoint-average" => Ok(SourceQuadrature::EndpointAverage),
            "midpoint" => Ok(SourceQuadrature::Midpoint),
            other => Err(ConfigError::Invalid(format!(
                "unknown source quadrature '{other}' (endpoint-average, midpoint)"
            ))),
        }
    }

    pub fn cg_settings(&self) -> CgSettings {
        CgSettings { rel_tol: self.run.cg_tol, max_iters: self.run.cg_max_iters }
    }

    /// The step sizes of a sweep: explicit `taus` win, then the `sweep`
    /// grid; `admissible` is not consulted in either case.
    pub fn taus(&self) -> Result<Vec<f64>, ConfigError> {
        if let Some(taus) = &self.time.taus {
            if taus.is_empty() || taus.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
                return Err(ConfigError::Invalid("time.taus must be positive".into()));
            }
            return Ok(taus.clone());
        }
        let Some(sweep) = &self.time.sweep else {
            return Err(ConfigError::Invalid(
                "this experiment needs time.taus or time.sweep".into(),
            ));
        };
        if !(sweep.from > 0.0) || !(sweep.to > sweep.from) || sweep.points < 2 {
            return Err(ConfigError::Invalid(
                "time.sweep needs 0 < from < to and points >= 2".into(),
            ));
        }
        let n = sweep.points;
        let taus = match sweep.spacing.as_deref().unwrap_or("log") {
            "log" => {
                let (la, lb) = (sweep.from.ln(), sweep.to.ln());
                (0..n)
                    .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
                    .collect()
            }
            "linear" => (0..n)
                .map(|i| sweep.from + (sweep.to - sweep.from) * i as f64 / (n - 1) as f64)
                .collect(),
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown sweep spacing '{other}' (log, linear)"
                )))
            }
        };
        Ok(taus)
    }

    /// Builds the full scheme with the configured filter.
    pub fn setup(&self) -> Result<SchemeSetup, ConfigError> {
        self.setup_with_filter(self.filter_spec()?)
    }

    /// Builds the full scheme with an explicit filter (the comparison
    /// experiments swap filters over one mesh/problem).
    pub fn setup_with_filter(&self, filter: FilterSpec) -> Result<SchemeSetup, ConfigError> {
        let problem = self.problem_case()?;
        let mesh = self.build_mesh()?;
        if mesh.dim() != problem.kind.dim() {
            return Err(ConfigError::Invalid(format!(
                "problem '{}' needs a {}d mesh, config builds {}d",
                problem.name,
                problem.kind.dim(),
                mesh.dim()
            )));
        }
        let (m_u, m_v) = problem.kind.components();
        let space = Arc::new(DgSpace::new(Arc::new(mesh), self.space.degree, m_u, m_v));
        let pair = Arc::new(FriedrichsPair::new(problem.kind, space.clone())?);
        let partition = classify(space.mesh(), &self.fine_rule()?)?;
        Ok(SchemeSetup::new(
            pair,
            Arc::new(problem),
            partition,
            filter,
            self.cfl_params(),
        )?)
    }

    /// FNV-1a hash of the canonical re-serialization; whitespace and key
    /// order in the source file do not matter, effective values do.
    pub fn fingerprint(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in canonical.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}
