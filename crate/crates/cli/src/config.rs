//! The analysis config file.
//!
//! A TOML document; every table rejects unknown keys. After loading, every
//! default is filled in, so serializing an [`AnalysisConfig`] gives the
//! effective config recorded in reports.

use std::fmt;
use std::path::{Path, PathBuf};

use multising::field::{self, Params, PolynomialField, Region, VectorFieldSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError {
    /// JSON-pointer style location, `""` for the document root.
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "config error at {at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(pointer: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        pointer: pointer.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub seed: u64,
    /// Not recorded in the effective config, so reports do not depend on
    /// where they were written.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub strict_vacuous: bool,
    pub field: FieldConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(default)]
    pub singularities: SingularityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit: Option<OrbitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domination: Option<DominationConfig>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub checks: Vec<CheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial: Option<PolynomialField>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularityConfig {
    /// Newton seeds per axis.
    #[serde(default = "d_density")]
    pub density: usize,
}

impl Default for SingularityConfig {
    fn default() -> Self {
        SingularityConfig { density: d_density() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitConfig {
    pub x0: Vec<f64>,
    pub t_total: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_tol")]
    pub tol: f64,
    /// Fraction of `t_total` discarded before sampling.
    #[serde(default = "d_transient")]
    pub transient: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaKind {
    OrbitClosure,
    UnstableBranch,
    BoxClass,
    PointList,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    pub provenance: LambdaKind,
    /// Distance at which a zero counts as a member of `Λ`.
    #[serde(default = "d_capture")]
    pub capture: f64,
    /// `unstable-branch`: the zero nearest this point is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    /// `box-class`: position in the size-ordered class list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    /// `point-list`: CSV with a header row, one point per line; relative
    /// paths are resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub t_total: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_tol")]
    pub tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominationConfig {
    pub index: usize,
    /// `(η, T)` pairs.
    pub grid: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default = "d_window")]
    pub window: f64,
    #[serde(default = "d_stride")]
    pub stride: usize,
    #[serde(default = "d_segment_time")]
    pub segment_time: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    #[serde(default = "d_resolution")]
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default = "d_t_edge")]
    pub t_edge: f64,
    #[serde(default = "d_jitter")]
    pub jitter: usize,
    #[serde(default = "d_chain_tol")]
    pub tol: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            resolution: d_resolution(),
            eps: None,
            t_edge: d_t_edge(),
            jitter: d_jitter(),
            tol: d_chain_tol(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    SingularDomination,
    MultiSingular,
    Uniform,
    SingularHyperbolic,
    BdlMultiSingular,
    TheoremC,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::SingularDomination => "singular-domination",
            CheckKind::MultiSingular => "multi-singular",
            CheckKind::Uniform => "uniform",
            CheckKind::SingularHyperbolic => "singular-hyperbolic",
            CheckKind::BdlMultiSingular => "bdl-multi-singular",
            CheckKind::TheoremC => "theorem-c",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub notion: CheckKind,
    /// `(η, T)` pairs tried in order; the first passing one is reported.
    pub grid: Vec<(f64, f64)>,
    /// Isolating neighborhood radius for multi-singular checks.
    #[serde(default = "d_v_radius")]
    pub v_radius: f64,
    #[serde(default = "d_bump")]
    pub bump_radii: (f64, f64),
    /// Index candidates, tried in order; default `1..=d−2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    #[serde(default = "d_cone_alpha")]
    pub cone_alpha: f64,
    #[serde(default = "d_center_grid")]
    pub center_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default = "d_window")]
    pub window: f64,
    #[serde(default = "d_stride")]
    pub stride: usize,
    #[serde(default = "d_segment_time")]
    pub segment_time: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Which entry of `checks` is probed.
    pub check: CheckKind,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_trials")]
    pub trials: usize,
    /// Required worst trial margin over the base margin.
    #[serde(default = "d_fraction")]
    pub min_margin_fraction: f64,
}

fn d_density() -> usize {
    5
}
fn d_dt() -> f64 {
    0.02
}
fn d_tol() -> f64 {
    1e-10
}
fn d_transient() -> f64 {
    0.2
}
fn d_capture() -> f64 {
    1e-3
}
fn d_resolution() -> usize {
    64
}
fn d_t_edge() -> f64 {
    3.0
}
fn d_jitter() -> usize {
    2
}
fn d_chain_tol() -> f64 {
    1e-8
}
fn d_window() -> f64 {
    multising::splitting::DEFAULT_WINDOW
}
fn d_stride() -> usize {
    1
}
fn d_segment_time() -> f64 {
    20.0
}
fn d_v_radius() -> f64 {
    1.0
}
fn d_bump() -> (f64, f64) {
    (1.0, 2.0)
}
fn d_cone_alpha() -> f64 {
    0.5
}
fn d_center_grid() -> usize {
    32
}
fn d_delta() -> f64 {
    0.01
}
fn d_trials() -> usize {
    20
}
fn d_fraction() -> f64 {
    0.5
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

impl AnalysisConfig {
    /// Parses and validates a config; `base` resolves relative file paths.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| err("", e.to_string()))?;
        let mut cfg: AnalysisConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            let inner = e.into_inner();
            err(&pointer, inner.message().trim().to_string())
        })?;
        cfg.complete(base)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err("", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// Fills the defaults that depend on other keys and checks the
    /// cross-key rules.
    fn complete(&mut self, base: Option<&Path>) -> Result<(), ConfigError> {
        let spec = self.raw_spec()?;
        if let Some(name) = &self.field.builtin {
            if self.field.params.is_none() {
                self.field.params = Some(field::default_params(name).map_err(|e| err("/field/builtin", e.to_string()))?);
            }
        }
        if self.region.is_none() {
            self.region = Some(spec.region().clone());
        }
        let d = spec.dim();
        let region = self.region.as_ref().unwrap();
        Region::new(region.lower.clone(), region.upper.clone()).map_err(|e| err("/region", e.to_string()))?;
        if region.dim() != d {
            return Err(err("/region", format!("dimension {} does not match the field's {d}", region.dim())));
        }
        if let Some(o) = &self.orbit {
            if o.x0.len() != d {
                return Err(err("/orbit/x0", format!("expected {d} coordinates")));
            }
        }
        if let Some(l) = &mut self.lambda {
            match l.provenance {
                LambdaKind::OrbitClosure => {
                    if self.orbit.is_none() {
                        return Err(err("/lambda/provenance", "orbit-closure needs an [orbit] table"));
                    }
                }
                LambdaKind::UnstableBranch => {
                    if self.orbit.is_none() {
                        return Err(err("/lambda/provenance", "unstable-branch needs an [orbit] table for t_total, dt and tol"));
                    }
                    if l.sigma.is_none() {
                        l.sigma = Some(vec![0.0; d]);
                    }
                    if l.sigma.as_ref().unwrap().len() != d {
                        return Err(err("/lambda/sigma", format!("expected {d} coordinates")));
                    }
                    l.offset.get_or_insert(1e-6);
                }
                LambdaKind::BoxClass => {
                    l.class.get_or_insert(0);
                }
                LambdaKind::PointList => {
                    let Some(file) = &l.file else {
                        return Err(err("/lambda/file", "point-list needs a file"));
                    };
                    if file.is_relative() {
                        if let Some(b) = base {
                            l.file = Some(b.join(file));
                        }
                    }
                    l.slack.get_or_insert(0.0);
                }
            }
        }
        for (n, c) in self.checks.iter().enumerate() {
            if c.grid.is_empty() {
                return Err(err(&format!("/checks/{n}/grid"), "needs at least one (eta, T) pair"));
            }
        }
        if let Some(p) = &self.probe {
            if !self.checks.iter().any(|c| c.notion == p.check) {
                return Err(err("/probe/check", format!("no [[checks]] entry with notion {}", p.check.name())));
            }
            if p.check == CheckKind::TheoremC {
                return Err(err("/probe/check", "theorem-c is a cross-check, not a verdict"));
            }
        }
        Ok(())
    }

    fn raw_spec(&self) -> Result<VectorFieldSpec, ConfigError> {
        match (&self.field.builtin, &self.field.polynomial) {
            (Some(name), None) => {
                let params = match &self.field.params {
                    Some(p) => p.clone(),
                    None => field::default_params(name).map_err(|e| err("/field/builtin", e.to_string()))?,
                };
                field::builtin(name, &params).map_err(|e| err("/field/params", e.to_string()))
            }
            (None, Some(poly)) => {
                if self.field.params.is_some() {
                    return Err(err("/field/params", "params only apply to builtin fields"));
                }
                let Some(region) = &self.region else {
                    return Err(err("/region", "a polynomial field needs a region"));
                };
                let poly = PolynomialField::new(poly.dim, poly.components.clone())
                    .map_err(|e| err("/field/polynomial", e.to_string()))?;
                field::polynomial(poly, region.clone()).map_err(|e| err("/field/polynomial", e.to_string()))
            }
            _ => Err(err("/field", "give exactly one of builtin or polynomial")),
        }
    }

    /// The field restricted to the configured region.
    pub fn spec(&self) -> Result<VectorFieldSpec, ConfigError> {
        let spec = self.raw_spec()?;
        match &self.region {
            Some(r) => spec.with_region(r.clone()).map_err(|e| err("/region", e.to_string())),
            None => Ok(spec),
        }
    }

    pub fn region(&self) -> &Region {
        self.region.as_ref().expect("region is filled in by parse")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
