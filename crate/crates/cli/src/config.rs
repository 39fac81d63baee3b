//! Experiment configuration: schema, overrides and resolution into core types.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lindiff_core::diffusion::Method;
use lindiff_core::kernel::presets::{self, BosonParams, PRESET_NAMES};
use lindiff_core::kernel::{build_kernel_with, BuildOptions, GainKernel, MeasureSpec, DEFAULT_RADIUS};
use lindiff_core::{Boundary, Distribution, EvolveOptions, GeneratorParams, LatticeBox};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Problems with a configuration file. The runner exits with code 2 on these.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Schema(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub model: ModelConfig,
    pub kernel: KernelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderConfig>,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Worker threads for ensemble runs; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    /// Box radius: sites satisfy `|x|∞ ≤ L`.
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default)]
    pub boundary: Boundary,
    pub u: f64,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_list: Option<Vec<f64>>,
}

/// Where a kernel comes from. Exactly one of `preset`, `file`, `measure`,
/// `boson`, `fixture` is set. Fixtures are the deliberately broken measures
/// used to exercise the validator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boson: Option<BosonParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    /// Dimension for presets; defaults to the model dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "default_radius")]
    pub radius: usize,
}

fn default_radius() -> usize {
    DEFAULT_RADIUS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    /// `uniform`, `uniform:low,high`, `bernoulli` or `discrete:v1,v2,...`.
    #[serde(default = "default_dist")]
    pub dist: String,
    pub seeds: Vec<u64>,
}

fn default_dist() -> String {
    "uniform".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = (self.t_max / self.dt).round() as usize;
        (0..=n).map(|k| k as f64 * self.dt).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    #[serde(default = "default_grid")]
    pub t_grid: TimeGrid,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    #[serde(default = "default_depth")]
    pub boundary_depth: usize,
    #[serde(default = "default_coherence_tol")]
    pub coherence_tol: f64,
    /// Retained coherence distance `|x − y|∞`; every pair when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence: Option<usize>,
}

fn default_grid() -> TimeGrid {
    TimeGrid { t_max: 50.0, dt: 0.5 }
}
fn default_tol() -> f64 {
    EvolveOptions::default().tol
}
fn default_boundary_tol() -> f64 {
    EvolveOptions::default().boundary_tol
}
fn default_depth() -> usize {
    EvolveOptions::default().boundary_depth
}
fn default_coherence_tol() -> f64 {
    EvolveOptions::default().coherence_tol
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            t_grid: default_grid(),
            tol: default_tol(),
            boundary_tol: default_boundary_tol(),
            boundary_depth: default_depth(),
            coherence_tol: default_coherence_tol(),
            coherence: None,
        }
    }
}

impl EvolutionConfig {
    pub fn options(&self) -> EvolveOptions {
        EvolveOptions { tol: self.tol, boundary_tol: self.boundary_tol, boundary_depth: self.boundary_depth, coherence_tol: self.coherence_tol }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowPolicy {
    /// `[5/(c·g), t_max]`.
    #[default]
    Relaxation,
    /// `[max(5/(c·g), t_max/2), t_max]`.
    LateHalf,
    /// `[t1, t2]` as given.
    Explicit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    #[serde(default)]
    pub policy: WindowPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbelConfig {
    /// Cut-off rate; `10 / t_max` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Combine `η` and `η/2` to cancel the bounded-offset term.
    #[serde(default = "yes")]
    pub richardson: bool,
}

fn yes() -> bool {
    true
}

impl Default for AbelConfig {
    fn default() -> Self {
        Self { eta: None, richardson: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    /// Radius of the periodic box carrying the translation orbit.
    #[serde(rename = "L")]
    pub l: usize,
    /// Radius of the relative-coordinate window.
    pub band: usize,
    /// Disorder seeds for the resolvent; the ensemble seeds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

impl Default for FiberConfig {
    fn default() -> Self {
        Self { l: 3, band: lindiff_core::diffusion::DEFAULT_FIBER_BAND, seeds: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    #[serde(rename = "L")]
    pub l: usize,
    pub t_grid: TimeGrid,
    /// Seeds for the unitary runs; the ensemble seeds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Launch sites fill `|x₀|∞ ≤ launch_reach` on a grid of `launch_spacing`;
    /// zero launches from the origin only.
    #[serde(default)]
    pub launch_reach: usize,
    #[serde(default = "default_spacing")]
    pub launch_spacing: usize,
}

fn default_spacing() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixConfig {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    /// Kernel dimensions to exercise; `0` gives the kernel-free case.
    #[serde(default = "default_kernel_dims")]
    pub kernel_dims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    50
}
fn default_size() -> usize {
    20
}
fn default_kernel_dims() -> Vec<usize> {
    vec![0, 3]
}

impl Default for AppendixConfig {
    fn default() -> Self {
        Self { count: default_count(), size: default_size(), kernel_dims: default_kernel_dims(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Decreasing `η` values for the resolvent; 24 halvings from `c·g/2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_list: Option<Vec<f64>>,
    #[serde(default)]
    pub fit_window: FitWindow,
    #[serde(default)]
    pub abel: AbelConfig,
    #[serde(default)]
    pub fiber: FiberConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localization: Option<LocalizationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appendix: Option<AppendixConfig>,
    /// Exit nonzero when a pass flag fails.
    #[serde(default = "yes")]
    pub enforce: bool,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Fit]
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            eta_list: None,
            fit_window: FitWindow::default(),
            abel: AbelConfig::default(),
            fiber: FiberConfig::default(),
            localization: None,
            appendix: None,
            enforce: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("lindiff-out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), formats: default_formats() }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Shipped experiment configurations, addressable by name.
pub const PRESETS: [(&str, &str); 5] = [
    ("ballistic-check", include_str!("../presets/ballistic-check.json")),
    ("isotropy-2d", include_str!("../presets/isotropy-2d.json")),
    ("small-g", include_str!("../presets/small-g.json")),
    ("concordance", include_str!("../presets/concordance.json")),
    ("appendix", include_str!("../presets/appendix.json")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Applies `key.path=value` overrides to a JSON document. Values are parsed
/// as JSON and fall back to plain strings.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (path, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override(item.clone()))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *doc;
        let keys: Vec<&str> = path.split('.').collect();
        for key in &keys[..keys.len() - 1] {
            if !node.is_object() {
                return Err(ConfigError::Override(item.clone()));
            }
            node = node.as_object_mut().expect("checked").entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
        let obj = node.as_object_mut().ok_or_else(|| ConfigError::Override(item.clone()))?;
        obj.insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(())
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Schema(format!("malformed JSON: {e}")))?;
    apply_overrides(&mut doc, overrides)?;
    let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| ConfigError::Schema(e.to_string()))?;
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config(&text, overrides)?;
    // Kernel files are resolved relative to the config that names them.
    if let (Some(file), Some(dir)) = (cfg.kernel.file.as_mut(), path.parent()) {
        if file.is_relative() {
            *file = dir.join(&*file);
        }
    }
    Ok(cfg)
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be non-negative and finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Schema checks that serde cannot express.
    pub fn check(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if !(1..=2).contains(&m.d) {
            return Err(invalid("model.d", "must be 1 or 2"));
        }
        if m.l == 0 {
            return Err(invalid("model.L", "must be at least 1"));
        }
        if !m.u.is_finite() {
            return Err(invalid("model.u", "must be finite"));
        }
        non_negative("model.lambda", m.lambda)?;
        match (&m.g, &m.g_list) {
            (Some(g), None) => non_negative("model.g", *g)?,
            (None, Some(list)) => {
                if list.is_empty() {
                    return Err(invalid("model.g_list", "must not be empty"));
                }
                for g in list {
                    positive("model.g_list", *g)?;
                }
            }
            _ => return Err(invalid("model", "set exactly one of `g` and `g_list`")),
        }
        self.kernel.check()?;
        if let Some(dis) = &self.disorder {
            dis.dist.parse::<Distribution>().map_err(|e| invalid("disorder.dist", e.to_string()))?;
            check_seeds("disorder.seeds", &dis.seeds)?;
        } else if m.lambda > 0.0 {
            return Err(invalid("disorder", "required when lambda > 0 (seeds must be explicit)"));
        }
        let ev = &self.evolution;
        positive("evolution.t_grid.t_max", ev.t_grid.t_max)?;
        positive("evolution.t_grid.dt", ev.t_grid.dt)?;
        if ev.t_grid.dt > ev.t_grid.t_max {
            return Err(invalid("evolution.t_grid.dt", "exceeds t_max"));
        }
        positive("evolution.tol", ev.tol)?;
        positive("evolution.boundary_tol", ev.boundary_tol)?;
        positive("evolution.coherence_tol", ev.coherence_tol)?;
        let an = &self.analysis;
        if let Some(etas) = &an.eta_list {
            if etas.len() < 3 || etas.windows(2).any(|w| !(w[1] < w[0])) || etas.iter().any(|&e| !(e > 0.0)) {
                return Err(invalid("analysis.eta_list", "needs at least three strictly decreasing positive values"));
            }
        }
        if an.fit_window.policy == WindowPolicy::Explicit {
            match (an.fit_window.t1, an.fit_window.t2) {
                (Some(a), Some(b)) if a >= 0.0 && b > a => {}
                _ => return Err(invalid("analysis.fit_window", "explicit policy needs 0 <= t1 < t2")),
            }
        }
        if let Some(eta) = an.abel.eta {
            positive("analysis.abel.eta", eta)?;
        }
        if an.fiber.l == 0 {
            return Err(invalid("analysis.fiber.L", "must be at least 1"));
        }
        if let Some(seeds) = &an.fiber.seeds {
            check_seeds("analysis.fiber.seeds", seeds)?;
        }
        if let Some(loc) = &an.localization {
            positive("analysis.localization.t_grid.t_max", loc.t_grid.t_max)?;
            positive("analysis.localization.t_grid.dt", loc.t_grid.dt)?;
            if loc.launch_spacing == 0 {
                return Err(invalid("analysis.localization.launch_spacing", "must be at least 1"));
            }
            if loc.launch_reach + 3 >= loc.l {
                return Err(invalid("analysis.localization.launch_reach", "launch sites must stay clear of the box faces"));
            }
            if let Some(seeds) = &loc.seeds {
                check_seeds("analysis.localization.seeds", seeds)?;
            } else if self.disorder.is_none() {
                return Err(invalid("analysis.localization.seeds", "required without a disorder section"));
            }
        }
        if let Some(app) = &an.appendix {
            if app.count == 0 || app.size < 2 {
                return Err(invalid("analysis.appendix", "needs count >= 1 and size >= 2"));
            }
            if app.kernel_dims.iter().any(|&k| k >= app.size) {
                return Err(invalid("analysis.appendix.kernel_dims", "must be smaller than size"));
            }
        }
        if let Some(p) = self.parallelism {
            if p == 0 {
                return Err(invalid("parallelism", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn g_values(&self) -> Vec<f64> {
        match (&self.model.g, &self.model.g_list) {
            (Some(g), _) => vec![*g],
            (None, Some(list)) => list.clone(),
            (None, None) => Vec::new(),
        }
    }

    pub fn lattice(&self) -> Result<LatticeBox, ConfigError> {
        LatticeBox::new(self.model.d, self.model.l, self.model.boundary).map_err(|e| invalid("model", e.to_string()))
    }

    pub fn distribution(&self) -> Distribution {
        self.disorder.as_ref().map(|d| d.dist.parse().expect("checked")).unwrap_or_default()
    }

    /// Ensemble seeds in ascending order; a single seed without disorder.
    pub fn seeds(&self) -> Vec<u64> {
        let mut s = self.disorder.as_ref().map(|d| d.seeds.clone()).unwrap_or_else(|| vec![0]);
        s.sort_unstable();
        s
    }

    pub fn params(&self, g: f64) -> GeneratorParams {
        GeneratorParams { u: self.model.u, lambda: self.model.lambda, g }
    }
}

fn check_seeds(field: &str, seeds: &[u64]) -> Result<(), ConfigError> {
    if seeds.is_empty() {
        return Err(invalid(field, "must list at least one seed"));
    }
    let unique: BTreeSet<_> = seeds.iter().collect();
    if unique.len() != seeds.len() {
        return Err(invalid(field, "contains duplicates"));
    }
    Ok(())
}

impl KernelSource {
    pub fn check(&self) -> Result<(), ConfigError> {
        let set = [self.preset.is_some(), self.file.is_some(), self.measure.is_some(), self.boson.is_some(), self.fixture.is_some()];
        if set.iter().filter(|&&b| b).count() != 1 {
            return Err(invalid("kernel", "set exactly one of `preset`, `file`, `measure`, `boson`, `fixture`"));
        }
        if let Some(name) = &self.fixture {
            if fixture_spec(name).is_none() {
                let known: Vec<&str> = all_fixtures().iter().map(|f| f.name).collect();
                return Err(invalid("kernel.fixture", format!("unknown fixture `{name}` (known: {})", known.join(", "))));
            }
        }
        if let Some(name) = &self.preset {
            if !PRESET_NAMES.contains(&name.as_str()) {
                return Err(invalid("kernel.preset", format!("unknown preset `{name}` (known: {})", PRESET_NAMES.join(", "))));
            }
        }
        if self.radius == 0 {
            return Err(invalid("kernel.radius", "must be at least 1"));
        }
        Ok(())
    }

    /// Reads a standalone kernel file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut src: KernelSource = serde_json::from_str(&text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        if src.file.is_some() {
            return Err(invalid("file", "kernel files cannot refer to other files"));
        }
        if src.d.is_none() {
            src.d = src
                .measure
                .as_ref()
                .and_then(|m| m.dim)
                .or(src.boson.map(|b| b.dim))
                .or_else(|| src.fixture.as_deref().and_then(fixture_spec).and_then(|m| m.dim));
        }
        src.check()?;
        Ok(src)
    }

    /// The measure this source describes, with file references followed.
    pub fn measure(&self, model_dim: Option<usize>) -> Result<(MeasureSpec, usize), ConfigError> {
        if let Some(file) = &self.file {
            let inner = Self::load(file)?;
            return Ok((inner.measure(model_dim)?.0, inner.radius));
        }
        let dim = self.d.or(model_dim);
        let spec = if let Some(name) = &self.preset {
            let d = dim.ok_or_else(|| invalid("kernel.d", "needed for presets outside a model"))?;
            presets::named(name, d).expect("checked")
        } else if let Some(b) = &self.boson {
            presets::boson(b)
        } else if let Some(name) = &self.fixture {
            fixture_spec(name).expect("checked")
        } else {
            self.measure.clone().expect("checked")
        };
        Ok((spec, self.radius))
    }

    /// Builds the kernel. Negative weights are kept so that validation can report them.
    pub fn build(&self, model_dim: Option<usize>, allow_negative: bool) -> Result<GainKernel, lindiff_core::Error> {
        let (spec, radius) = self.measure(model_dim).map_err(|e| lindiff_core::Error::Precondition(e.to_string()))?;
        build_kernel_with(&spec, &BuildOptions { allow_negative, ..BuildOptions::with_radius(radius) })
    }
}

fn all_fixtures() -> Vec<presets::Fixture> {
    let mut all = presets::violation_fixtures();
    all.push(presets::inversion_fixture());
    all
}

fn fixture_spec(name: &str) -> Option<MeasureSpec> {
    all_fixtures().into_iter().find(|f| f.name == name).map(|f| f.spec)
}
