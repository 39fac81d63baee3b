//! Stage runners. Each stage computes its results, writes them under the
//! output directory and reports named pass flags.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lindiff_core::appendix::{run_batch, BatchSummary};
use lindiff_core::diffusion::{
    abel_diffusion, abel_extrapolated, closed_form_ballistic, fit_diffusion, launch_grid, localization_length_from, msd_ensemble, resolvent_over_configs,
    small_g_slope, DiffusionEstimate, LocalizationEstimate, Method, MsdSeries, MsdSetup, SlopeEstimate,
};
use lindiff_core::kernel::{default_grid, spectral_gap, validate, GainKernel, ValidationReport};
use lindiff_core::{Error, LatticeBox};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Format, KernelSource, WindowPolicy};

/// Relative spread allowed in `D·g/u²` across couplings without disorder.
pub const BALLISTIC_TOL: f64 = 0.05;
/// Pairwise method agreement, in units of the combined standard error.
pub const CONCORDANCE_SIGMAS: f64 = 3.0;
/// Largest relative ensemble error accepted for the localization length.
pub const LOCALIZATION_PRECISION: f64 = 0.10;
/// Accuracy required of the λ → ∞ resolvent limit, relative to `1 + |reference|`.
pub const APPENDIX_TOL: f64 = 1e-4;
/// Steepest admissible log-log decay slope for kernel-free problems.
pub const APPENDIX_SLOPE: f64 = -0.9;
/// Number of halvings in the default resolvent `η` sequence.
pub const DEFAULT_ETA_HALVINGS: usize = 24;

/// Pipeline stages, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ValidateKernel,
    Msd,
    Diffusion,
    SweepG,
    Localization,
    AppendixChecks,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::ValidateKernel => "validate-kernel",
            Stage::Msd => "msd",
            Stage::Diffusion => "diffusion",
            Stage::SweepG => "sweep-g",
            Stage::Localization => "localization",
            Stage::AppendixChecks => "appendix-checks",
        }
    }
}

/// Collected results of one invocation.
#[derive(Debug, Default, Serialize)]
pub struct Report {
    pub outputs: Vec<PathBuf>,
    pub pass_flags: BTreeMap<String, bool>,
    /// Knobs chosen by the runner rather than the config (defaults, derived values).
    pub resolved: BTreeMap<String, Value>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.pass_flags.values().all(|&b| b)
    }

    fn flag(&mut self, name: impl Into<String>, ok: bool) {
        self.pass_flags.insert(name.into(), ok);
    }
}

/// Output directory plus the requested formats.
pub struct Sink<'a> {
    pub dir: PathBuf,
    cfg: &'a ExperimentConfig,
}

impl<'a> Sink<'a> {
    pub fn new(dir: PathBuf, cfg: &'a ExperimentConfig) -> std::io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, cfg })
    }

    fn json(&self, report: &mut Report, name: &str, value: &impl Serialize) -> Result<(), Error> {
        if !self.cfg.output.wants(Format::Json) {
            return Ok(());
        }
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Precondition(e.to_string()))?;
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        report.outputs.push(path);
        Ok(())
    }

    fn csv(&self, report: &mut Report, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Error> {
        if !self.cfg.output.wants(Format::Csv) {
            return Ok(());
        }
        let path = self.dir.join(name);
        let mut text = header.join(",");
        text.push('\n');
        for r in rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        write_file(&path, text.as_bytes())?;
        report.outputs.push(path);
        Ok(())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let io = |e: std::io::Error| Error::Precondition(format!("cannot write {}: {e}", path.display()));
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

/// Builds the model kernel, rejecting negative measures.
pub fn model_kernel(cfg: &ExperimentConfig) -> Result<GainKernel, Error> {
    cfg.kernel.build(Some(cfg.model.d), false)
}

fn gap_of(kernel: &GainKernel) -> Result<f64, Error> {
    Ok(spectral_gap(kernel, default_grid(kernel.dim()))?.conservative())
}

/// Validation of a kernel source; negative weights are reported rather than rejected.
pub fn validate_source(src: &KernelSource, model_dim: Option<usize>) -> Result<ValidationReport, Error> {
    Ok(validate(&src.build(model_dim, true)?))
}

pub fn stage_validate(cfg: &ExperimentConfig, sink: &Sink, report: &mut Report) -> Result<ValidationReport, Error> {
    let rep = validate_source(&cfg.kernel, Some(cfg.model.d))?;
    sink.json(report, "kernel_report.json", &rep)?;
    for item in &rep.items {
        report.flag(format!("kernel_{}", serde_json::to_value(item.requirement).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()), item.passed);
    }
    Ok(rep)
}

fn times(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.evolution.t_grid.points()
}

fn msd_for(cfg: &ExperimentConfig, kernel: &GainKernel, g: f64) -> Result<MsdSeries, Error> {
    let lattice = LatticeBox::new(cfg.model.d, cfg.model.l, cfg.model.boundary)?;
    let setup = MsdSetup { lattice, coherence: cfg.evolution.coherence, evolve: cfg.evolution.options() };
    msd_ensemble(&cfg.params(g), kernel, &cfg.distribution(), &cfg.seeds(), &times(cfg), &setup)
}

fn write_msd(sink: &Sink, report: &mut Report, msd: &MsdSeries, stem: &str) -> Result<(), Error> {
    sink.json(report, &format!("{stem}.json"), msd)?;
    let dim = msd.dim;
    let mut header = vec!["t", "M11", "M11_err"];
    if dim == 2 {
        header.extend(["M12", "M12_err", "M22", "M22_err"]);
    }
    let pairs: &[(usize, usize)] = if dim == 2 { &[(0, 0), (0, 1), (1, 1)] } else { &[(0, 0)] };
    let rows: Vec<Vec<String>> = msd
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut r = vec![num(t)];
            for &(i, j) in pairs {
                r.push(num(msd.mean[k][i][j]));
                r.push(num(msd.stderr[k][i][j]));
            }
            r
        })
        .collect();
    sink.csv(report, &format!("{stem}.csv"), &header, &rows)
}

pub fn stage_msd(cfg: &ExperimentConfig, sink: &Sink, report: &mut Report) -> Result<Vec<(f64, MsdSeries)>, Error> {
    let kernel = model_kernel(cfg)?;
    let gs = cfg.g_values();
    let mut out = Vec::new();
    for &g in &gs {
        let msd = msd_for(cfg, &kernel, g)?;
        let stem = if gs.len() == 1 { "msd".to_string() } else { format!("msd_g{g}") };
        write_msd(sink, report, &msd, &stem)?;
        out.push((g, msd));
    }
    Ok(out)
}

/// A diffusion estimate as written to disk.
#[derive(Debug, Serialize)]
pub struct Record {
    pub method: Method,
    pub u: f64,
    pub lambda: f64,
    pub g: f64,
    pub eta_or_window: Value,
    #[serde(rename = "D")]
    pub matrix: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<lindiff_core::diffusion::Bounds>,
    pub diagnostics: BTreeMap<String, f64>,
    pub pass_flags: BTreeMap<String, bool>,
}

fn method_name(m: Method) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn record(est: &DiffusionEstimate) -> Record {
    let eta_or_window = match (est.echo.eta, est.echo.window) {
        (_, Some(w)) => json!(w),
        (Some(e), None) => json!(e),
        (None, None) => Value::Null,
    };
    let mut flags = BTreeMap::new();
    let dim = est.dim();
    let finite = est.matrix.iter().flatten().chain(est.stderr.iter().flatten()).all(|v| v.is_finite());
    flags.insert("finite".into(), finite);
    flags.insert("positive".into(), (0..dim).all(|i| est.matrix[i][i] > 0.0));
    if dim == 2 {
        let off = est.matrix[0][1].abs() <= 3.0 * est.stderr[0][1];
        let diag = (est.matrix[0][0] - est.matrix[1][1]).abs() <= 3.0 * est.stderr[0][0].hypot(est.stderr[1][1]);
        flags.insert("isotropic".into(), off && diag);
    }
    if let Some(b) = est.bounds {
        let slack = est.value_stderr();
        flags.insert("within_bounds".into(), est.value() >= b.lower - slack && est.value() <= b.upper + slack);
    }
    if est.method == Method::Fit {
        flags.insert("linear_window".into(), est.diagnostics.get("curvature_flag").copied().unwrap_or(0.0) == 0.0);
    }
    Record {
        method: est.method,
        u: est.echo.u,
        lambda: est.echo.lambda,
        g: est.echo.g,
        eta_or_window,
        matrix: est.matrix.clone(),
        stderr: est.stderr.clone(),
        residual: est.residual,
        bounds: est.bounds,
        diagnostics: est.diagnostics.clone(),
        pass_flags: flags,
    }
}

/// Fit window for coupling `g` under the configured policy.
pub fn fit_window(cfg: &ExperimentConfig, gap: f64, g: f64) -> [f64; 2] {
    let t_max = cfg.evolution.t_grid.t_max;
    let relax = if g > 0.0 { 5.0 / (gap * g) } else { 0.0 };
    let fw = &cfg.analysis.fit_window;
    match fw.policy {
        WindowPolicy::Relaxation => [relax, t_max],
        WindowPolicy::LateHalf => [relax.max(0.5 * t_max), t_max],
        WindowPolicy::Explicit => [fw.t1.unwrap_or(relax), fw.t2.unwrap_or(t_max)],
    }
}

/// Resolvent `η` sequence: the configured one, or halvings from `c·g/2`.
pub fn eta_list(cfg: &ExperimentConfig, gap: f64, g: f64) -> Vec<f64> {
    cfg.analysis.eta_list.clone().unwrap_or_else(|| (0..DEFAULT_ETA_HALVINGS).map(|k| 0.5 * gap * g * 0.5f64.powi(k as i32)).collect())
}

fn fiber_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    let mut s = cfg.analysis.fiber.seeds.clone().unwrap_or_else(|| cfg.seeds());
    s.sort_unstable();
    s
}

/// Every configured estimate at one coupling.
pub fn estimates_at(
    cfg: &ExperimentConfig,
    kernel: &GainKernel,
    gap: f64,
    g: f64,
    msd: Option<&MsdSeries>,
    report: &mut Report,
) -> Result<Vec<DiffusionEstimate>, Error> {
    let mut out = Vec::new();
    let key = |s: &str| format!("g={g}.{s}");
    for &method in &cfg.analysis.methods {
        let est = match method {
            Method::Fit => {
                let w = fit_window(cfg, gap, g);
                report.resolved.insert(key("fit_window"), json!(w));
                fit_diffusion(msd.expect("MSD computed for fit"), w)?
            }
            Method::Abel => {
                let eta = cfg.analysis.abel.eta.unwrap_or(10.0 / cfg.evolution.t_grid.t_max);
                report.resolved.insert(key("abel_eta"), json!(eta));
                let m = msd.expect("MSD computed for abel");
                if cfg.analysis.abel.richardson {
                    abel_extrapolated(m, eta)?
                } else {
                    abel_diffusion(m, eta)?
                }
            }
            Method::Resolvent => {
                if g <= 0.0 {
                    return Err(Error::Precondition("the resolvent needs g > 0".into()));
                }
                let etas = eta_list(cfg, gap, g);
                report.resolved.insert(key("eta_list"), json!(etas));
                let sites = LatticeBox::periodic(cfg.model.d, cfg.analysis.fiber.l)?;
                let seeds = if cfg.model.lambda == 0.0 { vec![fiber_seeds(cfg)[0]] } else { fiber_seeds(cfg) };
                let (mut est, reps) =
                    resolvent_over_configs(sites, &cfg.params(g), kernel, &cfg.distribution(), &seeds, cfg.analysis.fiber.band, &etas)?;
                let hnorm = reps.iter().map(|r| r.hamiltonian_norm).fold(0.0, f64::max);
                est.diagnostics.insert("hamiltonian_norm".into(), hnorm);
                est
            }
            Method::ClosedForm => {
                if cfg.model.lambda != 0.0 {
                    return Err(Error::Precondition("the closed form holds only without disorder (lambda = 0)".into()));
                }
                closed_form_ballistic(kernel, cfg.model.u, g, cfg.analysis.fiber.band)?
            }
        };
        out.push(est);
    }
    Ok(out)
}

fn needs_msd(cfg: &ExperimentConfig) -> bool {
    cfg.analysis.methods.iter().any(|m| matches!(m, Method::Fit | Method::Abel))
}

fn concordance(report: &mut Report, prefix: &str, ests: &[DiffusionEstimate]) {
    for (a, ea) in ests.iter().enumerate() {
        for eb in &ests[a + 1..] {
            if ea.method == Method::ClosedForm || eb.method == Method::ClosedForm {
                continue;
            }
            let diff = (ea.value() - eb.value()).abs();
            let sigma = ea.value_stderr().hypot(eb.value_stderr());
            report.flag(format!("{prefix}concordance_{}_{}", method_name(ea.method), method_name(eb.method)), diff <= CONCORDANCE_SIGMAS * sigma);
        }
    }
}

fn flag_records(report: &mut Report, prefix: &str, records: &[Record]) {
    for r in records {
        for (k, &v) in &r.pass_flags {
            report.flag(format!("{prefix}{}_{k}", method_name(r.method)), v);
        }
    }
}

pub fn stage_diffusion(cfg: &ExperimentConfig, sink: &Sink, report: &mut Report) -> Result<Vec<DiffusionEstimate>, Error> {
    let g = cfg.g_values()[0];
    let kernel = model_kernel(cfg)?;
    let gap = gap_of(&kernel)?;
    report.resolved.insert("gap".into(), json!(gap));
    let msd = if needs_msd(cfg) {
        let m = msd_for(cfg, &kernel, g)?;
        write_msd(sink, report, &m, "msd")?;
        Some(m)
    } else {
        None
    };
    let ests = estimates_at(cfg, &kernel, gap, g, msd.as_ref(), report)?;
    let records: Vec<Record> = ests.iter().map(record).collect();
    flag_records(report, "", &records);
    concordance(report, "", &ests);
    sink.json(report, "diffusion.json", &records)?;
    Ok(ests)
}

/// Output of the coupling sweep.
#[derive(Debug, Serialize)]
pub struct SweepResult {
    pub records: Vec<Record>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<SlopeEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub localization: Option<LocalizationEstimate>,
}

pub fn stage_sweep(cfg: &ExperimentConfig, sink: &Sink, report: &mut Report) -> Result<SweepResult, Error> {
    let kernel = model_kernel(cfg)?;
    let gap = gap_of(&kernel)?;
    report.resolved.insert("gap".into(), json!(gap));
    let u2 = cfg.model.u * cfg.model.u;
    let mut per_method: BTreeMap<String, Vec<(f64, DiffusionEstimate)>> = BTreeMap::new();
    let mut records = Vec::new();
    let gs = cfg.g_values();
    for &g in &gs {
        let msd = if needs_msd(cfg) {
            let m = msd_for(cfg, &kernel, g)?;
            write_msd(sink, report, &m, &format!("msd_g{g}"))?;
            Some(m)
        } else {
            None
        };
        let ests = estimates_at(cfg, &kernel, gap, g, msd.as_ref(), report)?;
        concordance(report, &format!("g={g}."), &ests);
        for e in ests {
            let r = record(&e);
            flag_records(report, &format!("g={g}."), std::slice::from_ref(&r));
            records.push(r);
            per_method.entry(method_name(e.method)).or_default().push((g, e));
        }
    }

    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let d = r.matrix.iter().enumerate().map(|(i, row)| row[i]).sum::<f64>() / r.matrix.len() as f64;
            let e = r.stderr.iter().enumerate().map(|(i, row)| row[i]).sum::<f64>() / r.matrix.len() as f64;
            vec![num(r.g), method_name(r.method), num(d), num(e), num(d * r.g / u2)]
        })
        .collect();
    sink.csv(report, "sweep_g.csv", &["g", "method", "D", "err", "Dg_over_u2"], &rows)?;

    // Without disorder D·g/u² is independent of g.
    if cfg.model.lambda == 0.0 && gs.len() > 1 {
        for (name, list) in &per_method {
            let c: Vec<f64> = list.iter().map(|(g, e)| e.value() * g / u2).collect();
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let spread = c.iter().map(|v| (v - mean).abs() / mean.abs()).fold(0.0, f64::max);
            report.resolved.insert(format!("{name}.ballistic_spread"), json!(spread));
            report.flag(format!("{name}_ballistic_constant"), spread <= BALLISTIC_TOL);
        }
        if let (Some(fit), Some(closed)) = (per_method.get("fit"), per_method.get("closed-form")) {
            for ((g, f), (_, c)) in fit.iter().zip(closed) {
                let rel = (f.value() - c.value()).abs() / c.value();
                report.flag(format!("g={g}.fit_matches_closed_form"), rel <= BALLISTIC_TOL);
            }
        }
    }

    let mut result = SweepResult { records, slope: None, localization: None };
    if cfg.model.lambda > 0.0 && cfg.analysis.localization.is_some() {
        let loc = stage_localization(cfg, sink, report)?;
        let source = per_method.get("resolvent").or_else(|| per_method.values().next()).expect("at least one method");
        let points: Vec<(f64, f64, f64)> = source.iter().map(|(g, e)| (*g, e.value(), e.value_stderr())).collect();
        let hnorm = source.iter().filter_map(|(_, e)| e.diagnostics.get("hamiltonian_norm").copied()).fold(0.0, f64::max);
        if hnorm <= 0.0 {
            return Err(Error::Precondition("the small-g bounds need the resolvent method".into()));
        }
        let slope = small_g_slope(&points, &loc, gap, hnorm, cfg.model.u)?;
        report.flag("slope_positive", slope.positive);
        report.flag("slope_below_upper", slope.below_upper);
        report.flag("slope_above_lower", slope.above_lower);
        result.slope = Some(slope);
        result.localization = Some(loc);
    }
    sink.json(report, "sweep_g.json", &result)?;
    Ok(result)
}

pub fn stage_localization(cfg: &ExperimentConfig, sink: &Sink, report: &mut Report) -> Result<LocalizationEstimate, Error> {
    let loc = cfg
        .analysis
        .localization
        .as_ref()
        .ok_or_else(|| Error::Precondition("analysis.localization is not configured".into()))?;
    let mut seeds = loc.seeds.clone().unwrap_or_else(|| cfg.seeds());
    seeds.sort_unstable();
    let lattice = LatticeBox::truncated(cfg.model.d, loc.l)?;
    let launches = launch_grid(cfg.model.d, loc.launch_reach, loc.launch_spacing);
    let est = localization_length_from(lattice, cfg.model.u, cfg.model.lambda, &cfg.distribution(), &seeds, &launches, &loc.t_grid.points())?;
    report.flag("localization_precision", est.relative_error() < LOCALIZATION_PRECISION);
    sink.json(report, "localization.json", &est)?;
    let rows: Vec<Vec<String>> =
        est.times.iter().zip(&est.mean).zip(&est.stderr_curve).map(|((t, m), e)| vec![num(*t), num(*m), num(*e)]).collect();
    sink.csv(report, "localization.csv", &["t", "second_moment", "err"], &rows)?;
    Ok(est)
}

pub fn stage_appendix(cfg: &ExperimentConfig, sink: &Sink, report: &mut Report) -> Result<Vec<BatchSummary>, Error> {
    let app = cfg.analysis.appendix.clone().unwrap_or_default();
    let mut out = Vec::new();
    for &kd in &app.kernel_dims {
        let s = run_batch(app.count, app.size, kd, app.seed)?;
        report.flag(format!("appendix_k{kd}_limit"), s.worst_error < APPENDIX_TOL);
        if kd == 0 {
            report.flag("appendix_k0_decay", s.worst_slope.is_some_and(|v| v <= APPENDIX_SLOPE));
        }
        out.push(s);
    }
    sink.json(report, "appendix.json", &out)?;
    Ok(out)
}

/// Stages run by `lindiff run` for this config.
pub fn planned_stages(cfg: &ExperimentConfig) -> Vec<Stage> {
    let mut s = vec![Stage::ValidateKernel];
    let estimates = !cfg.analysis.methods.is_empty();
    if estimates && cfg.g_values().len() > 1 {
        s.push(Stage::SweepG);
    } else {
        if estimates {
            s.push(Stage::Diffusion);
        }
        if cfg.analysis.localization.is_some() {
            s.push(Stage::Localization);
        }
    }
    if cfg.analysis.appendix.is_some() {
        s.push(Stage::AppendixChecks);
    }
    s
}

pub fn run_stage(stage: Stage, cfg: &ExperimentConfig, sink: &Sink, report: &mut Report) -> Result<(), Error> {
    match stage {
        Stage::ValidateKernel => stage_validate(cfg, sink, report).map(drop),
        Stage::Msd => stage_msd(cfg, sink, report).map(drop),
        Stage::Diffusion => stage_diffusion(cfg, sink, report).map(drop),
        Stage::SweepG => stage_sweep(cfg, sink, report).map(drop),
        Stage::Localization => stage_localization(cfg, sink, report).map(drop),
        Stage::AppendixChecks => stage_appendix(cfg, sink, report).map(drop),
    }
}
