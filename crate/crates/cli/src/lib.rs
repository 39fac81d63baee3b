//! Experiment runner behind the `lindiff` binary.
//!
//! A run reads a JSON [`ExperimentConfig`](config::ExperimentConfig), executes
//! one or more pipeline stages, writes results under the output directory and
//! finishes with `manifest.json`, which echoes the resolved configuration.

pub mod config;
pub mod pipeline;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use config::{ConfigError, ExperimentConfig};
use pipeline::{planned_stages, run_stage, Report, Sink, Stage};

/// Environment variable that overrides `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "LINDIFF_OUTPUT_DIR";

/// Exit status of an invocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// Every pass flag held.
    Passed,
    /// A pass flag failed or a computation raised an error.
    Failed,
    /// The configuration was rejected.
    ConfigInvalid,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Passed => 0,
            Status::Failed => 1,
            Status::ConfigInvalid => 2,
        }
    }
}

/// Structured error printed to stderr.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub error: String,
    pub message: String,
}

impl Failure {
    pub fn from_core(e: &lindiff_core::Error) -> Self {
        let debug = format!("{e:?}");
        let kind = debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string();
        Self { error: kind, message: e.to_string() }
    }

    pub fn config(e: &ConfigError) -> Self {
        Self { error: "ConfigInvalid".into(), message: e.to_string() }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_path: Option<&'a Path>,
    config: &'a ExperimentConfig,
    resolved: &'a std::collections::BTreeMap<String, Value>,
    threads: usize,
    stages: Vec<&'static str>,
    outputs: Vec<String>,
    pass_flags: &'a std::collections::BTreeMap<String, bool>,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a Failure>,
    started_unix: u64,
    finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Output directory: `--output-dir`, then the environment, then the config.
pub fn output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output.dir.clone(),
    }
}

/// Outcome of [`execute`].
#[derive(Debug)]
pub struct Execution {
    pub status: Status,
    pub report: Report,
    pub failure: Option<Failure>,
    pub dir: PathBuf,
}

/// Runs `stages` (or the planned pipeline when `None`) and writes the manifest.
pub fn execute(cfg: &ExperimentConfig, command: &str, stages: Option<Vec<Stage>>, config_path: Option<&Path>, out_flag: Option<&Path>) -> Execution {
    let started = now();
    let dir = output_dir(cfg, out_flag);
    let stages = stages.unwrap_or_else(|| planned_stages(cfg));
    let mut report = Report::default();
    let mut failure = None;
    match Sink::new(dir.clone(), cfg) {
        Err(e) => {
            failure = Some(Failure { error: "OutputUnwritable".into(), message: format!("{}: {e}", dir.display()) });
        }
        Ok(sink) => {
            for &stage in &stages {
                if let Err(e) = run_stage(stage, cfg, &sink, &mut report) {
                    failure = Some(Failure::from_core(&e));
                    break;
                }
                // Later stages are meaningless for a kernel that breaks the assumptions.
                if stage == Stage::ValidateKernel && !report.passed() {
                    break;
                }
            }
        }
    }
    let passed = failure.is_none() && (report.passed() || !cfg.analysis.enforce);
    let manifest = Manifest {
        tool: "lindiff",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_path,
        config: cfg,
        resolved: &report.resolved,
        threads: rayon::current_num_threads(),
        stages: stages.iter().map(|s| s.name()).collect(),
        outputs: report.outputs.iter().map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()).collect(),
        pass_flags: &report.pass_flags,
        pass: passed,
        failure: failure.as_ref(),
        started_unix: started,
        finished_unix: now(),
    };
    if dir.is_dir() {
        let mut text = serde_json::to_string_pretty(&manifest).unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string());
        text.push('\n');
        if let Err(e) = pipeline::write_file(&dir.join("manifest.json"), text.as_bytes()) {
            failure.get_or_insert(Failure::from_core(&e));
        }
    }
    let status = if passed { Status::Passed } else { Status::Failed };
    Execution { status, report, failure, dir }
}
