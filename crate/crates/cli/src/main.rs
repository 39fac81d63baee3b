use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lindiff_cli::config::{self, ConfigError, ExperimentConfig, KernelSource};
use lindiff_cli::pipeline::{validate_source, Stage};
use lindiff_cli::{execute, Failure, Status};

#[derive(Parser)]
#[command(name = "lindiff", version, about = "Diffusion of a lattice particle under disordered Lindblad dynamics")]
struct Cli {
    /// Worker threads for ensemble runs (overrides `parallelism`).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Use a shipped config instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config field, e.g. `--set model.g=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides the environment and the config).
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline configured in the file.
    Run(ConfigArgs),
    /// Check a kernel file (or a config's kernel) against the model assumptions.
    ValidateKernel {
        /// Kernel file, or an experiment config with `--config`.
        path: PathBuf,
        /// Treat `path` as an experiment config.
        #[arg(long)]
        config: bool,
        #[arg(long, short = 'o')]
        output_dir: Option<PathBuf>,
    },
    /// Ensemble mean-squared displacement.
    Msd(ConfigArgs),
    /// Diffusion matrix by the configured methods at a single coupling.
    Diffusion(ConfigArgs),
    /// Diffusion over `model.g_list`, with the small-coupling analysis when configured.
    SweepG(ConfigArgs),
    /// Localization length of the dissipation-free dynamics.
    Localization(ConfigArgs),
    /// Randomized checks of the large-coupling resolvent limit.
    AppendixChecks(ConfigArgs),
    /// List shipped configs, or print one.
    Presets { name: Option<String> },
}

fn fail_config(e: &ConfigError) -> ExitCode {
    report_failure(&Failure::config(e));
    ExitCode::from(Status::ConfigInvalid.code() as u8)
}

fn report_failure(f: &Failure) {
    eprintln!("{}", serde_json::to_string(f).unwrap_or_else(|_| f.message.clone()));
}

fn load(args: &ConfigArgs) -> Result<(ExperimentConfig, Option<PathBuf>), ConfigError> {
    match (&args.config, &args.preset) {
        (Some(path), _) => Ok((config::load_config(path, &args.overrides)?, Some(path.clone()))),
        (None, Some(name)) => {
            let text = config::preset_text(name).ok_or_else(|| ConfigError::Invalid { field: "--preset".into(), reason: format!("unknown preset `{name}`") })?;
            Ok((config::parse_config(text, &args.overrides)?, None))
        }
        (None, None) => unreachable!("clap requires one of them"),
    }
}

fn init_threads(cli_threads: Option<usize>, cfg: Option<&ExperimentConfig>) {
    if let Some(n) = cli_threads.or(cfg.and_then(|c| c.parallelism)) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn run_with(args: &ConfigArgs, command: &str, stages: Option<Vec<Stage>>, threads: Option<usize>) -> ExitCode {
    let (cfg, path) = match load(args) {
        Ok(v) => v,
        Err(e) => return fail_config(&e),
    };
    init_threads(threads, Some(&cfg));
    let exec = execute(&cfg, command, stages, path.as_deref(), args.output_dir.as_deref());
    if let Some(f) = &exec.failure {
        report_failure(f);
    }
    let failed: Vec<&String> = exec.report.pass_flags.iter().filter(|(_, &v)| !v).map(|(k, _)| k).collect();
    println!(
        "{}: {} ({} checks, {} failed{}) -> {}",
        command,
        if exec.status == Status::Passed { "pass" } else { "FAIL" },
        exec.report.pass_flags.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(": {}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")) },
        exec.dir.display()
    );
    ExitCode::from(exec.status.code() as u8)
}

fn validate_kernel(path: &Path, as_config: bool, out: Option<&Path>, threads: Option<usize>) -> ExitCode {
    if as_config {
        let args = ConfigArgs { config: Some(path.to_path_buf()), preset: None, overrides: Vec::new(), output_dir: out.map(Path::to_path_buf) };
        return run_with(&args, "validate-kernel", Some(vec![Stage::ValidateKernel]), threads);
    }
    init_threads(threads, None);
    let src = match KernelSource::load(path) {
        Ok(s) => s,
        Err(e) => return fail_config(&e),
    };
    let rep = match validate_source(&src, None) {
        Ok(r) => r,
        Err(e) => {
            report_failure(&Failure::from_core(&e));
            return ExitCode::from(Status::Failed.code() as u8);
        }
    };
    let text = serde_json::to_string_pretty(&rep).expect("report serializes");
    if let Some(dir) = out {
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join("kernel_report.json"), format!("{text}\n"))) {
            report_failure(&Failure { error: "OutputUnwritable".into(), message: e.to_string() });
            return ExitCode::from(Status::Failed.code() as u8);
        }
    }
    println!("{text}");
    for item in &rep.items {
        eprintln!("{:<12} {}  {}", format!("{:?}", item.requirement), if item.passed { "pass" } else { "FAIL" }, item.detail);
    }
    ExitCode::from(if rep.all_pass() { Status::Passed } else { Status::Failed }.code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let t = cli.threads;
    match &cli.command {
        Command::Run(a) => run_with(a, "run", None, t),
        Command::ValidateKernel { path, config, output_dir } => validate_kernel(path, *config, output_dir.as_deref(), t),
        Command::Msd(a) => run_with(a, "msd", Some(vec![Stage::Msd]), t),
        Command::Diffusion(a) => run_with(a, "diffusion", Some(vec![Stage::Diffusion]), t),
        Command::SweepG(a) => run_with(a, "sweep-g", Some(vec![Stage::SweepG]), t),
        Command::Localization(a) => run_with(a, "localization", Some(vec![Stage::Localization]), t),
        Command::AppendixChecks(a) => run_with(a, "appendix-checks", Some(vec![Stage::AppendixChecks]), t),
        Command::Presets { name: None } => {
            for (n, _) in config::PRESETS {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Command::Presets { name: Some(n) } => match config::preset_text(n) {
            Some(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            None => fail_config(&ConfigError::Invalid { field: "preset".into(), reason: format!("unknown preset `{n}`") }),
        },
    }
}
