//! `rwre`: run, validate, and plot random-environment walk experiments.
//!
//! Exit codes: 0 all criteria pass, 1 any criterion fails, 2 config or
//! runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rwre_harness::{emit_plot_data, run, ExperimentConfig, ExperimentReport, HarnessError};

#[derive(Parser)]
#[command(name = "rwre", version, about = "Monte Carlo lab for random walks in random environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config, or every *.toml in a directory.
    Run {
        /// Config file or directory of config files.
        path: PathBuf,
        /// Override the report output path (single-config runs only).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override the series/plot-data directory.
        #[arg(long)]
        series_dir: Option<PathBuf>,
    },
    /// Schema-check a config without running it.
    Validate { path: PathBuf },
    /// Emit long-format plot CSVs from a stored report.
    Plot {
        report: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn init_workers() {
    if let Ok(v) = std::env::var("RWRE_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn config_paths(path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if path.is_dir() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| HarnessError::io(path.display().to_string(), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
            .collect();
        found.sort();
        if found.is_empty() {
            return Err(HarnessError::Config(format!(
                "no .toml configs under {}",
                path.display()
            )));
        }
        Ok(found)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn run_command(
    path: &Path,
    report_override: Option<&Path>,
    series_override: Option<&Path>,
) -> Result<bool, HarnessError> {
    let paths = config_paths(path)?;
    if paths.len() > 1 && report_override.is_some() {
        return Err(HarnessError::Config(
            "--report applies to single-config runs only".into(),
        ));
    }
    let mut all_pass = true;
    for config_path in &paths {
        let mut config = ExperimentConfig::load(config_path)?;
        if let Some(p) = report_override {
            config.output.report = Some(p.display().to_string());
        }
        if let Some(d) = series_override {
            config.output.series_dir = Some(d.display().to_string());
        }
        let report = run(&config)?;
        println!(
            "{}: {} [{} ms]",
            config_path.display(),
            if report.all_pass() { "PASS" } else { "FAIL" },
            report.wall_clock_ms
        );
        for c in &report.criteria {
            println!(
                "  {:<22} {:<6} value={:.6e} threshold={:.6e}  ({})",
                c.name,
                if c.pass { "pass" } else { "FAIL" },
                c.value,
                c.threshold,
                c.description
            );
        }
        all_pass &= report.all_pass();
    }
    Ok(all_pass)
}

fn main() -> ExitCode {
    init_workers();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            path,
            report,
            series_dir,
        } => run_command(path, report.as_deref(), series_dir.as_deref()),
        Command::Validate { path } => ExperimentConfig::load(path).map(|cfg| {
            println!("{}: valid ({} experiment)", path.display(), cfg.kind);
            true
        }),
        Command::Plot { report, out } => ExperimentReport::load(report)
            .and_then(|rep| emit_plot_data(&rep, out))
            .map(|files| {
                for f in &files {
                    println!("wrote {}", f.display());
                }
                true
            }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
