//! Experiment kinds: each composes the simulation modules into a
//! reproducible run and fills an [`ExperimentReport`] with metrics,
//! pass/fail criteria, and plottable series.

mod analytic;
mod coupled;
mod particles;
mod walks;

use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::report::{emit_plot_data, ExperimentReport};

/// Execute the experiment described by `config`, then persist the report and
/// series if output paths are configured. All writes are atomic.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let mut report = ExperimentReport::new(config);
    match config.kind.as_str() {
        "invariants" => analytic::run_invariants(config, &mut report)?,
        "f-check" => analytic::run_f_check(config, &mut report)?,
        "speed" => walks::run_speed(config, &mut report)?,
        "lln" => walks::run_lln(config, &mut report)?,
        "slowdown" => walks::run_slowdown(config, &mut report)?,
        "hitting" => walks::run_hitting(config, &mut report)?,
        "stationary" => particles::run_stationary(config, &mut report)?,
        "converge" => particles::run_converge(config, &mut report)?,
        "hydro" => particles::run_hydro(config, &mut report)?,
        "couple" => coupled::run_couple(config, &mut report)?,
        "meet" => coupled::run_meet(config, &mut report)?,
        other => {
            return Err(HarnessError::Config(format!(
                "kind: unknown experiment kind `{other}`"
            )))
        }
    }
    report.wall_clock_ms = started.elapsed().as_millis() as u64;

    if let Some(path) = &config.output.report {
        report.write(std::path::Path::new(path))?;
    }
    if let Some(dir) = &config.output.series_dir {
        if !report.series.is_empty() {
            emit_plot_data(&report, std::path::Path::new(dir))?;
        }
        if config.kind == "couple" {
            coupled::write_discrepancy_csv(&report, std::path::Path::new(dir))?;
        }
    }
    Ok(report)
}

/// Fail fast when the estimated work exceeds the configured budget.
pub(crate) fn check_budget(config: &ExperimentConfig, estimated: u64) -> Result<()> {
    let cap = config.limits.max_site_steps;
    if estimated > cap {
        return Err(HarnessError::ResourceCap { estimated, cap });
    }
    Ok(())
}
