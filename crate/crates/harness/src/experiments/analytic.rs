//! Analytic experiments: model invariants and the potential check.

use serde::{Deserialize, Serialize};

use rwre_core::environment::{
    compute_f, compute_invariants, rho_moment, Environment,
};
use rwre_core::estimators::tags;
use rwre_core::Real;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiments::check_budget;
use crate::report::ExperimentReport;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InvariantsParams {
    s_residual_tol: Real,
}

impl Default for InvariantsParams {
    fn default() -> Self {
        InvariantsParams {
            s_residual_tol: 1e-10,
        }
    }
}

pub fn run_invariants(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: InvariantsParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let inv = compute_invariants(&spec)?;
    report.set_metric("mean_rho", inv.mean_rho);
    report.set_metric("speed", inv.speed);
    report.set_metric("nestling", inv.nestling as u64 as f64);
    if let Some(s) = inv.s_exponent {
        let residual = (rho_moment(&spec, s) - 1.0).abs();
        report.set_metric("s_exponent", s);
        report.set_metric("s_residual", residual);
        report.push_criterion(
            "s-residual",
            "|E[rho^s] - 1| at the returned exponent",
            residual,
            params.s_residual_tol,
            residual <= params.s_residual_tol,
        );
    }
    report.push_criterion(
        "transient",
        "E[rho] < 1 (Assumption 2)",
        inv.mean_rho,
        1.0,
        inv.mean_rho < 1.0,
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FCheckParams {
    window_lo: i64,
    window_hi: i64,
    tol: Real,
    /// When set, adds the `mean-f` criterion: relative deviation of the
    /// window average of `f` from `1/v_P`.
    mean_band: Option<Real>,
    /// When set (constant environments), adds the `f-value` criterion.
    expected_f: Option<Real>,
}

impl Default for FCheckParams {
    fn default() -> Self {
        FCheckParams {
            window_lo: 0,
            window_hi: 10_000,
            tol: 1e-8,
            mean_band: None,
            expected_f: None,
        }
    }
}

pub fn run_f_check(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: FCheckParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let width = (params.window_hi - params.window_lo).unsigned_abs();
    check_budget(config, width)?;
    let inv = compute_invariants(&spec)?;
    let env_seed = match config.seed_policy(1)?.mode {
        rwre_core::estimators::SeedMode::Quenched { env_seed } => env_seed,
        rwre_core::estimators::SeedMode::Averaged => {
            config.master_key().derive(tags::ENV).derive(0).raw()
        }
    };
    report.derived_seeds.insert("env_seed".into(), env_seed);
    let env = Environment::new(spec, env_seed)?;
    let win = compute_f(&env, params.window_lo, params.window_hi, params.tol)?;

    let residual = win.max_identity_residual(&env);
    let average = win.site_average();
    let inv_speed = 1.0 / inv.speed;
    let f_min = win.values().iter().copied().fold(f64::INFINITY, f64::min);
    report.set_metric("max_identity_residual", residual);
    report.set_metric("site_average_f", average);
    report.set_metric("inverse_speed", inv_speed);
    report.set_metric("f_min", f_min);
    report.push_criterion(
        "f-identity",
        "max three-term identity residual <= 3 tol",
        residual,
        3.0 * params.tol,
        residual <= 3.0 * params.tol,
    );
    if let Some(band) = params.mean_band {
        let rel = (average - inv_speed).abs() / inv_speed;
        report.push_criterion(
            "mean-f",
            "relative deviation of window-average f from 1/v_P",
            rel,
            band,
            rel <= band,
        );
    }
    if let Some(expected) = params.expected_f {
        let worst = win
            .values()
            .iter()
            .map(|&v| (v - expected).abs())
            .fold(0.0, f64::max);
        report.push_criterion(
            "f-value",
            "max deviation of f from its closed form",
            worst,
            3.0 * params.tol,
            worst <= 3.0 * params.tol,
        );
    }
    Ok(())
}
