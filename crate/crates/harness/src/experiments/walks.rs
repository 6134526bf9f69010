//! Walk-level experiments: empirical speed, the uniform LLN, slowdown
//! scaling, and hitting-time tails.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rwre_core::environment::{compute_invariants, Environment};
use rwre_core::estimators::{
    hitting_tail, slowdown_scaling, tags, uniform_lln_deviation, ScalingMode, SeedMode,
};
use rwre_core::stats::mean_stderr;
use rwre_core::walker::walk_final_position;
use rwre_core::Real;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiments::check_budget;
use crate::report::{ExperimentReport, Series, SeriesPoint};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SpeedParams {
    n: u64,
    se_band: Real,
}

impl Default for SpeedParams {
    fn default() -> Self {
        SpeedParams {
            n: 100_000,
            se_band: 4.0,
        }
    }
}

pub fn run_speed(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: SpeedParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let policy = config.seed_policy(200)?;
    check_budget(config, policy.replicas.saturating_mul(params.n))?;
    let analytic = compute_invariants(&spec)?.speed;
    let master = config.master_key();
    let speeds: Vec<Real> = (0..policy.replicas)
        .into_par_iter()
        .map(|r| {
            let seeds = policy.replica_seeds(master, r);
            let env = Environment::new(spec.clone(), seeds.env_seed)?;
            let fin = walk_final_position(&env, 0, params.n, seeds.walk_key);
            Ok(fin as Real / params.n as Real)
        })
        .collect::<Result<_>>()?;
    let (mean, se) = mean_stderr(&speeds);
    report.set_metric("empirical_speed", mean);
    report.set_metric("analytic_speed", analytic);
    report.set_metric("speed_se", se);
    let dev = (mean - analytic).abs();
    report.push_criterion(
        "speed",
        "empirical speed within the SE band of v_P",
        dev,
        params.se_band * se,
        dev <= params.se_band * se,
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LlnParams {
    a: Real,
    b: Real,
    n: u64,
    m: u64,
    masters: u64,
    threshold: Real,
    required_fraction: Real,
}

impl Default for LlnParams {
    fn default() -> Self {
        LlnParams {
            a: 0.0,
            b: 1.0,
            n: 10_000,
            m: 10,
            masters: 100,
            threshold: 0.05,
            required_fraction: 0.95,
        }
    }
}

pub fn run_lln(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: LlnParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let family = ((params.b - params.a) * params.n as Real).ceil() as u64 * params.m;
    check_budget(
        config,
        params.masters.saturating_mul(family).saturating_mul(params.n),
    )?;
    let master = config.master_key().derive(tags::MASTER);
    let deviations: Vec<Real> = (0..params.masters)
        .into_par_iter()
        .map(|i| {
            let mk = master.derive(i);
            let env = Environment::new(spec.clone(), mk.derive(tags::ENV).raw())?;
            uniform_lln_deviation(
                &env,
                params.a,
                params.b,
                params.n,
                params.m,
                mk.derive(tags::WALK),
            )
            .map_err(HarnessError::from)
        })
        .collect::<Result<_>>()?;
    let below = deviations.iter().filter(|&&d| d < params.threshold).count() as Real;
    let fraction = below / params.masters as Real;
    let mut sorted = deviations.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    report.set_metric("fraction_below_threshold", fraction);
    report.set_metric("median_deviation", sorted[sorted.len() / 2]);
    report.set_metric(
        "implied_gamma",
        (params.m as Real).ln() / (params.n as Real).ln(),
    );
    report.push_criterion(
        "uniform-lln",
        "fraction of master seeds with max deviation below threshold",
        fraction,
        params.required_fraction,
        fraction >= params.required_fraction,
    );
    report.series.push(Series {
        name: "lln_deviation_by_master".into(),
        points: deviations
            .iter()
            .enumerate()
            .map(|(i, &d)| SeriesPoint {
                x: i as f64,
                y: d,
                lo: None,
                hi: None,
            })
            .collect(),
    });
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SlowdownParams {
    /// Absolute slowdown threshold; when absent, `v_fraction * v_P`.
    v: Option<Real>,
    v_fraction: Real,
    ns: Vec<u64>,
    /// Averaged mode: allowed |fitted exponent - (1 - s)|.
    band: Real,
    free_fit: bool,
    require_decreasing: bool,
    require_nonoverlap: bool,
}

impl Default for SlowdownParams {
    fn default() -> Self {
        SlowdownParams {
            v: None,
            v_fraction: 0.5,
            ns: vec![200, 400, 800],
            band: 1.0,
            free_fit: false,
            require_decreasing: true,
            require_nonoverlap: true,
        }
    }
}

pub fn run_slowdown(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: SlowdownParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let policy = config.seed_policy(10_000)?;
    let total: u64 = params.ns.iter().sum();
    check_budget(config, policy.replicas.saturating_mul(total))?;
    let inv = compute_invariants(&spec)?;
    let v = params.v.unwrap_or(params.v_fraction * inv.speed);
    let mode = match policy.mode {
        SeedMode::Quenched { env_seed } => {
            report.derived_seeds.insert("env_seed".into(), env_seed);
            ScalingMode::Quenched
        }
        SeedMode::Averaged => ScalingMode::Averaged,
    };
    let diag = slowdown_scaling(
        &spec,
        v,
        &params.ns,
        &policy,
        config.master_key(),
        mode,
        params.free_fit,
    )?;
    report.set_metric("v", v);
    report.set_metric("speed", inv.speed);
    report.series.push(Series {
        name: "slowdown_probability".into(),
        points: diag
            .estimates
            .iter()
            .map(|e| SeriesPoint {
                x: e.n as f64,
                y: e.interval.estimate,
                lo: Some(e.interval.lo),
                hi: Some(e.interval.hi),
            })
            .collect(),
    });
    if params.require_decreasing {
        let strictly = diag
            .estimates
            .windows(2)
            .all(|w| w[1].interval.estimate < w[0].interval.estimate);
        report.push_criterion(
            "decreasing",
            "p_hat strictly decreasing along the n ladder",
            strictly as u64 as f64,
            1.0,
            strictly,
        );
    }
    if params.require_nonoverlap {
        let separated = diag
            .estimates
            .windows(2)
            .all(|w| w[1].interval.hi < w[0].interval.lo);
        report.push_criterion(
            "nonoverlap",
            "95% intervals of consecutive n disjoint",
            separated as u64 as f64,
            1.0,
            separated,
        );
    }
    match mode {
        ScalingMode::Averaged => {
            let fitted = diag
                .fitted_exponent()
                .ok_or_else(|| HarnessError::Config("params.ns: fit needs two usable points".into()))?;
            let reference = diag.reference_exponent.ok_or_else(|| {
                HarnessError::Config("environment: averaged scaling needs a tail exponent".into())
            })?;
            report.set_metric("fitted_exponent", fitted);
            report.set_metric("reference_exponent", reference);
            let dev = (fitted - reference).abs();
            report.push_criterion(
                "exponent-band",
                "|log-log slope - (1 - s)| within the desk-scale band",
                dev,
                params.band,
                dev <= params.band,
            );
        }
        ScalingMode::Quenched => {
            if let Some(fit) = diag.fit {
                report.set_metric("stretched_fit_r2", fit.r_squared);
                report.set_metric("stretched_fit_slope", fit.slope);
            }
            if let Some(free) = diag.free_fit {
                report.set_metric("free_fit_exponent", free.slope);
            }
            if let Some(reference) = diag.reference_exponent {
                report.set_metric("reference_exponent", reference);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct HittingParams {
    y_lo: i64,
    y_hi: i64,
    n: u64,
    mu: Real,
    replicas: u64,
    threshold: Real,
}

impl Default for HittingParams {
    fn default() -> Self {
        HittingParams {
            y_lo: 0,
            y_hi: 0,
            n: 1_000,
            mu: 4.0,
            replicas: 1_000,
            threshold: 0.01,
        }
    }
}

pub fn run_hitting(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: HittingParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let family = (params.y_hi - params.y_lo + 1) as u64;
    let cap = (params.n as Real * params.mu) as u64 + 1;
    check_budget(
        config,
        params.replicas.saturating_mul(family).saturating_mul(cap),
    )?;
    let env_seed = match config.seed_policy(params.replicas)?.mode {
        SeedMode::Quenched { env_seed } => env_seed,
        SeedMode::Averaged => config.master_key().derive(tags::ENV).derive(0).raw(),
    };
    report.derived_seeds.insert("env_seed".into(), env_seed);
    let env = Environment::new(spec, env_seed)?;
    let est = hitting_tail(
        &env,
        params.y_lo,
        params.y_hi,
        params.n,
        params.mu,
        params.replicas,
        config.master_key().derive(tags::WALK),
    )?;
    report.set_metric("p_hat", est.estimate);
    report.set_metric("p_hi", est.hi);
    report.push_criterion(
        "hitting-tail",
        "P(any walk exceeds the n*mu hitting budget) below threshold",
        est.estimate,
        params.threshold,
        est.estimate < params.threshold,
    );
    Ok(())
}
