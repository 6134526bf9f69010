//! Configuration-level experiments: quenched stationarity, convergence to
//! the Poisson-potential family, and the hydrodynamic limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rwre_core::environment::{compute_f, compute_invariants, Environment};
use rwre_core::estimators::{hydro_transport_error, tags, SeedMode};
use rwre_core::particles::{
    evolve_with_snapshots, sample_initial, BoundaryMode, InitialLaw,
};
use rwre_core::stats::{mean_stderr, poisson_gof, tv_distance_to_poisson};
use rwre_core::{Real, Site};

use crate::config::{ExperimentConfig, LawBlock, ProfileBlock, TestFunctionBlock};
use crate::error::{HarnessError, Result};
use crate::experiments::check_budget;
use crate::report::{ExperimentReport, Series, SeriesPoint};

fn quenched_env_seed(config: &ExperimentConfig) -> Result<u64> {
    Ok(match config.seed_policy(1)?.mode {
        SeedMode::Quenched { env_seed } => env_seed,
        SeedMode::Averaged => config.master_key().derive(tags::ENV).derive(0).raw(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct StationaryParams {
    alpha: Real,
    t: u64,
    probe_sites: u64,
    batch_size: u64,
    mean_z: Real,
    gof_level: Real,
    gof_center: Real,
    gof_band: Real,
}

impl Default for StationaryParams {
    fn default() -> Self {
        StationaryParams {
            alpha: 0.5,
            t: 1_000,
            probe_sites: 10,
            batch_size: 1_000,
            mean_z: 3.0,
            gof_level: 0.05,
            gof_center: 0.05,
            gof_band: 0.03,
        }
    }
}

pub fn run_stationary(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: StationaryParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let policy = config.seed_policy(10_000)?;
    let probes: Vec<Site> = (0..params.probe_sites as Site).collect();
    let span = params.probe_sites;
    check_budget(
        config,
        policy
            .replicas
            .saturating_mul(params.t.saturating_mul(params.t + span)),
    )?;
    let env_seed = quenched_env_seed(config)?;
    report.derived_seeds.insert("env_seed".into(), env_seed);
    let env = Environment::new(spec, env_seed)?;
    let law = InitialLaw::StationaryPoisson {
        alpha: params.alpha,
    };
    let pad = params.t as Site;
    let (lo, hi) = (probes[0] - pad, probes[probes.len() - 1] + pad);
    let f_win = compute_f(&env, probes[0], probes[probes.len() - 1], 1e-9)?;
    let master = config.master_key();

    let rows: Vec<Vec<u64>> = (0..policy.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<u64>> {
            let seeds = policy.replica_seeds(master, r);
            let cfg = sample_initial(&env, &law, lo, hi, seeds.config_key)?;
            let snaps =
                evolve_with_snapshots(&env, &cfg, params.t, seeds.dyn_key, BoundaryMode::Shrink, &[params.t])?;
            Ok(probes.iter().map(|&x| snaps[0].count_at(x)).collect())
        })
        .collect::<Result<_>>()?;

    let mut worst_z = 0.0f64;
    let mut rejections = 0u64;
    let mut tests = 0u64;
    let mut site_points = Vec::new();
    for (i, &x) in probes.iter().enumerate() {
        let lambda = params.alpha * f_win.value_at(x);
        let samples: Vec<u64> = rows.iter().map(|row| row[i]).collect();
        let vals: Vec<Real> = samples.iter().map(|&c| c as Real).collect();
        let (mean, se) = mean_stderr(&vals);
        let z = ((mean - lambda) / se).abs();
        worst_z = worst_z.max(z);
        site_points.push(SeriesPoint {
            x: x as f64,
            y: mean,
            lo: Some(mean - 1.96 * se),
            hi: Some(mean + 1.96 * se),
        });
        for batch in samples.chunks(params.batch_size as usize) {
            if batch.len() < params.batch_size as usize {
                continue;
            }
            let gof = poisson_gof(batch, lambda)?;
            tests += 1;
            if gof.p_value < params.gof_level {
                rejections += 1;
            }
        }
    }
    let rate = rejections as Real / tests as Real;
    report.set_metric("worst_mean_z", worst_z);
    report.set_metric("gof_rejection_rate", rate);
    report.set_metric("gof_tests", tests as Real);
    report.series.push(Series {
        name: "per_site_mean".into(),
        points: site_points,
    });
    report.push_criterion(
        "site-means",
        "per-site mean within z SEs of alpha f(theta^x omega)",
        worst_z,
        params.mean_z,
        worst_z <= params.mean_z,
    );
    let dev = (rate - params.gof_center).abs();
    report.push_criterion(
        "gof-calibration",
        "Poisson GOF rejection rate near the nominal level",
        dev,
        params.gof_band,
        dev <= params.gof_band,
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConvergeParams {
    law: Option<LawBlock>,
    /// Density of the limiting family; "speed" for alpha = v_P.
    alpha: toml::Value,
    ns: Vec<u64>,
    site: i64,
    tv_threshold: Real,
    /// The prefix of `ns` on which the TV sequence must strictly decrease.
    decreasing_count: usize,
}

impl Default for ConvergeParams {
    fn default() -> Self {
        ConvergeParams {
            law: None,
            alpha: toml::Value::String("speed".into()),
            ns: vec![10, 100, 1000, 2000],
            site: 0,
            tv_threshold: 0.05,
            decreasing_count: 3,
        }
    }
}

pub fn run_converge(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: ConvergeParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let policy = config.seed_policy(10_000)?;
    let n_max = *params.ns.iter().max().ok_or_else(|| {
        HarnessError::Config("params.ns: needs at least one horizon".into())
    })?;
    check_budget(
        config,
        policy.replicas.saturating_mul(n_max).saturating_mul(n_max),
    )?;
    let inv = compute_invariants(&spec)?;
    let alpha = match &params.alpha {
        toml::Value::String(s) if s == "speed" => inv.speed,
        toml::Value::Float(f) => *f,
        toml::Value::Integer(i) => *i as Real,
        other => {
            return Err(HarnessError::Config(format!(
                "params.alpha: expected number or \"speed\", got {other}"
            )))
        }
    };
    let law = match &params.law {
        Some(block) => block.to_law(inv.speed)?,
        None => InitialLaw::DeterministicConstant(1),
    };
    let env_seed = quenched_env_seed(config)?;
    report.derived_seeds.insert("env_seed".into(), env_seed);
    let env = Environment::new(spec, env_seed)?;
    let f_site = compute_f(&env, params.site, params.site, 1e-9)?.value_at(params.site);
    let lambda = alpha * f_site;
    report.set_metric("lambda", lambda);
    let mut ns = params.ns.clone();
    ns.sort_unstable();
    let master = config.master_key();
    let pad = n_max as Site;

    let rows: Vec<Vec<u64>> = (0..policy.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<u64>> {
            let seeds = policy.replica_seeds(master, r);
            let cfg = sample_initial(
                &env,
                &law,
                params.site - pad,
                params.site + pad,
                seeds.config_key,
            )?;
            let snaps = evolve_with_snapshots(
                &env,
                &cfg,
                n_max,
                seeds.dyn_key,
                BoundaryMode::Shrink,
                &ns,
            )?;
            Ok(snaps.iter().map(|c| c.count_at(params.site)).collect())
        })
        .collect::<Result<_>>()?;

    let mut tvs = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        let samples: Vec<u64> = rows.iter().map(|row| row[i]).collect();
        let tv = tv_distance_to_poisson(&samples, lambda)?;
        report.set_metric(&format!("tv_at_{n}"), tv);
        tvs.push(tv);
    }
    report.series.push(Series {
        name: "tv_to_stationary".into(),
        points: ns
            .iter()
            .zip(&tvs)
            .map(|(&n, &tv)| SeriesPoint {
                x: n as f64,
                y: tv,
                lo: None,
                hi: None,
            })
            .collect(),
    });
    let k = params.decreasing_count.min(tvs.len());
    let decreasing = tvs[..k].windows(2).all(|w| w[1] < w[0]);
    report.push_criterion(
        "tv-decreasing",
        "TV to the Poisson-potential law decreases along the horizon ladder",
        decreasing as u64 as f64,
        1.0,
        decreasing,
    );
    let last = *tvs.last().unwrap();
    report.push_criterion(
        "tv-final",
        "TV at the longest horizon below threshold",
        last,
        params.tv_threshold,
        last < params.tv_threshold,
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct HydroParams {
    profile: ProfileBlock,
    gs: Vec<TestFunctionBlock>,
    n_scale: u64,
    t: Real,
    masters: u64,
    threshold: Real,
    required_fraction: Real,
    trend_scales: Vec<u64>,
    trend_masters: u64,
}

impl Default for HydroParams {
    fn default() -> Self {
        HydroParams {
            profile: ProfileBlock {
                shape: "indicator".into(),
                a: Some(0.0),
                b: Some(1.0),
                height: Some(1.0),
                knots: None,
                rounding: "poisson".into(),
            },
            gs: vec![TestFunctionBlock {
                shape: "triangle".into(),
                lo: Some(0.9),
                hi: Some(2.1),
                knots: None,
            }],
            n_scale: 1_000,
            t: 1.0,
            masters: 100,
            threshold: 0.05,
            required_fraction: 0.95,
            trend_scales: vec![500, 2000],
            trend_masters: 100,
        }
    }
}

pub fn run_hydro(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: HydroParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let profile = params.profile.to_profile()?;
    let rounding = params.profile.rounding()?;
    let gs: Vec<_> = params
        .gs
        .iter()
        .map(|b| b.to_test_function())
        .collect::<Result<_>>()?;
    if gs.is_empty() {
        return Err(HarnessError::Config(
            "params.gs: needs at least one test function".into(),
        ));
    }
    let mut scales: Vec<u64> = params.trend_scales.clone();
    scales.push(params.n_scale);
    scales.sort_unstable();
    scales.dedup();
    let span: Real = gs
        .iter()
        .map(|g: &rwre_core::estimators::TestFunction<Real>| {
            let (a, b) = g.support();
            b - a
        })
        .fold(0.0, Real::max)
        + 2.0 * params.t
        + 2.0;
    let per_scale: u64 = scales
        .iter()
        .map(|&n| ((span * n as Real) as u64).saturating_mul((params.t * n as Real) as u64 + 1))
        .sum();
    check_budget(
        config,
        params.masters.max(params.trend_masters).saturating_mul(per_scale),
    )?;

    let master = config.master_key().derive(tags::MASTER);
    let mut medians = Vec::new();
    let mut main_errors: Vec<Real> = Vec::new();
    for &scale in &scales {
        let masters = if scale == params.n_scale {
            params.masters
        } else {
            params.trend_masters
        };
        let errors: Vec<Real> = (0..masters)
            .into_par_iter()
            .map(|i| -> Result<Real> {
                let run = hydro_transport_error(
                    &spec,
                    &profile,
                    scale,
                    params.t,
                    &gs,
                    master.derive(scale).derive(i),
                    rounding,
                )?;
                Ok(run.errors.iter().copied().fold(0.0, Real::max))
            })
            .collect::<Result<_>>()?;
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push((scale, sorted[sorted.len() / 2]));
        if scale == params.n_scale {
            main_errors = errors;
        }
    }

    let below = main_errors
        .iter()
        .filter(|&&e| e < params.threshold)
        .count() as Real;
    let fraction = below / params.masters as Real;
    report.set_metric("fraction_below_threshold", fraction);
    for &(scale, median) in &medians {
        report.set_metric(&format!("median_error_at_{scale}"), median);
    }
    report.series.push(Series {
        name: "error_by_master".into(),
        points: main_errors
            .iter()
            .enumerate()
            .map(|(i, &e)| SeriesPoint {
                x: i as f64,
                y: e,
                lo: None,
                hi: None,
            })
            .collect(),
    });
    report.series.push(Series {
        name: "median_error_by_scale".into(),
        points: medians
            .iter()
            .map(|&(s, m)| SeriesPoint {
                x: s as f64,
                y: m,
                lo: None,
                hi: None,
            })
            .collect(),
    });
    report.push_criterion(
        "transport-error",
        "fraction of master seeds with every pairing error below threshold",
        fraction,
        params.required_fraction,
        fraction >= params.required_fraction,
    );
    let first = medians.first().unwrap().1;
    let last = medians.last().unwrap().1;
    report.push_criterion(
        "error-trend",
        "median error at the largest scale below the smallest scale",
        last,
        first,
        last < first,
    );
    Ok(())
}
