//! Coupled-process experiments: discrepancy decay and the two-walk meeting
//! lemma.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rwre_core::coupling::{discrepancy_decay, meeting_experiment};
use rwre_core::environment::{compute_invariants, Environment};
use rwre_core::estimators::{tags, SeedMode};
use rwre_core::Real;

use crate::config::{ExperimentConfig, LawBlock};
use crate::error::Result;
use crate::experiments::check_budget;
use crate::report::{write_atomic, ExperimentReport, Series, SeriesPoint};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CoupleParams {
    law_eta: Option<LawBlock>,
    law_zeta: Option<LawBlock>,
    window_lo: i64,
    window_hi: i64,
    t: u64,
    step_z: Real,
    diff_z: Real,
    /// Required fractional drop of the beta- density from start to finish.
    reduction: Real,
}

impl Default for CoupleParams {
    fn default() -> Self {
        CoupleParams {
            law_eta: None,
            law_zeta: None,
            window_lo: -500,
            window_hi: 500,
            t: 1_000,
            step_z: 2.0,
            diff_z: 3.0,
            reduction: 0.5,
        }
    }
}

pub fn run_couple(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: CoupleParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    let policy = config.seed_policy(1_000)?;
    let width = (params.window_hi - params.window_lo + 1) as u64;
    check_budget(
        config,
        policy
            .replicas
            .saturating_mul(params.t.saturating_mul(width + params.t)),
    )?;
    let speed = compute_invariants(&spec)?.speed;
    let law_eta = match &params.law_eta {
        Some(b) => b.to_law(speed)?,
        None => rwre_core::particles::InitialLaw::DeterministicConstant(1),
    };
    let law_zeta = match &params.law_zeta {
        Some(b) => b.to_law(speed)?,
        None => rwre_core::particles::InitialLaw::StationaryPoisson { alpha: speed },
    };
    let decay = discrepancy_decay(
        &spec,
        &law_eta,
        &law_zeta,
        params.window_lo,
        params.window_hi,
        params.t,
        &policy,
        config.master_key(),
    )?;

    let series_of = |name: &str, mean: &[Real], se: &[Real]| Series {
        name: name.into(),
        points: decay
            .steps
            .iter()
            .zip(mean.iter().zip(se))
            .map(|(&t, (&m, &s))| SeriesPoint {
                x: t as f64,
                y: m,
                lo: Some(m - 1.96 * s),
                hi: Some(m + 1.96 * s),
            })
            .collect(),
    };
    report.series.push(series_of(
        "beta_plus_density",
        &decay.beta_plus_mean,
        &decay.beta_plus_se,
    ));
    report.series.push(series_of(
        "beta_minus_density",
        &decay.beta_minus_mean,
        &decay.beta_minus_se,
    ));

    let minus_monotone = decay.beta_minus_nonincreasing_within(params.step_z);
    let plus_monotone = decay.beta_plus_nonincreasing_within(params.step_z);
    let ratio = decay.beta_minus_reduction_ratio();
    let diff_constant = decay.difference_constant_within(params.diff_z);
    report.set_metric("beta_minus_initial", decay.beta_minus_mean[0]);
    report.set_metric(
        "beta_minus_final",
        *decay.beta_minus_mean.last().unwrap(),
    );
    report.set_metric("beta_minus_reduction_ratio", ratio);
    report.push_criterion(
        "minus-monotone",
        "beta- density non-increasing stepwise within the SE band",
        minus_monotone as u64 as f64,
        1.0,
        minus_monotone,
    );
    report.push_criterion(
        "plus-monotone",
        "beta+ density non-increasing stepwise within the SE band",
        plus_monotone as u64 as f64,
        1.0,
        plus_monotone,
    );
    report.push_criterion(
        "minus-reduction",
        "beta- density reduced by the required fraction over the horizon",
        ratio,
        1.0 - params.reduction,
        ratio <= 1.0 - params.reduction,
    );
    report.push_criterion(
        "difference-constant",
        "beta+ - beta- density difference constant within the SE band",
        diff_constant as u64 as f64,
        1.0,
        diff_constant,
    );
    Ok(())
}

/// Combined discrepancy CSV: `step,beta_plus_density,beta_minus_density,
/// beta_plus_stderr,beta_minus_stderr`.
pub fn write_discrepancy_csv(report: &ExperimentReport, dir: &Path) -> Result<()> {
    let find = |name: &str| report.series.iter().find(|s| s.name == name);
    let (plus, minus) = match (find("beta_plus_density"), find("beta_minus_density")) {
        (Some(p), Some(m)) => (p, m),
        _ => return Ok(()),
    };
    let mut csv =
        String::from("step,beta_plus_density,beta_minus_density,beta_plus_stderr,beta_minus_stderr\n");
    for (p, m) in plus.points.iter().zip(&minus.points) {
        let se = |pt: &SeriesPoint| pt.hi.map(|hi| (hi - pt.y) / 1.96).unwrap_or(0.0);
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p.x,
            p.y,
            m.y,
            se(p),
            se(m)
        ));
    }
    write_atomic(&dir.join("couple_discrepancy.csv"), csv.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MeetParams {
    y: i64,
    z: i64,
    horizon: u64,
    replicas: u64,
    threshold: Real,
}

impl Default for MeetParams {
    fn default() -> Self {
        MeetParams {
            y: 0,
            z: 2,
            horizon: 100_000,
            replicas: 1_000,
            threshold: 0.999,
        }
    }
}

pub fn run_meet(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let params: MeetParams = config.typed_params()?;
    let spec = config.environment_spec()?;
    check_budget(
        config,
        params.replicas.saturating_mul(params.horizon).saturating_mul(2),
    )?;
    let env_seed = match config.seed_policy(params.replicas)?.mode {
        SeedMode::Quenched { env_seed } => env_seed,
        SeedMode::Averaged => config.master_key().derive(tags::ENV).derive(0).raw(),
    };
    report.derived_seeds.insert("env_seed".into(), env_seed);
    let env = Environment::new(spec, env_seed)?;
    let rep = meeting_experiment::<Real>(
        &env,
        params.y,
        params.z,
        params.horizon,
        params.replicas,
        config.master_key().derive(tags::WALK),
    )?;
    report.set_metric("fraction_met", rep.fraction_met);
    report.series.push(Series {
        name: "fraction_met_by_horizon".into(),
        points: rep
            .fraction_by_horizon
            .iter()
            .map(|&(h, f)| SeriesPoint {
                x: h as f64,
                y: f,
                lo: None,
                hi: None,
            })
            .collect(),
    });
    report.series.push(Series {
        name: "meeting_time_histogram".into(),
        points: rep
            .histogram
            .iter()
            .map(|&(edge, count)| SeriesPoint {
                x: edge as f64,
                y: count as f64,
                lo: None,
                hi: None,
            })
            .collect(),
    });
    report.push_criterion(
        "fraction-met",
        "fraction of pairs meeting within the horizon",
        rep.fraction_met,
        params.threshold,
        rep.fraction_met >= params.threshold,
    );
    let monotone = rep
        .fraction_by_horizon
        .windows(2)
        .all(|w| w[1].1 >= w[0].1);
    report.push_criterion(
        "fraction-monotone",
        "fraction met non-decreasing in the horizon (shared trajectories)",
        monotone as u64 as f64,
        1.0,
        monotone,
    );
    Ok(())
}
