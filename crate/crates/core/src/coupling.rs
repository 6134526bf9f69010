//! Coupling of two particle systems in the same environment.
//!
//! Matched particles move with shared variates; unmatched `+` (excess of the
//! first system) and `-` (excess of the second) particles move with
//! independent variates and re-match on arrival, site by site. Counts of
//! `(xi, beta+, beta-)` are a sufficient statistic for everything measured
//! here, so no particle labels are stored.

use rayon::prelude::*;

use crate::environment::{compute_invariants, Environment, EnvironmentSpec};
use crate::error::{ModelError, Result};
use crate::estimators::SeedPolicy;
use crate::particles::{sample_initial, Configuration, InitialLaw};
use crate::rng::{binomial, StreamKey};
use crate::scalar::Scalar;
use crate::stats::mean_stderr;
use crate::Site;

/// Coupled state: matched pairs `xi` plus unmatched discrepancy fields.
///
/// Invariants maintained by every operation:
/// complementarity `beta_plus(x) * beta_minus(x) = 0`, and marginal
/// reconstruction `eta = xi + beta_plus`, `zeta = xi + beta_minus`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoupledConfiguration {
    lo: Site,
    hi: Site,
    xi: Vec<u64>,
    beta_plus: Vec<u64>,
    beta_minus: Vec<u64>,
    time: u64,
}

impl CoupledConfiguration {
    pub fn window(&self) -> (Site, Site) {
        (self.lo, self.hi)
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    #[inline]
    fn idx(&self, x: Site) -> usize {
        (x - self.lo) as usize
    }

    pub fn xi_at(&self, x: Site) -> u64 {
        self.xi[self.idx(x)]
    }

    pub fn beta_plus_at(&self, x: Site) -> u64 {
        self.beta_plus[self.idx(x)]
    }

    pub fn beta_minus_at(&self, x: Site) -> u64 {
        self.beta_minus[self.idx(x)]
    }

    /// First marginal `eta = xi + beta_plus`.
    pub fn eta(&self) -> Configuration {
        let counts = self
            .xi
            .iter()
            .zip(&self.beta_plus)
            .map(|(&a, &b)| a + b)
            .collect();
        Configuration::from_counts(self.lo, counts, self.time)
    }

    /// Second marginal `zeta = xi + beta_minus`.
    pub fn zeta(&self) -> Configuration {
        let counts = self
            .xi
            .iter()
            .zip(&self.beta_minus)
            .map(|(&a, &b)| a + b)
            .collect();
        Configuration::from_counts(self.lo, counts, self.time)
    }

    /// Matched pairs count double (one particle from each system).
    pub fn total_particles(&self) -> u64 {
        self.xi.iter().map(|&x| 2 * x).sum::<u64>()
            + self.beta_plus.iter().sum::<u64>()
            + self.beta_minus.iter().sum::<u64>()
    }

    pub fn complementarity_holds(&self) -> bool {
        self.beta_plus
            .iter()
            .zip(&self.beta_minus)
            .all(|(&p, &m)| p == 0 || m == 0)
    }

    /// Spatial average of `beta+` (respectively `beta-`) over `[lo, hi]`.
    pub fn beta_density<F: Scalar>(&self, lo: Site, hi: Site, minus: bool) -> F {
        debug_assert!(lo >= self.lo && hi <= self.hi && lo <= hi);
        let field = if minus { &self.beta_minus } else { &self.beta_plus };
        let sum: u64 = ((lo - self.lo) as usize..=(hi - self.lo) as usize)
            .map(|i| field[i])
            .sum();
        F::from_u64(sum).unwrap() / F::from_i64(hi - lo + 1).unwrap()
    }
}

/// Maximal matching of two configurations on equal windows:
/// `xi = eta ^ zeta`, `beta+ = (eta - zeta)^+`, `beta- = (eta - zeta)^-`.
pub fn couple_initial(eta0: &Configuration, zeta0: &Configuration) -> Result<CoupledConfiguration> {
    let (elo, ehi) = eta0.window();
    let (zlo, zhi) = zeta0.window();
    if (elo, ehi) != (zlo, zhi) {
        return Err(ModelError::WindowMismatch(elo, ehi, zlo, zhi));
    }
    if eta0.time() != zeta0.time() {
        return Err(ModelError::InvalidParameter(
            "coupled configurations must share a time origin".into(),
        ));
    }
    let n = (ehi - elo + 1) as usize;
    let mut xi = vec![0u64; n];
    let mut beta_plus = vec![0u64; n];
    let mut beta_minus = vec![0u64; n];
    for i in 0..n {
        let x = elo + i as Site;
        let e = eta0.count_at(x);
        let z = zeta0.count_at(x);
        xi[i] = e.min(z);
        beta_plus[i] = e.saturating_sub(z);
        beta_minus[i] = z.saturating_sub(e);
    }
    Ok(CoupledConfiguration {
        lo: elo,
        hi: ehi,
        xi,
        beta_plus,
        beta_minus,
        time: eta0.time(),
    })
}

/// Window semantics shared with [`crate::particles::evolve`].
pub use crate::particles::BoundaryMode;

/// One step of the coupled dynamics.
///
/// Matched particles at a site move by one shared binomial draw on the same
/// stream the uncoupled dynamics would use (so a fully matched state steps
/// exactly like [`crate::particles::evolve`] under equal seeds); each
/// discrepancy population moves with its own independent stream. Arrivals
/// re-match per site: `xi` gains matched arrivals plus `min(arr+, arr-)`,
/// the new discrepancies are `(arr+ - arr-)^+` and `(arr+ - arr-)^-`.
pub fn coupled_step<F: Scalar>(
    env: &Environment<F>,
    cc: &CoupledConfiguration,
    dyn_key: StreamKey,
    mode: BoundaryMode,
) -> Result<CoupledConfiguration> {
    let mut out = None;
    coupled_evolve(env, cc, 1, dyn_key, mode, &mut |c| out = Some(c.clone()))?;
    Ok(out.expect("final state emitted"))
}

/// Advance `t_steps` steps, invoking the observer after every step (not on
/// the initial state).
pub fn coupled_evolve<F: Scalar>(
    env: &Environment<F>,
    cc: &CoupledConfiguration,
    t_steps: u64,
    dyn_key: StreamKey,
    mode: BoundaryMode,
    observe: &mut dyn FnMut(&CoupledConfiguration),
) -> Result<()> {
    if mode == BoundaryMode::Shrink && cc.hi - cc.lo < 2 * t_steps as Site {
        return Err(ModelError::WindowTooSmall(format!(
            "window [{}, {}] cannot shrink by {t_steps} per side",
            cc.lo, cc.hi
        )));
    }
    let omegas = match mode {
        BoundaryMode::Shrink => env.omega_window(cc.lo, cc.hi),
        BoundaryMode::Expand => {
            env.omega_window(cc.lo - t_steps as Site, cc.hi + t_steps as Site)
        }
    };
    let mut cur = cc.clone();
    for _ in 0..t_steps {
        let step_key = dyn_key.derive(cur.time);
        let (lo, hi) = (cur.lo, cur.hi);
        let (nlo, nhi) = match mode {
            BoundaryMode::Shrink => (lo + 1, hi - 1),
            BoundaryMode::Expand => (lo - 1, hi + 1),
        };
        let width = (nhi - nlo + 1) as usize;
        let mut xi_arr = vec![0u64; width];
        let mut plus_arr = vec![0u64; width];
        let mut minus_arr = vec![0u64; width];
        let deposit = |arr: &mut Vec<u64>, x: Site, v: u64| {
            if v > 0 && x >= nlo && x <= nhi {
                arr[(x - nlo) as usize] += v;
            }
        };
        for i in 0..cur.xi.len() {
            let x = lo + i as Site;
            let w = omegas.value_at(x);
            let site_key = step_key.derive_signed(x);
            let k0 = cur.xi[i];
            if k0 > 0 {
                let right = binomial(k0, w, site_key);
                deposit(&mut xi_arr, x + 1, right);
                deposit(&mut xi_arr, x - 1, k0 - right);
            }
            let kp = cur.beta_plus[i];
            if kp > 0 {
                let right = binomial(kp, w, site_key.derive(1));
                deposit(&mut plus_arr, x + 1, right);
                deposit(&mut plus_arr, x - 1, kp - right);
            }
            let km = cur.beta_minus[i];
            if km > 0 {
                let right = binomial(km, w, site_key.derive(2));
                deposit(&mut minus_arr, x + 1, right);
                deposit(&mut minus_arr, x - 1, km - right);
            }
        }
        // Re-match arrivals site by site.
        let mut xi = vec![0u64; width];
        let mut beta_plus = vec![0u64; width];
        let mut beta_minus = vec![0u64; width];
        for i in 0..width {
            let matched = plus_arr[i].min(minus_arr[i]);
            xi[i] = xi_arr[i] + matched;
            beta_plus[i] = plus_arr[i] - matched;
            beta_minus[i] = minus_arr[i] - matched;
        }
        cur = CoupledConfiguration {
            lo: nlo,
            hi: nhi,
            xi,
            beta_plus,
            beta_minus,
            time: cur.time + 1,
        };
        observe(&cur);
    }
    Ok(())
}

/// Averaged per-site mean of an initial law (over both the law and the
/// environment law).
pub fn law_mean_averaged<F: Scalar>(
    spec: &EnvironmentSpec<F>,
    law: &InitialLaw<F>,
) -> Result<F> {
    Ok(match law {
        InitialLaw::DeterministicConstant(k) => F::from_u64(*k).unwrap(),
        InitialLaw::PoissonConstant(lambda) => *lambda,
        // E[alpha f] = alpha / v_P.
        InitialLaw::StationaryPoisson { alpha } => *alpha / compute_invariants(spec)?.speed,
        InitialLaw::QuantileProduct(table) => {
            use crate::environment::SpecKind;
            let atoms: Vec<(F, F)> = match &spec.kind {
                SpecKind::TwoPoint { values, prob } => vec![
                    (values.0, *prob),
                    (values.1, F::one() - *prob),
                ],
                SpecKind::Discrete(atoms) => atoms.clone(),
                SpecKind::TruncatedContinuous(_) => {
                    return Err(ModelError::InvalidParameter(
                        "quantile tables require an atomic environment law".into(),
                    ))
                }
            };
            let mut mean = F::zero();
            for (w, p) in atoms {
                mean = mean + p * table.mean_for(w)?;
            }
            mean
        }
    })
}

/// Discrepancy-density series of the coupled process.
#[derive(Clone, Debug)]
pub struct DiscrepancyDecay<F> {
    /// Absolute times `0..=T`.
    pub steps: Vec<u64>,
    pub beta_plus_mean: Vec<F>,
    pub beta_plus_se: Vec<F>,
    pub beta_minus_mean: Vec<F>,
    pub beta_minus_se: Vec<F>,
    /// Paired standard error of `beta+(t+1) - beta+(t)` (length `T`).
    pub beta_plus_step_se: Vec<F>,
    pub beta_minus_step_se: Vec<F>,
    /// Mean of `beta+ - beta-` per step.
    pub diff_mean: Vec<F>,
    /// Paired standard error of `diff(t) - diff(0)` (length `T + 1`, zero at
    /// `t = 0`).
    pub diff_from_start_se: Vec<F>,
    pub replicas: u64,
}

impl<F: Scalar> DiscrepancyDecay<F> {
    fn series_nonincreasing_within(mean: &[F], step_se: &[F], z: F) -> bool {
        mean.windows(2)
            .zip(step_se)
            .all(|(w, &se)| w[1] <= w[0] + z * se)
    }

    /// `beta-` density never increases step-to-step beyond `z` paired SEs.
    pub fn beta_minus_nonincreasing_within(&self, z: F) -> bool {
        Self::series_nonincreasing_within(&self.beta_minus_mean, &self.beta_minus_step_se, z)
    }

    pub fn beta_plus_nonincreasing_within(&self, z: F) -> bool {
        Self::series_nonincreasing_within(&self.beta_plus_mean, &self.beta_plus_step_se, z)
    }

    /// `beta+ - beta-` stays within `z` paired SEs of its initial value.
    pub fn difference_constant_within(&self, z: F) -> bool {
        self.diff_mean
            .iter()
            .zip(&self.diff_from_start_se)
            .skip(1)
            .all(|(&d, &se)| (d - self.diff_mean[0]).abs() <= z * se)
    }

    /// Final over initial `beta-` density.
    pub fn beta_minus_reduction_ratio(&self) -> F {
        let first = self.beta_minus_mean[0];
        let last = *self.beta_minus_mean.last().unwrap();
        if first > F::zero() {
            last / first
        } else {
            F::zero()
        }
    }
}

/// Couple two initial laws in a common environment and track discrepancy
/// densities over the fixed observation window `[obs_lo, obs_hi]` for
/// `t_steps` steps, averaged over the policy's replicas.
///
/// Requires the averaged mean of `law_eta` to be at least that of
/// `law_zeta` (the ordering under which the `beta-` density vanishes in the
/// limit).
#[allow(clippy::too_many_arguments)]
pub fn discrepancy_decay<F: Scalar>(
    spec: &EnvironmentSpec<F>,
    law_eta: &InitialLaw<F>,
    law_zeta: &InitialLaw<F>,
    obs_lo: Site,
    obs_hi: Site,
    t_steps: u64,
    policy: &SeedPolicy,
    master: StreamKey,
) -> Result<DiscrepancyDecay<F>> {
    if obs_lo > obs_hi {
        return Err(ModelError::InvalidParameter(
            "observation window bounds out of order".into(),
        ));
    }
    if policy.replicas == 0 {
        return Err(ModelError::InvalidParameter(
            "discrepancy decay needs replicas >= 1".into(),
        ));
    }
    let mean_eta = law_mean_averaged(spec, law_eta)?;
    let mean_zeta = law_mean_averaged(spec, law_zeta)?;
    if mean_eta < mean_zeta - F::from_real(1e-12) {
        return Err(ModelError::AssumptionViolation(format!(
            "discrepancy decay needs E[eta_0] >= E[zeta_0], got {mean_eta} < {mean_zeta}"
        )));
    }
    let pad = t_steps as Site;
    let rows: Vec<(Vec<F>, Vec<F>)> = (0..policy.replicas)
        .into_par_iter()
        .map(|r| -> Result<(Vec<F>, Vec<F>)> {
            let seeds = policy.replica_seeds(master, r);
            let env = Environment::new(spec.clone(), seeds.env_seed)?;
            let eta0 = sample_initial(
                &env,
                law_eta,
                obs_lo - pad,
                obs_hi + pad,
                seeds.config_key.derive(0),
            )?;
            let zeta0 = sample_initial(
                &env,
                law_zeta,
                obs_lo - pad,
                obs_hi + pad,
                seeds.config_key.derive(1),
            )?;
            let cc = couple_initial(&eta0, &zeta0)?;
            let mut plus = Vec::with_capacity(t_steps as usize + 1);
            let mut minus = Vec::with_capacity(t_steps as usize + 1);
            plus.push(cc.beta_density::<F>(obs_lo, obs_hi, false));
            minus.push(cc.beta_density::<F>(obs_lo, obs_hi, true));
            coupled_evolve(
                &env,
                &cc,
                t_steps,
                seeds.dyn_key,
                BoundaryMode::Shrink,
                &mut |state| {
                    plus.push(state.beta_density::<F>(obs_lo, obs_hi, false));
                    minus.push(state.beta_density::<F>(obs_lo, obs_hi, true));
                },
            )?;
            Ok((plus, minus))
        })
        .collect::<Result<_>>()?;

    let len = t_steps as usize + 1;
    let column = |sel: &dyn Fn(&(Vec<F>, Vec<F>)) -> &Vec<F>, t: usize| -> Vec<F> {
        rows.iter().map(|row| sel(row)[t]).collect()
    };
    let mut decay = DiscrepancyDecay {
        steps: (0..=t_steps).collect(),
        beta_plus_mean: Vec::with_capacity(len),
        beta_plus_se: Vec::with_capacity(len),
        beta_minus_mean: Vec::with_capacity(len),
        beta_minus_se: Vec::with_capacity(len),
        beta_plus_step_se: Vec::with_capacity(len - 1),
        beta_minus_step_se: Vec::with_capacity(len - 1),
        diff_mean: Vec::with_capacity(len),
        diff_from_start_se: Vec::with_capacity(len),
        replicas: policy.replicas,
    };
    for t in 0..len {
        let plus_t = column(&|r| &r.0, t);
        let minus_t = column(&|r| &r.1, t);
        let (pm, pse) = mean_stderr(&plus_t);
        let (mm, mse) = mean_stderr(&minus_t);
        decay.beta_plus_mean.push(pm);
        decay.beta_plus_se.push(pse);
        decay.beta_minus_mean.push(mm);
        decay.beta_minus_se.push(mse);
        let diff_t: Vec<F> = plus_t
            .iter()
            .zip(&minus_t)
            .map(|(&p, &m)| p - m)
            .collect();
        let (dm, _) = mean_stderr(&diff_t);
        decay.diff_mean.push(dm);
        let diff0: Vec<F> = rows.iter().map(|r| r.0[0] - r.1[0]).collect();
        let paired: Vec<F> = diff_t
            .iter()
            .zip(&diff0)
            .map(|(&a, &b)| a - b)
            .collect();
        let (_, dse) = mean_stderr(&paired);
        decay.diff_from_start_se.push(dse);
        if t > 0 {
            let prev_plus = column(&|r| &r.0, t - 1);
            let prev_minus = column(&|r| &r.1, t - 1);
            let steps_p: Vec<F> = plus_t
                .iter()
                .zip(&prev_plus)
                .map(|(&a, &b)| a - b)
                .collect();
            let steps_m: Vec<F> = minus_t
                .iter()
                .zip(&prev_minus)
                .map(|(&a, &b)| a - b)
                .collect();
            decay.beta_plus_step_se.push(mean_stderr(&steps_p).1);
            decay.beta_minus_step_se.push(mean_stderr(&steps_m).1);
        }
    }
    Ok(decay)
}

/// One replica of the two-walk meeting experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeetingOutcome {
    pub start_pair: (Site, Site),
    pub met: bool,
    pub meeting_time: Option<u64>,
    pub horizon: u64,
}

/// Aggregated meeting experiment.
#[derive(Clone, Debug)]
pub struct MeetingReport<F> {
    pub start_pair: (Site, Site),
    pub horizon: u64,
    pub replicas: u64,
    pub fraction_met: F,
    pub outcomes: Vec<MeetingOutcome>,
    /// Fraction met by each doubling horizon (shared trajectories, so this
    /// is non-decreasing exactly).
    pub fraction_by_horizon: Vec<(u64, F)>,
    /// Meeting-time histogram on doubling buckets `(inclusive upper edge,
    /// count)`.
    pub histogram: Vec<(u64, u64)>,
}

/// Run two independent walks from `y` and `z` in the same environment and
/// record whether (and when) their positions coincide at equal times.
pub fn meeting_experiment<F: Scalar>(
    env: &Environment<F>,
    y: Site,
    z: Site,
    horizon: u64,
    replicas: u64,
    master: StreamKey,
) -> Result<MeetingReport<F>> {
    if (z - y) % 2 != 0 {
        return Err(ModelError::ParityError(z - y));
    }
    if replicas == 0 {
        return Err(ModelError::InvalidParameter(
            "meeting experiment needs replicas >= 1".into(),
        ));
    }
    let times: Vec<Option<u64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let rep = master.derive(r);
            let key_y = rep.derive(0);
            let key_z = rep.derive(1);
            let mut py = y;
            let mut pz = z;
            if py == pz {
                return Some(0);
            }
            for t in 1..=horizon {
                let uy: F = key_y.unit_at(t - 1);
                let uz: F = key_z.unit_at(t - 1);
                py += if uy < env.omega_at(py) { 1 } else { -1 };
                pz += if uz < env.omega_at(pz) { 1 } else { -1 };
                if py == pz {
                    return Some(t);
                }
            }
            None
        })
        .collect();

    let outcomes: Vec<MeetingOutcome> = times
        .iter()
        .map(|&mt| MeetingOutcome {
            start_pair: (y, z),
            met: mt.is_some(),
            meeting_time: mt,
            horizon,
        })
        .collect();
    let met_count = times.iter().filter(|t| t.is_some()).count() as u64;
    let fraction_met = F::from_u64(met_count).unwrap() / F::from_u64(replicas).unwrap();

    let mut horizons = Vec::new();
    let mut h = 1u64;
    while h < horizon {
        horizons.push(h);
        h = h.saturating_mul(2);
    }
    horizons.push(horizon);
    let fraction_by_horizon = horizons
        .iter()
        .map(|&h| {
            let c = times
                .iter()
                .filter(|t| t.map_or(false, |mt| mt <= h))
                .count() as u64;
            (h, F::from_u64(c).unwrap() / F::from_u64(replicas).unwrap())
        })
        .collect();

    let mut histogram: Vec<(u64, u64)> = Vec::new();
    let mut edge = 0u64;
    loop {
        let next_edge = if edge == 0 { 1 } else { edge * 2 };
        let (lo, hi_edge) = (edge, next_edge - 1);
        let count = times
            .iter()
            .filter(|t| t.map_or(false, |mt| mt >= lo && mt <= hi_edge))
            .count() as u64;
        histogram.push((hi_edge.min(horizon), count));
        if hi_edge >= horizon {
            break;
        }
        edge = next_edge;
    }

    Ok(MeetingReport {
        start_pair: (y, z),
        horizon,
        replicas,
        fraction_met,
        outcomes,
        fraction_by_horizon,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::evolve;

    fn two_point_env(seed: u64) -> Environment<f64> {
        Environment::new(
            EnvironmentSpec::two_point((0.4, 0.8), 0.3, 0.2).unwrap(),
            seed,
        )
        .unwrap()
    }

    fn two_point_spec() -> EnvironmentSpec<f64> {
        EnvironmentSpec::two_point((0.4, 0.8), 0.3, 0.2).unwrap()
    }

    #[test]
    fn couple_initial_pointwise() {
        let mut eta = Configuration::empty(0, 4);
        let mut zeta = Configuration::empty(0, 4);
        eta.set_count(1, 3);
        zeta.set_count(1, 1);
        zeta.set_count(2, 5);
        let cc = couple_initial(&eta, &zeta).unwrap();
        assert_eq!(cc.xi_at(1), 1);
        assert_eq!(cc.beta_plus_at(1), 2);
        assert_eq!(cc.beta_minus_at(1), 0);
        assert_eq!(cc.xi_at(2), 0);
        assert_eq!(cc.beta_minus_at(2), 5);
        assert!(cc.complementarity_holds());
        // eta == zeta: no discrepancies.
        let same = couple_initial(&eta, &eta).unwrap();
        assert!(same.beta_plus.iter().all(|&v| v == 0));
        assert!(same.beta_minus.iter().all(|&v| v == 0));
        assert_eq!(same.eta(), eta);
        // empty first system: beta- carries all of zeta.
        let empty = Configuration::empty(0, 4);
        let one_sided = couple_initial(&empty, &zeta).unwrap();
        assert!(one_sided.xi.iter().all(|&v| v == 0));
        assert_eq!(one_sided.zeta(), zeta);
    }

    #[test]
    fn couple_initial_window_mismatch() {
        let eta = Configuration::empty(0, 4);
        let zeta = Configuration::empty(0, 5);
        assert!(matches!(
            couple_initial(&eta, &zeta),
            Err(ModelError::WindowMismatch(..))
        ));
    }

    #[test]
    fn matched_state_steps_like_uncoupled_evolve() {
        let env = two_point_env(3);
        let eta = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(2.0),
            -30,
            30,
            StreamKey::from_seed(4),
        )
        .unwrap();
        let cc = couple_initial(&eta, &eta).unwrap();
        let dyn_key = StreamKey::from_seed(9);
        let stepped = coupled_step(&env, &cc, dyn_key, BoundaryMode::Shrink).unwrap();
        let plain = evolve(&env, &eta, 1, dyn_key, BoundaryMode::Shrink).unwrap();
        assert_eq!(stepped.eta(), plain);
        assert_eq!(stepped.zeta(), plain);
    }

    #[test]
    fn invariants_hold_along_random_coupled_steps() {
        let env = two_point_env(11);
        let eta = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(1.5),
            -80,
            80,
            StreamKey::from_seed(1),
        )
        .unwrap();
        let zeta = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(1.0),
            -80,
            80,
            StreamKey::from_seed(2),
        )
        .unwrap();
        let cc = couple_initial(&eta, &zeta).unwrap();
        let mut checked = 0u64;
        coupled_evolve(
            &env,
            &cc,
            60,
            StreamKey::from_seed(3),
            BoundaryMode::Shrink,
            &mut |state| {
                assert!(state.complementarity_holds());
                let (lo, hi) = state.window();
                for x in lo..=hi {
                    assert_eq!(
                        state.eta().count_at(x),
                        state.xi_at(x) + state.beta_plus_at(x)
                    );
                    assert_eq!(
                        state.zeta().count_at(x),
                        state.xi_at(x) + state.beta_minus_at(x)
                    );
                }
                checked += 1;
            },
        )
        .unwrap();
        assert_eq!(checked, 60);
    }

    #[test]
    fn coupled_expand_conserves_totals() {
        let env = two_point_env(19);
        let eta = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(2.0),
            -20,
            20,
            StreamKey::from_seed(5),
        )
        .unwrap();
        let zeta = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(1.0),
            -20,
            20,
            StreamKey::from_seed(6),
        )
        .unwrap();
        let cc = couple_initial(&eta, &zeta).unwrap();
        let eta_total = cc.eta().total();
        let zeta_total = cc.zeta().total();
        let mut state = cc;
        for _ in 0..30 {
            state = coupled_step(&env, &state, StreamKey::from_seed(7), BoundaryMode::Expand)
                .unwrap();
            // Re-matching can move particles between xi and beta, but each
            // marginal's total is conserved exactly.
            assert_eq!(state.eta().total(), eta_total);
            assert_eq!(state.zeta().total(), zeta_total);
        }
    }

    #[test]
    fn forced_rematch_annihilates_discrepancies() {
        // A lone + at 0 and a lone - at 2: when both happen to arrive at 1,
        // they must match (xi gains one, discrepancies vanish).
        let spec = two_point_spec();
        let mut found = false;
        for seed in 0..200u64 {
            let env = Environment::new(spec.clone(), 41).unwrap();
            let mut eta = Configuration::empty(-2, 4);
            let mut zeta = Configuration::empty(-2, 4);
            eta.set_count(0, 1);
            zeta.set_count(2, 1);
            let cc = couple_initial(&eta, &zeta).unwrap();
            let out =
                coupled_step(&env, &cc, StreamKey::from_seed(seed), BoundaryMode::Shrink).unwrap();
            if out.xi_at(1) == 1 {
                assert_eq!(out.beta_plus_at(1), 0);
                assert_eq!(out.beta_minus_at(1), 0);
                assert_eq!(out.eta().total(), 1);
                found = true;
                break;
            }
        }
        assert!(found, "no seed produced a simultaneous arrival in 200 tries");
    }

    #[test]
    fn identical_laws_with_shared_config_seed_stay_matched() {
        let spec = two_point_spec();
        let law = InitialLaw::PoissonConstant(1.2);
        let master = StreamKey::from_seed(50);
        let policy = SeedPolicy::quenched(13, 8);
        // Sample both systems from the same config stream by hand.
        let seeds = policy.replica_seeds(master, 0);
        let env = Environment::new(spec, seeds.env_seed).unwrap();
        let eta = sample_initial(&env, &law, -40, 40, seeds.config_key).unwrap();
        let cc = couple_initial(&eta, &eta.clone()).unwrap();
        let mut state = cc;
        for _ in 0..25 {
            state =
                coupled_step(&env, &state, seeds.dyn_key, BoundaryMode::Shrink).unwrap();
            assert!(state.beta_plus.iter().all(|&v| v == 0));
            assert!(state.beta_minus.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn coupled_marginal_mean_matches_uncoupled_oracle() {
        // The eta-marginal of the coupled process has the same per-site mean
        // as an uncoupled evolution of eta_0; an independent uncoupled run
        // serves as the oracle.
        let env = two_point_env(29);
        let law_eta = InitialLaw::PoissonConstant(1.4);
        let law_zeta = InitialLaw::PoissonConstant(0.8);
        let master = StreamKey::from_seed(4242);
        let reps = 10_000u64;
        let t = 10u64;
        let (lo, hi) = (-(t as i64) - 2, t as i64 + 2);
        let mut coupled = Vec::with_capacity(reps as usize);
        let mut plain = Vec::with_capacity(reps as usize);
        for r in 0..reps {
            let k = master.derive(r);
            let eta0 = sample_initial(&env, &law_eta, lo, hi, k.derive(0)).unwrap();
            let zeta0 = sample_initial(&env, &law_zeta, lo, hi, k.derive(1)).unwrap();
            let mut state = couple_initial(&eta0, &zeta0).unwrap();
            for _ in 0..t {
                state = coupled_step(&env, &state, k.derive(2), BoundaryMode::Shrink).unwrap();
            }
            coupled.push(state.eta().count_at(0) as f64);
            let eta0b = sample_initial(&env, &law_eta, lo, hi, k.derive(3)).unwrap();
            let out = evolve(&env, &eta0b, t, k.derive(4), BoundaryMode::Shrink).unwrap();
            plain.push(out.count_at(0) as f64);
        }
        let (mc, sc) = mean_stderr(&coupled);
        let (mp, sp) = mean_stderr(&plain);
        let se = (sc * sc + sp * sp).sqrt();
        assert!(
            (mc - mp).abs() <= 3.0 * se,
            "coupled eta mean {mc} vs uncoupled {mp} (se {se})"
        );
    }

    #[test]
    fn discrepancy_decay_runs_and_orders() {
        // Averaged policy: the monotone-expectation corollary is a statement
        // about the environment-averaged measure; a fixed environment biases
        // window densities through its local geometry.
        let spec = two_point_spec();
        let decay: DiscrepancyDecay<f64> = discrepancy_decay(
            &spec,
            &InitialLaw::DeterministicConstant(1),
            &InitialLaw::StationaryPoisson {
                alpha: 3.0 / 13.0,
            },
            -200,
            200,
            120,
            &SeedPolicy::averaged(100),
            StreamKey::from_seed(60),
        )
        .unwrap();
        assert_eq!(decay.steps.len(), 121);
        // Decay: well below the start by t = 120.
        assert!(
            decay.beta_minus_mean[120] < decay.beta_minus_mean[0],
            "beta- should decay: {} -> {}",
            decay.beta_minus_mean[0],
            decay.beta_minus_mean[120]
        );
        let worst_minus = (1..decay.steps.len())
            .map(|t| {
                (decay.beta_minus_mean[t] - decay.beta_minus_mean[t - 1])
                    / decay.beta_minus_step_se[t - 1]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            decay.beta_minus_nonincreasing_within(2.0),
            "worst minus step z = {worst_minus}"
        );
        assert!(decay.beta_plus_nonincreasing_within(2.0));
        assert!(decay.difference_constant_within(3.0));
    }

    #[test]
    fn discrepancy_decay_rejects_misordered_means() {
        let spec = two_point_spec();
        let res: Result<DiscrepancyDecay<f64>> = discrepancy_decay(
            &spec,
            &InitialLaw::DeterministicConstant(1),
            &InitialLaw::PoissonConstant(2.0),
            -5,
            5,
            4,
            &SeedPolicy::quenched(1, 2),
            StreamKey::from_seed(0),
        );
        assert!(matches!(res, Err(ModelError::AssumptionViolation(_))));
    }

    #[test]
    fn meeting_same_start_trivial() {
        let env = two_point_env(70);
        let rep: MeetingReport<f64> =
            meeting_experiment(&env, 3, 3, 10, 50, StreamKey::from_seed(1)).unwrap();
        assert_eq!(rep.fraction_met, 1.0);
        assert!(rep.outcomes.iter().all(|o| o.meeting_time == Some(0)));
    }

    #[test]
    fn meeting_parity_error() {
        let env = two_point_env(71);
        assert!(matches!(
            meeting_experiment::<f64>(&env, 0, 3, 10, 10, StreamKey::from_seed(1)),
            Err(ModelError::ParityError(3))
        ));
    }

    #[test]
    fn meeting_fraction_nondecreasing_in_horizon() {
        let env = two_point_env(72);
        let rep: MeetingReport<f64> =
            meeting_experiment(&env, 0, 6, 4_000, 400, StreamKey::from_seed(9)).unwrap();
        let fracs: Vec<f64> = rep.fraction_by_horizon.iter().map(|&(_, f)| f).collect();
        for w in fracs.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(rep.fraction_met > 0.8, "most pairs meet by 4000 steps");
        let hist_total: u64 = rep.histogram.iter().map(|&(_, c)| c).sum();
        assert_eq!(
            hist_total,
            rep.outcomes.iter().filter(|o| o.met).count() as u64
        );
    }
}
