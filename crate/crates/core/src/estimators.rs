//! Estimators that turn raw simulations into the model's quantitative
//! claims: uniform LLN deviations, slowdown probabilities and their decay
//! scales, hitting-time tails, and hydrodynamic transport error.

use rayon::prelude::*;

use crate::environment::{compute_invariants, Environment, EnvironmentSpec};
use crate::error::{ModelError, Result};
use crate::particles::{
    empirical_pairing, evolve, synthesize_profile_config, BoundaryMode, ProfileRounding,
    ProfileSpec,
};
use crate::rng::StreamKey;
use crate::scalar::Scalar;
use crate::stats::{fit_line, wilson, LineFit, WilsonInterval};
use crate::walker::walk_final_position;
use crate::Site;

/// Domain tags for splitting a master seed into per-role streams.
pub mod tags {
    pub const ENV: u64 = 1;
    pub const WALK: u64 = 2;
    pub const CONFIG: u64 = 3;
    pub const DYN: u64 = 4;
    pub const MASTER: u64 = 5;
}

/// Which seeds are held fixed across replicas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedMode {
    /// Environment seed fixed; walk/config/dynamics seeds vary per replica.
    Quenched { env_seed: u64 },
    /// All seeds vary per replica.
    Averaged,
}

/// Replica fan-out policy: mode plus replica count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedPolicy {
    pub mode: SeedMode,
    pub replicas: u64,
}

/// The derived seeds of one replica. Distinct replicas get pairwise distinct
/// streams, deterministically from the master key.
#[derive(Clone, Copy, Debug)]
pub struct ReplicaSeeds {
    pub env_seed: u64,
    pub walk_key: StreamKey,
    pub config_key: StreamKey,
    pub dyn_key: StreamKey,
}

impl SeedPolicy {
    pub fn quenched(env_seed: u64, replicas: u64) -> Self {
        SeedPolicy {
            mode: SeedMode::Quenched { env_seed },
            replicas,
        }
    }

    pub fn averaged(replicas: u64) -> Self {
        SeedPolicy {
            mode: SeedMode::Averaged,
            replicas,
        }
    }

    pub fn replica_seeds(&self, master: StreamKey, replica: u64) -> ReplicaSeeds {
        let env_seed = match self.mode {
            SeedMode::Quenched { env_seed } => env_seed,
            SeedMode::Averaged => master.derive(tags::ENV).derive(replica).raw(),
        };
        ReplicaSeeds {
            env_seed,
            walk_key: master.derive(tags::WALK).derive(replica),
            config_key: master.derive(tags::CONFIG).derive(replica),
            dyn_key: master.derive(tags::DYN).derive(replica),
        }
    }
}

/// Maximum of `|(X_n^(y,i) - y)/n - v_P|` over the family of walks started
/// at `y in (An, Bn]` with `m` particles per site.
///
/// Walk streams are keyed on the absolute site and particle index, so the
/// maximum is monotone under shrinking the family with shared seeds.
pub fn uniform_lln_deviation<F: Scalar>(
    env: &Environment<F>,
    a: F,
    b: F,
    n: u64,
    m: u64,
    key: StreamKey,
) -> Result<F> {
    if !(a < b) || n == 0 || m == 0 {
        return Err(ModelError::InvalidParameter(
            "uniform LLN needs a < b, n >= 1, m >= 1".into(),
        ));
    }
    let speed = compute_invariants(env.spec())?.speed;
    let nf = F::from_u64(n).unwrap();
    let y_lo = (a * nf).real().floor() as Site + 1;
    let y_hi = (b * nf).real().floor() as Site;
    if y_lo > y_hi {
        return Err(ModelError::InvalidParameter(
            "uniform LLN family is empty".into(),
        ));
    }
    let max_dev = (y_lo..=y_hi)
        .into_par_iter()
        .map(|y| {
            let site_key = key.derive_signed(y);
            let mut worst = F::zero();
            for i in 0..m {
                let fin = walk_final_position(env, y, n, site_key.derive(i));
                let dev = (F::from_i64(fin - y).unwrap() / nf - speed).abs();
                worst = worst.max(dev);
            }
            worst
        })
        .reduce(F::zero, |x, y| x.max(y));
    Ok(max_dev)
}

/// One slowdown indicator: whether the walk from the origin in the
/// environment with the given seed satisfies `X_n <= n v`.
///
/// Exposed so quenched/averaged coherence can be verified on the exact
/// replica grid an averaged estimate is built from.
pub fn slowdown_replica<F: Scalar>(
    spec: &EnvironmentSpec<F>,
    v: F,
    n: u64,
    env_seed: u64,
    walk_key: StreamKey,
) -> Result<bool> {
    let env = Environment::new(spec.clone(), env_seed)?;
    let fin = walk_final_position(&env, 0, n, walk_key);
    Ok(F::from_i64(fin).unwrap() <= F::from_u64(n).unwrap() * v)
}

/// Slowdown probability estimate at one trajectory length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlowdownEstimate<F> {
    pub n: u64,
    pub interval: WilsonInterval<F>,
}

/// Estimate `P(X_n <= n v)` under the policy's measure with a 95% Wilson
/// interval. With zero observed slowdowns the interval degenerates to the
/// one-sided bound `3/replicas`.
pub fn slowdown_probability<F: Scalar>(
    spec: &EnvironmentSpec<F>,
    v: F,
    n: u64,
    policy: &SeedPolicy,
    master: StreamKey,
) -> Result<SlowdownEstimate<F>> {
    if v <= F::zero() {
        return Err(ModelError::InvalidParameter(
            "slowdown threshold v must be positive".into(),
        ));
    }
    if policy.replicas == 0 {
        return Err(ModelError::InvalidParameter(
            "slowdown estimate needs replicas >= 1".into(),
        ));
    }
    spec.validate()?;
    let flags: Vec<bool> = (0..policy.replicas)
        .into_par_iter()
        .map(|r| {
            let seeds = policy.replica_seeds(master, r);
            slowdown_replica(spec, v, n, seeds.env_seed, seeds.walk_key)
        })
        .collect::<Result<_>>()?;
    let successes = flags.iter().filter(|&&f| f).count() as u64;
    Ok(SlowdownEstimate {
        n,
        interval: wilson(successes, policy.replicas, F::from_real(1.96)),
    })
}

/// Scale on which a slowdown decay diagnostic regresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingMode {
    /// Regress `-log p_hat` on `n^(1 - 1/s)` (linearity diagnostic for the
    /// quenched stretched-exponential scale).
    Quenched,
    /// Regress `log p_hat` on `log n` (averaged polynomial scale).
    Averaged,
}

/// Slowdown decay diagnostic across a ladder of trajectory lengths.
#[derive(Clone, Debug)]
pub struct ScalingDiagnostic<F> {
    pub mode: ScalingMode,
    pub estimates: Vec<SlowdownEstimate<F>>,
    /// Whether each estimate entered the fit (CI bounded away from 0 and 1).
    pub used: Vec<bool>,
    /// Mode-appropriate regression over the used points.
    pub fit: Option<LineFit<F>>,
    /// Free exponent fit `log(-log p_hat) ~ kappa log n` (quenched mode only,
    /// on request): unstable at desk scale, kept behind a flag.
    pub free_fit: Option<LineFit<F>>,
    /// `1 - s` (averaged) or `1 - 1/s` (quenched), when the spec has a tail
    /// exponent.
    pub reference_exponent: Option<F>,
}

impl<F: Scalar> ScalingDiagnostic<F> {
    /// The fitted decay exponent on the mode's log scale: the averaged-mode
    /// slope directly, or the quenched free-fit slope when requested.
    pub fn fitted_exponent(&self) -> Option<F> {
        match self.mode {
            ScalingMode::Averaged => self.fit.map(|f| f.slope),
            ScalingMode::Quenched => self.free_fit.map(|f| f.slope),
        }
    }
}

/// Estimate slowdown probabilities over `ns` and fit the decay scale.
pub fn slowdown_scaling<F: Scalar>(
    spec: &EnvironmentSpec<F>,
    v: F,
    ns: &[u64],
    policy: &SeedPolicy,
    master: StreamKey,
    mode: ScalingMode,
    with_free_fit: bool,
) -> Result<ScalingDiagnostic<F>> {
    if ns.len() < 2 {
        return Err(ModelError::InvalidParameter(
            "scaling diagnostic needs at least two trajectory lengths".into(),
        ));
    }
    let inv = compute_invariants(spec)?;
    let mut estimates = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        estimates.push(slowdown_probability(
            spec,
            v,
            n,
            policy,
            master.derive(i as u64),
        )?);
    }
    let used: Vec<bool> = estimates
        .iter()
        .map(|e| e.interval.lo > F::zero() && e.interval.hi < F::one())
        .collect();
    let reference_exponent = inv.s_exponent.map(|s| match mode {
        ScalingMode::Averaged => F::one() - s,
        ScalingMode::Quenched => F::one() - F::one() / s,
    });
    let pts: Vec<(F, F)> = estimates
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(e, _)| {
            let nf = F::from_u64(e.n).unwrap();
            let p = e.interval.estimate;
            match mode {
                ScalingMode::Averaged => (nf.ln(), p.ln()),
                ScalingMode::Quenched => {
                    let exponent = inv
                        .s_exponent
                        .map(|s| F::one() - F::one() / s)
                        .unwrap_or_else(F::one);
                    (nf.powf(exponent), -(p.ln()))
                }
            }
        })
        .collect();
    let xs: Vec<F> = pts.iter().map(|&(x, _)| x).collect();
    let ys: Vec<F> = pts.iter().map(|&(_, y)| y).collect();
    let fit = if xs.len() >= 2 { fit_line(&xs, &ys).ok() } else { None };
    let free_fit = if with_free_fit && mode == ScalingMode::Quenched && xs.len() >= 2 {
        let fx: Vec<F> = estimates
            .iter()
            .zip(&used)
            .filter(|(e, &u)| u && e.interval.estimate < F::one())
            .map(|(e, _)| F::from_u64(e.n).unwrap().ln())
            .collect();
        let fy: Vec<F> = estimates
            .iter()
            .zip(&used)
            .filter(|(e, &u)| u && e.interval.estimate < F::one())
            .map(|(e, _)| (-(e.interval.estimate.ln())).ln())
            .collect();
        fit_line(&fx, &fy).ok()
    } else {
        None
    };
    Ok(ScalingDiagnostic {
        mode,
        estimates,
        used,
        fit,
        free_fit,
        reference_exponent,
    })
}

/// Estimate `P(exists y in [y_lo, y_hi]: T_n^y >= n mu)` over replicas.
///
/// Hitting runs are capped at `floor(n mu) + 1` steps, so a censored run
/// implies the budget was exceeded. Walk streams are keyed on the absolute
/// site, making the estimate monotone in the family under shared seeds.
pub fn hitting_tail<F: Scalar>(
    env: &Environment<F>,
    y_lo: Site,
    y_hi: Site,
    n: u64,
    mu: F,
    replicas: u64,
    master: StreamKey,
) -> Result<WilsonInterval<F>> {
    let speed = compute_invariants(env.spec())?.speed;
    if mu <= F::one() / speed {
        return Err(ModelError::InvalidParameter(format!(
            "hitting budget mu = {mu} must exceed 1/v_P = {}",
            F::one() / speed
        )));
    }
    if y_lo > y_hi || replicas == 0 {
        return Err(ModelError::InvalidParameter(
            "hitting tail needs a site range and replicas >= 1".into(),
        ));
    }
    let budget = F::from_u64(n).unwrap() * mu;
    let cap = budget.real().floor() as u64 + 1;
    let exceed_count = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let rep_key = master.derive(r);
            let exceed = (y_lo..=y_hi).any(|y| {
                let res = crate::walker::hitting_time(env, y, n, cap, rep_key.derive_signed(y));
                match res.outcome {
                    crate::walker::HitOutcome::Censored(_) => true,
                    crate::walker::HitOutcome::Hit(t) => F::from_u64(t).unwrap() >= budget,
                }
            });
            exceed as u64
        })
        .sum::<u64>();
    Ok(wilson(exceed_count, replicas, F::from_real(1.96)))
}

/// Continuous, compactly supported piecewise-linear test function.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction<F> {
    knots: Vec<(F, F)>,
}

impl<F: Scalar> TestFunction<F> {
    /// Knots must be strictly increasing in `x` and vanish at both ends
    /// (continuity on the whole line).
    pub fn new(knots: Vec<(F, F)>) -> Result<Self> {
        if knots.len() < 2 || knots.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(ModelError::InvalidParameter(
                "test function needs strictly increasing knots".into(),
            ));
        }
        if knots[0].1 != F::zero() || knots[knots.len() - 1].1 != F::zero() {
            return Err(ModelError::InvalidParameter(
                "test function must vanish at its support endpoints".into(),
            ));
        }
        Ok(TestFunction { knots })
    }

    /// Unit-height triangle on `[lo, hi]`.
    pub fn triangle(lo: F, hi: F) -> Result<Self> {
        let mid = (lo + hi) / F::from_real(2.0);
        Self::new(vec![(lo, F::zero()), (mid, F::one()), (hi, F::zero())])
    }

    pub fn eval(&self, y: F) -> F {
        let k = &self.knots;
        if y <= k[0].0 || y >= k[k.len() - 1].0 {
            return F::zero();
        }
        for w in k.windows(2) {
            let ((x0, v0), (x1, v1)) = (w[0], w[1]);
            if y <= x1 {
                return v0 + (v1 - v0) * (y - x0) / (x1 - x0);
            }
        }
        F::zero()
    }

    pub fn support(&self) -> (F, F) {
        (self.knots[0].0, self.knots[self.knots.len() - 1].0)
    }

    pub fn breakpoints(&self) -> Vec<F> {
        self.knots.iter().map(|&(x, _)| x).collect()
    }

    pub fn knots(&self) -> &[(F, F)] {
        &self.knots
    }
}

/// `integral of prof(y - shift) g(y) dy` over the support of `g`.
///
/// Both factors are piecewise linear, so the integrand is piecewise
/// quadratic; Simpson on each piece between breakpoints is exact up to
/// rounding (well inside the 1e-8 budget).
pub fn transport_target<F: Scalar>(
    profile: &ProfileSpec<F>,
    shift: F,
    g: &TestFunction<F>,
) -> F {
    let (a, b) = g.support();
    let mut brk: Vec<F> = g.breakpoints();
    for p in profile.breakpoints() {
        let y = p + shift;
        if y > a && y < b {
            brk.push(y);
        }
    }
    brk.push(a);
    brk.push(b);
    brk.sort_by(|x, y| x.partial_cmp(y).unwrap());
    brk.dedup_by(|x, y| (*x - *y).abs() < F::from_real(1e-14));
    let mut acc = F::zero();
    let integrand = |y: F| profile.eval(y - shift) * g.eval(y);
    // Two-point Gauss-Legendre per piece: exact for the piecewise-quadratic
    // integrand, and its nodes are interior, so closed indicator boundaries
    // sitting exactly on a breakpoint contribute nothing spurious.
    let half_inv_sqrt3 = F::from_real(0.5 / 3.0f64.sqrt());
    for w in brk.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 <= a || x0 >= b {
            continue;
        }
        let mid = (x0 + x1) / F::from_real(2.0);
        let off = (x1 - x0) * half_inv_sqrt3;
        acc = acc + (x1 - x0) / F::from_real(2.0) * (integrand(mid - off) + integrand(mid + off));
    }
    acc
}

/// One hydrodynamic run at scale `N`: synthesize the profile, advance
/// `floor(N t)` steps, and compare each test-function pairing against the
/// transported profile integral.
#[derive(Clone, Debug)]
pub struct HydroRun<F> {
    /// `floor(N t)`, the microscopic step count actually simulated.
    pub steps: u64,
    pub pairings: Vec<F>,
    pub targets: Vec<F>,
    pub errors: Vec<F>,
}

pub fn hydro_transport_error<F: Scalar>(
    spec: &EnvironmentSpec<F>,
    profile: &ProfileSpec<F>,
    n_scale: u64,
    t: F,
    gs: &[TestFunction<F>],
    master: StreamKey,
    rounding: ProfileRounding,
) -> Result<HydroRun<F>> {
    if gs.is_empty() {
        return Err(ModelError::InvalidParameter(
            "hydro run needs at least one test function".into(),
        ));
    }
    if t < F::zero() {
        return Err(ModelError::InvalidParameter(
            "hydro time must be nonnegative".into(),
        ));
    }
    let inv = compute_invariants(spec)?;
    let env = Environment::new(spec.clone(), master.derive(tags::ENV).raw())?;
    let steps = (F::from_u64(n_scale).unwrap() * t).real().floor() as u64;
    let nf = F::from_u64(n_scale).unwrap();
    let a = gs
        .iter()
        .map(|g| g.support().0)
        .fold(F::infinity(), |x, y| x.min(y));
    let b = gs
        .iter()
        .map(|g| g.support().1)
        .fold(F::neg_infinity(), |x, y| x.max(y));
    let x_lo = (a * nf).real().floor() as Site + 1;
    let x_hi = (b * nf).real().floor() as Site;
    let init = synthesize_profile_config(
        profile,
        n_scale,
        x_lo - steps as Site,
        x_hi + steps as Site,
        master.derive(tags::CONFIG),
        rounding,
    );
    let final_cfg = evolve(&env, &init, steps, master.derive(tags::DYN), BoundaryMode::Shrink)?;
    let shift = inv.speed * t;
    let mut pairings = Vec::with_capacity(gs.len());
    let mut targets = Vec::with_capacity(gs.len());
    let mut errors = Vec::with_capacity(gs.len());
    for g in gs {
        let (ga, gb) = g.support();
        let pairing = empirical_pairing(&final_cfg, n_scale, &|y| g.eval(y), ga, gb)?;
        let target = transport_target(profile, shift, g);
        pairings.push(pairing);
        targets.push(target);
        errors.push((pairing - target).abs());
    }
    Ok(HydroRun {
        steps,
        pairings,
        targets,
        errors,
    })
}
