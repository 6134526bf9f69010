//! The law of the random environment, reproducible environment realizations,
//! and the model's analytic invariants.
//!
//! An environment is a bi-infinite i.i.d. sequence of right-step
//! probabilities `omega_x` drawn from a common site law with support inside
//! `[c, 1-c]`. Site values are produced by a counter-based pseudorandom
//! function keyed on `(seed, x)`, so environments are lazy, random-access,
//! and deterministic under parallel evaluation.

use std::sync::{Arc, RwLock};

use crate::error::{ModelError, Result};
use crate::numeric::{bisect, integrate_adaptive};
use crate::rng::StreamKey;
use crate::scalar::Scalar;
use crate::Site;

/// Relative tolerance for quadrature over continuous site laws. Invariants
/// feed acceptance oracles, so this sits far below any Monte Carlo band.
const QUADRATURE_REL_TOL: f64 = 1e-11;

/// Residual target for the tail-exponent solver.
const S_RESIDUAL_TOL: f64 = 1e-12;

/// Default hard cap on the truncation depth of the potential series.
pub const DEFAULT_DEPTH_CAP: u64 = 1_000_000;

/// Base density for truncated-continuous site laws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseDensity<F> {
    /// Flat density on the truncation interval.
    Uniform,
    /// `w^(alpha-1) (1-w)^(beta-1)` restricted to the truncation interval.
    Beta { alpha: F, beta: F },
}

/// The site law of the environment.
#[derive(Clone, Debug, PartialEq)]
pub enum SpecKind<F> {
    /// Two atoms `w1` (probability `q`) and `w2` (probability `1-q`).
    TwoPoint { values: (F, F), prob: F },
    /// Finitely many atoms `(w_i, p_i)`.
    Discrete(Vec<(F, F)>),
    /// A named base density truncated (and renormalized) to `[c, 1-c]`.
    TruncatedContinuous(BaseDensity<F>),
}

/// The law `P` of a single site, together with its ellipticity constant.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSpec<F> {
    pub kind: SpecKind<F>,
    pub ellipticity_c: F,
}

impl<F: Scalar> EnvironmentSpec<F> {
    pub fn two_point(values: (F, F), prob: F, ellipticity_c: F) -> Result<Self> {
        let spec = EnvironmentSpec {
            kind: SpecKind::TwoPoint { values, prob },
            ellipticity_c,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn discrete(atoms: Vec<(F, F)>, ellipticity_c: F) -> Result<Self> {
        let spec = EnvironmentSpec {
            kind: SpecKind::Discrete(atoms),
            ellipticity_c,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Degenerate law: every site has the same right-step probability.
    pub fn constant(omega: F, ellipticity_c: F) -> Result<Self> {
        Self::discrete(vec![(omega, F::one())], ellipticity_c)
    }

    pub fn truncated_continuous(base: BaseDensity<F>, ellipticity_c: F) -> Result<Self> {
        let spec = EnvironmentSpec {
            kind: SpecKind::TruncatedContinuous(base),
            ellipticity_c,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform ellipticity: support inside `[c, 1-c]`, probabilities forming
    /// a distribution.
    pub fn validate(&self) -> Result<()> {
        let c = self.ellipticity_c;
        if !(c > F::zero() && c <= F::from_real(0.5)) {
            return Err(ModelError::InvalidParameter(format!(
                "ellipticity constant must lie in (0, 1/2], got {c}"
            )));
        }
        let in_support = |w: F| w >= c && w <= F::one() - c;
        match &self.kind {
            SpecKind::TwoPoint { values, prob } => {
                if !in_support(values.0) || !in_support(values.1) {
                    return Err(ModelError::InvalidParameter(format!(
                        "two-point values {:?} outside [{}, {}]",
                        (values.0.real(), values.1.real()),
                        c,
                        F::one() - c
                    )));
                }
                if *prob < F::zero() || *prob > F::one() {
                    return Err(ModelError::InvalidParameter(format!(
                        "two-point probability {prob} outside [0, 1]"
                    )));
                }
            }
            SpecKind::Discrete(atoms) => {
                if atoms.is_empty() {
                    return Err(ModelError::InvalidParameter(
                        "discrete law needs at least one atom".into(),
                    ));
                }
                let mut total = F::zero();
                for &(w, p) in atoms {
                    if !in_support(w) {
                        return Err(ModelError::InvalidParameter(format!(
                            "atom {w} outside [{}, {}]",
                            c,
                            F::one() - c
                        )));
                    }
                    if p < F::zero() {
                        return Err(ModelError::InvalidParameter(format!(
                            "negative atom probability {p}"
                        )));
                    }
                    total = total + p;
                }
                if (total - F::one()).abs() > F::from_real(1e-9) {
                    return Err(ModelError::InvalidParameter(format!(
                        "atom probabilities sum to {total}, not 1"
                    )));
                }
            }
            SpecKind::TruncatedContinuous(base) => {
                if let BaseDensity::Beta { alpha, beta } = base {
                    if *alpha <= F::zero() || *beta <= F::zero() {
                        return Err(ModelError::InvalidParameter(
                            "beta shape parameters must be positive".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn density(&self, base: &BaseDensity<F>, w: F) -> F {
        match base {
            BaseDensity::Uniform => F::one(),
            BaseDensity::Beta { alpha, beta } => {
                w.powf(*alpha - F::one()) * (F::one() - w).powf(*beta - F::one())
            }
        }
    }

    /// Expectation of `g(omega_0)` under this law.
    pub fn expect(&self, g: &dyn Fn(F) -> F) -> F {
        match &self.kind {
            SpecKind::TwoPoint { values, prob } => {
                *prob * g(values.0) + (F::one() - *prob) * g(values.1)
            }
            SpecKind::Discrete(atoms) => atoms
                .iter()
                .fold(F::zero(), |acc, &(w, p)| acc + p * g(w)),
            SpecKind::TruncatedContinuous(base) => {
                let lo = self.ellipticity_c;
                let hi = F::one() - self.ellipticity_c;
                let tol = F::from_real(QUADRATURE_REL_TOL);
                let mass = integrate_adaptive(&|w| self.density(base, w), lo, hi, tol);
                let raw = integrate_adaptive(&|w| g(w) * self.density(base, w), lo, hi, tol);
                raw / mass
            }
        }
    }

    /// Probability that a site pushes left, `P(omega_0 < 1/2)`. Positive
    /// exactly when the law is nestling.
    pub fn prob_below_half(&self) -> F {
        let half = F::from_real(0.5);
        match &self.kind {
            SpecKind::TwoPoint { values, prob } => {
                let mut acc = F::zero();
                if values.0 < half {
                    acc = acc + *prob;
                }
                if values.1 < half {
                    acc = acc + (F::one() - *prob);
                }
                acc
            }
            SpecKind::Discrete(atoms) => atoms
                .iter()
                .filter(|&&(w, _)| w < half)
                .fold(F::zero(), |acc, &(_, p)| acc + p),
            SpecKind::TruncatedContinuous(base) => {
                let lo = self.ellipticity_c;
                let hi = (F::one() - self.ellipticity_c).min(half);
                if hi <= lo {
                    return F::zero();
                }
                let tol = F::from_real(QUADRATURE_REL_TOL);
                let full = integrate_adaptive(
                    &|w| self.density(base, w),
                    lo,
                    F::one() - self.ellipticity_c,
                    tol,
                );
                integrate_adaptive(&|w| self.density(base, w), lo, hi, tol) / full
            }
        }
    }

    /// Whether Assumption 2 (`E_P[rho_0] < 1`) holds; specs violating it are
    /// constructible but unusable for transient-regime computations.
    pub fn transient(&self) -> bool {
        mean_rho(self) < F::one()
    }
}

/// `E_P[(1 - omega_0)/omega_0]`: exact summation for atomic laws, adaptive
/// quadrature for continuous ones.
pub fn mean_rho<F: Scalar>(spec: &EnvironmentSpec<F>) -> F {
    spec.expect(&|w| (F::one() - w) / w)
}

/// `E_P[rho_0^s]`, evaluated in log space.
pub fn rho_moment<F: Scalar>(spec: &EnvironmentSpec<F>, s: F) -> F {
    spec.expect(&|w| (s * ((F::one() - w) / w).ln()).exp())
}

/// Analytic invariants of a transient spec.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelInvariants<F> {
    /// `E_P[rho_0]`.
    pub mean_rho: F,
    /// Asymptotic speed `(1 - E rho)/(1 + E rho)`.
    pub speed: F,
    /// Root `s > 1` of `E_P[rho_0^s] = 1`; absent when `P(rho_0 > 1) = 0`.
    pub s_exponent: Option<F>,
    /// Whether `P(omega_0 < 1/2) > 0`.
    pub nestling: bool,
}

/// Compute speed and tail exponent for a transient spec.
///
/// The tail exponent is bracketed on `[1 + 1e-6, 64]` (doubling the upper end
/// if the moment has not yet crossed 1, which happens for laws barely
/// nestling) and then bisected to residual `1e-12`. Absence of a root is
/// decided analytically from `P(rho_0 > 1) = 0`.
pub fn compute_invariants<F: Scalar>(spec: &EnvironmentSpec<F>) -> Result<ModelInvariants<F>> {
    spec.validate()?;
    let mr = mean_rho(spec);
    if mr >= F::one() {
        return Err(ModelError::AssumptionViolation(format!(
            "E[rho] = {mr} >= 1: walk is not transient to the right"
        )));
    }
    let speed = (F::one() - mr) / (F::one() + mr);
    // rho_0 > 1 iff omega_0 < 1/2, so the nestling probability decides
    // whether s -> E[rho^s] ever returns to 1.
    let nestling = spec.prob_below_half() > F::zero();
    let s_exponent = if nestling {
        let target = |s: F| rho_moment(spec, s) - F::one();
        let lo = F::one() + F::from_real(1e-6);
        let mut hi = F::from_real(64.0);
        let cap = F::from_real(1_048_576.0);
        while target(hi) < F::zero() && hi < cap {
            hi = hi * F::from_real(2.0);
        }
        if target(hi) < F::zero() {
            return Err(ModelError::InvalidParameter(
                "tail exponent exceeds bracket cap".into(),
            ));
        }
        Some(bisect(&target, lo, hi, F::from_real(S_RESIDUAL_TOL), 300))
    } else {
        None
    };
    Ok(ModelInvariants {
        mean_rho: mr,
        speed,
        s_exponent,
        nestling,
    })
}

/// Site-value sampler compiled from a spec: thresholds live on the raw `u64`
/// scale so atomic laws cost one compare per site.
#[derive(Clone, Debug)]
enum Sampler<F> {
    Constant(F),
    TwoPoint { w1: F, w2: F, threshold: u64 },
    Table { thresholds: Vec<u64>, values: Vec<F> },
    Continuous(InverseCdf<F>),
}

fn prob_to_threshold<F: Scalar>(p: F) -> u64 {
    let scaled = p.real() * (u64::MAX as f64 + 1.0);
    if scaled >= u64::MAX as f64 {
        u64::MAX
    } else if scaled <= 0.0 {
        0
    } else {
        scaled as u64
    }
}

/// Piecewise-linear inverse CDF on a fixed grid; grid error is quadratic in
/// the cell width and sits far below every Monte Carlo tolerance.
#[derive(Clone, Debug)]
struct InverseCdf<F> {
    xs: Vec<F>,
    cdf: Vec<F>,
}

const INVERSE_CDF_CELLS: usize = 4096;

impl<F: Scalar> InverseCdf<F> {
    fn build(spec: &EnvironmentSpec<F>, base: &BaseDensity<F>) -> Self {
        let lo = spec.ellipticity_c;
        let hi = F::one() - spec.ellipticity_c;
        let n = INVERSE_CDF_CELLS;
        let h = (hi - lo) / F::from_usize(n).unwrap();
        let mut xs = Vec::with_capacity(n + 1);
        let mut cdf = Vec::with_capacity(n + 1);
        xs.push(lo);
        cdf.push(F::zero());
        let mut acc = F::zero();
        let six = F::from_real(6.0);
        for i in 0..n {
            let a = lo + h * F::from_usize(i).unwrap();
            let b = a + h;
            let m = (a + b) / F::from_real(2.0);
            // Simpson per cell; the densities are smooth inside the support.
            let cell = h / six
                * (spec.density(base, a)
                    + F::from_real(4.0) * spec.density(base, m)
                    + spec.density(base, b));
            acc = acc + cell;
            xs.push(b);
            cdf.push(acc);
        }
        let total = acc;
        for v in cdf.iter_mut() {
            *v = *v / total;
        }
        *cdf.last_mut().unwrap() = F::one();
        InverseCdf { xs, cdf }
    }

    fn invert(&self, u: F) -> F {
        let mut lo = 0usize;
        let mut hi = self.cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = self.cdf[hi] - self.cdf[lo];
        let t = if span > F::zero() {
            (u - self.cdf[lo]) / span
        } else {
            F::zero()
        };
        self.xs[lo] + (self.xs[hi] - self.xs[lo]) * t
    }
}

/// Pre-dispatched sampler for step loops.
pub(crate) enum FastOmega<F> {
    Constant(F),
    TwoPoint {
        key: StreamKey,
        threshold: u64,
        w1: F,
        w2: F,
    },
    General,
}

/// Cached window of materialized site values.
#[derive(Clone, Debug)]
pub struct OmegaWindow<F> {
    start: Site,
    values: Vec<F>,
}

impl<F: Scalar> OmegaWindow<F> {
    #[inline(always)]
    pub fn value_at(&self, x: Site) -> F {
        self.values[(x - self.start) as usize]
    }

    pub fn covers(&self, lo: Site, hi: Site) -> bool {
        self.start <= lo && hi < self.start + self.values.len() as Site
    }
}

/// A reproducible environment realization: `(spec, seed)` determine every
/// site value; queries at distinct sites are independent draws from the law.
#[derive(Debug)]
pub struct Environment<F: Scalar> {
    spec: EnvironmentSpec<F>,
    seed: u64,
    key: StreamKey,
    sampler: Sampler<F>,
    cache: RwLock<Option<Arc<OmegaWindow<F>>>>,
}

impl<F: Scalar> Clone for Environment<F> {
    fn clone(&self) -> Self {
        let cached = self.cache.read().unwrap().clone();
        Environment {
            spec: self.spec.clone(),
            seed: self.seed,
            key: self.key,
            sampler: self.sampler.clone(),
            cache: RwLock::new(cached),
        }
    }
}

impl<F: Scalar> Environment<F> {
    pub fn new(spec: EnvironmentSpec<F>, seed: u64) -> Result<Self> {
        spec.validate()?;
        let sampler = match &spec.kind {
            SpecKind::TwoPoint { values, prob } => Sampler::TwoPoint {
                w1: values.0,
                w2: values.1,
                threshold: prob_to_threshold(*prob),
            },
            SpecKind::Discrete(atoms) if atoms.len() == 1 => Sampler::Constant(atoms[0].0),
            SpecKind::Discrete(atoms) => {
                let mut thresholds = Vec::with_capacity(atoms.len());
                let mut values = Vec::with_capacity(atoms.len());
                let mut acc = F::zero();
                for &(w, p) in atoms {
                    acc = acc + p;
                    thresholds.push(prob_to_threshold(acc));
                    values.push(w);
                }
                *thresholds.last_mut().unwrap() = u64::MAX;
                Sampler::Table { thresholds, values }
            }
            SpecKind::TruncatedContinuous(base) => {
                Sampler::Continuous(InverseCdf::build(&spec, base))
            }
        };
        Ok(Environment {
            key: StreamKey::from_seed(seed),
            spec,
            seed,
            sampler,
            cache: RwLock::new(None),
        })
    }

    pub fn spec(&self) -> &EnvironmentSpec<F> {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The right-step probability at site `x`: a pure function of
    /// `(spec, seed, x)`.
    #[inline(always)]
    pub fn omega_at(&self, x: Site) -> F {
        match &self.sampler {
            Sampler::Constant(w) => *w,
            Sampler::TwoPoint { w1, w2, threshold } => {
                if self.key.derive_signed(x).raw() < *threshold {
                    *w1
                } else {
                    *w2
                }
            }
            Sampler::Table { thresholds, values } => {
                let bits = self.key.derive_signed(x).raw();
                let idx = thresholds.partition_point(|&t| t < bits);
                values[idx.min(values.len() - 1)]
            }
            Sampler::Continuous(inv) => {
                inv.invert(F::unit_from_bits(self.key.derive_signed(x).raw()))
            }
        }
    }

    /// One-time dispatch for step loops: lets hot paths hoist the sampler
    /// match out of per-step code.
    pub(crate) fn fast_omega(&self) -> FastOmega<F> {
        match &self.sampler {
            Sampler::Constant(w) => FastOmega::Constant(*w),
            Sampler::TwoPoint { w1, w2, threshold } => FastOmega::TwoPoint {
                key: self.key,
                threshold: *threshold,
                w1: *w1,
                w2: *w2,
            },
            _ => FastOmega::General,
        }
    }

    /// Materialize (and cache) the window `[lo, hi]`. Fills are idempotent:
    /// the values are a pure function of the environment, so concurrent
    /// readers always observe consistent data.
    pub fn omega_window(&self, lo: Site, hi: Site) -> Arc<OmegaWindow<F>> {
        assert!(lo <= hi, "window bounds out of order");
        if let Some(win) = self.cache.read().unwrap().as_ref() {
            if win.covers(lo, hi) {
                return Arc::clone(win);
            }
        }
        let mut guard = self.cache.write().unwrap();
        if let Some(win) = guard.as_ref() {
            if win.covers(lo, hi) {
                return Arc::clone(win);
            }
        }
        let (lo, hi) = match guard.as_ref() {
            Some(win) => (
                lo.min(win.start),
                hi.max(win.start + win.values.len() as Site - 1),
            ),
            None => (lo, hi),
        };
        let values = (lo..=hi).map(|x| self.omega_at(x)).collect();
        let win = Arc::new(OmegaWindow { start: lo, values });
        *guard = Some(Arc::clone(&win));
        win
    }
}

/// A window of values of the stationary potential `f` at shifted
/// environments, with the truncation tolerance used to compute them.
#[derive(Clone, Debug)]
pub struct PotentialWindow<F> {
    start: Site,
    values: Vec<F>,
    tolerance: F,
}

impl<F: Scalar> PotentialWindow<F> {
    pub fn start(&self) -> Site {
        self.start
    }

    pub fn end(&self) -> Site {
        self.start + self.values.len() as Site - 1
    }

    pub fn tolerance(&self) -> F {
        self.tolerance
    }

    #[inline]
    pub fn value_at(&self, x: Site) -> F {
        self.values[(x - self.start) as usize]
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// Spatial average over the window (the ergodic estimator of `E_P[f]`).
    pub fn site_average(&self) -> F {
        self.values.iter().copied().sum::<F>() / F::from_usize(self.values.len()).unwrap()
    }

    /// Largest residual of the harmonic identity
    /// `f(x) = omega_(x-1) f(x-1) + (1 - omega_(x+1)) f(x+1)`
    /// over interior sites.
    pub fn max_identity_residual(&self, env: &Environment<F>) -> F {
        let mut worst = F::zero();
        for x in (self.start + 1)..self.end() {
            let lhs = self.value_at(x);
            let rhs = env.omega_at(x - 1) * self.value_at(x - 1)
                + (F::one() - env.omega_at(x + 1)) * self.value_at(x + 1);
            worst = worst.max((lhs - rhs).abs());
        }
        worst
    }
}

/// Compute the potential `f(theta^x omega) = (1/omega_x)(1 + sum_i prod_j rho_(x+j))`
/// for every `x` in `[lo, hi]`.
///
/// The series for all window sites is evaluated through the backward
/// recursion `A_x = 1 + rho_(x+1) A_(x+1)` from a shared anchor site chosen
/// far enough right that *every* window site satisfies the adaptive stopping
/// rule: the running product of `rho` past the anchor, times
/// `E[rho]/(1 - E[rho]) / c`, is below `tol`. The conditional expected
/// omitted tail at each site is therefore below `tol`, and because all sites
/// share one truncation the three-term identity holds to floating-point
/// rounding rather than to the truncation scale.
pub fn compute_f<F: Scalar>(
    env: &Environment<F>,
    lo: Site,
    hi: Site,
    tol: F,
) -> Result<PotentialWindow<F>> {
    compute_f_with_cap(env, lo, hi, tol, DEFAULT_DEPTH_CAP)
}

pub fn compute_f_with_cap<F: Scalar>(
    env: &Environment<F>,
    lo: Site,
    hi: Site,
    tol: F,
    depth_cap: u64,
) -> Result<PotentialWindow<F>> {
    if lo > hi {
        return Err(ModelError::InvalidParameter(
            "potential window bounds out of order".into(),
        ));
    }
    if tol <= F::zero() {
        return Err(ModelError::InvalidParameter(
            "truncation tolerance must be positive".into(),
        ));
    }
    let mr = mean_rho(env.spec());
    if mr >= F::one() {
        return Err(ModelError::AssumptionViolation(format!(
            "E[rho] = {mr} >= 1: potential series diverges"
        )));
    }
    let tail_factor = mr / (F::one() - mr) / env.spec().ellipticity_c;
    let ln_bound = (tol / tail_factor).ln();

    // Largest suffix log-product of rho inside the window: site lo needs the
    // deepest series, but a rho spike inside the window can dominate.
    let mut suffix = F::zero();
    let mut max_suffix = F::zero();
    for x in ((lo + 1)..=hi).rev() {
        let w = env.omega_at(x);
        suffix = suffix + ((F::one() - w) / w).ln();
        max_suffix = max_suffix.max(suffix);
    }

    // Extend the anchor until every window site meets its stopping rule.
    let mut anchor = hi;
    let mut beyond = F::zero();
    while beyond + max_suffix >= ln_bound {
        anchor += 1;
        if (anchor - hi) as u64 > depth_cap {
            return Err(ModelError::DepthExceeded {
                site: hi,
                cap: depth_cap,
            });
        }
        let w = env.omega_at(anchor);
        beyond = beyond + ((F::one() - w) / w).ln();
    }

    // Backward recursion from the anchor; values left of `anchor` are exact
    // partial sums of the defining series.
    let mut a = F::one();
    let mut values = vec![F::zero(); (hi - lo + 1) as usize];
    for x in ((lo + 1)..=anchor).rev() {
        let w = env.omega_at(x);
        a = F::one() + (F::one() - w) / w * a;
        let site = x - 1;
        if site <= hi {
            values[(site - lo) as usize] = a / env.omega_at(site);
        }
    }
    Ok(PotentialWindow {
        start: lo,
        values,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point_ref() -> EnvironmentSpec<f64> {
        EnvironmentSpec::two_point((0.4, 0.8), 0.3, 0.2).unwrap()
    }

    fn constant_ref() -> EnvironmentSpec<f64> {
        EnvironmentSpec::constant(0.75, 0.25).unwrap()
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(EnvironmentSpec::two_point((0.1, 0.8), 0.3, 0.2).is_err());
        assert!(EnvironmentSpec::discrete(vec![(0.5, 0.7), (0.6, 0.7)], 0.2).is_err());
        assert!(EnvironmentSpec::discrete(vec![], 0.2).is_err());
        assert!(EnvironmentSpec::constant(0.75, 0.6).is_err());
        assert!(EnvironmentSpec::constant(0.75, 0.25).is_ok());
    }

    #[test]
    fn mean_rho_reference_values() {
        assert!((mean_rho(&constant_ref()) - 1.0 / 3.0).abs() < 1e-15);
        assert!((mean_rho(&two_point_ref()) - 0.625).abs() < 1e-15);
        // rho = 1 exactly at omega = 1/2
        let critical = EnvironmentSpec::<f64>::constant(0.5, 0.5).unwrap();
        assert!((mean_rho(&critical) - 1.0).abs() < 1e-15);
        assert!(!critical.transient());
    }

    #[test]
    fn mean_rho_continuous_uniform() {
        // Uniform on [0.3, 0.7]: E[rho] = (ln(7/3) - 0.4) / 0.4
        let spec =
            EnvironmentSpec::truncated_continuous(BaseDensity::<f64>::Uniform, 0.3).unwrap();
        let expect = ((0.7f64 / 0.3).ln() - 0.4) / 0.4;
        assert!((mean_rho(&spec) - expect).abs() < 1e-10);
    }

    #[test]
    fn invariants_reference_specs() {
        let inv = compute_invariants(&constant_ref()).unwrap();
        assert!((inv.speed - 0.5).abs() < 1e-15);
        assert!(inv.s_exponent.is_none());
        assert!(!inv.nestling);

        let inv = compute_invariants(&two_point_ref()).unwrap();
        assert!((inv.speed - 3.0 / 13.0).abs() < 1e-15);
        assert!(inv.nestling);
        let s = inv.s_exponent.expect("nestling spec has a tail exponent");
        // Value frozen from an independent high-precision bisection.
        assert!((s - 2.939_866_298_976_401).abs() < 1e-9, "s={s}");
        assert!((rho_moment(&two_point_ref(), s) - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn invariants_reject_non_transient() {
        let critical = EnvironmentSpec::constant(0.5, 0.5).unwrap();
        assert!(matches!(
            compute_invariants(&critical),
            Err(ModelError::AssumptionViolation(_))
        ));
    }

    #[test]
    fn rho_moment_strictly_below_one_between_roots() {
        // Convexity: E[rho^s] < 1 strictly for s strictly between 1 and s*.
        let spec = two_point_ref();
        let s_star = compute_invariants(&spec).unwrap().s_exponent.unwrap();
        for i in 1..=10 {
            let s = 1.0 + (s_star - 1.0) * i as f64 / 11.0;
            assert!(rho_moment(&spec, s) < 1.0, "s={s}");
        }
    }

    #[test]
    fn omega_deterministic_and_elliptic() {
        let env = Environment::new(two_point_ref(), 7).unwrap();
        let first = env.omega_at(0);
        assert_eq!(first, env.omega_at(0));
        assert!(first == 0.4 || first == 0.8);
        let env2 = Environment::new(two_point_ref(), 7).unwrap();
        for x in -500..=500 {
            assert_eq!(env.omega_at(x), env2.omega_at(x));
        }
        let c = env.spec().ellipticity_c;
        for i in 0..1_000_000i64 {
            let x = (i - 500_000) * 7919; // scattered queries
            let w = env.omega_at(x);
            assert!(w >= c && w <= 1.0 - c);
        }
    }

    #[test]
    fn omega_degenerate_law() {
        let env = Environment::new(constant_ref(), 999).unwrap();
        for x in [-10i64, 0, 12345] {
            assert_eq!(env.omega_at(x), 0.75);
        }
    }

    #[test]
    fn omega_marginal_frequency() {
        // LLN over the site index: frequency of the 0.4 atom within 4 sigma.
        let env = Environment::new(two_point_ref(), 11).unwrap();
        let n = 1_000_000i64;
        let hits = (0..n).filter(|&x| env.omega_at(x) == 0.4).count() as f64;
        let freq = hits / n as f64;
        assert!((freq - 0.3).abs() < 0.002, "freq={freq}");
    }

    #[test]
    fn omega_window_matches_pointwise() {
        let env = Environment::new(two_point_ref(), 3).unwrap();
        let win = env.omega_window(-50, 50);
        for x in -50..=50 {
            assert_eq!(win.value_at(x), env.omega_at(x));
        }
        // Growing the cache keeps values identical.
        let wider = env.omega_window(-200, 200);
        for x in -200..=200 {
            assert_eq!(wider.value_at(x), env.omega_at(x));
        }
    }

    #[test]
    fn continuous_sampler_in_support_and_unbiased() {
        let spec =
            EnvironmentSpec::truncated_continuous(BaseDensity::<f64>::Uniform, 0.3).unwrap();
        let env = Environment::new(spec.clone(), 21).unwrap();
        let n = 200_000i64;
        let mut sum = 0.0;
        for x in 0..n {
            let w = env.omega_at(x);
            assert!((0.3..=0.7).contains(&w));
            sum += w;
        }
        let mean = sum / n as f64;
        // E[w] = 0.5, sd = 0.4/sqrt(12 n)
        assert!((mean - 0.5).abs() < 4.0 * 0.4 / (12.0 * n as f64).sqrt());
    }

    #[test]
    fn potential_constant_environment() {
        // f = 1/(2p - 1) = 2 for p = 0.75, via the geometric series.
        let env = Environment::new(constant_ref(), 5).unwrap();
        let tol = 1e-10;
        let win = compute_f(&env, -20, 20, tol).unwrap();
        for x in -20..=20 {
            assert!((win.value_at(x) - 2.0).abs() < tol * 3.0);
        }
        // Constant f satisfies the identity exactly.
        assert!(win.max_identity_residual(&env) < 1e-14);
    }

    #[test]
    fn potential_identity_random_environment() {
        let env = Environment::new(two_point_ref(), 1234).unwrap();
        let tol = 1e-8;
        let win = compute_f(&env, 0, 2_000, tol).unwrap();
        assert!(win.max_identity_residual(&env) <= 3.0 * tol);
        // First series term: f >= 1/omega_x > 1.
        for x in 0..=2_000 {
            assert!(win.value_at(x) >= 1.0 / env.omega_at(x));
        }
    }

    #[test]
    fn potential_site_average_near_inverse_speed() {
        let env = Environment::new(two_point_ref(), 77).unwrap();
        let win = compute_f(&env, 0, 100_000, 1e-8).unwrap();
        let avg = win.site_average();
        let expect = 13.0 / 3.0;
        assert!(
            (avg - expect).abs() / expect < 0.02,
            "avg={avg} expect={expect}"
        );
    }

    #[test]
    fn potential_rejects_non_transient() {
        let env = Environment::new(EnvironmentSpec::constant(0.5, 0.5).unwrap(), 1).unwrap();
        assert!(matches!(
            compute_f(&env, 0, 10, 1e-8),
            Err(ModelError::AssumptionViolation(_))
        ));
    }

    #[test]
    fn potential_depth_cap_trips() {
        let env = Environment::new(two_point_ref(), 5).unwrap();
        assert!(matches!(
            compute_f_with_cap(&env, 0, 10, 1e-8, 2),
            Err(ModelError::DepthExceeded { .. })
        ));
    }

    #[test]
    fn generic_f32_invariants() {
        let spec = EnvironmentSpec::<f32>::constant(0.75, 0.25).unwrap();
        let inv = compute_invariants(&spec).unwrap();
        assert!((inv.speed - 0.5).abs() < 1e-6);
    }
}
