//! Particle configurations, environment-dependent product initial laws, and
//! exact finite-window dynamics.
//!
//! Particles are exchangeable and independent given the environment, so one
//! time step of the whole system is a binomial split per occupied site: the
//! movers-right at site `x` are `Binomial(count(x), omega_x)` and the rest
//! move left. This is an exact distributional shortcut, and the core
//! performance decision: a step costs O(occupied sites), not O(particles).

use crate::environment::{compute_f, Environment};
use crate::error::{ModelError, Result};
use crate::rng::{binomial, poisson, StreamKey};
use crate::scalar::Scalar;
use crate::Site;

/// Truncation tolerance used when materializing the potential for
/// stationary-Poisson sampling.
const STATIONARY_F_TOL: f64 = 1e-9;

/// A particle configuration on a finite window: site -> particle count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    lo: Site,
    hi: Site,
    counts: Vec<u64>,
    time: u64,
}

impl Configuration {
    pub fn empty(lo: Site, hi: Site) -> Self {
        assert!(lo <= hi, "window bounds out of order");
        Configuration {
            lo,
            hi,
            counts: vec![0; (hi - lo + 1) as usize],
            time: 0,
        }
    }

    pub fn from_counts(lo: Site, counts: Vec<u64>, time: u64) -> Self {
        assert!(!counts.is_empty(), "configuration window cannot be empty");
        Configuration {
            lo,
            hi: lo + counts.len() as Site - 1,
            counts,
            time,
        }
    }

    pub fn window(&self) -> (Site, Site) {
        (self.lo, self.hi)
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Count at `x`; sites outside the window hold no tracked particles.
    #[inline(always)]
    pub fn count_at(&self, x: Site) -> u64 {
        if x < self.lo || x > self.hi {
            0
        } else {
            self.counts[(x - self.lo) as usize]
        }
    }

    pub fn set_count(&mut self, x: Site, v: u64) {
        assert!(x >= self.lo && x <= self.hi, "site outside window");
        self.counts[(x - self.lo) as usize] = v;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Occupied sites, ascending.
    pub fn iter_occupied(&self) -> impl Iterator<Item = (Site, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, &c)| (self.lo + i as Site, c))
    }

    /// Restriction to a sub-window.
    pub fn restrict(&self, lo: Site, hi: Site) -> Result<Configuration> {
        if lo < self.lo || hi > self.hi || lo > hi {
            return Err(ModelError::WindowTooSmall(format!(
                "cannot restrict [{}, {}] to [{lo}, {hi}]",
                self.lo, self.hi
            )));
        }
        Ok(Configuration {
            lo,
            hi,
            counts: self.counts[(lo - self.lo) as usize..=(hi - self.lo) as usize].to_vec(),
            time: self.time,
        })
    }

    /// Sparse text serialization: `#`-prefixed header lines carrying window,
    /// time, and free-form metadata, then one `site count` line per occupied
    /// site.
    pub fn to_sparse_text(&self, metadata: &[(&str, String)]) -> String {
        let mut out = String::new();
        out.push_str(&format!("# window {} {}\n", self.lo, self.hi));
        out.push_str(&format!("# time {}\n", self.time));
        for (k, v) in metadata {
            out.push_str(&format!("# {k} {v}\n"));
        }
        for (x, c) in self.iter_occupied() {
            out.push_str(&format!("{x} {c}\n"));
        }
        out
    }

    pub fn from_sparse_text(text: &str) -> Result<Configuration> {
        let bad = |msg: &str| ModelError::InvalidParameter(format!("sparse text: {msg}"));
        let mut window = None;
        let mut time = 0u64;
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                match fields.first() {
                    Some(&"window") if fields.len() == 3 => {
                        let lo = fields[1].parse().map_err(|_| bad("window lo"))?;
                        let hi = fields[2].parse().map_err(|_| bad("window hi"))?;
                        window = Some((lo, hi));
                    }
                    Some(&"time") if fields.len() == 2 => {
                        time = fields[1].parse().map_err(|_| bad("time"))?;
                    }
                    _ => {} // other metadata ignored
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let x: Site = it
                .next()
                .ok_or_else(|| bad("missing site"))?
                .parse()
                .map_err(|_| bad("site"))?;
            let c: u64 = it
                .next()
                .ok_or_else(|| bad("missing count"))?
                .parse()
                .map_err(|_| bad("count"))?;
            entries.push((x, c));
        }
        let (lo, hi) = window.ok_or_else(|| bad("missing window header"))?;
        if lo > hi {
            return Err(bad("window bounds out of order"));
        }
        let mut cfg = Configuration {
            lo,
            hi,
            counts: vec![0; (hi - lo + 1) as usize],
            time,
        };
        for (x, c) in entries {
            if x < lo || x > hi {
                return Err(bad("site outside window"));
            }
            cfg.counts[(x - lo) as usize] = c;
        }
        Ok(cfg)
    }
}

/// Finite pmf table per environment value, realizing a general product law
/// `nu(theta^x omega)` for atomic environment laws.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileTable<F> {
    entries: Vec<(F, Vec<F>)>,
}

impl<F: Scalar> QuantileTable<F> {
    /// Build from `(omega value, unnormalized pmf over 0..len)` rows. Each
    /// pmf is truncated to `support_cap + 1` entries and renormalized.
    pub fn new(rows: Vec<(F, Vec<F>)>, support_cap: usize) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows.len());
        for (w, pmf) in rows {
            if pmf.is_empty() {
                return Err(ModelError::InvalidParameter(
                    "quantile table pmf cannot be empty".into(),
                ));
            }
            let mut pmf: Vec<F> = pmf.into_iter().take(support_cap + 1).collect();
            let total = pmf.iter().copied().sum::<F>();
            if !(total > F::zero()) {
                return Err(ModelError::InvalidParameter(
                    "quantile table pmf must have positive mass".into(),
                ));
            }
            for p in pmf.iter_mut() {
                if *p < F::zero() {
                    return Err(ModelError::InvalidParameter(
                        "quantile table pmf entries must be nonnegative".into(),
                    ));
                }
                *p = *p / total;
            }
            entries.push((w, pmf));
        }
        Ok(QuantileTable { entries })
    }

    fn pmf_for(&self, w: F) -> Result<&[F]> {
        let eps = F::from_real(1e-9);
        self.entries
            .iter()
            .find(|(key, _)| (*key - w).abs() <= eps)
            .map(|(_, pmf)| pmf.as_slice())
            .ok_or_else(|| {
                ModelError::InvalidParameter(format!(
                    "quantile table has no row for omega = {w}"
                ))
            })
    }

    pub fn mean_for(&self, w: F) -> Result<F> {
        let pmf = self.pmf_for(w)?;
        Ok(pmf
            .iter()
            .enumerate()
            .fold(F::zero(), |acc, (k, &p)| acc + F::from_usize(k).unwrap() * p))
    }
}

/// Environment-dependent product initial law: given `omega`, sites are
/// independent and site `x` is distributed by the variant's law at the
/// shifted environment.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw<F> {
    /// `k` particles at every site.
    DeterministicConstant(u64),
    /// Poisson(lambda) at every site.
    PoissonConstant(F),
    /// Poisson(alpha * f(theta^x omega)): the quenched-stationary family.
    StationaryPoisson { alpha: F },
    /// Arbitrary finite-table law per environment value.
    QuantileProduct(QuantileTable<F>),
}

/// Quantile-coupling sample `F(Q, u) = inf{n : Q([0, n]) >= u}` from a pmf.
fn quantile_sample<F: Scalar>(pmf: &[F], u: F) -> u64 {
    let mut cum = F::zero();
    for (k, &p) in pmf.iter().enumerate() {
        cum = cum + p;
        if u < cum {
            return k as u64;
        }
    }
    (pmf.len() - 1) as u64
}

/// Sample an initial configuration on `[lo, hi]`.
///
/// Sites are independent given the environment; the draw at site `x` uses the
/// stream keyed on `(config_seed, x)`, so the result is deterministic in
/// `(env, law, window, config_seed)` and independent of the window in which a
/// site is sampled.
pub fn sample_initial<F: Scalar>(
    env: &Environment<F>,
    law: &InitialLaw<F>,
    lo: Site,
    hi: Site,
    config_key: StreamKey,
) -> Result<Configuration> {
    if lo > hi {
        return Err(ModelError::InvalidParameter(
            "initial window bounds out of order".into(),
        ));
    }
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    match law {
        InitialLaw::DeterministicConstant(k) => counts.fill(*k),
        InitialLaw::PoissonConstant(lambda) => {
            for (i, c) in counts.iter_mut().enumerate() {
                *c = poisson(*lambda, config_key.derive_signed(lo + i as Site));
            }
        }
        InitialLaw::StationaryPoisson { alpha } => {
            let f_win = compute_f(env, lo, hi, F::from_real(STATIONARY_F_TOL))?;
            for (i, c) in counts.iter_mut().enumerate() {
                let x = lo + i as Site;
                *c = poisson(*alpha * f_win.value_at(x), config_key.derive_signed(x));
            }
        }
        InitialLaw::QuantileProduct(table) => {
            for (i, c) in counts.iter_mut().enumerate() {
                let x = lo + i as Site;
                let pmf = table.pmf_for(env.omega_at(x))?;
                *c = quantile_sample(pmf, config_key.derive_signed(x).unit_at::<F>(0));
            }
        }
    }
    Ok(Configuration::from_counts(lo, counts, 0))
}

/// Mean particle count of a law at a given site.
pub fn law_mean_at<F: Scalar>(
    env: &Environment<F>,
    law: &InitialLaw<F>,
    x: Site,
) -> Result<F> {
    Ok(match law {
        InitialLaw::DeterministicConstant(k) => F::from_u64(*k).unwrap(),
        InitialLaw::PoissonConstant(lambda) => *lambda,
        InitialLaw::StationaryPoisson { alpha } => {
            let f_win = compute_f(env, x, x, F::from_real(STATIONARY_F_TOL))?;
            *alpha * f_win.value_at(x)
        }
        InitialLaw::QuantileProduct(table) => table.mean_for(env.omega_at(x))?,
    })
}

/// Window semantics of [`evolve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// The window shrinks by one site per side per step; the output counts
    /// are exactly those of the infinite system restricted to the shrunk
    /// window (cone-exactness).
    Shrink,
    /// The input configuration is the entire system (no particles outside);
    /// the window grows by one site per side per step and total count is
    /// conserved exactly.
    Expand,
}

/// Advance a configuration `t_steps` time steps.
///
/// Per step, each occupied site `x` sends `Binomial(count, omega_x)` movers
/// right and the remainder left; arrivals combine in ascending site order.
/// Variates are keyed on `(dyn_seed, absolute time, site)`, so evolving in
/// several calls equals one combined call bit-exactly, and counts on any
/// cone-interior window do not depend on how far the input window extends.
pub fn evolve<F: Scalar>(
    env: &Environment<F>,
    config: &Configuration,
    t_steps: u64,
    dyn_key: StreamKey,
    mode: BoundaryMode,
) -> Result<Configuration> {
    let mut out = None;
    evolve_inner(env, config, t_steps, dyn_key, mode, &[], &mut |cfg| {
        out = Some(cfg.clone())
    })?;
    Ok(out.expect("final snapshot always emitted"))
}

/// Advance and capture clones at the given absolute times (ascending). The
/// final state is always captured; requested times must lie in
/// `[config.time, config.time + t_steps]`.
pub fn evolve_with_snapshots<F: Scalar>(
    env: &Environment<F>,
    config: &Configuration,
    t_steps: u64,
    dyn_key: StreamKey,
    mode: BoundaryMode,
    snapshot_times: &[u64],
) -> Result<Vec<Configuration>> {
    let mut snaps = Vec::with_capacity(snapshot_times.len() + 1);
    evolve_inner(env, config, t_steps, dyn_key, mode, snapshot_times, &mut |c| {
        snaps.push(c.clone())
    })?;
    Ok(snaps)
}

fn evolve_inner<F: Scalar>(
    env: &Environment<F>,
    config: &Configuration,
    t_steps: u64,
    dyn_key: StreamKey,
    mode: BoundaryMode,
    snapshot_times: &[u64],
    observe: &mut dyn FnMut(&Configuration),
) -> Result<()> {
    let (lo0, hi0) = config.window();
    if mode == BoundaryMode::Shrink {
        let needed = 2 * t_steps as Site;
        if hi0 - lo0 < needed {
            return Err(ModelError::WindowTooSmall(format!(
                "window [{lo0}, {hi0}] cannot shrink by {t_steps} per side"
            )));
        }
    }
    if let Some(&t) = snapshot_times.first() {
        if t < config.time {
            return Err(ModelError::InvalidParameter(
                "snapshot time precedes configuration time".into(),
            ));
        }
    }
    if let Some(&t) = snapshot_times.last() {
        if t > config.time + t_steps {
            return Err(ModelError::InvalidParameter(
                "snapshot time beyond evolution horizon".into(),
            ));
        }
    }
    // Materialize every omega the evolution can touch.
    let omegas = match mode {
        BoundaryMode::Shrink => env.omega_window(lo0, hi0),
        BoundaryMode::Expand => {
            env.omega_window(lo0 - t_steps as Site, hi0 + t_steps as Site)
        }
    };

    let mut cur = config.clone();
    let mut snap_idx = 0usize;
    for step in 0..t_steps {
        while snap_idx < snapshot_times.len() && snapshot_times[snap_idx] == cur.time {
            observe(&cur);
            snap_idx += 1;
        }
        let abs_time = config.time + step;
        let step_key = dyn_key.derive(abs_time);
        let (lo, hi) = cur.window();
        let (nlo, nhi) = match mode {
            BoundaryMode::Shrink => (lo + 1, hi - 1),
            BoundaryMode::Expand => (lo - 1, hi + 1),
        };
        let mut next = vec![0u64; (nhi - nlo + 1) as usize];
        for (i, &k) in cur.counts.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let x = lo + i as Site;
            let right = binomial(k, omegas.value_at(x), step_key.derive_signed(x));
            let left = k - right;
            if x + 1 >= nlo && x + 1 <= nhi {
                next[(x + 1 - nlo) as usize] += right;
            }
            if x - 1 >= nlo && x - 1 <= nhi {
                next[(x - 1 - nlo) as usize] += left;
            }
        }
        cur = Configuration {
            lo: nlo,
            hi: nhi,
            counts: next,
            time: abs_time + 1,
        };
    }
    while snap_idx < snapshot_times.len() && snapshot_times[snap_idx] == cur.time {
        observe(&cur);
        snap_idx += 1;
    }
    if snapshot_times.is_empty() {
        observe(&cur);
    }
    Ok(())
}

/// Macroscopic density profile for hydrodynamic experiments.
#[derive(Clone, Debug, PartialEq)]
pub enum ProfileShape<F> {
    /// `height` on `[a, b]`, zero elsewhere.
    Indicator { a: F, b: F, height: F },
    /// Piecewise-linear interpolation of sorted knots, zero outside.
    PiecewiseLinear { knots: Vec<(F, F)> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSpec<F> {
    pub shape: ProfileShape<F>,
}

impl<F: Scalar> ProfileSpec<F> {
    pub fn indicator(a: F, b: F, height: F) -> Result<Self> {
        if !(a < b) || height < F::zero() {
            return Err(ModelError::InvalidParameter(
                "indicator profile needs a < b and height >= 0".into(),
            ));
        }
        Ok(ProfileSpec {
            shape: ProfileShape::Indicator { a, b, height },
        })
    }

    pub fn piecewise_linear(knots: Vec<(F, F)>) -> Result<Self> {
        if knots.len() < 2 || knots.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(ModelError::InvalidParameter(
                "piecewise profile needs at least two strictly increasing knots".into(),
            ));
        }
        if knots.iter().any(|&(_, v)| v < F::zero()) {
            return Err(ModelError::InvalidParameter(
                "profile densities must be nonnegative".into(),
            ));
        }
        Ok(ProfileSpec {
            shape: ProfileShape::PiecewiseLinear { knots },
        })
    }

    pub fn eval(&self, y: F) -> F {
        match &self.shape {
            ProfileShape::Indicator { a, b, height } => {
                if y >= *a && y <= *b {
                    *height
                } else {
                    F::zero()
                }
            }
            ProfileShape::PiecewiseLinear { knots } => {
                if y < knots[0].0 || y > knots[knots.len() - 1].0 {
                    return F::zero();
                }
                for w in knots.windows(2) {
                    let ((x0, v0), (x1, v1)) = (w[0], w[1]);
                    if y <= x1 {
                        return v0 + (v1 - v0) * (y - x0) / (x1 - x0);
                    }
                }
                F::zero()
            }
        }
    }

    /// `sup |prof|`.
    pub fn bound(&self) -> F {
        match &self.shape {
            ProfileShape::Indicator { height, .. } => *height,
            ProfileShape::PiecewiseLinear { knots } => knots
                .iter()
                .fold(F::zero(), |acc, &(_, v)| acc.max(v)),
        }
    }

    /// Support interval (macroscopic coordinates).
    pub fn support(&self) -> (F, F) {
        match &self.shape {
            ProfileShape::Indicator { a, b, .. } => (*a, *b),
            ProfileShape::PiecewiseLinear { knots } => (knots[0].0, knots[knots.len() - 1].0),
        }
    }

    /// Breakpoints where the (shifted) profile is non-smooth.
    pub fn breakpoints(&self) -> Vec<F> {
        match &self.shape {
            ProfileShape::Indicator { a, b, .. } => vec![*a, *b],
            ProfileShape::PiecewiseLinear { knots } => knots.iter().map(|&(x, _)| x).collect(),
        }
    }
}

/// How [`synthesize_profile_config`] turns a density into integer counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileRounding {
    /// Counts are independent Poisson(prof(x/N)) draws.
    Poisson,
    /// Deterministic floor of the density.
    Floor,
}

/// Build a microscopic configuration approximating `prof` at scale `N`:
/// site `x` holds Poisson(prof(x/N)) particles (or the deterministic floor).
pub fn synthesize_profile_config<F: Scalar>(
    profile: &ProfileSpec<F>,
    n_scale: u64,
    lo: Site,
    hi: Site,
    config_key: StreamKey,
    rounding: ProfileRounding,
) -> Configuration {
    assert!(lo <= hi, "window bounds out of order");
    assert!(n_scale >= 1, "scale must be positive");
    let nf = F::from_u64(n_scale).unwrap();
    let counts = (lo..=hi)
        .map(|x| {
            let dens = profile.eval(F::from_i64(x).unwrap() / nf);
            match rounding {
                ProfileRounding::Poisson => poisson(dens, config_key.derive_signed(x)),
                ProfileRounding::Floor => dens.real().floor() as u64,
            }
        })
        .collect();
    Configuration::from_counts(lo, counts, 0)
}

/// The empirical pairing `(1/N) sum_(x = floor(Na)+1)^(floor(Nb)) counts(x) g(x/N)`.
pub fn empirical_pairing<F: Scalar>(
    config: &Configuration,
    n_scale: u64,
    g: &dyn Fn(F) -> F,
    a: F,
    b: F,
) -> Result<F> {
    let nf = F::from_u64(n_scale).unwrap();
    let x_lo = (a * nf).real().floor() as Site + 1;
    let x_hi = (b * nf).real().floor() as Site;
    let (lo, hi) = config.window();
    if x_lo < lo || x_hi > hi {
        return Err(ModelError::WindowTooSmall(format!(
            "pairing needs [{x_lo}, {x_hi}] inside [{lo}, {hi}]"
        )));
    }
    let mut acc = F::zero();
    for x in x_lo..=x_hi {
        let c = config.count_at(x);
        if c > 0 {
            acc = acc + F::from_u64(c).unwrap() * g(F::from_i64(x).unwrap() / nf);
        }
    }
    Ok(acc / nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvironmentSpec;

    fn constant_env(seed: u64) -> Environment<f64> {
        Environment::new(EnvironmentSpec::constant(0.75, 0.25).unwrap(), seed).unwrap()
    }

    fn two_point_env(seed: u64) -> Environment<f64> {
        Environment::new(
            EnvironmentSpec::two_point((0.4, 0.8), 0.3, 0.2).unwrap(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_constant_law() {
        let env = constant_env(1);
        let cfg = sample_initial(
            &env,
            &InitialLaw::DeterministicConstant(2),
            -5,
            5,
            StreamKey::from_seed(0),
        )
        .unwrap();
        assert!(cfg.counts().iter().all(|&c| c == 2));
        assert_eq!(cfg.total(), 22);
    }

    #[test]
    fn stationary_poisson_mean_on_constant_env() {
        // f = 2 for p = 0.75, so alpha = 0.5 gives i.i.d. Poisson(1) sites.
        let env = constant_env(3);
        let n = 100_000i64;
        let cfg = sample_initial(
            &env,
            &InitialLaw::StationaryPoisson { alpha: 0.5 },
            0,
            n - 1,
            StreamKey::from_seed(42),
        )
        .unwrap();
        let mean = cfg.total() as f64 / n as f64;
        // 4 sigma band: sd = sqrt(1/n)
        assert!((mean - 1.0).abs() < 4.0 / (n as f64).sqrt() * 1.04, "mean={mean}");
    }

    #[test]
    fn poisson_constant_dispersion() {
        let env = two_point_env(5);
        let n = 100_000i64;
        let cfg = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(3.0),
            0,
            n - 1,
            StreamKey::from_seed(7),
        )
        .unwrap();
        let nf = n as f64;
        let mean = cfg.total() as f64 / nf;
        let var = cfg
            .counts()
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / nf;
        let ratio = var / mean;
        assert!((ratio - 1.0).abs() < 0.02, "index of dispersion {ratio}");
    }

    #[test]
    fn quantile_product_law() {
        let env = two_point_env(9);
        // At omega = 0.4 put mass on {0,1}, at omega = 0.8 a point mass at 3.
        let table = QuantileTable::new(
            vec![(0.4, vec![0.5, 0.5]), (0.8, vec![0.0, 0.0, 0.0, 1.0])],
            8,
        )
        .unwrap();
        let cfg = sample_initial(
            &env,
            &InitialLaw::QuantileProduct(table),
            0,
            5_000,
            StreamKey::from_seed(3),
        )
        .unwrap();
        for (x, _) in cfg.iter_occupied() {
            let c = cfg.count_at(x);
            if env.omega_at(x) == 0.8 {
                assert_eq!(c, 3);
            } else {
                assert!(c <= 1);
            }
        }
    }

    #[test]
    fn sampling_deterministic_and_windowless() {
        let env = two_point_env(11);
        let law = InitialLaw::PoissonConstant(2.0);
        let key = StreamKey::from_seed(5);
        let a = sample_initial(&env, &law, -10, 30, key).unwrap();
        let b = sample_initial(&env, &law, -10, 30, key).unwrap();
        assert_eq!(a, b);
        // Site draws do not depend on the window they are sampled in.
        let wide = sample_initial(&env, &law, -50, 80, key).unwrap();
        for x in -10..=30 {
            assert_eq!(a.count_at(x), wide.count_at(x));
        }
    }

    #[test]
    fn evolve_zero_steps_identity() {
        let env = constant_env(2);
        let cfg = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(1.0),
            0,
            20,
            StreamKey::from_seed(1),
        )
        .unwrap();
        let out = evolve(&env, &cfg, 0, StreamKey::from_seed(2), BoundaryMode::Shrink).unwrap();
        assert_eq!(out, cfg);
    }

    #[test]
    fn evolve_single_site_split() {
        let env = two_point_env(21);
        let mut cfg = Configuration::empty(-3, 3);
        cfg.set_count(0, 12);
        let key = StreamKey::from_seed(9);
        let out = evolve(&env, &cfg, 1, key, BoundaryMode::Shrink).unwrap();
        assert_eq!(out.window(), (-2, 2));
        assert_eq!(out.count_at(1) + out.count_at(-1), 12);
        assert_eq!(out.count_at(0), 0);
        // Mean movers-right over replicas ~ k * omega_0 within 3 SE.
        let reps = 10_000u64;
        let k = 12u64;
        let base = StreamKey::from_seed(100);
        let mut sum = 0.0;
        for r in 0..reps {
            let o = evolve(&env, &cfg, 1, base.derive(r), BoundaryMode::Shrink).unwrap();
            sum += o.count_at(1) as f64;
        }
        let mean = sum / reps as f64;
        let w = env.omega_at(0);
        let se = (k as f64 * w * (1.0 - w) / reps as f64).sqrt();
        assert!((mean - k as f64 * w).abs() < 3.0 * se, "mean={mean}");
    }

    #[test]
    fn evolve_conserves_total_in_expand_mode() {
        let env = two_point_env(8);
        let cfg = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(2.5),
            -40,
            40,
            StreamKey::from_seed(4),
        )
        .unwrap();
        let total = cfg.total();
        let out = evolve(&env, &cfg, 100, StreamKey::from_seed(5), BoundaryMode::Expand).unwrap();
        assert_eq!(out.total(), total);
        assert_eq!(out.window(), (-140, 140));
    }

    #[test]
    fn evolve_window_too_small() {
        let env = constant_env(1);
        let cfg = Configuration::empty(0, 5);
        assert!(matches!(
            evolve(&env, &cfg, 3, StreamKey::from_seed(0), BoundaryMode::Shrink),
            Err(ModelError::WindowTooSmall(_))
        ));
    }

    #[test]
    fn cone_exactness_shared_seeds() {
        // Evolving the cone-padded window and any larger window gives
        // identical counts on the observation window.
        let env = two_point_env(33);
        let law = InitialLaw::PoissonConstant(1.5);
        let key = StreamKey::from_seed(77);
        let dyn_key = StreamKey::from_seed(78);
        let t = 25u64;
        let (a, b) = (-10i64, 10i64);
        let padded = sample_initial(&env, &law, a - t as Site, b + t as Site, key).unwrap();
        let wider = sample_initial(&env, &law, a - t as Site - 40, b + t as Site + 40, key)
            .unwrap();
        let out_padded = evolve(&env, &padded, t, dyn_key, BoundaryMode::Shrink).unwrap();
        let out_wider = evolve(&env, &wider, t, dyn_key, BoundaryMode::Shrink).unwrap();
        assert_eq!(out_padded.window(), (a, b));
        for x in a..=b {
            assert_eq!(out_padded.count_at(x), out_wider.count_at(x), "site {x}");
        }
    }

    #[test]
    fn evolve_splits_compose_bit_exactly() {
        let env = two_point_env(13);
        let cfg = sample_initial(
            &env,
            &InitialLaw::PoissonConstant(1.0),
            -60,
            60,
            StreamKey::from_seed(6),
        )
        .unwrap();
        let dyn_key = StreamKey::from_seed(10);
        let once = evolve(&env, &cfg, 30, dyn_key, BoundaryMode::Shrink).unwrap();
        let halfway = evolve(&env, &cfg, 13, dyn_key, BoundaryMode::Shrink).unwrap();
        let twice = evolve(&env, &halfway, 17, dyn_key, BoundaryMode::Shrink).unwrap();
        assert_eq!(once, twice);
        // Snapshot capture agrees with direct evolution.
        let snaps =
            evolve_with_snapshots(&env, &cfg, 30, dyn_key, BoundaryMode::Shrink, &[13, 30])
                .unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0], halfway);
        assert_eq!(snaps[1], once);
    }

    #[test]
    fn pairing_direct_values() {
        let mut cfg = Configuration::empty(-2, 4);
        cfg.set_count(0, 2);
        cfg.set_count(1, 1);
        let g = |y: f64| if y == 0.0 { 1.0 } else if y == 1.0 { 0.5 } else { 0.0 };
        let v = empirical_pairing(&cfg, 1, &g, -1.0, 4.0).unwrap();
        assert_eq!(v, 2.5);
        let zero = empirical_pairing(&cfg, 1, &|_| 0.0, -1.0, 4.0).unwrap();
        assert_eq!(zero, 0.0);
        assert!(matches!(
            empirical_pairing(&cfg, 1, &g, -10.0, 4.0),
            Err(ModelError::WindowTooSmall(_))
        ));
    }

    #[test]
    fn pairing_riemann_sum() {
        // Constant-1 counts on [0, N]; triangle peaking at 1/2 integrates to 1/2.
        let n: u64 = 10_000;
        let cfg = Configuration::from_counts(0, vec![1; n as usize + 1], 0);
        let g = |y: f64| {
            if (0.0..=0.5).contains(&y) {
                2.0 * y
            } else if y <= 1.0 {
                2.0 * (1.0 - y)
            } else {
                0.0
            }
        };
        let v = empirical_pairing(&cfg, n, &g, 0.0, 1.0).unwrap();
        assert!((v - 0.5).abs() < 0.01, "pairing={v}");
    }

    #[test]
    fn profile_synthesis_matches_density() {
        let prof = ProfileSpec::indicator(0.0, 1.0, 1.0).unwrap();
        let n = 10_000u64;
        let cfg = synthesize_profile_config(
            &prof,
            n,
            -100,
            n as i64 + 100,
            StreamKey::from_seed(46),
            ProfileRounding::Poisson,
        );
        // Total ~ Poisson(N): 4 sigma band.
        let total = cfg.total() as f64;
        assert!((total - n as f64).abs() < 4.0 * (n as f64).sqrt(), "total={total}");
        // Pairing reproduces the integral of prof * g within 2%.
        let g = |y: f64| {
            if (-0.5..=1.5).contains(&y) {
                1.0 - (y - 0.5).abs() / 1.0
            } else {
                0.0
            }
        };
        let v = empirical_pairing(&cfg, n, &g, -0.01, 1.01).unwrap();
        let expect = 0.75; // integral of the triangle over [0,1]
        assert!((v - expect).abs() / expect < 0.02, "pairing={v}");
        // Zero profile gives an empty configuration.
        let empty = synthesize_profile_config(
            &ProfileSpec::indicator(0.0, 1.0, 0.0).unwrap(),
            n,
            0,
            100,
            StreamKey::from_seed(1),
            ProfileRounding::Poisson,
        );
        assert_eq!(empty.total(), 0);
    }

    #[test]
    fn profile_floor_rounding() {
        let prof = ProfileSpec::indicator(0.0, 1.0, 2.7).unwrap();
        let cfg = synthesize_profile_config(
            &prof,
            100,
            0,
            100,
            StreamKey::from_seed(0),
            ProfileRounding::Floor,
        );
        assert!(cfg.counts().iter().all(|&c| c == 2 || c == 0));
    }

    #[test]
    fn sparse_text_roundtrip() {
        let mut cfg = Configuration::empty(-3, 7);
        cfg.set_count(-3, 4);
        cfg.set_count(0, 1);
        cfg.set_count(7, 9);
        let cfg = Configuration {
            time: 12,
            ..cfg
        };
        let text = cfg.to_sparse_text(&[("seed", "17".to_string())]);
        let back = Configuration::from_sparse_text(&text).unwrap();
        assert_eq!(cfg, back);
        assert!(Configuration::from_sparse_text("0 1\n").is_err());
    }
}
