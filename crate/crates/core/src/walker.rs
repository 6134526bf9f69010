//! Quenched single-walk simulation: trajectories, hitting times, and
//! backtracking statistics.
//!
//! Each walk owns a variate stream keyed on `(walk_seed, step)` and
//! independent of position, so trajectories are reproducible and walks are
//! exchangeable: holding the environment seed fixed while varying walk seeds
//! samples the quenched law, varying both samples the averaged law.

use rayon::prelude::*;

use crate::environment::Environment;
use crate::rng::StreamKey;
use crate::scalar::Scalar;
use crate::Site;

/// Summary statistics of one finished walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkResult {
    pub start: Site,
    pub steps: u64,
    pub final_position: Site,
    pub min_position: Site,
    /// Maximum distance the walk ever backtracked below its starting site.
    pub max_backtrack: u64,
}

/// Run a nearest-neighbor walk for `n` steps: from site `y` the walk moves
/// to `y + 1` with probability `omega_y`, else to `y - 1`.
///
/// The sampler dispatch is hoisted out of the step loop; uniform-LLN scans
/// burn through 1e9+ steps per estimate.
pub fn run_walk<F: Scalar>(
    env: &Environment<F>,
    start: Site,
    n: u64,
    walk_key: StreamKey,
) -> WalkResult {
    use crate::environment::FastOmega;
    let mut pos = start;
    let mut min_pos = start;
    match env.fast_omega() {
        FastOmega::Constant(w) => {
            for step in 0..n {
                let u: F = walk_key.unit_at(step);
                pos += if u < w { 1 } else { -1 };
                min_pos = min_pos.min(pos);
            }
        }
        FastOmega::TwoPoint {
            key,
            threshold,
            w1,
            w2,
        } => {
            for step in 0..n {
                let u: F = walk_key.unit_at(step);
                let w = if key.derive_signed(pos).raw() < threshold {
                    w1
                } else {
                    w2
                };
                pos += if u < w { 1 } else { -1 };
                min_pos = min_pos.min(pos);
            }
        }
        FastOmega::General => {
            for step in 0..n {
                let u: F = walk_key.unit_at(step);
                pos += if u < env.omega_at(pos) { 1 } else { -1 };
                min_pos = min_pos.min(pos);
            }
        }
    }
    WalkResult {
        start,
        steps: n,
        final_position: pos,
        min_position: min_pos,
        max_backtrack: (start - min_pos) as u64,
    }
}

/// Final position only: the innermost loop of the uniform-LLN and slowdown
/// estimators, which never look at the running minimum.
pub fn walk_final_position<F: Scalar>(
    env: &Environment<F>,
    start: Site,
    n: u64,
    walk_key: StreamKey,
) -> Site {
    use crate::environment::FastOmega;
    let mut pos = start;
    match env.fast_omega() {
        FastOmega::Constant(w) => {
            for step in 0..n {
                let u: F = walk_key.unit_at(step);
                pos += if u < w { 1 } else { -1 };
            }
        }
        FastOmega::TwoPoint {
            key,
            threshold,
            w1,
            w2,
        } => {
            for step in 0..n {
                let u: F = walk_key.unit_at(step);
                let w = if key.derive_signed(pos).raw() < threshold {
                    w1
                } else {
                    w2
                };
                pos += if u < w { 1 } else { -1 };
            }
        }
        FastOmega::General => {
            for step in 0..n {
                let u: F = walk_key.unit_at(step);
                pos += if u < env.omega_at(pos) { 1 } else { -1 };
            }
        }
    }
    pos
}

/// Full trajectory (length `n + 1`, starting at `start`). Summary statistics
/// are the default elsewhere; paths are materialized only on request.
pub fn run_walk_positions<F: Scalar>(
    env: &Environment<F>,
    start: Site,
    n: u64,
    walk_key: StreamKey,
) -> Vec<Site> {
    let mut path = Vec::with_capacity(n as usize + 1);
    let mut pos = start;
    path.push(pos);
    for step in 0..n {
        let u: F = walk_key.unit_at(step);
        pos += if u < env.omega_at(pos) { 1 } else { -1 };
        path.push(pos);
    }
    path
}

/// Outcome of a capped hitting-time run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HitOutcome {
    /// First time the walk reached the target.
    Hit(u64),
    /// The target was not reached within the cap.
    Censored(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HittingResult {
    pub start: Site,
    pub distance: u64,
    pub outcome: HitOutcome,
}

/// First time the walk from `start` reaches `start + distance`, censored at
/// `cap` steps. Requires `distance >= 1` and `cap >= distance`.
pub fn hitting_time<F: Scalar>(
    env: &Environment<F>,
    start: Site,
    distance: u64,
    cap: u64,
    walk_key: StreamKey,
) -> HittingResult {
    debug_assert!(distance >= 1);
    debug_assert!(cap >= distance);
    let target = start + distance as Site;
    let mut pos = start;
    for step in 0..cap {
        let u: F = walk_key.unit_at(step);
        pos += if u < env.omega_at(pos) { 1 } else { -1 };
        if pos == target {
            return HittingResult {
                start,
                distance,
                outcome: HitOutcome::Hit(step + 1),
            };
        }
    }
    HittingResult {
        start,
        distance,
        outcome: HitOutcome::Censored(cap),
    }
}

/// Empirical tail `P(max_backtrack >= k)` for `k = 0..=K`, averaged over the
/// given starting sites (environment diversity) and per-site replicas (walk
/// diversity). `K` is the largest observed backtrack.
pub fn backtrack_tail<F: Scalar>(
    env: &Environment<F>,
    starts: &[Site],
    horizon: u64,
    replicas: u64,
    key: StreamKey,
) -> Vec<F> {
    assert!(replicas >= 1, "need at least one replica");
    let backtracks: Vec<u64> = starts
        .par_iter()
        .flat_map_iter(|&start| {
            let site_key = key.derive_signed(start);
            (0..replicas)
                .map(move |r| run_walk(env, start, horizon, site_key.derive(r)).max_backtrack)
        })
        .collect();
    let k_max = backtracks.iter().copied().max().unwrap_or(0) as usize;
    let mut exceed = vec![0u64; k_max + 1];
    for &b in &backtracks {
        for k in 0..=(b as usize) {
            exceed[k] += 1;
        }
    }
    let total = F::from_usize(backtracks.len()).unwrap();
    exceed
        .into_iter()
        .map(|c| F::from_u64(c).unwrap() / total)
        .collect()
}
