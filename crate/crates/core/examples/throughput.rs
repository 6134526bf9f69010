//! Rough single-machine throughput probe, useful for sizing experiment
//! budgets before launching long runs.

use std::time::Instant;

use rwre_core::environment::{Environment, EnvironmentSpec};
use rwre_core::particles::{evolve, sample_initial, BoundaryMode, InitialLaw};
use rwre_core::rng::StreamKey;
use rwre_core::walker::run_walk;

fn main() {
    let constant = Environment::<f64>::new(
        EnvironmentSpec::constant(0.75, 0.25).unwrap(),
        1,
    )
    .unwrap();
    let two_point = Environment::<f64>::new(
        EnvironmentSpec::two_point((0.4, 0.8), 0.3, 0.2).unwrap(),
        1,
    )
    .unwrap();

    let steps = 100_000_000u64;
    for (name, env) in [("constant", &constant), ("two-point", &two_point)] {
        let t0 = Instant::now();
        let r = run_walk(env, 0, steps, StreamKey::from_seed(7));
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "walk/{name}: {:.1} Msteps/s (final {})",
            steps as f64 / dt / 1e6,
            r.final_position
        );
    }

    // Stationary-density evolution: the dominant cost of the long criteria.
    let t0 = Instant::now();
    let cfg = sample_initial(
        &two_point,
        &InitialLaw::StationaryPoisson { alpha: 0.5 },
        -1000,
        1000,
        StreamKey::from_seed(3),
    )
    .unwrap();
    let reps = 40u64;
    let mut site_steps = 0u64;
    for r in 0..reps {
        let out = evolve(
            &two_point,
            &cfg,
            1000,
            StreamKey::from_seed(r),
            BoundaryMode::Shrink,
        )
        .unwrap();
        site_steps += 1000 * 1001; // triangle of shrinking windows
        std::hint::black_box(out);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "evolve/stationary: {:.1} M site-steps/s",
        site_steps as f64 / dt / 1e6
    );
}
