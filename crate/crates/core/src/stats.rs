//! Statistical primitives shared by the estimators: Wilson intervals,
//! Poisson goodness of fit, total-variation distance, and least squares.

use crate::error::{ModelError, Result};
use crate::numeric::chi_square_sf;
use crate::scalar::Scalar;

/// Minimum sample count for the distributional estimators.
pub const MIN_SAMPLES: usize = 1_000;

/// Wilson score interval for a binomial proportion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilsonInterval<F> {
    pub estimate: F,
    pub lo: F,
    pub hi: F,
    pub successes: u64,
    pub trials: u64,
    /// Zero successes: the interval degenerates to the one-sided upper
    /// bound `3 / trials`.
    pub degenerate: bool,
}

pub fn wilson<F: Scalar>(successes: u64, trials: u64, z: F) -> WilsonInterval<F> {
    assert!(trials > 0, "wilson interval needs at least one trial");
    assert!(successes <= trials);
    let n = F::from_u64(trials).unwrap();
    if successes == 0 {
        return WilsonInterval {
            estimate: F::zero(),
            lo: F::zero(),
            hi: (F::from_real(3.0) / n).min(F::one()),
            successes,
            trials,
            degenerate: true,
        };
    }
    let p = F::from_u64(successes).unwrap() / n;
    let z2 = z * z;
    let denom = F::one() + z2 / n;
    let center = (p + z2 / (F::from_real(2.0) * n)) / denom;
    let half = z * (p * (F::one() - p) / n + z2 / (F::from_real(4.0) * n * n)).sqrt() / denom;
    WilsonInterval {
        estimate: p,
        lo: (center - half).max(F::zero()),
        hi: (center + half).min(F::one()),
        successes,
        trials,
        degenerate: false,
    }
}

/// Result of a chi-square goodness-of-fit test.
#[derive(Clone, Debug, PartialEq)]
pub struct GofResult<F> {
    pub statistic: F,
    pub dof: u64,
    pub p_value: F,
    /// Merged bins as `(k_lo, k_hi_inclusive, observed, expected)`.
    pub bins: Vec<(u64, u64, u64, F)>,
}

fn poisson_pmf_table(lambda: f64, k_hi: u64) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(k_hi as usize + 1);
    let mut p = (-lambda).exp();
    pmf.push(p);
    for k in 1..=k_hi {
        p *= lambda / k as f64;
        pmf.push(p);
    }
    pmf
}

/// Chi-square goodness of fit of integer samples against Poisson(lambda).
///
/// Raw bins `0, 1, 2, ...` are merged left to right until each merged bin
/// has expected count at least 5 (the usual validity rule); everything past
/// the enumeration cap folds into the final bin via the tail mass.
pub fn poisson_gof<F: Scalar>(samples: &[u64], lambda: F) -> Result<GofResult<F>> {
    if samples.len() < MIN_SAMPLES {
        return Err(ModelError::InsufficientSamples {
            got: samples.len(),
            need: MIN_SAMPLES,
        });
    }
    let lambda = lambda.real();
    if lambda <= 0.0 {
        return Err(ModelError::InvalidParameter(
            "poisson gof needs lambda > 0".into(),
        ));
    }
    let n = samples.len() as f64;
    let k_hi = (lambda + 12.0 * lambda.sqrt() + 25.0) as u64;
    let pmf = poisson_pmf_table(lambda, k_hi);
    let mut observed = vec![0u64; k_hi as usize + 1];
    for &s in samples {
        observed[(s.min(k_hi)) as usize] += 1;
    }
    // Expected counts, with the final cell absorbing the upper tail.
    let mut expected: Vec<f64> = pmf.iter().map(|&p| p * n).collect();
    let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
    *expected.last_mut().unwrap() += tail * n;

    // Merge adjacent cells until every bin expects >= 5.
    let mut bins: Vec<(u64, u64, u64, f64)> = Vec::new();
    let mut acc_obs = 0u64;
    let mut acc_exp = 0.0;
    let mut bin_lo = 0u64;
    for k in 0..=k_hi {
        acc_obs += observed[k as usize];
        acc_exp += expected[k as usize];
        if acc_exp >= 5.0 {
            bins.push((bin_lo, k, acc_obs, acc_exp));
            bin_lo = k + 1;
            acc_obs = 0;
            acc_exp = 0.0;
        }
    }
    if acc_exp > 0.0 || acc_obs > 0 {
        if let Some(last) = bins.last_mut() {
            last.1 = k_hi;
            last.2 += acc_obs;
            last.3 += acc_exp;
        } else {
            bins.push((bin_lo, k_hi, acc_obs, acc_exp));
        }
    }
    let stat: f64 = bins
        .iter()
        .map(|&(_, _, o, e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum();
    let dof = bins.len().saturating_sub(1) as u64;
    let p_value = if dof == 0 {
        1.0
    } else {
        chi_square_sf(stat, dof as f64)
    };
    Ok(GofResult {
        statistic: F::from_real(stat),
        dof,
        p_value: F::from_real(p_value),
        bins: bins
            .into_iter()
            .map(|(a, b, o, e)| (a, b, o, F::from_real(e)))
            .collect(),
    })
}

/// Total-variation distance between the empirical pmf of the samples and
/// Poisson(lambda), with the Poisson support truncated where its mass drops
/// below 1e-9 (the omitted mass is charged to the distance).
pub fn tv_distance_to_poisson<F: Scalar>(samples: &[u64], lambda: F) -> Result<F> {
    if samples.len() < MIN_SAMPLES {
        return Err(ModelError::InsufficientSamples {
            got: samples.len(),
            need: MIN_SAMPLES,
        });
    }
    let lambda = lambda.real();
    let n = samples.len() as f64;
    let max_obs = samples.iter().copied().max().unwrap_or(0);
    let k_hi = ((lambda + 14.0 * lambda.sqrt() + 30.0) as u64).max(max_obs);
    let pmf = poisson_pmf_table(lambda, k_hi);
    let mut emp = vec![0.0f64; k_hi as usize + 1];
    for &s in samples {
        emp[s as usize] += 1.0 / n;
    }
    let mut tv = 0.0;
    let mut poisson_mass_kept = 0.0;
    for k in 0..=k_hi as usize {
        if pmf[k] >= 1e-9 {
            tv += (emp[k] - pmf[k]).abs();
            poisson_mass_kept += pmf[k];
        } else {
            tv += emp[k];
        }
    }
    tv += (1.0 - poisson_mass_kept).max(0.0); // truncated Poisson mass
    Ok(F::from_real((tv / 2.0).min(1.0)))
}

/// Ordinary least squares line fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit<F> {
    pub slope: F,
    pub intercept: F,
    pub r_squared: F,
}

pub fn fit_line<F: Scalar>(xs: &[F], ys: &[F]) -> Result<LineFit<F>> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(ModelError::InvalidParameter(
            "line fit needs at least two matched points".into(),
        ));
    }
    let n = F::from_usize(xs.len()).unwrap();
    let mean = |v: &[F]| v.iter().copied().sum::<F>() / n;
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxx = F::zero();
    let mut sxy = F::zero();
    let mut syy = F::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx = sxx + (x - mx) * (x - mx);
        sxy = sxy + (x - mx) * (y - my);
        syy = syy + (y - my) * (y - my);
    }
    if sxx == F::zero() {
        return Err(ModelError::InvalidParameter(
            "line fit needs non-degenerate abscissae".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > F::zero() {
        (sxy * sxy) / (sxx * syy)
    } else {
        F::one()
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Sample mean and its standard error.
pub fn mean_stderr<F: Scalar>(values: &[F]) -> (F, F) {
    let n = values.len();
    assert!(n > 0);
    let nf = F::from_usize(n).unwrap();
    let mean = values.iter().copied().sum::<F>() / nf;
    if n == 1 {
        return (mean, F::zero());
    }
    let var = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<F>()
        / (nf - F::one());
    (mean, (var / nf).sqrt())
}
