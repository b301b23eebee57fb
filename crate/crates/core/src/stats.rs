//! Sample statistics for the distributional checks.

use alloc::vec::Vec;

use crate::math::{accurate_sum, gamma_q};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("sample is empty")]
    Empty,
    #[error("need at least {0} observations")]
    TooFew(usize),
    #[error("counts have zero mean")]
    ZeroMean,
}

pub fn mean(sample: &[f64]) -> Result<f64, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(accurate_sum(sample.iter().copied()) / sample.len() as f64)
}

/// Unbiased sample variance.
pub fn variance(sample: &[f64]) -> Result<f64, StatsError> {
    if sample.len() < 2 {
        return Err(if sample.is_empty() { StatsError::Empty } else { StatsError::TooFew(2) });
    }
    let m = mean(sample)?;
    Ok(accurate_sum(sample.iter().map(|x| (x - m) * (x - m))) / (sample.len() - 1) as f64)
}

/// Standard error of the sample mean.
pub fn stderr_mean(sample: &[f64]) -> Result<f64, StatsError> {
    Ok(libm::sqrt(variance(sample)? / sample.len() as f64))
}

/// Kolmogorov-Smirnov distance `sup |F_n - F|` between the empirical CDF of
/// `sample` and `cdf`, evaluated exactly at the jump points.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted: Vec<f64> = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(libm::fabs((i + 1) as f64 / n - f)).max(libm::fabs(f - i as f64 / n));
    }
    Ok(d)
}

/// Asymptotic KS critical value `c(alpha) / sqrt(n)`; `c = 1.36` at 5 %.
pub fn ks_critical(n: usize, c_alpha: f64) -> f64 {
    c_alpha / libm::sqrt(n as f64)
}

/// Variance-to-mean ratio of counts (unbiased variance). Equal to 1 in
/// expectation for Poisson counts, 0 for constant counts.
pub fn dispersion_index(counts: &[u64]) -> Result<f64, StatsError> {
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let m = mean(&xs)?;
    if m == 0.0 {
        return Err(StatsError::ZeroMean);
    }
    Ok(variance(&xs)? / m)
}

/// Pearson chi-square test of equal cell probabilities. Returns the
/// statistic and its upper-tail p-value with `k - 1` degrees of freedom.
pub fn chi_square_uniform(counts: &[u64]) -> Result<(f64, f64), StatsError> {
    if counts.len() < 2 {
        return Err(StatsError::TooFew(2));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(StatsError::ZeroMean);
    }
    let expected = total as f64 / counts.len() as f64;
    let stat = accurate_sum(counts.iter().map(|&c| {
        let d = c as f64 - expected;
        d * d / expected
    }));
    let df = (counts.len() - 1) as f64;
    Ok((stat, gamma_q(0.5 * df, 0.5 * stat)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residuals, NaN for two points.
    pub slope_stderr: f64,
}

/// Ordinary least squares `y = a + b x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit, StatsError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(StatsError::TooFew(2));
    }
    let n = x.len() as f64;
    let mx = mean(x)?;
    let my = mean(y)?;
    let sxx = accurate_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let sxy = accurate_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if x.len() > 2 {
        let rss = accurate_sum(x.iter().zip(y).map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        }));
        libm::sqrt(rss / (n - 2.0) / sxx)
    } else {
        f64::NAN
    };
    Ok(LinearFit { slope, intercept, slope_stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::gamma_cdf;
    use crate::seeded_rng;
    use crate::spec::maxwell_energy;
    use rand_distr::{Distribution, Poisson};

    #[test]
    fn ks_of_matching_sample_is_below_critical_value() {
        let mut rng = seeded_rng(21, 0);
        let law = maxwell_energy(1.0);
        let sample: Vec<f64> = (0..10_000).map(|_| law.sample(&mut rng)).collect();
        let d = ks_distance(&sample, |x| gamma_cdf(1.5, 1.0, x)).unwrap();
        assert!(d < ks_critical(10_000, 1.36), "d = {d}");
        let d_wrong = ks_distance(&sample, |x| gamma_cdf(1.5, 2.0, x)).unwrap();
        assert!(d_wrong > 0.1);
    }

    #[test]
    fn ks_of_single_point() {
        // F = x on [0, 1]; one point at 0.3 gives max(0.7, 0.3)
        let d = ks_distance(&[0.3], |x| x).unwrap();
        assert!((d - 0.7).abs() < 1e-15);
        assert_eq!(ks_distance(&[], |x| x), Err(StatsError::Empty));
    }

    #[test]
    fn dispersion_of_constant_and_poisson_counts() {
        assert_eq!(dispersion_index(&[7; 50]).unwrap(), 0.0);
        let mut rng = seeded_rng(22, 0);
        let law = Poisson::new(10.0).unwrap();
        let counts: Vec<u64> = (0..1000).map(|_| law.sample(&mut rng) as u64).collect();
        let d = dispersion_index(&counts).unwrap();
        assert!((0.9..=1.1).contains(&d), "d = {d}");
    }

    #[test]
    fn chi_square_of_exact_uniform_counts() {
        let (stat, p) = chi_square_uniform(&[10, 10, 10, 10]).unwrap();
        assert_eq!(stat, 0.0);
        assert_eq!(p, 1.0);
        let (_, p_bad) = chi_square_uniform(&[100, 0, 0, 0]).unwrap();
        assert!(p_bad < 1e-10);
    }

    #[test]
    fn stderr_and_fit() {
        let s = stderr_mean(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let fit = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-14 && (fit.intercept - 1.0).abs() < 1e-14);
        assert!(fit.slope_stderr.abs() < 1e-12);
        assert!(variance(&[1.0]).is_err());
    }
}
