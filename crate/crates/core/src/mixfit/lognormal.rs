use serde::{Deserialize, Serialize};

use super::FitError;

/// Maximum-likelihood log-normal fit with its moments on the mm scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFit {
    pub meanlog: f64,
    pub sdlog: f64,
    pub mean_mm: f64,
    pub sd_mm: f64,
    pub n: usize,
}

impl LogNormalFit {
    pub fn from_params(meanlog: f64, sdlog: f64, n: usize) -> Self {
        let s2 = sdlog * sdlog;
        let mean_mm = (meanlog + 0.5 * s2).exp();
        // exp_m1 keeps precision for small sdlog
        let sd_mm = mean_mm * s2.exp_m1().sqrt();
        LogNormalFit { meanlog, sdlog, mean_mm, sd_mm, n }
    }
}

/// Closed-form MLE: mean and divide-by-n standard deviation of the logs.
pub fn fit_lognormal(lengths: &[f64]) -> Result<LogNormalFit, FitError> {
    if lengths.len() < 2 {
        return Err(FitError::TooFewValues { needed: 2, got: lengths.len() });
    }
    if let Some(&bad) = lengths.iter().find(|&&x| !(x > 0.0)) {
        return Err(if bad.is_nan() { FitError::NonFinite } else { FitError::NonPositive(bad) });
    }
    if lengths.iter().any(|x| !x.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let n = lengths.len() as f64;
    let logs: Vec<f64> = lengths.iter().map(|x| x.ln()).collect();
    let meanlog = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - meanlog).powi(2)).sum::<f64>() / n;
    let sdlog = var.sqrt();
    if sdlog <= 1e-12 * meanlog.abs().max(1.0) {
        return Err(FitError::ZeroVariance);
    }
    Ok(LogNormalFit::from_params(meanlog, sdlog, lengths.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, LogNormal};
    use std::f64::consts::E;

    #[test]
    fn constant_data_has_zero_variance() {
        assert_eq!(fit_lognormal(&[E, E, E, E]), Err(FitError::ZeroVariance));
    }

    #[test]
    fn two_point_mle() {
        let f = fit_lognormal(&[E, E.powi(3)]).unwrap();
        assert!((f.meanlog - 2.0).abs() < 1e-12);
        assert!((f.sdlog - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(fit_lognormal(&[3.0]), Err(FitError::TooFewValues { needed: 2, got: 1 }));
        assert_eq!(fit_lognormal(&[3.0, 0.0]), Err(FitError::NonPositive(0.0)));
        assert_eq!(fit_lognormal(&[3.0, -1.0]), Err(FitError::NonPositive(-1.0)));
    }

    #[test]
    fn moments_match_identities() {
        let f = LogNormalFit::from_params(2.5, 0.4, 10);
        let mean = (2.5f64 + 0.08).exp();
        let sd = ((0.16f64.exp() - 1.0) * (5.0f64 + 0.16).exp()).sqrt();
        assert!((f.mean_mm - mean).abs() / mean < 1e-12);
        assert!((f.sd_mm - sd).abs() / sd < 1e-12);
    }

    #[test]
    fn monte_carlo_recovery() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = LogNormal::new(2.5, 0.4).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        let f = fit_lognormal(&xs).unwrap();
        assert!((f.meanlog - 2.5).abs() < 0.02, "{}", f.meanlog);
        assert!((f.sdlog - 0.4).abs() < 0.02, "{}", f.sdlog);
    }
}
