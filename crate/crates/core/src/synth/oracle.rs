//! Reference computations used to check the fitting and pooling code.
//!
//! Nothing here calls into `mixfit` or `age`; the formulas are evaluated
//! directly and without numerical tricks so that agreement with the
//! production paths is meaningful.

use thiserror::Error;

use crate::mixfit::MixtureFit;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("weights sum to {0}, not 1")]
    WeightsNotNormalized(f64),
    #[error("no components")]
    Empty,
}

/// Mean and standard deviation of a mixture of `(mean, sd, weight)` parts
/// by the law of total variance.
pub fn mixture_moments_oracle(components: &[(f64, f64, f64)]) -> Result<(f64, f64), OracleError> {
    if components.is_empty() {
        return Err(OracleError::Empty);
    }
    let total: f64 = components.iter().map(|c| c.2).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(OracleError::WeightsNotNormalized(total));
    }
    let mut mean = 0.0;
    for &(m, _, w) in components {
        mean += w * m;
    }
    let mut within = 0.0;
    let mut between = 0.0;
    for &(m, s, w) in components {
        within += w * s * s;
        between += w * (m - mean) * (m - mean);
    }
    Ok((mean, (within + between).sqrt()))
}

fn normal_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Log-likelihood of `lengths` under `fit`, summing log mixture densities.
pub fn loglik_oracle(lengths: &[f64], fit: &MixtureFit) -> f64 {
    lengths
        .iter()
        .map(|&x| {
            let density: f64 = (0..fit.g)
                .map(|k| fit.raw_weights[k] * normal_density(x, fit.means[k], fit.sds[k]))
                .sum();
            density.ln()
        })
        .sum()
}
