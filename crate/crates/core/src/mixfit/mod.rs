//! Per-sample distribution fits.
//!
//! Spat lengths get a closed-form log-normal fit. Live lengths get
//! univariate Gaussian mixtures for every (variance family, component
//! count) candidate, scored by BIC and reduced to one model by a
//! parsimony-first selection rule.

mod em;
mod lognormal;
mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use em::{em_fit, em_fit_traced, fit_candidates, mixture_loglik, EmTrace};
pub use lognormal::{fit_lognormal, LogNormalFit};
pub use select::{select_index, select_model, BicEntry, Selection};

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("non-positive value {0}")]
    NonPositive(f64),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("zero variance")]
    ZeroVariance,
    #[error("component count must be at least 1")]
    NoComponents,
    #[error("empty candidate list")]
    NoCandidates,
    #[error("spat and live counts are both zero")]
    EmptySample,
}

/// Variance structure of a univariate mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarianceFamily {
    /// One variance shared by all components.
    E,
    /// A separate variance per component.
    V,
}

impl VarianceFamily {
    /// Free parameters of a `g`-component model: means, variances, and
    /// `g - 1` free weights.
    pub fn param_count(self, g: usize) -> usize {
        match self {
            VarianceFamily::V => 3 * g - 1,
            VarianceFamily::E => 2 * g,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VarianceFamily::E => "E",
            VarianceFamily::V => "V",
        }
    }
}

impl fmt::Display for VarianceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VarianceFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "E" => Ok(VarianceFamily::E),
            "V" => Ok(VarianceFamily::V),
            _ => Err(format!("unknown variance family `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Largest component count tried.
    pub g_max: usize,
    /// Relative log-likelihood change that stops EM.
    pub tol: f64,
    pub max_iter: usize,
    /// EM restarts per candidate; start 0 is quantile-seeded.
    pub n_starts: usize,
    pub seed: u64,
    /// Lower bound on component variances, mm².
    pub var_floor: f64,
    /// BIC gap below which the simpler model is preferred.
    pub delta_bic: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            g_max: 4,
            tol: 1e-8,
            max_iter: 500,
            n_starts: 10,
            seed: 0,
            var_floor: 1e-4,
            delta_bic: 2.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.g_max < 1 {
            return Err("g_max must be >= 1".into());
        }
        if self.n_starts < 1 || self.max_iter < 1 {
            return Err("n_starts and max_iter must be >= 1".into());
        }
        if !(self.tol > 0.0 && self.var_floor > 0.0 && self.delta_bic > 0.0) {
            return Err("tol, var_floor and delta_bic must be positive".into());
        }
        Ok(())
    }
}

/// A fitted univariate Gaussian mixture, components sorted by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub family: VarianceFamily,
    pub g: usize,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub raw_weights: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    /// A component with weight below 1/n, a variance on the floor, or
    /// coincident means.
    pub degenerate: bool,
}

/// Fraction of a sample that is spat.
pub fn spat_fraction(n_spat: usize, n_live: usize) -> Result<f64, FitError> {
    let total = n_spat + n_live;
    if total == 0 {
        return Err(FitError::EmptySample);
    }
    Ok(n_spat as f64 / total as f64)
}

/// Rescales live mixture weights so they share the sample with spat.
pub fn adjust_weights(raw_weights: &[f64], spat_fraction: f64) -> Vec<f64> {
    let live = 1.0 - spat_fraction;
    raw_weights.iter().map(|w| w * live).collect()
}

/// BIC in the larger-is-better convention: `2 loglik - p ln n`.
pub fn bic(loglik: f64, g: usize, family: VarianceFamily, n: usize) -> f64 {
    2.0 * loglik - family.param_count(g) as f64 * (n as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spat_fraction_examples() {
        assert_eq!(spat_fraction(100, 300).unwrap(), 0.25);
        assert_eq!(spat_fraction(0, 300).unwrap(), 0.0);
        assert_eq!(spat_fraction(300, 0).unwrap(), 1.0);
        assert_eq!(spat_fraction(0, 0), Err(FitError::EmptySample));
    }

    #[test]
    fn adjust_weights_examples() {
        assert_eq!(adjust_weights(&[0.5, 0.5], 0.2), vec![0.4, 0.4]);
        assert_eq!(adjust_weights(&[1.0], 0.0), vec![1.0]);
        assert_eq!(adjust_weights(&[0.25, 0.75], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn bic_examples() {
        let v = bic(-100.0, 2, VarianceFamily::V, 100);
        assert!((v - (-223.02585092994046)).abs() < 1e-9, "{v}");
        let e = bic(-100.0, 2, VarianceFamily::E, 100);
        assert!((e - (-218.42068074395236)).abs() < 1e-9, "{e}");
        assert_eq!(bic(-50.0, 1, VarianceFamily::V, 40), bic(-50.0, 1, VarianceFamily::E, 40));
    }

    proptest::proptest! {
        #[test]
        fn adjusted_weights_sum(raw in proptest::collection::vec(0.01f64..1.0, 1..6), pi0 in 0.0f64..=1.0) {
            let total: f64 = raw.iter().sum();
            let raw: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let adj = adjust_weights(&raw, pi0);
            let s: f64 = adj.iter().sum();
            proptest::prop_assert!((s - (1.0 - pi0)).abs() < 1e-12);
        }
    }
}
