//! Stratum-informed age assignment.
//!
//! A mixture fitted to every length of a stratum in one year supplies
//! cutoffs at a fixed quantile of each of its components. A reef-level
//! live component is one year older than the first stratum component
//! whose cutoff interval contains its mean. Reef components that land on
//! the same age are then merged into one by moment matching.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ingest::{SampleKey, Stage, StratumYear};
use crate::mixfit::{fit_candidates, select_model, BicEntry, FitConfig, FitError, MixtureFit};

/// Default quantile of each stratum component used as its age cutoff.
pub const DEFAULT_AGE_QUANTILE: f64 = 0.8;

/// One spat or live component of a reef sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgedComponent {
    pub key: SampleKey,
    pub kind: Stage,
    pub mean_mm: f64,
    pub sd_mm: f64,
    /// Share of the whole sample (spat fraction for spat, rescaled mixture
    /// weight for live).
    pub weight: f64,
    /// Mixture weight within the live fit; `None` for spat.
    pub raw_weight: Option<f64>,
    /// `None` when no age could be assigned.
    pub age: Option<u32>,
    pub cohort: Option<String>,
    pub pooled_from: u32,
}

impl AgedComponent {
    pub fn spat(key: SampleKey, mean_mm: f64, sd_mm: f64, weight: f64) -> Self {
        AgedComponent {
            key,
            kind: Stage::Spat,
            mean_mm,
            sd_mm,
            weight,
            raw_weight: None,
            age: Some(1),
            cohort: None,
            pooled_from: 1,
        }
    }

    pub fn live(key: SampleKey, mean_mm: f64, sd_mm: f64, raw_weight: f64, weight: f64) -> Self {
        AgedComponent {
            key,
            kind: Stage::Live,
            mean_mm,
            sd_mm,
            weight,
            raw_weight: Some(raw_weight),
            age: None,
            cohort: None,
            pooled_from: 1,
        }
    }
}

/// Stratum-year mixture and its age cutoffs `q0 = 0, q1, ..., qG`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiverModel {
    pub key: StratumYear,
    pub fit: MixtureFit,
    pub cutoffs: Vec<f64>,
    pub bic_table: Vec<BicEntry>,
}

impl RiverModel {
    pub fn from_fit(key: StratumYear, fit: MixtureFit, quantile: f64, bic_table: Vec<BicEntry>) -> Self {
        let cutoffs = cutoffs(&fit.means, &fit.sds, quantile);
        RiverModel { key, fit, cutoffs, bic_table }
    }

    pub fn g(&self) -> usize {
        self.cutoffs.len() - 1
    }

    /// True when some cutoff fails to exceed its predecessor.
    pub fn non_monotone(&self) -> bool {
        self.cutoffs.windows(2).any(|w| w[1] <= w[0])
    }
}

/// `q0 = 0` followed by the `quantile` point of each N(mean, sd).
pub fn cutoffs(means: &[f64], sds: &[f64], quantile: f64) -> Vec<f64> {
    let z = standard_normal_quantile(quantile);
    std::iter::once(0.0)
        .chain(means.iter().zip(sds).map(|(m, s)| m + z * s))
        .collect()
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Fits the stratum-year mixture with the same candidate set and selection
/// rule as reef samples. Returns `None` below `min_pooled` lengths.
pub fn fit_river_model(
    key: StratumYear,
    lengths: &[f64],
    cfg: &FitConfig,
    quantile: f64,
    min_pooled: usize,
) -> Result<Option<RiverModel>, FitError> {
    if lengths.is_empty() || lengths.len() < min_pooled {
        return Ok(None);
    }
    let candidates = fit_candidates(lengths, cfg)?;
    let sel = select_model(&candidates, cfg.delta_bic)?;
    Ok(Some(RiverModel::from_fit(key, sel.chosen, quantile, sel.table)))
}

/// Age for a live component mean under `cutoffs`.
///
/// Intervals `(q[m-1], q[m]]` are scanned in ascending `m`; the first hit
/// gives age `m + 1`. A mean past the last cutoff is one year older than
/// the oldest stratum class (`G + 2`). With a single stratum component no
/// age is assigned.
pub fn age_for_mean(mean: f64, cutoffs: &[f64]) -> Option<u32> {
    let g = cutoffs.len().checked_sub(1)?;
    if g <= 1 {
        return None;
    }
    for m in 1..=g {
        if cutoffs[m - 1] < mean && mean <= cutoffs[m] {
            return Some(m as u32 + 1);
        }
    }
    if mean > cutoffs[g] {
        Some(g as u32 + 2)
    } else {
        // only reachable for non-positive means or a non-monotone tail
        Some(2)
    }
}

/// Sets the age of every live component; spat keep age 1.
pub fn assign_ages(components: &mut [AgedComponent], model: &RiverModel) {
    for c in components.iter_mut().filter(|c| c.kind == Stage::Live) {
        c.age = age_for_mean(c.mean_mm, &model.cutoffs);
    }
}

/// How constituent weights enter the merged moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PoolingWeights {
    /// Raw weights rescaled to sum to one within the merged subset, which
    /// gives the exact moments of the sub-mixture.
    #[default]
    Renormalized,
    /// Raw weights as fitted, without rescaling.
    Literal,
}

impl fmt::Display for PoolingWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingWeights::Renormalized => "renormalized",
            PoolingWeights::Literal => "literal",
        })
    }
}

impl FromStr for PoolingWeights {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "renormalized" => Ok(PoolingWeights::Renormalized),
            "literal" => Ok(PoolingWeights::Literal),
            _ => Err(format!("unknown pooling mode `{s}`")),
        }
    }
}

/// Merges live components of one sample that share an age.
///
/// Output order: spat, aged live components by age, then unaged live
/// components by mean.
pub fn pool_duplicates(components: Vec<AgedComponent>, mode: PoolingWeights) -> Vec<AgedComponent> {
    let mut spat = Vec::new();
    let mut by_age: BTreeMap<u32, Vec<AgedComponent>> = BTreeMap::new();
    let mut unaged = Vec::new();
    for c in components {
        match (c.kind, c.age) {
            (Stage::Spat, _) => spat.push(c),
            (Stage::Live, Some(a)) => by_age.entry(a).or_default().push(c),
            (Stage::Live, None) => unaged.push(c),
        }
    }
    unaged.sort_by(|a, b| a.mean_mm.total_cmp(&b.mean_mm));

    let pooled = by_age.into_values().map(|group| {
        if group.len() == 1 {
            group.into_iter().next().unwrap()
        } else {
            merge(&group, mode)
        }
    });
    spat.into_iter().chain(pooled).chain(unaged).collect()
}

fn merge(group: &[AgedComponent], mode: PoolingWeights) -> AgedComponent {
    let raw: Vec<f64> = group.iter().map(|c| c.raw_weight.unwrap_or(c.weight)).collect();
    let raw_total: f64 = raw.iter().sum();
    let (mean, var) = match mode {
        PoolingWeights::Renormalized => {
            let w: Vec<f64> = raw.iter().map(|r| r / raw_total).collect();
            let mean: f64 = w.iter().zip(group).map(|(w, c)| w * c.mean_mm).sum();
            // centered form of sum w (sd^2 + mean^2) - pooled^2
            let var: f64 = w
                .iter()
                .zip(group)
                .map(|(w, c)| w * (c.sd_mm * c.sd_mm + (c.mean_mm - mean).powi(2)))
                .sum();
            (mean, var)
        }
        PoolingWeights::Literal => {
            let mean: f64 = raw.iter().zip(group).map(|(w, c)| w * c.mean_mm).sum();
            let second: f64 = raw
                .iter()
                .zip(group)
                .map(|(w, c)| w * (c.sd_mm * c.sd_mm + c.mean_mm * c.mean_mm))
                .sum();
            (mean, second - mean * mean)
        }
    };
    let first = &group[0];
    AgedComponent {
        key: first.key.clone(),
        kind: Stage::Live,
        mean_mm: mean,
        sd_mm: var.max(0.0).sqrt(),
        weight: group.iter().map(|c| c.weight).sum(),
        raw_weight: Some(raw_total),
        age: first.age,
        cohort: None,
        pooled_from: group.iter().map(|c| c.pooled_from).sum(),
    }
}
