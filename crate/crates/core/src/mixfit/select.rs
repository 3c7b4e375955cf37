//! BIC-based model choice with a preference for varying-variance,
//! fewer-component models when the evidence is weak.

use serde::{Deserialize, Serialize};

use super::{FitError, MixtureFit, VarianceFamily};

/// One row of the audit BIC table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicEntry {
    pub family: VarianceFamily,
    pub g: usize,
    pub bic: f64,
    pub degenerate: bool,
}

impl From<&MixtureFit> for BicEntry {
    fn from(f: &MixtureFit) -> Self {
        BicEntry { family: f.family, g: f.g, bic: f.bic, degenerate: f.degenerate }
    }
}

/// A chosen model with the table it was chosen from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: MixtureFit,
    pub table: Vec<BicEntry>,
}

/// Index of the winning candidate.
///
/// The top-BIC model wins outright when every other candidate trails it
/// by at least `delta_bic`. Otherwise the smallest-g V model within
/// `delta_bic` of the top wins, falling back to the smallest-g E model.
/// Degenerate candidates only compete when nothing else is available.
pub fn select_index(entries: &[BicEntry], delta_bic: f64) -> Option<usize> {
    let usable: Vec<usize> = {
        let healthy: Vec<usize> = (0..entries.len())
            .filter(|&i| !entries[i].degenerate && entries[i].bic.is_finite())
            .collect();
        if healthy.is_empty() {
            (0..entries.len()).filter(|&i| !entries[i].bic.is_nan()).collect()
        } else {
            healthy
        }
    };
    if usable.is_empty() {
        return None;
    }

    // canonical candidate order breaks exact ties: V first, then smaller g
    let rank = |i: usize| (entries[i].family != VarianceFamily::V, entries[i].g);
    let mut by_bic = usable.clone();
    by_bic.sort_by(|&a, &b| entries[b].bic.total_cmp(&entries[a].bic).then(rank(a).cmp(&rank(b))));

    let best = by_bic[0];
    let top = entries[best].bic;
    match by_bic.get(1) {
        None => return Some(best),
        Some(&runner_up) if top - entries[runner_up].bic >= delta_bic => return Some(best),
        _ => {}
    }

    let close = |family: VarianceFamily| {
        usable
            .iter()
            .copied()
            .filter(|&i| entries[i].family == family && top - entries[i].bic < delta_bic)
            .min_by_key(|&i| entries[i].g)
    };
    close(VarianceFamily::V).or_else(|| close(VarianceFamily::E))
}

pub fn select_model(fits: &[MixtureFit], delta_bic: f64) -> Result<Selection, FitError> {
    let table: Vec<BicEntry> = fits.iter().map(BicEntry::from).collect();
    let idx = select_index(&table, delta_bic).ok_or(FitError::NoCandidates)?;
    Ok(Selection { chosen: fits[idx].clone(), table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use VarianceFamily::{E, V};

    fn entry(family: VarianceFamily, g: usize, bic: f64) -> BicEntry {
        BicEntry { family, g, bic, degenerate: false }
    }

    fn pick(entries: &[BicEntry]) -> (VarianceFamily, usize) {
        let i = select_index(entries, 2.0).unwrap();
        (entries[i].family, entries[i].g)
    }

    #[test]
    fn clear_winner() {
        assert_eq!(pick(&[entry(V, 2, -100.0), entry(V, 3, -110.0), entry(E, 2, -112.0)]), (V, 2));
    }

    #[test]
    fn weak_evidence_prefers_small_v() {
        assert_eq!(pick(&[entry(V, 3, -100.0), entry(V, 2, -101.0), entry(E, 1, -101.5)]), (V, 2));
    }

    #[test]
    fn falls_back_to_e() {
        assert_eq!(pick(&[entry(E, 2, -100.0), entry(E, 1, -101.0)]), (E, 1));
    }

    #[test]
    fn single_component_tie_goes_to_v() {
        assert_eq!(pick(&[entry(E, 1, -50.0), entry(V, 1, -50.0), entry(V, 2, -80.0)]), (V, 1));
    }

    #[test]
    fn degenerate_fits_sit_out() {
        let mut spiky = entry(V, 3, 500.0);
        spiky.degenerate = true;
        assert_eq!(pick(&[spiky, entry(V, 2, -100.0), entry(V, 1, -140.0)]), (V, 2));
        assert_eq!(pick(&[spiky]), (V, 3));
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(select_model(&[], 2.0), Err(FitError::NoCandidates));
    }
}
