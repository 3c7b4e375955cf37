//! Cross-year cohort linking.
//!
//! Every aged component starts with its own label. Walking each reef's
//! years in order, a component of age `a` in year `t` hands its label to
//! the age `a + 1` component of year `t + 1` when that component's mean is
//! larger. Labels therefore propagate along chains of growing components.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::age::AgedComponent;
use crate::ingest::{ReefKey, SampleKey, Stage};

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("sample {key} has more than one component of age {age}")]
    DuplicateAge { key: SampleKey, age: u32 },
}

#[derive(Debug, Error, PartialEq)]
pub enum ChainViolation {
    #[error("cohort {label}: year {from} followed by {to}")]
    YearGap { label: String, from: i32, to: i32 },
    #[error("cohort {label}: age {from} followed by {to}")]
    AgeStep { label: String, from: u32, to: u32 },
    #[error("cohort {label}: mean {from} not below {to}")]
    Shrinking { label: String, from: f64, to: f64 },
}

/// All reef components, kept in canonical order: by sample key, then aged
/// rows by age, then unaged rows by mean.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentTable {
    rows: Vec<AgedComponent>,
}

fn canonical_cmp(a: &AgedComponent, b: &AgedComponent) -> std::cmp::Ordering {
    a.key
        .cmp(&b.key)
        .then_with(|| match (a.age, b.age) {
            (Some(x), Some(y)) => x.cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        })
        .then_with(|| a.mean_mm.total_cmp(&b.mean_mm))
}

impl ComponentTable {
    pub fn new(mut rows: Vec<AgedComponent>) -> Self {
        rows.sort_by(canonical_cmp);
        ComponentTable { rows }
    }

    pub fn rows(&self) -> &[AgedComponent] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<AgedComponent> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sample<'a>(&'a self, key: &'a SampleKey) -> impl Iterator<Item = &'a AgedComponent> + 'a {
        self.rows.iter().filter(move |r| &r.key == key)
    }

    /// Row index of each aged component, keyed by (sample, age).
    fn age_index(&self) -> Result<HashMap<(SampleKey, u32), usize>, LinkError> {
        let mut idx = HashMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            if let Some(age) = r.age {
                if idx.insert((r.key.clone(), age), i).is_some() {
                    return Err(LinkError::DuplicateAge { key: r.key.clone(), age });
                }
            }
        }
        Ok(idx)
    }
}

pub fn initial_label(key: &SampleKey, age: u32) -> String {
    format!("{}.{}.{}.{}", key.stratum_id, key.reef_id, key.year, age)
}

/// Labels every aged row `R.r.t.a`; unaged rows stay unlabeled.
pub fn initial_labels(mut table: ComponentTable) -> ComponentTable {
    for r in &mut table.rows {
        r.cohort = r.age.map(|a| initial_label(&r.key, a));
    }
    table
}

/// Propagates labels forward one year at a time within each reef.
pub fn link_cohorts(mut table: ComponentTable) -> Result<ComponentTable, LinkError> {
    let index = table.age_index()?;

    let mut by_sample: BTreeMap<SampleKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        if r.age.is_some() {
            by_sample.entry(r.key.clone()).or_default().push(i);
        }
    }
    let mut reef_years: BTreeMap<ReefKey, Vec<i32>> = BTreeMap::new();
    for key in by_sample.keys() {
        reef_years.entry(key.reef()).or_default().push(key.year);
    }

    for (reef, years) in reef_years {
        // keys iterate in year order within a reef
        let (Some(&first), Some(&last)) = (years.first(), years.last()) else {
            continue;
        };
        for t in first..last {
            let here = SampleKey::new(reef.stratum_id.clone(), reef.reef_id.clone(), t);
            let next = SampleKey::new(reef.stratum_id.clone(), reef.reef_id.clone(), t + 1);
            let Some(sources) = by_sample.get(&here) else {
                continue;
            };
            for &i in sources {
                let src = &table.rows[i];
                let age = src.age.expect("indexed rows are aged");
                let Some(&j) = index.get(&(next.clone(), age + 1)) else {
                    continue;
                };
                if table.rows[j].mean_mm > src.mean_mm {
                    if let Some(label) = src.cohort.clone() {
                        table.rows[j].cohort = Some(label);
                    }
                }
            }
        }
    }
    Ok(table)
}

/// Gives unaged rows per-sample labels `R.r.t.NA.i`, numbered by ascending mean.
pub fn relabel_na(mut table: ComponentTable) -> ComponentTable {
    let mut unaged: BTreeMap<SampleKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        if r.age.is_none() {
            unaged.entry(r.key.clone()).or_default().push(i);
        }
    }
    for (key, mut idx) in unaged {
        idx.sort_by(|&a, &b| table.rows[a].mean_mm.total_cmp(&table.rows[b].mean_mm));
        for (n, i) in idx.into_iter().enumerate() {
            table.rows[i].cohort =
                Some(format!("{}.{}.{}.NA.{}", key.stratum_id, key.reef_id, key.year, n + 1));
        }
    }
    table
}

/// Initial labels, linking, and unaged relabeling in one pass.
pub fn label_cohorts(table: ComponentTable) -> Result<ComponentTable, LinkError> {
    Ok(relabel_na(link_cohorts(initial_labels(table))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMember {
    pub year: i32,
    pub age: u32,
    pub mean_mm: f64,
    pub sd_mm: f64,
    pub weight: f64,
    pub kind: Stage,
}

/// Components sharing one cohort label, in year order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortChain {
    pub label: String,
    pub reef: ReefKey,
    pub members: Vec<ChainMember>,
    pub terminal_age: u32,
    pub birth_year: i32,
}

impl CohortChain {
    pub fn chain_length(&self) -> usize {
        self.members.len()
    }

    pub fn first_year(&self) -> i32 {
        self.members[0].year
    }

    pub fn last_year(&self) -> i32 {
        self.members[self.members.len() - 1].year
    }

    /// Does the chain begin above age 1 (no spat origin)?
    pub fn starts_without_spat(&self) -> bool {
        self.members[0].age >= 2
    }

    pub fn verify(&self) -> Result<(), ChainViolation> {
        for w in self.members.windows(2) {
            if w[1].year != w[0].year + 1 {
                return Err(ChainViolation::YearGap { label: self.label.clone(), from: w[0].year, to: w[1].year });
            }
            if w[1].age != w[0].age + 1 {
                return Err(ChainViolation::AgeStep { label: self.label.clone(), from: w[0].age, to: w[1].age });
            }
            if w[1].mean_mm <= w[0].mean_mm {
                return Err(ChainViolation::Shrinking {
                    label: self.label.clone(),
                    from: w[0].mean_mm,
                    to: w[1].mean_mm,
                });
            }
        }
        Ok(())
    }
}

/// Groups aged, labeled rows into chains sorted by reef then birth year.
pub fn cohort_summary(table: &ComponentTable) -> Vec<CohortChain> {
    let mut groups: BTreeMap<&str, Vec<&AgedComponent>> = BTreeMap::new();
    for r in &table.rows {
        if let (Some(_), Some(label)) = (r.age, r.cohort.as_deref()) {
            groups.entry(label).or_default().push(r);
        }
    }
    let mut chains: Vec<CohortChain> = groups
        .into_iter()
        .map(|(label, mut rows)| {
            rows.sort_by_key(|r| r.key.year);
            let members: Vec<ChainMember> = rows
                .iter()
                .map(|r| ChainMember {
                    year: r.key.year,
                    age: r.age.expect("grouped rows are aged"),
                    mean_mm: r.mean_mm,
                    sd_mm: r.sd_mm,
                    weight: r.weight,
                    kind: r.kind,
                })
                .collect();
            let first = &members[0];
            CohortChain {
                label: label.to_string(),
                reef: rows[0].key.reef(),
                birth_year: first.year - first.age as i32 + 1,
                terminal_age: members[members.len() - 1].age,
                members,
            }
        })
        .collect();
    chains.sort_by(|a, b| {
        a.reef
            .cmp(&b.reef)
            .then(a.birth_year.cmp(&b.birth_year))
            .then_with(|| a.label.cmp(&b.label))
    });
    chains
}

pub fn verify_chains(chains: &[CohortChain]) -> Result<(), ChainViolation> {
    chains.iter().try_for_each(CohortChain::verify)
}
