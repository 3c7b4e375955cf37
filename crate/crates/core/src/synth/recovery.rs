//! Scores fitted cohort labels against simulation truth.
//!
//! Each animal is assigned to the component of its sample with the highest
//! posterior weight (spat always go to the spat component). A true age
//! class then maps to the component holding most of its animals. A true
//! link is a pair of consecutive-year classes of one cohort; it counts as
//! recovered when both classes map to components sharing a cohort label.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::age::AgedComponent;
use crate::cohort::ComponentTable;
use crate::ingest::{SampleKey, ShellObservation, Stage};

use super::GroundTruth;

/// A true age class: one cohort seen in one sample.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ClassKey {
    pub sample: SampleKey,
    pub true_cohort: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkOutcome {
    pub from: ClassKey,
    pub to_year: i32,
    pub from_age: u32,
    pub from_label: Option<String>,
    pub to_label: Option<String>,
    pub recovered: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LinkRecovery {
    pub links: Vec<LinkOutcome>,
}

impl LinkRecovery {
    pub fn total(&self) -> usize {
        self.links.len()
    }

    pub fn recovered(&self) -> usize {
        self.links.iter().filter(|l| l.recovered).count()
    }

    /// Recovered fraction; 1 when there is nothing to recover.
    pub fn rate(&self) -> f64 {
        if self.links.is_empty() {
            1.0
        } else {
            self.recovered() as f64 / self.total() as f64
        }
    }
}

fn log_density(x: f64, c: &AgedComponent) -> f64 {
    let z = (x - c.mean_mm) / c.sd_mm;
    c.weight.ln() - c.sd_mm.ln() - 0.5 * z * z
}

/// Index into `rows` of the component an animal most likely belongs to.
fn assign(x: f64, stage: Stage, rows: &[(usize, &AgedComponent)]) -> Option<usize> {
    rows.iter()
        .filter(|(_, c)| c.kind == stage && c.sd_mm > 0.0 && c.weight > 0.0)
        .max_by(|a, b| log_density(x, a.1).total_cmp(&log_density(x, b.1)))
        .map(|(i, _)| *i)
}

/// Scores the links between classes that each hold at least `min_animals`.
pub fn link_recovery(
    observations: &[ShellObservation],
    truth: &GroundTruth,
    table: &ComponentTable,
    min_animals: usize,
) -> LinkRecovery {
    let mut by_sample: HashMap<SampleKey, Vec<(usize, &AgedComponent)>> = HashMap::new();
    for (i, r) in table.rows().iter().enumerate() {
        by_sample.entry(r.key.clone()).or_default().push((i, r));
    }

    // class -> (animal count, true age, votes per component)
    let mut classes: BTreeMap<ClassKey, (usize, u32, BTreeMap<usize, usize>)> = BTreeMap::new();
    for t in &truth.rows {
        let o = &observations[t.row_id];
        let sample = SampleKey::new(&o.stratum_id, &o.reef_id, o.year);
        let assigned = by_sample.get(&sample).and_then(|rows| assign(o.length_mm, o.stage, rows));
        let entry = classes
            .entry(ClassKey { sample, true_cohort: t.true_cohort.clone() })
            .or_insert((0, t.true_age, BTreeMap::new()));
        entry.0 += 1;
        if let Some(i) = assigned {
            *entry.2.entry(i).or_default() += 1;
        }
    }

    let label_of = |key: &ClassKey| -> Option<String> {
        let (_, _, votes) = classes.get(key)?;
        let (&idx, _) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
        table.rows()[idx].cohort.clone()
    };

    let mut out = LinkRecovery::default();
    for (key, (count, age, _)) in &classes {
        if *count < min_animals {
            continue;
        }
        let next = ClassKey {
            sample: SampleKey::new(&key.sample.stratum_id, &key.sample.reef_id, key.sample.year + 1),
            true_cohort: key.true_cohort.clone(),
        };
        match classes.get(&next) {
            Some((n, _, _)) if *n >= min_animals => {}
            _ => continue,
        }
        let from_label = label_of(key);
        let to_label = label_of(&next);
        let recovered = from_label.is_some() && from_label == to_label;
        out.links.push(LinkOutcome {
            from: key.clone(),
            to_year: next.sample.year,
            from_age: *age,
            from_label,
            to_label,
            recovered,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::TruthRow;

    fn obs(year: i32, stage: Stage, x: f64) -> ShellObservation {
        ShellObservation { stratum_id: "S1".into(), reef_id: "101".into(), year, stage, length_mm: x }
    }

    #[test]
    fn perfect_labels_recover_everything() {
        let mut o = Vec::new();
        let mut truth = GroundTruth::default();
        for (year, stage, x, cohort, age) in [
            (2010, Stage::Spat, 20.0, "c2010", 1),
            (2010, Stage::Live, 45.0, "c2009", 2),
            (2011, Stage::Live, 44.0, "c2010", 2),
            (2011, Stage::Live, 60.0, "c2009", 3),
        ] {
            for _ in 0..3 {
                truth.rows.push(TruthRow { row_id: o.len(), true_cohort: cohort.into(), true_age: age });
                o.push(obs(year, stage, x));
            }
        }
        let k10 = SampleKey::new("S1", "101", 2010);
        let k11 = SampleKey::new("S1", "101", 2011);
        let mut rows = vec![
            AgedComponent::spat(k10.clone(), 20.0, 3.0, 0.5),
            AgedComponent::live(k10, 45.0, 3.0, 1.0, 0.5),
            AgedComponent::live(k11.clone(), 44.0, 3.0, 0.5, 0.5),
            AgedComponent::live(k11, 60.0, 3.0, 0.5, 0.5),
        ];
        for (r, label) in rows.iter_mut().zip(["A", "B", "A", "B"]) {
            r.cohort = Some(label.into());
        }
        let table = ComponentTable::new(rows.clone());
        let rec = link_recovery(&o, &truth, &table, 3);
        assert_eq!((rec.recovered(), rec.total()), (2, 2));
        assert!(link_recovery(&o, &truth, &table, 4).links.is_empty());

        rows[2].cohort = Some("C".into());
        let rec = link_recovery(&o, &truth, &ComponentTable::new(rows), 3);
        assert_eq!((rec.recovered(), rec.total()), (1, 2));
        assert_eq!(rec.rate(), 0.5);
    }
}
