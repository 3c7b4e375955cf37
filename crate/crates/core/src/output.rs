//! CSV tables written by a run, and their parsers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a table back yields bit-identical values. Missing values are empty fields.

use std::collections::BTreeMap;
use std::path::Path;

use crate::age::{AgedComponent, RiverModel};
use crate::cohort::{CohortChain, ComponentTable};
use crate::ingest::{SampleKey, Stage, StratumYear};
use crate::mixfit::VarianceFamily;
use crate::pipeline::{Analysis, PipelineError, SampleMeta};

pub const COMPONENTS_HEADER: [&str; 16] = [
    "stratum_id",
    "reef_id",
    "year",
    "kind",
    "age",
    "mean_mm",
    "sd_mm",
    "weight",
    "raw_weight",
    "cohort",
    "pooled_from",
    "flag_live_small",
    "flag_spat_small",
    "variance_family",
    "g_selected",
    "converged",
];

pub const COHORTS_HEADER: [&str; 8] = [
    "cohort",
    "stratum_id",
    "reef_id",
    "birth_year",
    "terminal_age",
    "chain_length",
    "first_year",
    "last_year",
];

pub const RIVER_HEADER: [&str; 7] = ["stratum_id", "year", "g", "means", "sds", "weights", "cutoffs"];

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
    #[error("row {row}, column {column}: cannot parse `{value}`")]
    Field { row: usize, column: &'static str, value: String },
}

/// One line of cohorts.csv.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortRow {
    pub cohort: String,
    pub stratum_id: String,
    pub reef_id: String,
    pub birth_year: i32,
    pub terminal_age: u32,
    pub chain_length: usize,
    pub first_year: i32,
    pub last_year: i32,
}

impl From<&CohortChain> for CohortRow {
    fn from(c: &CohortChain) -> Self {
        CohortRow {
            cohort: c.label.clone(),
            stratum_id: c.reef.stratum_id.clone(),
            reef_id: c.reef.reef_id.clone(),
            birth_year: c.birth_year,
            terminal_age: c.terminal_age,
            chain_length: c.chain_length(),
            first_year: c.first_year(),
            last_year: c.last_year(),
        }
    }
}

/// One line of rivermodels.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct RiverRow {
    pub key: StratumYear,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub weights: Vec<f64>,
    pub cutoffs: Vec<f64>,
}

impl From<&RiverModel> for RiverRow {
    fn from(m: &RiverModel) -> Self {
        RiverRow {
            key: m.key.clone(),
            means: m.fit.means.clone(),
            sds: m.fit.sds.clone(),
            weights: m.fit.raw_weights.clone(),
            cutoffs: m.cutoffs.clone(),
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn check_header(rdr: &mut csv::Reader<impl std::io::Read>, expected: &[&str]) -> Result<(), TableError> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(TableError::Header(header.iter().map(String::from).collect()));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, row: usize, idx: usize, column: &'static str) -> Result<T, TableError> {
    let value = rec.get(idx).unwrap_or("");
    value.parse().map_err(|_| TableError::Field { row, column, value: value.to_string() })
}

fn opt_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    row: usize,
    idx: usize,
    column: &'static str,
) -> Result<Option<T>, TableError> {
    match rec.get(idx).unwrap_or("") {
        "" => Ok(None),
        _ => field(rec, row, idx, column).map(Some),
    }
}

fn list_field(rec: &csv::StringRecord, row: usize, idx: usize, column: &'static str) -> Result<Vec<f64>, TableError> {
    let value = rec.get(idx).unwrap_or("");
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(';')
        .map(|v| v.parse().map_err(|_| TableError::Field { row, column, value: value.to_string() }))
        .collect()
}

pub fn write_components<W: std::io::Write>(
    w: W,
    table: &ComponentTable,
    meta: &BTreeMap<SampleKey, SampleMeta>,
) -> Result<(), TableError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COMPONENTS_HEADER)?;
    for r in table.rows() {
        let m = meta.get(&r.key);
        wtr.write_record([
            r.key.stratum_id.clone(),
            r.key.reef_id.clone(),
            r.key.year.to_string(),
            r.kind.as_str().to_string(),
            opt(r.age),
            r.mean_mm.to_string(),
            r.sd_mm.to_string(),
            r.weight.to_string(),
            opt(r.raw_weight),
            r.cohort.clone().unwrap_or_default(),
            r.pooled_from.to_string(),
            opt(m.map(|m| m.flag_live_small)),
            opt(m.map(|m| m.flag_spat_small)),
            opt(m.and_then(|m| m.family)),
            opt(m.and_then(|m| m.g_selected)),
            opt(m.and_then(|m| m.converged)),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parses components.csv back into a table plus the per-sample columns.
pub fn read_components<R: std::io::Read>(
    r: R,
) -> Result<(ComponentTable, BTreeMap<SampleKey, SampleMeta>), TableError> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &COMPONENTS_HEADER)?;
    let mut rows = Vec::new();
    let mut meta = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let key = SampleKey::new(&rec[0], &rec[1], field(&rec, row, 2, "year")?);
        let kind: Stage = field(&rec, row, 3, "kind")?;
        let cohort = match &rec[9] {
            "" => None,
            s => Some(s.to_string()),
        };
        rows.push(AgedComponent {
            key: key.clone(),
            kind,
            age: opt_field(&rec, row, 4, "age")?,
            mean_mm: field(&rec, row, 5, "mean_mm")?,
            sd_mm: field(&rec, row, 6, "sd_mm")?,
            weight: field(&rec, row, 7, "weight")?,
            raw_weight: opt_field(&rec, row, 8, "raw_weight")?,
            cohort,
            pooled_from: field(&rec, row, 10, "pooled_from")?,
        });
        let m = SampleMeta {
            flag_live_small: field(&rec, row, 11, "flag_live_small")?,
            flag_spat_small: field(&rec, row, 12, "flag_spat_small")?,
            family: opt_field::<VarianceFamily>(&rec, row, 13, "variance_family")?,
            g_selected: opt_field(&rec, row, 14, "g_selected")?,
            converged: opt_field(&rec, row, 15, "converged")?,
        };
        meta.insert(key, m);
    }
    Ok((ComponentTable::new(rows), meta))
}

pub fn write_cohorts<W: std::io::Write>(w: W, chains: &[CohortChain]) -> Result<(), TableError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COHORTS_HEADER)?;
    for c in chains.iter().map(CohortRow::from) {
        wtr.write_record([
            c.cohort,
            c.stratum_id,
            c.reef_id,
            c.birth_year.to_string(),
            c.terminal_age.to_string(),
            c.chain_length.to_string(),
            c.first_year.to_string(),
            c.last_year.to_string(),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_cohorts<R: std::io::Read>(r: R) -> Result<Vec<CohortRow>, TableError> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &COHORTS_HEADER)?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let row = i + 2;
            Ok(CohortRow {
                cohort: rec[0].to_string(),
                stratum_id: rec[1].to_string(),
                reef_id: rec[2].to_string(),
                birth_year: field(&rec, row, 3, "birth_year")?,
                terminal_age: field(&rec, row, 4, "terminal_age")?,
                chain_length: field(&rec, row, 5, "chain_length")?,
                first_year: field(&rec, row, 6, "first_year")?,
                last_year: field(&rec, row, 7, "last_year")?,
            })
        })
        .collect()
}

pub fn write_river_models<W: std::io::Write>(w: W, models: &[RiverModel]) -> Result<(), TableError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RIVER_HEADER)?;
    for m in models.iter().map(RiverRow::from) {
        wtr.write_record([
            m.key.stratum_id.clone(),
            m.key.year.to_string(),
            m.means.len().to_string(),
            join(&m.means),
            join(&m.sds),
            join(&m.weights),
            join(&m.cutoffs),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_river_models<R: std::io::Read>(r: R) -> Result<Vec<RiverRow>, TableError> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &RIVER_HEADER)?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let row = i + 2;
            let g: usize = field(&rec, row, 2, "g")?;
            let out = RiverRow {
                key: StratumYear { stratum_id: rec[0].to_string(), year: field(&rec, row, 1, "year")? },
                means: list_field(&rec, row, 3, "means")?,
                sds: list_field(&rec, row, 4, "sds")?,
                weights: list_field(&rec, row, 5, "weights")?,
                cutoffs: list_field(&rec, row, 6, "cutoffs")?,
            };
            if out.means.len() != g {
                return Err(TableError::Field { row, column: "means", value: rec[3].to_string() });
            }
            Ok(out)
        })
        .collect()
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>, PipelineError> {
    let path = dir.join(name);
    std::fs::File::create(&path)
        .map(std::io::BufWriter::new)
        .map_err(|e| PipelineError::io(&path, e))
}

fn table_err(dir: &Path, name: &str, e: TableError) -> PipelineError {
    PipelineError::io(&dir.join(name), std::io::Error::other(e.to_string()))
}

/// Writes the three CSV tables and returns their file names.
pub fn write_tables(dir: &Path, analysis: &Analysis) -> Result<Vec<String>, PipelineError> {
    let names = ["components.csv", "cohorts.csv", "rivermodels.csv"];
    write_components(create(dir, names[0])?, &analysis.table, &analysis.meta).map_err(|e| table_err(dir, names[0], e))?;
    write_cohorts(create(dir, names[1])?, &analysis.chains).map_err(|e| table_err(dir, names[1], e))?;
    write_river_models(create(dir, names[2])?, &analysis.river_models).map_err(|e| table_err(dir, names[2], e))?;
    Ok(names.iter().map(|s| s.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> (ComponentTable, BTreeMap<SampleKey, SampleMeta>) {
        let key = SampleKey::new("J", "331", 2010);
        let mut spat = AgedComponent::spat(key.clone(), 24.1, 5.3, 0.1);
        spat.cohort = Some("J.331.2010.1".into());
        let mut live = AgedComponent::live(key.clone(), 0.1 + 0.2, 7.0, 1.0 / 3.0, 0.3);
        live.age = Some(2);
        live.cohort = Some("J.331.2009.1".into());
        let mut na = AgedComponent::live(key.clone(), 99.5, 7.0, 0.5, 0.45);
        na.cohort = Some("J.331.2010.NA.1".into());
        let meta = SampleMeta {
            flag_live_small: true,
            flag_spat_small: false,
            family: Some(VarianceFamily::V),
            g_selected: Some(2),
            converged: Some(true),
        };
        (ComponentTable::new(vec![na, live, spat]), BTreeMap::from([(key, meta)]))
    }

    #[test]
    fn components_round_trip() {
        let (t, meta) = table();
        let mut buf = Vec::new();
        write_components(&mut buf, &t, &meta).unwrap();
        let (back, back_meta) = read_components(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back_meta, meta);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&COMPONENTS_HEADER.join(",")));
        assert!(text.contains("0.30000000000000004"));
    }

    #[test]
    fn empty_tables_are_header_only() {
        let mut buf = Vec::new();
        write_components(&mut buf, &ComponentTable::default(), &BTreeMap::new()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), COMPONENTS_HEADER.join(",") + "\n");
        let mut buf = Vec::new();
        write_cohorts(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), COHORTS_HEADER.join(",") + "\n");
        assert!(read_cohorts(COHORTS_HEADER.join(",").as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(matches!(read_cohorts("a,b\n".as_bytes()), Err(TableError::Header(_))));
    }

    #[test]
    fn river_lists_are_semicolon_joined() {
        let text = "stratum_id,year,g,means,sds,weights,cutoffs\nJ,2010,2,50;70,6;7,0.4;0.6,0;55.04972;75.89134\n";
        let rows = read_river_models(text.as_bytes()).unwrap();
        assert_eq!(rows[0].means, vec![50.0, 70.0]);
        assert_eq!(rows[0].cutoffs.len(), 3);
        let bad = "stratum_id,year,g,means,sds,weights,cutoffs\nJ,2010,3,50;70,6;7,0.4;0.6,0\n";
        assert!(read_river_models(bad.as_bytes()).is_err());
    }
}
