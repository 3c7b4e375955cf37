//! Survey ingestion: parse length records, group them into per-sample
//! buckets, and apply the sample-size gating and reef eligibility rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column order of the survey CSV.
pub const SURVEY_HEADER: [&str; 5] = ["stratum_id", "reef_id", "year", "stage", "length_mm"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}, field `{field}`: {reason}")]
    Malformed {
        line: u64,
        field: &'static str,
        reason: String,
    },
    #[error("line {line}: unknown stage `{token}` (expected spat or live)")]
    UnknownStage { line: u64, token: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Spat,
    Live,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Spat => "spat",
            Stage::Live => "live",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spat" => Ok(Stage::Spat),
            "live" => Ok(Stage::Live),
            _ => Err(s.to_string()),
        }
    }
}

/// Inclusive calendar-year window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub const fn new(first: i32, last: i32) -> Self {
        YearRange { first, last }
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }

    pub fn len(&self) -> usize {
        if self.last < self.first {
            0
        } else {
            (self.last - self.first + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for YearRange {
    fn default() -> Self {
        YearRange::new(2003, 2023)
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

impl FromStr for YearRange {
    type Err = String;

    /// Accepts `A..B` (inclusive) or `A..=B`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("expected A..B, got `{s}`"))?;
        let b = b.strip_prefix('=').unwrap_or(b);
        let first: i32 = a.trim().parse().map_err(|_| format!("bad year `{a}`"))?;
        let last: i32 = b.trim().parse().map_err(|_| format!("bad year `{b}`"))?;
        if last < first {
            return Err(format!("empty year range `{s}`"));
        }
        Ok(YearRange::new(first, last))
    }
}

/// One measured animal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellObservation {
    pub stratum_id: String,
    pub reef_id: String,
    pub year: i32,
    pub stage: Stage,
    pub length_mm: f64,
}

/// (stratum, reef) identity of a sampling unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReefKey {
    pub stratum_id: String,
    pub reef_id: String,
}

impl fmt::Display for ReefKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.stratum_id, self.reef_id)
    }
}

/// (stratum, reef, year) identity of one sample.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub stratum_id: String,
    pub reef_id: String,
    pub year: i32,
}

impl SampleKey {
    pub fn new(stratum_id: impl Into<String>, reef_id: impl Into<String>, year: i32) -> Self {
        SampleKey {
            stratum_id: stratum_id.into(),
            reef_id: reef_id.into(),
            year,
        }
    }

    pub fn reef(&self) -> ReefKey {
        ReefKey {
            stratum_id: self.stratum_id.clone(),
            reef_id: self.reef_id.clone(),
        }
    }

    pub fn stratum_year(&self) -> StratumYear {
        StratumYear {
            stratum_id: self.stratum_id.clone(),
            year: self.year,
        }
    }
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.stratum_id, self.reef_id, self.year)
    }
}

/// (stratum, year) identity of a pooled river-level sample.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StratumYear {
    pub stratum_id: String,
    pub year: i32,
}

impl fmt::Display for StratumYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.stratum_id, self.year)
    }
}

/// What may be fitted for a sample, and which fits carry a small-sample flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleCondition {
    pub fit_lognormal: bool,
    pub flag_spat_small: bool,
    pub fit_gmm: bool,
    pub flag_live_small: bool,
}

/// Sample-size thresholds. Both bounds of each band are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatingThresholds {
    /// Fewest spat for which a log-normal is fitted.
    pub spat_min: usize,
    /// Largest spat count still flagged as small.
    pub spat_flag_max: usize,
    /// Fewest live animals for which a mixture is fitted.
    pub live_min: usize,
    /// Largest live count still flagged as small.
    pub live_flag_max: usize,
}

impl Default for GatingThresholds {
    fn default() -> Self {
        GatingThresholds {
            spat_min: 25,
            spat_flag_max: 50,
            live_min: 50,
            live_flag_max: 250,
        }
    }
}

impl GatingThresholds {
    pub fn classify(&self, n_spat: usize, n_live: usize) -> SampleCondition {
        let fit_lognormal = n_spat >= self.spat_min;
        let fit_gmm = n_live >= self.live_min;
        SampleCondition {
            fit_lognormal,
            flag_spat_small: fit_lognormal && n_spat <= self.spat_flag_max,
            fit_gmm,
            flag_live_small: fit_gmm && n_live <= self.live_flag_max,
        }
    }
}

/// Gating with the default thresholds.
pub fn classify_sample(n_spat: usize, n_live: usize) -> SampleCondition {
    GatingThresholds::default().classify(n_spat, n_live)
}

/// All observations of one (stratum, reef, year).
///
/// Every length is retained regardless of gating: river-level pooling and
/// eligibility use the raw counts, while `condition` decides which fits run.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub key: SampleKey,
    pub spat_lengths: Vec<f64>,
    pub live_lengths: Vec<f64>,
    pub condition: SampleCondition,
}

impl Sample {
    pub fn n_spat(&self) -> usize {
        self.spat_lengths.len()
    }

    pub fn n_live(&self) -> usize {
        self.live_lengths.len()
    }

    pub fn total(&self) -> usize {
        self.n_spat() + self.n_live()
    }
}

pub type SampleMap = BTreeMap<SampleKey, Sample>;

#[derive(Debug, Deserialize)]
struct RawRow {
    stratum_id: String,
    reef_id: String,
    year: String,
    stage: String,
    length_mm: String,
}

/// Reads the survey CSV at `path`, rejecting years outside `years`.
pub fn parse_survey_csv(
    path: impl AsRef<Path>,
    years: YearRange,
) -> Result<Vec<ShellObservation>, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_survey_reader(file, years)
}

pub fn parse_survey_reader<R: Read>(
    reader: R,
    years: YearRange,
) -> Result<Vec<ShellObservation>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != SURVEY_HEADER {
        return Err(IngestError::Header {
            expected: SURVEY_HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut out = Vec::new();
    for result in rdr.deserialize::<RawRow>() {
        let row = result?;
        // header is line 1
        let line = out.len() as u64 + 2;
        out.push(convert_row(row, line, years)?);
    }
    Ok(out)
}

fn convert_row(row: RawRow, line: u64, years: YearRange) -> Result<ShellObservation, IngestError> {
    let malformed = |field: &'static str, reason: String| IngestError::Malformed {
        line,
        field,
        reason,
    };
    if row.stratum_id.is_empty() {
        return Err(malformed("stratum_id", "empty identifier".into()));
    }
    if row.reef_id.is_empty() {
        return Err(malformed("reef_id", "empty identifier".into()));
    }
    let year: i32 = row
        .year
        .parse()
        .map_err(|_| malformed("year", format!("not an integer: `{}`", row.year)))?;
    if !years.contains(year) {
        return Err(malformed("year", format!("{year} outside {years}")));
    }
    let stage: Stage = row.stage.parse().map_err(|token| IngestError::UnknownStage { line, token })?;
    let length_mm: f64 = row
        .length_mm
        .parse()
        .map_err(|_| malformed("length_mm", format!("not a number: `{}`", row.length_mm)))?;
    if !length_mm.is_finite() {
        return Err(malformed("length_mm", "non-finite length".into()));
    }
    if length_mm <= 0.0 {
        return Err(malformed("length_mm", "non-positive length".into()));
    }
    Ok(ShellObservation {
        stratum_id: row.stratum_id,
        reef_id: row.reef_id,
        year,
        stage,
        length_mm,
    })
}

/// Writes observations in the survey schema.
pub fn write_survey_csv<W: std::io::Write>(
    writer: W,
    observations: &[ShellObservation],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SURVEY_HEADER)?;
    for o in observations {
        w.write_record([
            o.stratum_id.as_str(),
            o.reef_id.as_str(),
            &o.year.to_string(),
            o.stage.as_str(),
            &o.length_mm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn build_samples(observations: &[ShellObservation], gating: &GatingThresholds) -> SampleMap {
    let mut map: SampleMap = BTreeMap::new();
    for o in observations {
        let key = SampleKey::new(o.stratum_id.clone(), o.reef_id.clone(), o.year);
        let sample = map.entry(key.clone()).or_insert_with(|| Sample {
            key,
            spat_lengths: Vec::new(),
            live_lengths: Vec::new(),
            condition: SampleCondition::default(),
        });
        match o.stage {
            Stage::Spat => sample.spat_lengths.push(o.length_mm),
            Stage::Live => sample.live_lengths.push(o.length_mm),
        }
    }
    for sample in map.values_mut() {
        sample.condition = gating.classify(sample.n_spat(), sample.n_live());
    }
    map
}

/// Reefs with at least `min_run` consecutive calendar years each holding
/// `min_per_year` or more animals (spat plus live).
pub fn eligible_reefs(samples: &SampleMap, min_per_year: usize, min_run: usize) -> BTreeSet<ReefKey> {
    let mut qualifying: BTreeMap<ReefKey, BTreeSet<i32>> = BTreeMap::new();
    for s in samples.values() {
        let years = qualifying.entry(s.key.reef()).or_default();
        if s.total() >= min_per_year {
            years.insert(s.key.year);
        }
    }

    qualifying
        .into_iter()
        .filter(|(_, years)| longest_run(years) >= min_run)
        .map(|(reef, _)| reef)
        .collect()
}

fn longest_run(years: &BTreeSet<i32>) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev: Option<i32> = None;
    for &y in years {
        run = match prev {
            Some(p) if y == p + 1 => run + 1,
            _ => 1,
        };
        best = best.max(run);
        prev = Some(y);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(reef: &str, year: i32, stage: Stage, len: f64) -> ShellObservation {
        ShellObservation {
            stratum_id: "J".into(),
            reef_id: reef.into(),
            year,
            stage,
            length_mm: len,
        }
    }

    fn parse(text: &str) -> Result<Vec<ShellObservation>, IngestError> {
        parse_survey_reader(text.as_bytes(), YearRange::default())
    }

    #[test]
    fn parses_a_spat_row() {
        let v = parse("stratum_id,reef_id,year,stage,length_mm\nJAMES,331,2010,spat,18.5\n").unwrap();
        assert_eq!(
            v,
            vec![ShellObservation {
                stratum_id: "JAMES".into(),
                reef_id: "331".into(),
                year: 2010,
                stage: Stage::Spat,
                length_mm: 18.5,
            }]
        );
    }

    #[test]
    fn stage_is_case_insensitive() {
        let v = parse("stratum_id,reef_id,year,stage,length_mm\nJ,1,2010,LIVE,40\nJ,1,2010,Spat,20\n").unwrap();
        assert_eq!(v[0].stage, Stage::Live);
        assert_eq!(v[1].stage, Stage::Spat);
    }

    #[test]
    fn negative_length_is_rejected() {
        let err = parse("stratum_id,reef_id,year,stage,length_mm\nJ,1,2010,live,40\nJ,1,2010,live,-3\n")
            .unwrap_err();
        match err {
            IngestError::Malformed { line, field, reason } => {
                assert_eq!(line, 3);
                assert_eq!(field, "length_mm");
                assert_eq!(reason, "non-positive length");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("stratum_id,reef_id,year,stage,length_mm\n").unwrap().is_empty());
    }

    #[test]
    fn unknown_stage_and_bad_header() {
        assert!(matches!(
            parse("stratum_id,reef_id,year,stage,length_mm\nJ,1,2010,dead,40\n"),
            Err(IngestError::UnknownStage { line: 2, .. })
        ));
        assert!(matches!(
            parse("reef_id,stratum_id,year,stage,length_mm\n"),
            Err(IngestError::Header { .. })
        ));
        assert!(matches!(
            parse("stratum_id,reef_id,year,stage,length_mm\nJ,1,1999,live,40\n"),
            Err(IngestError::Malformed { field: "year", .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_survey_csv("/nonexistent/survey.csv", YearRange::default()).unwrap_err();
        assert!(matches!(err, IngestError::Io { .. }));
    }

    #[test]
    fn grouping() {
        let g = GatingThresholds::default();
        let same = vec![
            obs("1", 2010, Stage::Live, 40.0),
            obs("1", 2010, Stage::Live, 40.0),
            obs("1", 2010, Stage::Spat, 20.0),
        ];
        let m = build_samples(&same, &g);
        assert_eq!(m.len(), 1);
        let s = m.values().next().unwrap();
        assert_eq!((s.n_spat(), s.n_live()), (1, 2));

        let two = vec![obs("1", 2010, Stage::Live, 40.0), obs("2", 2010, Stage::Live, 41.0)];
        assert_eq!(build_samples(&two, &g).len(), 2);
        assert!(build_samples(&[], &g).is_empty());
    }

    #[test]
    fn classify_examples() {
        let c = classify_sample(60, 300);
        assert_eq!(
            c,
            SampleCondition { fit_lognormal: true, flag_spat_small: false, fit_gmm: true, flag_live_small: false }
        );
        let c = classify_sample(30, 100);
        assert_eq!(
            c,
            SampleCondition { fit_lognormal: true, flag_spat_small: true, fit_gmm: true, flag_live_small: true }
        );
        assert_eq!(classify_sample(10, 40), SampleCondition::default());
        // boundaries favor fitting
        assert!(classify_sample(25, 0).fit_lognormal && classify_sample(25, 0).flag_spat_small);
        assert!(classify_sample(50, 0).flag_spat_small && !classify_sample(51, 0).flag_spat_small);
        assert!(classify_sample(0, 50).fit_gmm && classify_sample(0, 50).flag_live_small);
        assert!(classify_sample(0, 250).flag_live_small && !classify_sample(0, 251).flag_live_small);
    }

    fn counts_fixture(per_year: &[(i32, usize)]) -> SampleMap {
        let mut v = Vec::new();
        for &(year, n) in per_year {
            for i in 0..n {
                v.push(obs("7", year, if i % 3 == 0 { Stage::Spat } else { Stage::Live }, 30.0));
            }
        }
        build_samples(&v, &GatingThresholds::default())
    }

    #[test]
    fn eligibility_examples() {
        let pass: Vec<_> = (2003..=2010).map(|y| (y, 300)).collect();
        assert_eq!(eligible_reefs(&counts_fixture(&pass), 300, 8).len(), 1);

        let short: Vec<_> = (2003..=2009).map(|y| (y, 300)).chain([(2011, 300)]).collect();
        assert!(eligible_reefs(&counts_fixture(&short), 300, 8).is_empty());

        let gap: Vec<_> = (2003..=2010).map(|y| (y, if y == 2007 { 299 } else { 300 })).collect();
        assert!(eligible_reefs(&counts_fixture(&gap), 300, 8).is_empty());
    }

    #[test]
    fn year_range_parsing() {
        assert_eq!("2003..2023".parse::<YearRange>().unwrap(), YearRange::new(2003, 2023));
        assert_eq!("2003..=2005".parse::<YearRange>().unwrap().len(), 3);
        assert!("2010..2003".parse::<YearRange>().is_err());
    }
}
