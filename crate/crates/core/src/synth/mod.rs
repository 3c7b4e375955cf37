//! Synthetic reef populations with known cohorts.
//!
//! Each reef spawns one spat cohort per year. Survivors age by one year
//! annually, thinned binomially, and each age class is measured around
//! its own mean length. Every emitted observation carries its true cohort
//! and age.

pub mod oracle;
pub mod recovery;

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{key_values, parse_list, parse_value};
use crate::ingest::{write_survey_csv, ShellObservation, Stage, YearRange};
use crate::seed;

pub use oracle::{loglik_oracle, mixture_moments_oracle, OracleError};
pub use recovery::{link_recovery, LinkRecovery};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{0}")]
    Invalid(String),
}

/// Simulation parameters. Per-age vectors are indexed by the age step:
/// entry `i` describes the transition from age `i + 1` to `i + 2` (and the
/// length spread of age `i + 2`). Animals older than
/// `growth_increments_mm.len() + 1` die.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub years: YearRange,
    pub strata: usize,
    /// Reefs per stratum.
    pub reefs: usize,
    pub recruitment_per_year: usize,
    pub growth_increments_mm: Vec<f64>,
    pub length_sd_mm: Vec<f64>,
    pub annual_survival: Vec<f64>,
    pub spat_meanlog: f64,
    pub spat_sdlog: f64,
    /// Unobserved years simulated before `years.first` so older classes
    /// are present from the start.
    pub spinup_years: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// Five reefs over fifteen years with ages one to five present each
    /// year; spat near 25 mm and market size reached around age four.
    fn default() -> Self {
        let spat_sdlog: f64 = 0.2;
        ScenarioConfig {
            years: YearRange::new(2003, 2017),
            strata: 1,
            reefs: 5,
            recruitment_per_year: 1000,
            growth_increments_mm: vec![20.0, 16.0, 14.0, 12.0],
            length_sd_mm: vec![4.0, 4.0, 4.0, 4.0],
            annual_survival: vec![0.5, 0.6, 0.6, 0.5],
            spat_meanlog: 25f64.ln() - 0.5 * spat_sdlog * spat_sdlog,
            spat_sdlog,
            spinup_years: 4,
            seed: 20240501,
        }
    }
}

impl ScenarioConfig {
    /// Sets one option by its config-file key. List values are comma
    /// separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key.trim() {
            "years" => self.years = value.trim().parse()?,
            "strata" => self.strata = parse_value(key, value)?,
            "reefs" => self.reefs = parse_value(key, value)?,
            "recruitment_per_year" => self.recruitment_per_year = parse_value(key, value)?,
            "growth_increments_mm" => self.growth_increments_mm = parse_list(key, value)?,
            "length_sd_mm" => self.length_sd_mm = parse_list(key, value)?,
            "annual_survival" => self.annual_survival = parse_list(key, value)?,
            "spat_meanlog" => self.spat_meanlog = parse_value(key, value)?,
            "spat_sdlog" => self.spat_sdlog = parse_value(key, value)?,
            "spinup_years" => self.spinup_years = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            other => return Err(format!("unknown scenario key `{other}`")),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (line, k, v) in key_values(text)? {
            self.set(k, v).map_err(|e| format!("line {line}: {e}"))?;
        }
        Ok(())
    }

    pub fn max_age(&self) -> u32 {
        self.growth_increments_mm.len() as u32 + 1
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        let steps = self.growth_increments_mm.len();
        if self.length_sd_mm.len() != steps || self.annual_survival.len() != steps {
            return bad("growth, sd and survival vectors must have equal length");
        }
        if self.growth_increments_mm.iter().any(|g| !(*g > 0.0)) {
            return bad("growth increments must be positive");
        }
        if self.length_sd_mm.iter().any(|s| !(*s > 0.0)) {
            return bad("length sds must be positive");
        }
        if self.annual_survival.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return bad("survival must lie in (0, 1]");
        }
        if !(self.spat_sdlog > 0.0) || !self.spat_meanlog.is_finite() {
            return bad("spat log-normal needs finite meanlog and positive sdlog");
        }
        if self.years.is_empty() || self.strata == 0 || self.reefs == 0 {
            return bad("need at least one year, stratum and reef");
        }
        Ok(())
    }

    pub fn spat_mean_mm(&self) -> f64 {
        (self.spat_meanlog + 0.5 * self.spat_sdlog * self.spat_sdlog).exp()
    }

    /// Expected length of each age, index 0 = age 1.
    pub fn age_means(&self) -> Vec<f64> {
        let mut means = vec![self.spat_mean_mm()];
        for inc in &self.growth_increments_mm {
            means.push(means[means.len() - 1] + inc);
        }
        means
    }

    pub fn stratum_id(s: usize) -> String {
        format!("S{}", s + 1)
    }

    pub fn reef_id(s: usize, r: usize) -> String {
        format!("{}", 100 * (s + 1) + r + 1)
    }
}

/// True identity of one generated observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub row_id: usize,
    pub true_cohort: String,
    pub true_age: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub rows: Vec<TruthRow>,
}

struct LiveCohort {
    birth_year: i32,
    count: u64,
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<(Vec<ShellObservation>, GroundTruth), ScenarioError> {
    cfg.validate()?;
    let means = cfg.age_means();
    debug_assert!(means.windows(2).all(|w| w[1] > w[0]));
    let spat = LogNormal::new(cfg.spat_meanlog, cfg.spat_sdlog).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let max_age = cfg.max_age();

    let mut obs = Vec::new();
    let mut truth = GroundTruth::default();

    for s in 0..cfg.strata {
        for r in 0..cfg.reefs {
            let stratum = ScenarioConfig::stratum_id(s);
            let reef = ScenarioConfig::reef_id(s, r);
            let mut rng = seed::rng(cfg.seed, &[b"reef", stratum.as_bytes(), reef.as_bytes()]);
            let mut cohorts: Vec<LiveCohort> = Vec::new();
            let start = cfg.years.first - cfg.spinup_years as i32;

            for year in start..=cfg.years.last {
                // age everyone, then recruit
                for c in cohorts.iter_mut() {
                    let prev_age = (year - 1 - c.birth_year + 1) as u32;
                    c.count = if prev_age >= max_age {
                        0
                    } else {
                        let p = cfg.annual_survival[prev_age as usize - 1];
                        Binomial::new(c.count, p).expect("validated survival").sample(&mut rng)
                    };
                }
                cohorts.retain(|c| c.count > 0);
                cohorts.push(LiveCohort { birth_year: year, count: cfg.recruitment_per_year as u64 });

                if year < cfg.years.first {
                    continue;
                }
                for c in &cohorts {
                    let age = (year - c.birth_year + 1) as u32;
                    let label = format!("{stratum}.{reef}.{}", c.birth_year);
                    for _ in 0..c.count {
                        let length = if age == 1 {
                            spat.sample(&mut rng)
                        } else {
                            let i = age as usize - 2;
                            draw_positive(&mut rng, means[age as usize - 1], cfg.length_sd_mm[i])
                        };
                        truth.rows.push(TruthRow { row_id: obs.len(), true_cohort: label.clone(), true_age: age });
                        obs.push(ShellObservation {
                            stratum_id: stratum.clone(),
                            reef_id: reef.clone(),
                            year,
                            stage: if age == 1 { Stage::Spat } else { Stage::Live },
                            length_mm: length,
                        });
                    }
                }
            }
        }
    }
    Ok((obs, truth))
}

fn draw_positive<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let d = Normal::new(mean, sd).expect("positive sd");
    loop {
        let x = d.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

pub fn write_truth_csv<W: Write>(writer: W, truth: &GroundTruth) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for row in &truth.rows {
        w.serialize(row)?;
    }
    if truth.rows.is_empty() {
        w.write_record(["row_id", "true_cohort", "true_age"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: std::io::Read>(reader: R) -> Result<GroundTruth, csv::Error> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows = rdr.deserialize().collect::<Result<Vec<TruthRow>, _>>()?;
    Ok(GroundTruth { rows })
}

/// Writes `<stem>.csv` and `<stem>.truth.csv` style pairs.
pub fn write_scenario(
    survey: &std::path::Path,
    truth_path: &std::path::Path,
    obs: &[ShellObservation],
    truth: &GroundTruth,
) -> std::io::Result<()> {
    let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
    write_survey_csv(std::fs::File::create(survey)?, obs).map_err(to_io)?;
    write_truth_csv(std::fs::File::create(truth_path)?, truth).map_err(to_io)?;
    Ok(())
}

/// Sidecar path for a survey file: `a/b.csv` → `a/b.truth.csv`.
pub fn truth_path_for(survey: &std::path::Path) -> std::path::PathBuf {
    let stem = survey.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    survey.with_file_name(format!("{stem}.truth.csv"))
}
