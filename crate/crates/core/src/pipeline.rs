//! End-to-end orchestration: ingest, gate, fit, age, pool, link, write.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::age::{self, AgedComponent, PoolingWeights, RiverModel, DEFAULT_AGE_QUANTILE};
use crate::cohort::{self, ChainViolation, CohortChain, ComponentTable, LinkError};
use crate::ingest::{
    self, GatingThresholds, IngestError, ReefKey, Sample, SampleCondition, SampleKey, ShellObservation,
    StratumYear, YearRange,
};
use crate::mixfit::{self, BicEntry, FitConfig, FitError, LogNormalFit, VarianceFamily};
use crate::config::{key_values, parse_value};
use crate::{figures, output, seed};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fit failed for {key}: {source}")]
    Fit {
        key: String,
        #[source]
        source: FitError,
    },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("cohort invariant broken: {0}")]
    Chain(#[from] ChainViolation),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

/// Which lengths enter the stratum-year mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiverPool {
    SpatAndLive,
    LiveOnly,
}

impl std::str::FromStr for RiverPool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spat+live" | "spat_and_live" => Ok(RiverPool::SpatAndLive),
            "live" | "live_only" => Ok(RiverPool::LiveOnly),
            _ => Err(format!("unknown river pool `{s}` (spat+live or live)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub fit: FitConfig,
    pub gating: GatingThresholds,
    pub min_per_year: usize,
    pub min_run: usize,
    pub age_quantile: f64,
    pub years: YearRange,
    pub market_size_mm: f64,
    pub pooling: PoolingWeights,
    pub river_pool: RiverPool,
    /// Fewest pooled lengths for a stratum-year mixture.
    pub min_river_lengths: usize,
    pub figures: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::from("survey.csv"),
            output_dir: PathBuf::from("out"),
            fit: FitConfig::default(),
            gating: GatingThresholds::default(),
            min_per_year: 300,
            min_run: 8,
            age_quantile: DEFAULT_AGE_QUANTILE,
            years: YearRange::default(),
            market_size_mm: 76.0,
            pooling: PoolingWeights::default(),
            river_pool: RiverPool::LiveOnly,
            min_river_lengths: 50,
            figures: true,
        }
    }
}

impl PipelineConfig {
    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "input" => self.input = PathBuf::from(v),
            "output" | "output_dir" => self.output_dir = PathBuf::from(v),
            "g_max" => self.fit.g_max = parse_value(key, v)?,
            "tol" => self.fit.tol = parse_value(key, v)?,
            "max_iter" => self.fit.max_iter = parse_value(key, v)?,
            "n_starts" => self.fit.n_starts = parse_value(key, v)?,
            "seed" => self.fit.seed = parse_value(key, v)?,
            "var_floor" => self.fit.var_floor = parse_value(key, v)?,
            "delta_bic" => self.fit.delta_bic = parse_value(key, v)?,
            "spat_min" => self.gating.spat_min = parse_value(key, v)?,
            "spat_flag_max" => self.gating.spat_flag_max = parse_value(key, v)?,
            "live_min" => self.gating.live_min = parse_value(key, v)?,
            "live_flag_max" => self.gating.live_flag_max = parse_value(key, v)?,
            "min_per_year" => self.min_per_year = parse_value(key, v)?,
            "min_run" => self.min_run = parse_value(key, v)?,
            "age_quantile" => self.age_quantile = parse_value(key, v)?,
            "years" => self.years = v.parse()?,
            "market_size_mm" => self.market_size_mm = parse_value(key, v)?,
            "pooling" => self.pooling = v.parse()?,
            "river_pool" => self.river_pool = v.parse()?,
            "min_river_lengths" => self.min_river_lengths = parse_value(key, v)?,
            "figures" => self.figures = parse_value(key, v)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (line, k, v) in key_values(text)? {
            self.set(k, v).map_err(|e| format!("line {line}: {e}"))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.fit.validate()?;
        if self.min_per_year < 1 || self.min_run < 1 {
            return Err("min_per_year and min_run must be >= 1".into());
        }
        if !(self.age_quantile > 0.0 && self.age_quantile < 1.0) {
            return Err("age_quantile must lie in (0, 1)".into());
        }
        if !(self.market_size_mm > 0.0) {
            return Err("market_size_mm must be positive".into());
        }
        let g = &self.gating;
        if g.spat_min == 0 || g.live_min == 0 {
            return Err("gating minimums must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    NonMonotoneCutoffs,
    NotConverged,
    DegenerateFit,
    NoRiverModel,
    SpatFitFailed,
    ChainWithoutSpat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub key: SampleKey,
    pub kind: WarningKind,
    pub message: String,
}

/// Per-sample fit record for the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub key: SampleKey,
    pub n_spat: usize,
    pub n_live: usize,
    pub condition: SampleCondition,
    pub spat_fraction: f64,
    pub spat_fit: Option<LogNormalFit>,
    pub family: Option<VarianceFamily>,
    pub g_selected: Option<usize>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub bic_table: Vec<BicEntry>,
}

/// Sample-level columns repeated on each component row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub flag_live_small: bool,
    pub flag_spat_small: bool,
    pub family: Option<VarianceFamily>,
    pub g_selected: Option<usize>,
    pub converged: Option<bool>,
}

impl From<&SampleDiagnostics> for SampleMeta {
    fn from(d: &SampleDiagnostics) -> Self {
        SampleMeta {
            flag_live_small: d.condition.flag_live_small,
            flag_spat_small: d.condition.flag_spat_small,
            family: d.family,
            g_selected: d.g_selected,
            converged: d.converged,
        }
    }
}

/// Everything the pipeline computes, before any file is written.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub eligible: BTreeSet<ReefKey>,
    pub river_models: Vec<RiverModel>,
    pub diagnostics: Vec<SampleDiagnostics>,
    pub meta: BTreeMap<SampleKey, SampleMeta>,
    pub table: ComponentTable,
    pub chains: Vec<CohortChain>,
    pub warnings: Vec<Warning>,
    pub notices: Vec<String>,
    pub n_observations: usize,
}

struct SampleResult {
    components: Vec<AgedComponent>,
    diagnostics: SampleDiagnostics,
    warnings: Vec<Warning>,
}

fn derived_fit(cfg: &FitConfig, parts: &[&[u8]]) -> FitConfig {
    FitConfig { seed: seed::derive(cfg.seed, parts), ..*cfg }
}

/// Runs every modelling step on in-memory observations.
pub fn analyze(observations: &[ShellObservation], cfg: &PipelineConfig) -> Result<Analysis, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let samples = ingest::build_samples(observations, &cfg.gating);
    let eligible = ingest::eligible_reefs(&samples, cfg.min_per_year, cfg.min_run);
    let mut notices = Vec::new();
    if eligible.is_empty() {
        notices.push("no reef meets the eligibility rule; only stratum-level models were produced".to_string());
    }

    let river_models = fit_river_models(&samples, cfg)?;
    let river_index: BTreeMap<StratumYear, &RiverModel> =
        river_models.iter().map(|m| (m.key.clone(), m)).collect();

    let reef_samples: Vec<&Sample> = samples.values().filter(|s| eligible.contains(&s.key.reef())).collect();
    let results: Vec<SampleResult> = reef_samples
        .par_iter()
        .map(|s| fit_sample(s, river_index.get(&s.key.stratum_year()).copied(), cfg))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        rows.extend(r.components);
        diagnostics.push(r.diagnostics);
        warnings.extend(r.warnings);
    }

    let table = cohort::label_cohorts(ComponentTable::new(rows))?;
    let chains = cohort::cohort_summary(&table);
    cohort::verify_chains(&chains)?;
    // chains already under way in a reef's first year are left-censored, not illogical
    let mut first_year: BTreeMap<ReefKey, i32> = BTreeMap::new();
    for r in table.rows() {
        let y = first_year.entry(r.key.reef()).or_insert(r.key.year);
        *y = (*y).min(r.key.year);
    }
    for c in chains
        .iter()
        .filter(|c| c.starts_without_spat() && first_year.get(&c.reef) != Some(&c.first_year()))
    {
        warnings.push(Warning {
            key: SampleKey::new(c.reef.stratum_id.clone(), c.reef.reef_id.clone(), c.first_year()),
            kind: WarningKind::ChainWithoutSpat,
            message: format!("cohort {} starts at age {}", c.label, c.members[0].age),
        });
    }
    warnings.sort_by(|a, b| a.key.cmp(&b.key).then(a.message.cmp(&b.message)));

    let meta = diagnostics.iter().map(|d| (d.key.clone(), SampleMeta::from(d))).collect();
    Ok(Analysis {
        eligible,
        river_models,
        diagnostics,
        meta,
        table,
        chains,
        warnings,
        notices,
        n_observations: observations.len(),
    })
}

fn fit_river_models(samples: &ingest::SampleMap, cfg: &PipelineConfig) -> Result<Vec<RiverModel>, PipelineError> {
    let mut pooled: BTreeMap<StratumYear, Vec<f64>> = BTreeMap::new();
    for s in samples.values() {
        let lengths = pooled.entry(s.key.stratum_year()).or_default();
        if cfg.river_pool == RiverPool::SpatAndLive {
            lengths.extend_from_slice(&s.spat_lengths);
        }
        lengths.extend_from_slice(&s.live_lengths);
    }
    let pooled: Vec<(StratumYear, Vec<f64>)> = pooled.into_iter().collect();
    let models: Vec<Option<RiverModel>> = pooled
        .par_iter()
        .map(|(key, lengths)| {
            let fit_cfg = derived_fit(&cfg.fit, &[b"river", key.stratum_id.as_bytes(), &key.year.to_le_bytes()]);
            age::fit_river_model(key.clone(), lengths, &fit_cfg, cfg.age_quantile, cfg.min_river_lengths)
                .map_err(|source| PipelineError::Fit { key: key.to_string(), source })
        })
        .collect::<Result<_, _>>()?;
    Ok(models.into_iter().flatten().collect())
}

fn fit_sample(s: &Sample, river: Option<&RiverModel>, cfg: &PipelineConfig) -> Result<SampleResult, PipelineError> {
    let key = &s.key;
    let warn = |kind, message: String| Warning { key: key.clone(), kind, message };
    let mut warnings = Vec::new();
    let pi0 = mixfit::spat_fraction(s.n_spat(), s.n_live()).map_err(|source| PipelineError::Fit {
        key: key.to_string(),
        source,
    })?;

    let mut diag = SampleDiagnostics {
        key: key.clone(),
        n_spat: s.n_spat(),
        n_live: s.n_live(),
        condition: s.condition,
        spat_fraction: pi0,
        spat_fit: None,
        family: None,
        g_selected: None,
        converged: None,
        iterations: None,
        bic_table: Vec::new(),
    };
    let mut components = Vec::new();

    if s.condition.fit_lognormal {
        match mixfit::fit_lognormal(&s.spat_lengths) {
            Ok(f) => {
                components.push(AgedComponent::spat(key.clone(), f.mean_mm, f.sd_mm, pi0));
                diag.spat_fit = Some(f);
            }
            Err(e) => warnings.push(warn(WarningKind::SpatFitFailed, e.to_string())),
        }
    }

    if s.condition.fit_gmm {
        let fit_cfg = derived_fit(
            &cfg.fit,
            &[b"reef", key.stratum_id.as_bytes(), key.reef_id.as_bytes(), &key.year.to_le_bytes()],
        );
        let fit_err = |source| PipelineError::Fit { key: key.to_string(), source };
        let candidates = mixfit::fit_candidates(&s.live_lengths, &fit_cfg).map_err(fit_err)?;
        let sel = mixfit::select_model(&candidates, fit_cfg.delta_bic).map_err(fit_err)?;
        let fit = sel.chosen;
        if !fit.converged {
            warnings.push(warn(
                WarningKind::NotConverged,
                format!("{}{} stopped after {} iterations", fit.family, fit.g, fit.iterations),
            ));
        }
        if fit.degenerate {
            warnings.push(warn(WarningKind::DegenerateFit, format!("{}{} has a degenerate component", fit.family, fit.g)));
        }
        let adjusted = mixfit::adjust_weights(&fit.raw_weights, pi0);
        let mut live: Vec<AgedComponent> = (0..fit.g)
            .map(|k| AgedComponent::live(key.clone(), fit.means[k], fit.sds[k], fit.raw_weights[k], adjusted[k]))
            .collect();
        match river {
            Some(model) => {
                if model.non_monotone() {
                    warnings.push(warn(
                        WarningKind::NonMonotoneCutoffs,
                        format!("stratum cutoffs {:?} are not increasing", model.cutoffs),
                    ));
                }
                age::assign_ages(&mut live, model);
            }
            None => warnings.push(warn(WarningKind::NoRiverModel, format!("no stratum model for {}", key.stratum_year()))),
        }
        components.extend(live);

        diag.family = Some(fit.family);
        diag.g_selected = Some(fit.g);
        diag.converged = Some(fit.converged);
        diag.iterations = Some(fit.iterations);
        diag.bic_table = sel.table;
    }

    Ok(SampleResult {
        components: age::pool_duplicates(components, cfg.pooling),
        diagnostics: diag,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiverSummary {
    pub key: StratumYear,
    pub family: VarianceFamily,
    pub g: usize,
    pub cutoffs: Vec<f64>,
    pub bic_table: Vec<BicEntry>,
}

/// Written to `manifest.json` after every run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub n_observations: usize,
    pub n_samples_fitted: usize,
    pub n_components: usize,
    pub n_chains: usize,
    pub chains_without_spat: usize,
    pub eligible_reefs: Vec<ReefKey>,
    pub river_models: Vec<RiverSummary>,
    pub samples: Vec<SampleDiagnostics>,
    pub warnings: Vec<Warning>,
    pub notices: Vec<String>,
    pub outputs: Vec<String>,
    pub elapsed_ms: u128,
}

pub fn manifest(analysis: &Analysis, cfg: &PipelineConfig, outputs: Vec<String>, elapsed_ms: u128) -> RunManifest {
    RunManifest {
        config: cfg.clone(),
        n_observations: analysis.n_observations,
        n_samples_fitted: analysis.diagnostics.len(),
        n_components: analysis.table.len(),
        n_chains: analysis.chains.len(),
        chains_without_spat: analysis.warnings.iter().filter(|w| w.kind == WarningKind::ChainWithoutSpat).count(),
        eligible_reefs: analysis.eligible.iter().cloned().collect(),
        river_models: analysis
            .river_models
            .iter()
            .map(|m| RiverSummary {
                key: m.key.clone(),
                family: m.fit.family,
                g: m.g(),
                cutoffs: m.cutoffs.clone(),
                bic_table: m.bic_table.clone(),
            })
            .collect(),
        samples: analysis.diagnostics.clone(),
        warnings: analysis.warnings.clone(),
        notices: analysis.notices.clone(),
        outputs,
        elapsed_ms,
    }
}

/// Reads the survey, runs [`analyze`], and writes every output file.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let started = Instant::now();
    let observations = ingest::parse_survey_csv(&cfg.input, cfg.years)?;
    let analysis = analyze(&observations, cfg)?;

    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut outputs = output::write_tables(dir, &analysis)?;
    if cfg.figures {
        outputs.extend(figures::write_figures(dir, &analysis.table, &analysis.meta, &analysis.chains, cfg.market_size_mm)?);
    }
    outputs.push("manifest.json".to_string());

    let m = manifest(&analysis, cfg, outputs, started.elapsed().as_millis());
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&m)?;
    std::fs::write(&path, json).map_err(|e| PipelineError::io(&path, e))?;
    Ok(m)
}

/// Redraws the figures of a finished run from its components.csv.
pub fn rebuild_figures(dir: &Path, market_size_mm: f64) -> Result<Vec<String>, PipelineError> {
    let path = dir.join("components.csv");
    let file = std::fs::File::open(&path).map_err(|e| PipelineError::io(&path, e))?;
    let (table, meta) = output::read_components(std::io::BufReader::new(file))
        .map_err(|e| PipelineError::io(&path, std::io::Error::other(e.to_string())))?;
    let chains = cohort::cohort_summary(&table);
    figures::write_figures(dir, &table, &meta, &chains, market_size_mm)
}
