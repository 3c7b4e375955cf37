use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use agecohort::ingest::{ShellObservation, Stage, YearRange};
use agecohort::output;
use agecohort::pipeline::{self, Analysis, PipelineConfig, RunManifest, WarningKind};
use agecohort::synth::{self, ScenarioConfig};

const DROPPED_REEF: &str = "103";

/// Three reefs over eight years; reef 103 loses 2006 and so fails eligibility.
fn scenario() -> (ScenarioConfig, Vec<ShellObservation>) {
    let sc = ScenarioConfig {
        reefs: 3,
        years: YearRange::new(2003, 2010),
        recruitment_per_year: 500,
        ..ScenarioConfig::default()
    };
    let (obs, _) = synth::simulate(&sc).unwrap();
    let obs = obs
        .into_iter()
        .filter(|o| !(o.reef_id == DROPPED_REEF && o.year == 2006))
        .collect();
    (sc, obs)
}

struct Run {
    _dir: tempfile::TempDir,
    out: std::path::PathBuf,
    obs: Vec<ShellObservation>,
    cfg: PipelineConfig,
    manifest: RunManifest,
    analysis: Analysis,
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (sc, obs) = scenario();
        let input = dir.path().join("survey.csv");
        agecohort::ingest::write_survey_csv(std::fs::File::create(&input).unwrap(), &obs).unwrap();
        let cfg = PipelineConfig {
            input,
            output_dir: dir.path().join("out"),
            years: sc.years,
            ..PipelineConfig::default()
        };
        let manifest = pipeline::run_pipeline(&cfg).unwrap();
        let parsed = agecohort::ingest::parse_survey_csv(&cfg.input, cfg.years).unwrap();
        let analysis = pipeline::analyze(&parsed, &cfg).unwrap();
        Run { out: cfg.output_dir.clone(), _dir: dir, obs, cfg, manifest, analysis }
    })
}

fn open(dir: &Path, name: &str) -> std::fs::File {
    std::fs::File::open(dir.join(name)).unwrap()
}

#[test]
fn component_rows_equal_fitted_components() {
    let r = run();
    let (table, _) = output::read_components(open(&r.out, "components.csv")).unwrap();
    assert_eq!(table.len(), r.manifest.n_components);
    let fitted: usize = r
        .manifest
        .samples
        .iter()
        .map(|d| d.spat_fit.is_some() as usize + d.g_selected.unwrap_or(0))
        .sum();
    let merged: u32 = table.rows().iter().map(|c| c.pooled_from).sum();
    assert_eq!(merged as usize, fitted);
}

#[test]
fn tables_round_trip_exactly() {
    let r = run();
    let (table, meta) = output::read_components(open(&r.out, "components.csv")).unwrap();
    assert_eq!(table, r.analysis.table);
    assert_eq!(meta, r.analysis.meta);

    let cohorts = output::read_cohorts(open(&r.out, "cohorts.csv")).unwrap();
    let expected: Vec<output::CohortRow> = r.analysis.chains.iter().map(output::CohortRow::from).collect();
    assert_eq!(cohorts, expected);

    let rivers = output::read_river_models(open(&r.out, "rivermodels.csv")).unwrap();
    let expected: Vec<output::RiverRow> = r.analysis.river_models.iter().map(output::RiverRow::from).collect();
    assert_eq!(rivers, expected);
}

#[test]
fn rows_are_sorted_by_sample_then_age() {
    let r = run();
    let rows = r.analysis.table.rows();
    for w in rows.windows(2) {
        assert!(w[0].key <= w[1].key);
        if w[0].key == w[1].key {
            if let (Some(a), Some(b)) = (w[0].age, w[1].age) {
                assert!(a < b);
            }
        }
    }
}

#[test]
fn weights_sum_to_one_when_both_stages_fit() {
    let r = run();
    let mut sums: BTreeMap<_, f64> = BTreeMap::new();
    for c in r.analysis.table.rows() {
        *sums.entry(c.key.clone()).or_default() += c.weight;
    }
    for d in &r.manifest.samples {
        if d.condition.fit_lognormal && d.condition.fit_gmm {
            let total = sums[&d.key];
            assert!((total - 1.0).abs() < 1e-12, "{}: {total}", d.key);
            let n_spat = r.obs.iter().filter(|o| {
                o.reef_id == d.key.reef_id && o.year == d.key.year && o.stage == Stage::Spat
            });
            let pi0 = n_spat.count() as f64 / (d.n_spat + d.n_live) as f64;
            assert!((d.spat_fraction - pi0).abs() < 1e-15);
        }
    }
}

#[test]
fn ineligible_reef_only_feeds_stratum_models() {
    let r = run();
    let reefs: Vec<&str> = r.manifest.eligible_reefs.iter().map(|k| k.reef_id.as_str()).collect();
    assert_eq!(reefs, ["101", "102"]);
    assert!(r.analysis.table.rows().iter().all(|c| c.key.reef_id != DROPPED_REEF));
    let cohorts = output::read_cohorts(open(&r.out, "cohorts.csv")).unwrap();
    assert!(cohorts.iter().all(|c| c.reef_id != DROPPED_REEF));

    // every live length of the stratum-year, including the dropped reef, enters the river fit
    for m in &r.analysis.river_models {
        let live = r.obs.iter().filter(|o| o.year == m.key.year && o.stage == Stage::Live).count();
        assert_eq!(m.fit.n, live, "{}", m.key);
    }
}

#[test]
fn figures_are_well_formed_with_one_marker_per_component() {
    let r = run();
    for reef in ["101", "102"] {
        let rows: Vec<_> = r.analysis.table.rows().iter().filter(|c| c.key.reef_id == reef).collect();
        let aged = rows.iter().filter(|c| c.age.is_some()).count();
        for (suffix, expected) in [("trajectory", rows.len()), ("agedots", aged), ("decades", aged)] {
            let text = std::fs::read_to_string(r.out.join(format!("S1_{reef}_{suffix}.svg"))).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap();
            let markers = doc.descendants().filter(|n| n.attribute("class") == Some("marker")).count();
            assert_eq!(markers, expected, "{reef} {suffix}");
            if suffix == "trajectory" {
                let rule = doc.descendants().find(|n| n.attribute("class") == Some("market-size")).unwrap();
                assert_eq!(rule.attribute("data-y"), Some("76"));
                let panels = doc.descendants().filter(|n| n.attribute("class") == Some("panel")).count();
                assert_eq!(panels, 8);
            }
        }
    }
    assert!(!r.out.join(format!("S1_{DROPPED_REEF}_trajectory.svg")).exists());
}

#[test]
fn manifest_warnings_cite_sample_keys() {
    let r = run();
    assert_eq!(r.manifest.warnings.len(), r.analysis.warnings.len());
    let not_converged = r.manifest.samples.iter().filter(|d| d.converged == Some(false)).count();
    let flagged = r.manifest.warnings.iter().filter(|w| w.kind == WarningKind::NotConverged).count();
    assert_eq!(flagged, not_converged);
    for w in &r.manifest.warnings {
        assert!(r.cfg.years.contains(w.key.year));
        assert!(!w.key.reef_id.is_empty() && !w.key.stratum_id.is_empty());
    }
    let text = std::fs::read_to_string(r.out.join("manifest.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["warnings"].as_array().unwrap().len(), r.manifest.warnings.len());
    assert_eq!(json["config"]["min_run"], 8);
}

#[test]
fn rerun_writes_identical_tables() {
    let r = run();
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { output_dir: dir.path().to_path_buf(), figures: false, ..r.cfg.clone() };
    pipeline::run_pipeline(&cfg).unwrap();
    for f in ["components.csv", "cohorts.csv", "rivermodels.csv"] {
        assert_eq!(std::fs::read(r.out.join(f)).unwrap(), std::fs::read(dir.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn report_redraws_the_same_figures() {
    let r = run();
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(r.out.join("components.csv"), dir.path().join("components.csv")).unwrap();
    let written = pipeline::rebuild_figures(dir.path(), r.cfg.market_size_mm).unwrap();
    assert_eq!(written.len(), 6);
    for name in written {
        assert_eq!(
            std::fs::read_to_string(dir.path().join(&name)).unwrap(),
            std::fs::read_to_string(r.out.join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn no_eligible_reef_still_produces_stratum_models() {
    let (sc, obs) = scenario();
    let cfg = PipelineConfig { years: sc.years, min_run: 20, ..PipelineConfig::default() };
    let a = pipeline::analyze(&obs, &cfg).unwrap();
    assert!(a.eligible.is_empty());
    assert!(a.table.is_empty());
    assert_eq!(a.river_models.len(), 8);
    assert_eq!(a.notices.len(), 1);

    let mut buf = Vec::new();
    output::write_cohorts(&mut buf, &a.chains).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
}

#[test]
fn missing_input_is_an_io_error() {
    let cfg = PipelineConfig { input: "/nonexistent/survey.csv".into(), ..PipelineConfig::default() };
    assert!(matches!(pipeline::run_pipeline(&cfg), Err(pipeline::PipelineError::Ingest(_))));
}
