//! Static SVG figures, three per reef.
//!
//! Every plotted component is drawn as exactly one element carrying
//! `class="marker"`, so figures can be checked by counting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::age::AgedComponent;
use crate::cohort::{CohortChain, ComponentTable};
use crate::ingest::{ReefKey, SampleKey};
use crate::pipeline::{PipelineError, SampleMeta};

pub const LARGE_PANEL: &str = "#dcefd6";
pub const SMALL_PANEL: &str = "#f7d4de";
pub const YOUNG_DOT: &str = "#2e9e44";
pub const OLD_DOT: &str = "#f28c1b";
pub const MIDPOINT_RULE: &str = "#d62728";

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear map from data to pixel coordinates.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Axis { lo, hi, px_lo, px_hi }
    }

    fn px(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn open(svg: &mut String, title: &str) {
    let _ = write!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="10">
<title>{}</title>
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>
"#,
        esc(title)
    );
}

fn year_span(rows: &[&AgedComponent]) -> (i32, i32) {
    let first = rows.iter().map(|r| r.key.year).min().unwrap_or(0);
    let last = rows.iter().map(|r| r.key.year).max().unwrap_or(first);
    (first, last)
}

fn year_ticks(svg: &mut String, x: &Axis, first: i32, last: i32) {
    for year in first..=last {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{year}</text>"#,
            x.px(year as f64),
            HEIGHT - MARGIN + 15.0
        );
    }
}

/// Length trajectories: mean and sd per component, chain lines, market rule.
pub fn trajectory_svg(
    reef: &ReefKey,
    rows: &[&AgedComponent],
    meta: &BTreeMap<SampleKey, SampleMeta>,
    chains: &[&CohortChain],
    market_size_mm: f64,
) -> String {
    let (first, last) = year_span(rows);
    let y_hi = rows
        .iter()
        .map(|r| r.mean_mm + r.sd_mm)
        .fold(market_size_mm, f64::max)
        * 1.05;
    let x = Axis::new(first as f64 - 0.5, last as f64 + 0.5, MARGIN, WIDTH - MARGIN);
    let y = Axis::new(0.0, y_hi, HEIGHT - MARGIN, MARGIN);
    let mut svg = String::new();
    open(&mut svg, &format!("{reef} cohort trajectories"));

    let panel_w = x.px(1.0) - x.px(0.0);
    for year in first..=last {
        let key = SampleKey::new(&reef.stratum_id, &reef.reef_id, year);
        let Some(m) = meta.get(&key) else { continue };
        let small = m.flag_live_small || m.g_selected.is_none();
        let _ = writeln!(
            svg,
            r#"<rect class="panel" data-year="{year}" data-small="{small}" x="{:.2}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="{}" stroke="white"/>"#,
            x.px(year as f64 - 0.5),
            panel_w,
            HEIGHT - 2.0 * MARGIN,
            if small { SMALL_PANEL } else { LARGE_PANEL }
        );
        if m.flag_spat_small {
            let _ = writeln!(
                svg,
                r#"<text class="spat-flag" data-year="{year}" x="{:.2}" y="{:.2}" text-anchor="middle" font-size="16">*</text>"#,
                x.px(year as f64),
                MARGIN + 14.0
            );
        }
    }

    let _ = writeln!(
        svg,
        r#"<line class="market-size" data-y="{market_size_mm}" x1="{MARGIN}" x2="{:.2}" y1="{y0:.2}" y2="{y0:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
        WIDTH - MARGIN,
        y0 = y.px(market_size_mm)
    );

    for c in chains.iter().filter(|c| c.members.len() > 1) {
        let points: Vec<String> = c
            .members
            .iter()
            .map(|m| format!("{:.2},{:.2}", x.px(m.year as f64), y.px(m.mean_mm)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="chain" data-cohort="{}" points="{}" fill="none" stroke="gray"/>"#,
            esc(&c.label),
            points.join(" ")
        );
    }

    for r in rows {
        let cx = x.px(r.key.year as f64);
        let _ = writeln!(
            svg,
            r#"<line class="error-bar" x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
            y.px((r.mean_mm - r.sd_mm).max(0.0)),
            y.px(r.mean_mm + r.sd_mm)
        );
        let _ = writeln!(
            svg,
            r#"<circle class="marker" data-year="{}" data-mean="{}" data-age="{}" cx="{cx:.2}" cy="{:.2}" r="3" fill="black"/>"#,
            r.key.year,
            r.mean_mm,
            r.age.map_or("NA".to_string(), |a| a.to_string()),
            y.px(r.mean_mm)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            cx + 5.0,
            y.px(r.mean_mm) + 3.0,
            r.age.map_or("NA".to_string(), |a| a.to_string())
        );
    }
    year_ticks(&mut svg, &x, first, last);
    svg.push_str("</svg>\n");
    svg
}

/// Estimated ages by year; young ages green, older orange, midpoint rule red.
pub fn agedots_svg(reef: &ReefKey, rows: &[&AgedComponent]) -> String {
    let aged: Vec<&&AgedComponent> = rows.iter().filter(|r| r.age.is_some()).collect();
    let (first, last) = year_span(rows);
    let max_age = aged.iter().filter_map(|r| r.age).max().unwrap_or(1);
    let x = Axis::new(first as f64 - 0.5, last as f64 + 0.5, MARGIN, WIDTH - MARGIN);
    let y = Axis::new(0.5, max_age as f64 + 0.5, HEIGHT - MARGIN, MARGIN);
    let mut svg = String::new();
    open(&mut svg, &format!("{reef} age structure"));

    let mid = (first as f64 + last as f64) / 2.0;
    let _ = writeln!(
        svg,
        r#"<line class="midpoint" data-x="{mid}" x1="{px:.2}" x2="{px:.2}" y1="{MARGIN}" y2="{:.2}" stroke="{MIDPOINT_RULE}"/>"#,
        HEIGHT - MARGIN,
        px = x.px(mid)
    );
    for r in &aged {
        let age = r.age.unwrap_or_default();
        let _ = writeln!(
            svg,
            r#"<circle class="marker" data-year="{}" data-age="{age}" cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
            r.key.year,
            x.px(r.key.year as f64),
            y.px(age as f64),
            if age <= 3 { YOUNG_DOT } else { OLD_DOT }
        );
    }
    for age in 1..=max_age {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{age}</text>"#, MARGIN - 6.0, y.px(age as f64) + 3.0);
    }
    year_ticks(&mut svg, &x, first, last);
    svg.push_str("</svg>\n");
    svg
}

const DECADE_COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];

fn decade_color(year: i32) -> &'static str {
    DECADE_COLORS[(year.div_euclid(10)).rem_euclid(DECADE_COLORS.len() as i32) as usize]
}

/// One density curve per aged component, in a band per age, colored by decade.
pub fn decades_svg(reef: &ReefKey, rows: &[&AgedComponent]) -> String {
    let aged: Vec<&&AgedComponent> = rows.iter().filter(|r| r.age.is_some() && r.sd_mm > 0.0).collect();
    let ages: Vec<u32> = {
        let mut a: Vec<u32> = aged.iter().filter_map(|r| r.age).collect();
        a.sort_unstable();
        a.dedup();
        a
    };
    let x_hi = aged.iter().map(|r| r.mean_mm + 3.0 * r.sd_mm).fold(1.0, f64::max);
    let x = Axis::new(0.0, x_hi, MARGIN, WIDTH - MARGIN);
    let band = (HEIGHT - 2.0 * MARGIN) / ages.len().max(1) as f64;
    let mut svg = String::new();
    open(&mut svg, &format!("{reef} length distributions by age and decade"));

    for (i, age) in ages.iter().enumerate() {
        let base = MARGIN + band * (i as f64 + 1.0);
        let members: Vec<&&&AgedComponent> = aged.iter().filter(|r| r.age == Some(*age)).collect();
        let peak = members.iter().map(|r| 1.0 / r.sd_mm).fold(0.0, f64::max);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">age {age}</text>"#, MARGIN + 4.0, base - band + 12.0);
        for r in members {
            let mut d = String::new();
            for step in 0..=80 {
                let v = (r.mean_mm - 3.0 * r.sd_mm) + 6.0 * r.sd_mm * step as f64 / 80.0;
                let z = (v - r.mean_mm) / r.sd_mm;
                let h = (-0.5 * z * z).exp() / r.sd_mm / peak * (band - 14.0);
                let _ = write!(d, "{}{:.2},{:.2} ", if step == 0 { 'M' } else { 'L' }, x.px(v), base - h);
            }
            let _ = writeln!(
                svg,
                r#"<path class="marker" data-year="{}" data-age="{age}" d="{}" fill="none" stroke="{}" stroke-opacity="0.7"/>"#,
                r.key.year,
                d.trim_end(),
                decade_color(r.key.year)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the three figures for every reef in `table`.
pub fn write_figures(
    dir: &Path,
    table: &ComponentTable,
    meta: &BTreeMap<SampleKey, SampleMeta>,
    chains: &[CohortChain],
    market_size_mm: f64,
) -> Result<Vec<String>, PipelineError> {
    let mut reefs: BTreeMap<ReefKey, Vec<&AgedComponent>> = BTreeMap::new();
    for r in table.rows() {
        reefs.entry(r.key.reef()).or_default().push(r);
    }
    let mut written = Vec::new();
    for (reef, rows) in &reefs {
        let reef_chains: Vec<&CohortChain> = chains.iter().filter(|c| &c.reef == reef).collect();
        let stem = format!("{}_{}", reef.stratum_id, reef.reef_id);
        let docs = [
            (format!("{stem}_trajectory.svg"), trajectory_svg(reef, rows, meta, &reef_chains, market_size_mm)),
            (format!("{stem}_agedots.svg"), agedots_svg(reef, rows)),
            (format!("{stem}_decades.svg"), decades_svg(reef, rows)),
        ];
        for (name, body) in docs {
            let path = dir.join(&name);
            std::fs::write(&path, body).map_err(|e| PipelineError::io(&path, e))?;
            written.push(name);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<AgedComponent> {
        let mut out = Vec::new();
        for (year, ages) in [(2010, vec![1, 2, 3]), (2011, vec![1, 2, 4])] {
            for a in ages {
                let key = SampleKey::new("J", "331", year);
                let mut c = if a == 1 {
                    AgedComponent::spat(key, 25.0, 4.0, 0.2)
                } else {
                    AgedComponent::live(key, 20.0 + 18.0 * a as f64, 5.0, 0.4, 0.3)
                };
                c.age = Some(a);
                out.push(c);
            }
        }
        out
    }

    fn count(svg: &str, needle: &str) -> usize {
        svg.matches(needle).count()
    }

    #[test]
    fn one_marker_per_component() {
        let rows = rows();
        let refs: Vec<&AgedComponent> = rows.iter().collect();
        let reef = ReefKey { stratum_id: "J".into(), reef_id: "331".into() };
        let t = trajectory_svg(&reef, &refs, &BTreeMap::new(), &[], 76.0);
        assert_eq!(count(&t, r#"class="marker""#), 6);
        assert!(t.contains(r#"data-y="76""#));
        let a = agedots_svg(&reef, &refs);
        assert_eq!(count(&a, r#"class="marker""#), 6);
        assert_eq!(count(&a, OLD_DOT), 1);
        assert!(a.contains(r#"data-x="2010.5""#));
        let d = decades_svg(&reef, &refs);
        assert_eq!(count(&d, r#"class="marker""#), 6);
    }

    #[test]
    fn panel_encoding() {
        let rows = rows();
        let refs: Vec<&AgedComponent> = rows.iter().collect();
        let reef = ReefKey { stratum_id: "J".into(), reef_id: "331".into() };
        let small = SampleMeta {
            flag_live_small: true,
            flag_spat_small: true,
            family: None,
            g_selected: Some(2),
            converged: Some(true),
        };
        let large = SampleMeta { flag_live_small: false, flag_spat_small: false, ..small };
        let meta = BTreeMap::from([
            (SampleKey::new("J", "331", 2010), small),
            (SampleKey::new("J", "331", 2011), large),
        ]);
        let t = trajectory_svg(&reef, &refs, &meta, &[], 76.0);
        assert_eq!(count(&t, SMALL_PANEL), 1);
        assert_eq!(count(&t, LARGE_PANEL), 1);
        assert_eq!(count(&t, r#"class="spat-flag""#), 1);
    }

    #[test]
    fn decade_colors_differ() {
        assert_ne!(decade_color(2009), decade_color(2010));
        assert_eq!(decade_color(2010), decade_color(2019));
    }
}
