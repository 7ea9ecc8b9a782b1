//! Convergence studies over a mesh hierarchy and a list of degrees.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use hdivproj::best_approx::error_report;
use hdivproj::fields::{FieldSpec, VectorField};
use hdivproj::projector::{project_hdiv, projector_report};
use hdivproj::space::{random_conforming, RtnSpace};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::StudyConfig;
use crate::rates::{fit_rate, FitMode, RateFit};

/// Column order of the study CSV.
pub const CSV_COLUMNS: [&str; 13] = [
    "level",
    "h_max",
    "p",
    "E_glob_l2",
    "E_glob",
    "sum_Eloc_l2",
    "sum_Eloc",
    "ratio_glob_over_loc",
    "ratio_loc_over_glob",
    "proj_err",
    "commute_res",
    "stability_C",
    "notes",
];

/// Written in place of a ratio whose numerator and denominator both vanish.
pub const EXACT: &str = "exact";

/// The catalog field, or a seeded random member of `space`'s degree-`d` sibling.
pub fn resolve_field(spec: &FieldSpec, space: &Arc<RtnSpace>) -> Result<Box<dyn VectorField>> {
    if let Some(f) = spec.analytic()? {
        return Ok(Box::new(f));
    }
    let FieldSpec::RandomRtn { degree, seed } = *spec else {
        unreachable!("every non-analytic catalog entry is a random discrete field")
    };
    let sample_space = if degree == space.degree() {
        space.clone()
    } else {
        RtnSpace::new(space.mesh().clone(), degree)?
    };
    Ok(Box::new(random_conforming(sample_space, seed).with_name(&spec.to_string())))
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub level: usize,
    pub h_max: f64,
    pub p: usize,
    pub e_glob_l2: f64,
    pub e_glob: f64,
    pub sum_eloc_l2: f64,
    pub sum_eloc: f64,
    pub ratio_glob_over_loc: Option<f64>,
    pub ratio_loc_over_glob: Option<f64>,
    pub proj_err: f64,
    pub commute_res: f64,
    pub stability_c: f64,
    /// Weighted divergence part of `E_glob`, kept for the summary only.
    #[serde(skip)]
    pub div_part: f64,
    pub notes: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitEntry {
    pub p: usize,
    /// `min(s, p + 1)`.
    pub expected: f64,
    pub tol: f64,
    /// Fit over the last three levels; `None` with fewer levels or exact data.
    pub fit: Option<RateFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub version: &'static str,
    pub unix_time: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub config: StudyConfig,
    pub field: String,
    pub num_rows: usize,
    pub fits: Vec<FitEntry>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
    pub metadata: Metadata,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub rows: Vec<StudyRow>,
    pub summary: StudySummary,
}

fn run_case(cfg: &StudyConfig, spec: &FieldSpec, mesh: &Arc<hdivproj::mesh::Mesh>, level: usize, p: usize) -> Result<StudyRow> {
    let policy = cfg.policy();
    let space = RtnSpace::new(mesh.clone(), p)?;
    let field = resolve_field(spec, &space)?;
    let report = error_report(&*field, &space, &policy, false)
        .with_context(|| format!("best approximation at level {level}, p = {p}"))?;
    let proj = project_hdiv(&*field, &space, cfg.variant, &policy)
        .with_context(|| format!("projection at level {level}, p = {p}"))?;
    let prep = projector_report(&*field, &proj, &policy)?;
    let mut notes = Vec::new();
    if report.ratio_glob_over_loc.is_none() {
        notes.push(EXACT.to_string());
    }
    let nwarn = report.warnings.len() + proj.warnings.len() + prep.warnings.len();
    if nwarn > 0 {
        notes.push(format!("quadrature_warnings={nwarn}"));
    }
    Ok(StudyRow {
        level,
        h_max: mesh.h_max(),
        p,
        e_glob_l2: report.eglob_l2,
        e_glob: report.eglob,
        sum_eloc_l2: report.sum_eloc_l2,
        sum_eloc: report.sum_eloc,
        ratio_glob_over_loc: report.ratio_glob_over_loc,
        ratio_loc_over_glob: report.ratio_loc_over_glob,
        proj_err: prep.proj_err,
        commute_res: proj.commute_rel,
        stability_c: prep.max_stab_const,
        div_part: report.div_part.max(report.div_part_measured),
        notes: notes.join(";"),
    })
}

/// Runs every (level, p) case and evaluates the study assertions.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let spec = cfg.field_spec()?;
    let meshes = cfg.meshes()?;
    let cases: Vec<(usize, usize)> = (0..meshes.len())
        .flat_map(|l| cfg.p.iter().map(move |&p| (l, p)))
        .collect();
    let rows = cases
        .par_iter()
        .map(|&(l, p)| run_case(cfg, &spec, &meshes[l], l, p))
        .collect::<Result<Vec<_>>>()?;
    let regularity = match &spec {
        FieldSpec::RandomRtn { .. } => f64::INFINITY,
        other => other.analytic()?.map_or(f64::INFINITY, |f| f.info().regularity),
    };
    let divergence_free = spec.analytic()?.is_some_and(|f| f.info().divergence_free);
    let discrete_degree = match spec {
        FieldSpec::RandomRtn { degree, .. } => Some(degree),
        _ => None,
    };
    let (fits, assertions) = assess(cfg, &rows, regularity, divergence_free, discrete_degree)?;
    let passed = assertions.iter().all(|a| a.passed);
    let summary = StudySummary {
        config: cfg.clone(),
        field: spec.to_string(),
        num_rows: rows.len(),
        fits,
        assertions,
        passed,
        metadata: Metadata {
            version: env!("CARGO_PKG_VERSION"),
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            threads: rayon::current_num_threads(),
        },
    };
    Ok(StudyOutput { rows, summary })
}

fn assess(
    cfg: &StudyConfig,
    rows: &[StudyRow],
    regularity: f64,
    divergence_free: bool,
    discrete_degree: Option<usize>,
) -> Result<(Vec<FitEntry>, Vec<Assertion>)> {
    let mut out = Vec::new();
    let mut push = |name: String, measured: f64, bound: f64, passed: bool, detail: String| {
        out.push(Assertion { name, passed, measured, bound, detail })
    };
    let min_ratio = rows.iter().filter_map(|r| r.ratio_glob_over_loc).fold(f64::INFINITY, f64::min);
    push(
        "ordering E_glob^2 >= sum E_loc^2".into(),
        min_ratio,
        1.0 - 1e-9,
        min_ratio >= 1.0 - 1e-9,
        "smallest E_glob^2 / sum E_loc^2".into(),
    );
    let commute = rows.iter().map(|r| r.commute_res).fold(0.0, f64::max);
    push("commuting".into(), commute, 1e-10, commute <= 1e-10, "largest relative residual".into());
    if divergence_free {
        let div = rows.iter().map(|r| r.div_part).fold(0.0, f64::max);
        push(
            "divergence part of E_glob vanishes".into(),
            div,
            1e-12,
            div <= 1e-12,
            "divergence-free field".into(),
        );
    }
    let mut fits = Vec::new();
    for &p in &cfg.p {
        let mine: Vec<&StudyRow> = rows.iter().filter(|r| r.p == p).collect();
        if discrete_degree.is_some_and(|d| p >= d) {
            let worst = mine
                .iter()
                .map(|r| r.e_glob.max(r.sum_eloc).max(r.proj_err))
                .fold(0.0, f64::max);
            let sentinel = mine.iter().all(|r| r.ratio_glob_over_loc.is_none());
            push(
                format!("p={p}: discrete field reproduced"),
                worst,
                1e-9,
                worst <= 1e-9 && sentinel,
                "largest error column; ratios must be exact".into(),
            );
            continue;
        }
        let ratios: Vec<f64> = mine.iter().filter_map(|r| r.ratio_glob_over_loc).collect();
        if ratios.len() >= 2 {
            let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
            push(
                format!("p={p}: E_glob^2 / sum E_loc^2 varies at most 2x"),
                hi / lo,
                2.0,
                hi.is_finite() && hi / lo <= 2.0,
                format!("range [{lo:.4}, {hi:.4}]"),
            );
        }
        let expected = regularity.min((p + 1) as f64);
        let tol = cfg.tol.unwrap_or(if regularity.is_finite() { 0.15 } else { 0.1 });
        let fit = if mine.len() >= 3 {
            let last = &mine[mine.len() - 3..];
            let e: Vec<f64> = last.iter().map(|r| r.e_glob).collect();
            let h: Vec<f64> = last.iter().map(|r| r.h_max).collect();
            fit_rate(&e, &h, FitMode::HSlope).ok()
        } else {
            None
        };
        if let Some(f) = &fit {
            push(
                format!("p={p}: h-slope of E_glob"),
                f.slope,
                expected,
                (f.slope - expected).abs() <= tol,
                format!("expected {expected:.4} +- {tol}"),
            );
        }
        fits.push(FitEntry { p, expected, tol, fit });
    }
    Ok((fits, out))
}

fn fmt_float(x: f64) -> String {
    format!("{x:.10e}")
}

/// The CSV text of `rows`; identical inputs give identical bytes.
pub fn csv_string(rows: &[StudyRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    let ratio = |r: Option<f64>| r.map_or_else(|| EXACT.to_string(), fmt_float);
    for r in rows {
        w.write_record([
            r.level.to_string(),
            fmt_float(r.h_max),
            r.p.to_string(),
            fmt_float(r.e_glob_l2),
            fmt_float(r.e_glob),
            fmt_float(r.sum_eloc_l2),
            fmt_float(r.sum_eloc),
            ratio(r.ratio_glob_over_loc),
            ratio(r.ratio_loc_over_glob),
            fmt_float(r.proj_err),
            fmt_float(r.commute_res),
            fmt_float(r.stability_c),
            r.notes.clone(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Writes `study.csv` and `summary.json` into `dir`.
pub fn write_outputs(out: &StudyOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("study.csv"), csv_string(&out.rows)?)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)? + "\n")?;
    Ok(())
}

/// Human-readable assertion list.
pub fn render_assertions(summary: &StudySummary) -> String {
    let mut s = String::new();
    for a in &summary.assertions {
        let status = if a.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{status} {}: {:.6e} (bound {:.6e}; {})", a.name, a.measured, a.bound, a.detail);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(field: &str, p: Vec<usize>, refinements: usize) -> StudyConfig {
        StudyConfig {
            field: field.into(),
            p,
            refinements,
            ..Default::default()
        }
    }

    #[test]
    fn csv_has_fixed_columns() {
        let out = run_study(&cfg("cubic", vec![0, 1], 2)).unwrap();
        let text = csv_string(&out.rows).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.count(), 4);
        assert_eq!(out.rows.iter().map(|r| (r.level, r.p)).collect::<Vec<_>>(), [(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn random_fields_are_reproduced_exactly() {
        let out = run_study(&cfg("random_rtn:1:4", vec![1, 2], 2)).unwrap();
        assert!(out.summary.passed, "{}", render_assertions(&out.summary));
        let text = csv_string(&out.rows).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[7], EXACT);
            assert_eq!(cols[8], EXACT);
        }
    }

    #[test]
    fn smooth_rates_are_detected() {
        let cfg = StudyConfig {
            mesh: "structured:4".into(),
            ..cfg("sine_divfree", vec![1], 3)
        };
        let out = run_study(&cfg).unwrap();
        let fit = out.summary.fits[0].fit.as_ref().unwrap();
        assert!((fit.slope - 2.0).abs() < 0.1, "{}", fit.slope);
        assert!(out.summary.passed, "{}", render_assertions(&out.summary));
    }
}
