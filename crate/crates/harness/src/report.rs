//! Experiment reports: JSON persistence, CSV series emission, and atomic
//! writes (temp-then-rename, so an interrupted run never leaves a partial
//! file at the final path).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub description: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

/// Serializable record of one experiment run. Re-running the same config
/// reproduces every field except `wall_clock_ms` byte-for-byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub kind: String,
    pub master_seed: u64,
    /// Exact derived seeds/keys needed to reproduce sub-computations.
    pub derived_seeds: BTreeMap<String, u64>,
    pub config: ExperimentConfig,
    pub wall_clock_ms: u64,
    pub metrics: BTreeMap<String, f64>,
    pub criteria: Vec<CriterionResult>,
    pub series: Vec<Series>,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        ExperimentReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: config.kind.clone(),
            master_seed: config.master_seed,
            derived_seeds: BTreeMap::new(),
            config: config.clone(),
            wall_clock_ms: 0,
            metrics: BTreeMap::new(),
            criteria: Vec::new(),
            series: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn push_criterion(
        &mut self,
        name: &str,
        description: &str,
        value: f64,
        threshold: f64,
        pass: bool,
    ) {
        self.criteria.push(CriterionResult {
            name: name.to_string(),
            description: description.to_string(),
            value,
            threshold,
            pass,
        });
    }

    pub fn set_metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with the timing field normalized, for byte-level reproducibility
    /// comparisons.
    pub fn to_json_without_timing(&self) -> String {
        let mut clone = self.clone();
        clone.wall_clock_ms = 0;
        clone.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Atomically persist the JSON report.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// Write via a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| HarnessError::io(parent.display().to_string(), e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path.display().to_string(), e))?;
    Ok(())
}

/// Emit one long-format CSV per series: columns `series,x,y,lo,hi` in that
/// order. Fails (creating nothing) when the report carries no series.
pub fn emit_plot_data(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.series.is_empty() {
        return Err(HarnessError::Config(
            "report has no series to plot".into(),
        ));
    }
    let mut written = Vec::new();
    for series in &report.series {
        let mut csv = String::from("series,x,y,lo,hi\n");
        for p in &series.points {
            let fmt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                series.name,
                p.x,
                p.y,
                fmt(p.lo),
                fmt(p.hi)
            ));
        }
        let path = out_dir.join(format!("{}_{}.csv", report.kind, series.name));
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> ExperimentReport {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
kind = "invariants"
master_seed = 3
[environment]
name = "constant"
value = 0.75
ellipticity = 0.25
"#,
        )
        .unwrap();
        let mut rep = ExperimentReport::new(&cfg);
        rep.series.push(Series {
            name: "demo".into(),
            points: vec![
                SeriesPoint { x: 1.0, y: 2.0, lo: Some(1.5), hi: Some(2.5) },
                SeriesPoint { x: 2.0, y: 3.0, lo: None, hi: None },
                SeriesPoint { x: 3.0, y: 4.0, lo: Some(3.5), hi: Some(4.5) },
            ],
        });
        rep
    }

    #[test]
    fn json_roundtrip_and_timing_normalization() {
        let mut rep = sample_report();
        rep.wall_clock_ms = 1234;
        let back = ExperimentReport::from_json(&rep.to_json()).unwrap();
        assert_eq!(back.wall_clock_ms, 1234);
        let mut other = rep.clone();
        other.wall_clock_ms = 9999;
        assert_eq!(rep.to_json_without_timing(), other.to_json_without_timing());
        assert_ne!(rep.to_json(), other.to_json());
    }

    #[test]
    fn plot_emission_layout() {
        let rep = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&rep, dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let text = fs::read_to_string(&files[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "series,x,y,lo,hi");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("demo,1,2,1.5,2.5"));
        assert_eq!(lines[2], "demo,2,3,,");
    }

    #[test]
    fn empty_series_is_an_error_and_writes_nothing() {
        let mut rep = sample_report();
        rep.series.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(&rep, dir.path()).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/report.json");
        sample_report().write(&path).unwrap();
        assert!(path.exists());
        assert!(!path.with_extension("tmp").exists());
    }
}
