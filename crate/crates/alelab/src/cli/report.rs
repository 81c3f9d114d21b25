//! Run reports: per-criterion checks, tables and fits, serialized with sorted keys.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const SCHEMA: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    AtMost { limit: f64 },
    AtLeast { limit: f64 },
    Within { target: f64, tol: f64 },
    /// A yes/no property; `value` is 1 when it holds.
    Holds,
}

impl Bound {
    pub fn admits(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost { limit } => v <= limit,
            Bound::AtLeast { limit } => v >= limit,
            Bound::Within { target, tol } => (v - target).abs() <= tol,
            Bound::Holds => v == 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound) -> Self {
        Check { name: name.into(), value, pass: bound.admits(value), bound }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Check::new(name, if ok { 1.0 } else { 0.0 }, Bound::Holds)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    /// Criterion number in the acceptance list.
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
    /// Set when the experiment behind the criterion failed to run.
    pub error: Option<String>,
    pub pass: bool,
}

impl CriterionResult {
    pub fn new(id: u32, title: impl Into<String>, checks: Vec<Check>) -> Self {
        let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
        CriterionResult { id, title: title.into(), checks, error: None, pass }
    }

    pub fn failed(id: u32, title: impl Into<String>, err: &Error) -> Self {
        CriterionResult { id, title: title.into(), checks: Vec::new(), error: Some(err.to_string()), pass: false }
    }

    /// One line for terminals and logs.
    pub fn line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        let detail = match &self.error {
            Some(e) => e.clone(),
            None => self.checks.iter().map(|c| format!("{}={:.4e}", c.name, c.value)).collect::<Vec<_>>().join(" "),
        };
        format!("criterion {:>2} {status} {}: {detail}", self.id, self.title)
    }
}

/// Everything an experiment produced, before serialization.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub criteria: Vec<CriterionResult>,
    pub fits: BTreeMap<String, Value>,
    pub tables: BTreeMap<String, Value>,
    pub refinement: BTreeMap<String, Value>,
    /// CSV artifacts as `(file name, body)`; the body starts with its header row.
    pub files: Vec<(String, String)>,
}

impl Outcome {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub version: String,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    pub all_pass: bool,
    pub fits: BTreeMap<String, Value>,
    pub tables: BTreeMap<String, Value>,
    pub refinement: BTreeMap<String, Value>,
}

impl RunReport {
    pub fn new(experiment: &str, config_hash: &str, seed: u64, outcome: &Outcome) -> Self {
        RunReport {
            schema: SCHEMA,
            version: VERSION.to_string(),
            experiment: experiment.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            criteria: outcome.criteria.clone(),
            all_pass: outcome.all_pass(),
            fits: outcome.fits.clone(),
            tables: outcome.tables.clone(),
            refinement: outcome.refinement.clone(),
        }
    }

    /// Pretty JSON with every object's keys sorted.
    pub fn to_json(&self) -> Result<String> {
        let v = serde_json::to_value(self).map_err(|e| Error::Io(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

/// Provenance line prepended to every CSV artifact.
pub fn provenance(config_hash: &str) -> String {
    format!("# alelab {VERSION} config {config_hash}\n")
}

/// Write `report.json`, the CSV files and `timing.json` into `dir`.
///
/// Wall-clock time goes to its own file so that `report.json` is a pure function of the config.
pub fn emit_report(dir: &Path, report: &RunReport, files: &[(String, String)], wall_seconds: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    let head = provenance(&report.config_hash);
    for (name, body) in files {
        std::fs::write(dir.join(name), format!("{head}{body}"))?;
    }
    let timing = serde_json::json!({
        "config_hash": report.config_hash,
        "experiment": report.experiment,
        "version": report.version,
        "wall_seconds": wall_seconds,
    });
    std::fs::write(dir.join("timing.json"), format!("{timing:#}\n"))?;
    Ok(())
}

/// Value to JSON without `NaN` surprises: non-finite numbers become `null`.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_valid() {
        let r = RunReport::new("check", "sha256:0", 1, &Outcome::default());
        let v: Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["criteria"].as_array().unwrap().len(), 0);
        assert_eq!(v["all_pass"], true);
    }

    #[test]
    fn bounds() {
        assert!(Check::new("a", -0.9, Bound::AtMost { limit: -0.8 }).pass);
        assert!(!Check::new("a", -0.7, Bound::AtMost { limit: -0.8 }).pass);
        assert!(Check::new("a", -0.45, Bound::Within { target: -0.5, tol: 0.1 }).pass);
        assert!(!Check::new("a", f64::NAN, Bound::AtLeast { limit: 0.0 }).pass);
        assert!(!Check::holds("x", false).pass);
        assert!(!CriterionResult::new(1, "none", Vec::new()).pass);
    }

    #[test]
    fn keys_are_sorted() {
        let mut o = Outcome::default();
        o.tables.insert("zeta".into(), Value::Null);
        o.tables.insert("alpha".into(), Value::Null);
        let s = RunReport::new("x", "h", 0, &o).to_json().unwrap();
        let keys: Vec<usize> = ["\"all_pass\"", "\"config_hash\"", "\"criteria\"", "\"experiment\"", "\"schema\""]
            .iter()
            .map(|k| s.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(s.find("\"alpha\"").unwrap() < s.find("\"zeta\"").unwrap());
    }
}
