//! CSV trajectories and the JSON run summary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A named numeric table written as CSV with a header row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.to_owned(), columns: columns.iter().map(|c| (*c).to_owned()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| format!("{x:e}")))?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// One embedded pass/fail check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_owned(),
            passed: value <= threshold,
            value,
            threshold,
            detail: format!("{value:.6e} <= {threshold:.3e}"),
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_owned(),
            passed: value >= threshold,
            value,
            threshold,
            detail: format!("{value:.6e} >= {threshold:.3e}"),
        }
    }

    pub fn within(name: &str, value: f64, low: f64, high: f64) -> Self {
        Self {
            name: name.to_owned(),
            passed: (low..=high).contains(&value),
            value,
            threshold: high,
            detail: format!("{value:.6} in [{low}, {high}]"),
        }
    }

    pub fn holds(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            value: f64::from(u8::from(passed)),
            threshold: 1.0,
            detail: detail.into(),
        }
    }
}

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub parameters: Value,
    pub files: Vec<String>,
    pub elapsed_seconds: f64,
}

impl Summary {
    pub fn new(scenario: &str, seed: u64, parameters: Value, checks: Vec<Check>) -> Self {
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            scenario: scenario.to_owned(),
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
            parameters,
            files: Vec::new(),
            elapsed_seconds: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("summary.json");
        let value = serde_json::to_value(self)?;
        validate_summary(&value)?;
        fs::write(&path, serde_json::to_string_pretty(&value)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Checks a parsed summary against the fixed schema: every key present with
/// the right JSON type, and `passed` consistent with the checks.
pub fn validate_summary(v: &Value) -> Result<()> {
    let obj = v.as_object().context("summary is not an object")?;
    let field = |k: &str| obj.get(k).with_context(|| format!("summary lacks `{k}`"));
    if field("schema_version")?.as_u64() != Some(u64::from(SUMMARY_SCHEMA_VERSION)) {
        bail!("unsupported schema_version");
    }
    field("scenario")?.as_str().context("`scenario` is not a string")?;
    field("seed")?.as_u64().context("`seed` is not an unsigned integer")?;
    let passed = field("passed")?.as_bool().context("`passed` is not a boolean")?;
    field("parameters")?.as_object().context("`parameters` is not an object")?;
    field("elapsed_seconds")?.as_f64().context("`elapsed_seconds` is not a number")?;
    for f in field("files")?.as_array().context("`files` is not an array")? {
        f.as_str().context("file entry is not a string")?;
    }
    let checks = field("checks")?.as_array().context("`checks` is not an array")?;
    let mut all = true;
    for c in checks {
        let c = c.as_object().context("check is not an object")?;
        for k in ["name", "detail"] {
            c.get(k).and_then(Value::as_str).with_context(|| format!("check lacks string `{k}`"))?;
        }
        // non-finite values serialize as null
        for k in ["value", "threshold"] {
            let x = c.get(k).with_context(|| format!("check lacks `{k}`"))?;
            if !(x.is_number() || x.is_null()) {
                bail!("check `{k}` is not a number");
            }
        }
        all &= c.get("passed").and_then(Value::as_bool).context("check lacks boolean `passed`")?;
    }
    if all != passed {
        bail!("`passed` disagrees with the checks");
    }
    Ok(())
}
