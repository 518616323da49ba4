//! Flat `key = value` analysis report and run comparison.

use std::fmt::Write as _;

use crate::error::{config_err, Error, Result};

/// Ordered key/value report. Uncertainties use the `<key>_err` convention.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        let mut r = Self::default();
        r.set("experiment", experiment);
        r
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_measure(&mut self, key: &str, value: f64, err: f64) {
        self.set(key, value);
        self.set(&format!("{key}_err"), err);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn experiment(&self) -> Option<&str> {
        self.get("experiment")
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("report line {} has no '='", n + 1)))?;
            r.set(k.trim(), v.trim());
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub key: String,
    pub a: f64,
    pub a_err: f64,
    pub b: f64,
    pub b_err: f64,
    pub delta: f64,
    pub joint_sigma: f64,
    pub consistent: bool,
}

/// Verdict threshold in joint standard deviations.
pub const CONSISTENCY_SIGMAS: f64 = 2.0;

/// Pairs up every numeric quantity present in both reports.
pub fn compare_reports(a: &Report, b: &Report) -> Result<Vec<ComparisonRow>> {
    match (a.experiment(), b.experiment()) {
        (Some(x), Some(y)) if x == y => {}
        (x, y) => {
            return Err(config_err(format!(
                "cannot compare runs of different experiments ({} vs {})",
                x.unwrap_or("?"),
                y.unwrap_or("?")
            )))
        }
    }
    let mut rows = Vec::new();
    for (key, _) in a.entries() {
        if key.ends_with("_err") {
            continue;
        }
        let (Some(va), Some(vb)) = (a.get_f64(key), b.get_f64(key)) else {
            continue;
        };
        let err_key = format!("{key}_err");
        let ea = a.get_f64(&err_key).unwrap_or(0.0);
        let eb = b.get_f64(&err_key).unwrap_or(0.0);
        let delta = vb - va;
        let joint_sigma = (ea * ea + eb * eb).sqrt();
        let consistent = if joint_sigma > 0.0 {
            delta.abs() < CONSISTENCY_SIGMAS * joint_sigma
        } else {
            delta == 0.0
        };
        rows.push(ComparisonRow {
            key: key.clone(),
            a: va,
            a_err: ea,
            b: vb,
            b_err: eb,
            delta,
            joint_sigma,
            consistent,
        });
    }
    Ok(rows)
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("quantity,a,a_err,b,b_err,delta,joint_sigma,verdict\n");
    for r in rows {
        let verdict = if r.consistent { "consistent" } else { "inconsistent" };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{verdict}",
            r.key, r.a, r.a_err, r.b, r.b_err, r.delta, r.joint_sigma
        );
    }
    out
}
