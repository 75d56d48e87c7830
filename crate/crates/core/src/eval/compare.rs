//! Seed- and fold-averaged method comparison per scenario.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::protocol::ReportRow;
use crate::error::{contract, Result};
use crate::train::Method;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub scenario: String,
    pub method: Method,
    /// Number of (fold, seed) entries averaged.
    pub n: usize,
    pub srcc_mean: f64,
    pub srcc_std: f64,
    pub plcc_mean: f64,
    pub plcc_std: f64,
    /// Mean minus the baseline method's mean; `None` for the baseline.
    pub srcc_delta: Option<f64>,
    pub plcc_delta: Option<f64>,
    /// Highest mean in its scenario (ties all marked).
    pub srcc_best: bool,
    pub plcc_best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: Method,
    pub entries: Vec<MethodSummary>,
}

/// Mean and sample standard deviation (0 for a single entry).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Summarises report rows per scenario and method. Deltas are taken
/// against NoAdapt when present, otherwise against the first method in
/// table order. Every scenario must cover the same methods.
pub fn compare_methods(rows: &[ReportRow]) -> Result<ComparisonTable> {
    let mut by: BTreeMap<&str, BTreeMap<Method, Vec<&ReportRow>>> = BTreeMap::new();
    for r in rows {
        by.entry(r.scenario.as_str())
            .or_default()
            .entry(r.method)
            .or_default()
            .push(r);
    }
    let methods: BTreeSet<Method> = rows.iter().map(|r| r.method).collect();
    if methods.len() < 2 {
        return Err(contract("a comparison needs at least two methods"));
    }
    for (scenario, m) in &by {
        let have: BTreeSet<Method> = m.keys().copied().collect();
        if have != methods {
            return Err(contract(format!(
                "scenario `{scenario}` covers {have:?}, other scenarios cover {methods:?}"
            )));
        }
    }
    let baseline = if methods.contains(&Method::NoAdapt) {
        Method::NoAdapt
    } else {
        *methods.iter().next().expect("non-empty")
    };
    let mut entries = Vec::new();
    for (scenario, m) in &by {
        let mut block: Vec<MethodSummary> = m
            .iter()
            .map(|(&method, rs)| {
                let s: Vec<f64> = rs.iter().map(|r| r.srcc).collect();
                let p: Vec<f64> = rs.iter().map(|r| r.plcc).collect();
                let (srcc_mean, srcc_std) = mean_std(&s);
                let (plcc_mean, plcc_std) = mean_std(&p);
                MethodSummary {
                    scenario: scenario.to_string(),
                    method,
                    n: rs.len(),
                    srcc_mean,
                    srcc_std,
                    plcc_mean,
                    plcc_std,
                    srcc_delta: None,
                    plcc_delta: None,
                    srcc_best: false,
                    plcc_best: false,
                }
            })
            .collect();
        let base = block
            .iter()
            .find(|e| e.method == baseline)
            .cloned()
            .expect("baseline present");
        let best_s = block.iter().map(|e| e.srcc_mean).fold(f64::NEG_INFINITY, f64::max);
        let best_p = block.iter().map(|e| e.plcc_mean).fold(f64::NEG_INFINITY, f64::max);
        for e in &mut block {
            if e.method != baseline {
                e.srcc_delta = Some(e.srcc_mean - base.srcc_mean);
                e.plcc_delta = Some(e.plcc_mean - base.plcc_mean);
            }
            e.srcc_best = e.srcc_mean == best_s;
            e.plcc_best = e.plcc_mean == best_p;
        }
        entries.extend(block);
    }
    Ok(ComparisonTable { baseline, entries })
}

impl ComparisonTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One line per (scenario, method); the baseline is recoverable as the
    /// entry without deltas.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let entries = r
            .deserialize()
            .collect::<std::result::Result<Vec<MethodSummary>, _>>()
            .map_err(|e| contract(format!("bad comparison csv: {e}")))?;
        let baseline = entries
            .iter()
            .find(|e| e.srcc_delta.is_none())
            .map(|e| e.method)
            .ok_or_else(|| contract("comparison csv has no baseline row"))?;
        Ok(Self { baseline, entries })
    }

    /// Markdown table with the best mean of each column in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| scenario | method | SRCC | PLCC | ΔSRCC | ΔPLCC |\n|---|---|---|---|---|---|\n");
        let cell = |m: f64, s: f64, best: bool| {
            let v = format!("{m:.4} ± {s:.4}");
            if best {
                format!("**{v}**")
            } else {
                v
            }
        };
        let delta = |d: Option<f64>| d.map_or("—".to_string(), |d| format!("{d:+.4}"));
        for e in &self.entries {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                e.scenario,
                e.method,
                cell(e.srcc_mean, e.srcc_std, e.srcc_best),
                cell(e.plcc_mean, e.plcc_std, e.plcc_best),
                delta(e.srcc_delta),
                delta(e.plcc_delta)
            ));
        }
        out
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub fn rows_from_csv(s: &str) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(s.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()
        .map_err(|e| contract(format!("bad report csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scenario: &str, method: Method, fold: usize, srcc: f64, plcc: f64) -> ReportRow {
        ReportRow {
            scenario: scenario.into(),
            method,
            fold,
            seed: 0,
            srcc,
            plcc,
        }
    }

    fn rows() -> Vec<ReportRow> {
        vec![
            row("a", Method::NoAdapt, 0, 0.5, 0.6),
            row("a", Method::NoAdapt, 1, 0.3, 0.4),
            row("a", Method::Upda, 0, 0.7, 0.65),
            row("a", Method::Upda, 1, 0.5, 0.45),
        ]
    }

    #[test]
    fn deltas_and_bold() {
        let t = compare_methods(&rows()).unwrap();
        assert_eq!(t.baseline, Method::NoAdapt);
        let upda = t.entries.iter().find(|e| e.method == Method::Upda).unwrap();
        assert!((upda.srcc_delta.unwrap() - 0.2).abs() < 1e-12);
        assert!((upda.plcc_delta.unwrap() - 0.05).abs() < 1e-12);
        assert!(upda.srcc_best && upda.plcc_best);
        assert!(t.to_markdown().contains("**0.6000 ± 0.1414**"));
    }

    #[test]
    fn mismatched_scenarios_rejected() {
        let mut r = rows();
        r.push(row("b", Method::Upda, 0, 0.1, 0.1));
        assert!(compare_methods(&r).is_err());
        assert!(compare_methods(&r[..2]).is_err());
    }

    #[test]
    fn lossless_serialization() {
        let t = compare_methods(&rows()).unwrap();
        assert_eq!(ComparisonTable::from_json(&t.to_json()).unwrap(), t);
        assert_eq!(ComparisonTable::from_csv(&t.to_csv()).unwrap(), t);
        assert_eq!(rows_from_csv(&rows_to_csv(&rows())).unwrap(), rows());
    }
}
