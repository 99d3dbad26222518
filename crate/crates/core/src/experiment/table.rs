//! Sweep result tables, their CSV form, and text rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One (C, σ) cell of the DP-SGD sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSgdRow {
    pub clip_bound: f64,
    pub noise_multiplier: f64,
    pub seeds: usize,
    pub accuracy_mean: f64,
    pub accuracy_min: f64,
    pub accuracy_max: f64,
    pub steps: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub private: bool,
    /// Run seeds joined with `;`; each names a curve file.
    pub run_seeds: String,
    pub config_hash: String,
}

/// One (b, N_t) cell of the PATE sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PateRow {
    pub laplace_scale: f64,
    pub teacher_count: usize,
    pub seeds: usize,
    pub accuracy_mean: f64,
    pub accuracy_min: f64,
    pub accuracy_max: f64,
    /// Agreement of the noisy labels with the withheld public labels.
    pub label_accuracy_mean: f64,
    /// Seed mean of the median final teacher test accuracy.
    pub teacher_median_accuracy: f64,
    pub queries: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub run_seeds: String,
    pub config_hash: String,
}

pub fn write_rows<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// `(mean, min, max)`.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

fn keys<T, K: Ord>(rows: &[T], key: impl Fn(&T) -> K) -> Vec<K> {
    rows.iter().map(key).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Totally ordered wrapper for table keys.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
struct Key(f64);
impl Eq for Key {}
impl Ord for Key {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

const MISSING: &str = "missing";

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn eps(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "inf".into()
    }
}

fn grid(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, r: &[String]| {
        let cells: Vec<String> = r
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    };
    line(out, header);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for r in rows {
        line(out, r);
    }
}

/// Rows are noise multipliers σ (with ε), columns clip bounds C; cells are
/// mean test accuracy with the seed range.
pub fn render_dpsgd(rows: &[DpSgdRow]) -> String {
    let sigmas = keys(rows, |r| Key(r.noise_multiplier));
    let clips = keys(rows, |r| Key(r.clip_bound));
    let mut header = vec!["noise (epsilon)".to_string()];
    header.extend(clips.iter().map(|c| format!("C = {}", c.0)));
    let body: Vec<Vec<String>> = sigmas
        .iter()
        .map(|s| {
            let eps_cell = rows
                .iter()
                .find(|r| Key(r.noise_multiplier) == *s)
                .map(|r| eps(r.epsilon))
                .unwrap_or_else(|| MISSING.into());
            let mut line = vec![format!("{} ({eps_cell})", s.0)];
            for c in &clips {
                line.push(
                    rows.iter()
                        .find(|r| Key(r.noise_multiplier) == *s && Key(r.clip_bound) == *c)
                        .map(|r| {
                            format!(
                                "{} [{}, {}]",
                                pct(r.accuracy_mean),
                                pct(r.accuracy_min),
                                pct(r.accuracy_max)
                            )
                        })
                        .unwrap_or_else(|| MISSING.into()),
                );
            }
            line
        })
        .collect();
    let mut out = String::new();
    grid(&mut out, &header, &body);
    out
}

/// Rows are Laplace scales b (with ε), columns teacher counts; cells are
/// mean student accuracy with the seed range.
pub fn render_pate(rows: &[PateRow]) -> String {
    let scales = keys(rows, |r| Key(r.laplace_scale));
    let counts = keys(rows, |r| r.teacher_count);
    let mut header = vec!["noise b (epsilon)".to_string()];
    header.extend(counts.iter().map(|n| format!("N = {n}")));
    let body: Vec<Vec<String>> = scales
        .iter()
        .map(|b| {
            let eps_cell = rows
                .iter()
                .find(|r| Key(r.laplace_scale) == *b)
                .map(|r| eps(r.epsilon))
                .unwrap_or_else(|| MISSING.into());
            let mut line = vec![format!("{} ({eps_cell})", b.0)];
            for n in &counts {
                line.push(
                    rows.iter()
                        .find(|r| Key(r.laplace_scale) == *b && r.teacher_count == *n)
                        .map(|r| {
                            format!(
                                "{} [{}, {}]",
                                pct(r.accuracy_mean),
                                pct(r.accuracy_min),
                                pct(r.accuracy_max)
                            )
                        })
                        .unwrap_or_else(|| MISSING.into()),
                );
            }
            line
        })
        .collect();
    let mut out = String::new();
    grid(&mut out, &header, &body);
    out
}

/// One row of the combined ε table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub method: String,
    pub parameter: String,
    pub value: f64,
    /// Mechanism invocations: DP-SGD steps or PATE queries.
    pub invocations: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub private: bool,
}

pub fn epsilon_rows(dpsgd: &[DpSgdRow], pate: &[PateRow]) -> Vec<EpsilonRow> {
    let mut out = Vec::new();
    for s in keys(dpsgd, |r| Key(r.noise_multiplier)) {
        if let Some(r) = dpsgd.iter().find(|r| Key(r.noise_multiplier) == s) {
            out.push(EpsilonRow {
                method: "dpsgd".into(),
                parameter: "noise_multiplier".into(),
                value: s.0,
                invocations: r.steps,
                epsilon: r.epsilon,
                delta: r.delta,
                alpha: r.alpha,
                private: r.private,
            });
        }
    }
    for b in keys(pate, |r| Key(r.laplace_scale)) {
        if let Some(r) = pate.iter().find(|r| Key(r.laplace_scale) == b) {
            out.push(EpsilonRow {
                method: "pate".into(),
                parameter: "laplace_scale".into(),
                value: b.0,
                invocations: r.queries as u64,
                epsilon: r.epsilon,
                delta: r.delta,
                alpha: r.alpha,
                private: r.epsilon <= crate::accountant::EPSILON_THRESHOLD,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: f64, s: f64) -> DpSgdRow {
        DpSgdRow {
            clip_bound: c,
            noise_multiplier: s,
            seeds: 3,
            accuracy_mean: 0.9,
            accuracy_min: 0.85,
            accuracy_max: 0.95,
            steps: 10,
            epsilon: 6.32,
            delta: 1e-5,
            alpha: 8.0,
            private: true,
            run_seeds: "1;2;3".into(),
            config_hash: "abc".into(),
        }
    }

    #[test]
    fn dpsgd_grid_marks_missing_cells() {
        let text = render_dpsgd(&[row(1.0, 0.5), row(1.5, 1.0)]);
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("C = 1.5"));
        assert_eq!(text.matches(MISSING).count(), 2);
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![row(1.0, 0.5), row(1.5, 1.0)];
        write_rows(&path, &rows).unwrap();
        assert_eq!(read_rows::<DpSgdRow>(&path).unwrap(), rows);
    }
}
