//! Cost/accuracy tables and sweep aggregation.
//!
//! The table generator combines the analytic cost model (parameter and FLOP
//! counts per width scale) with measured accuracies parsed from metrics CSV
//! files, and renders Markdown for humans or CSV for machines. Every
//! rendering starts by stating the counting conventions, since published
//! FLOP figures vary with what is included.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::cost::{count_flops, count_params};
use crate::model::{Scale, SupernetSpec};
use crate::trainer::metrics::{EpochMetrics, Split};

/// Conventions paragraph prepended to every table.
pub const CONVENTIONS: &str = "Parameters count weights, biases, and normalization \
affine terms. FLOPs count one multiply-accumulate as two operations, plus bias \
adds and max-pool comparisons, for a single cloud at the stated point count; \
normalization, activations, and neighborhood search are excluded. OA is the best \
test-split accuracy found in each metrics file.";

/// One table row: analytic costs for a width scale, optionally paired with a
/// measured accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub scale: Scale,
    pub params: u64,
    pub flops: u64,
    pub oa: Option<f64>,
}

/// Cost-only rows, one per scale, labelled by the scale itself.
pub fn cost_rows(
    spec: &SupernetSpec,
    scales: &[Scale],
    n_points: usize,
) -> Result<Vec<ReportRow>> {
    scales
        .iter()
        .map(|&scale| cost_row(format!("scale {scale}"), spec, scale, n_points))
        .collect()
}

/// One row with costs computed for `scale` and no accuracy yet.
pub fn cost_row(
    label: String,
    spec: &SupernetSpec,
    scale: Scale,
    n_points: usize,
) -> Result<ReportRow> {
    Ok(ReportRow {
        label,
        scale,
        params: count_params(spec, scale.as_f64())?,
        flops: count_flops(spec, scale.as_f64(), n_points)?,
        oa: None,
    })
}

/// Best test-split accuracy in a metrics file; `None` when the file has no
/// test rows (e.g. a zero-epoch run).
pub fn best_test_oa(rows: &[EpochMetrics]) -> Option<f64> {
    rows.iter()
        .filter(|r| r.split == Split::Test)
        .map(|r| r.oa)
        .fold(None, |acc, oa| Some(acc.map_or(oa, |a: f64| a.max(oa))))
}

/// Accuracy differences against named baseline rows. Returns one column per
/// baseline label; a cell is `None` when either side has no accuracy.
pub fn delta_columns(
    rows: &[ReportRow],
    baselines: &[String],
) -> Result<Vec<Vec<Option<f64>>>> {
    baselines
        .iter()
        .map(|name| {
            let base = rows
                .iter()
                .find(|r| &r.label == name)
                .ok_or_else(|| {
                    Error::Config(format!("baseline '{name}' is not a row in this table"))
                })?
                .oa;
            Ok(rows
                .iter()
                .map(|r| match (r.oa, base) {
                    (Some(a), Some(b)) => Some(a - b),
                    _ => None,
                })
                .collect())
        })
        .collect()
}

/// `1747368` → `1.747M`; always in millions to match the headline tables.
pub fn format_params(n: u64) -> String {
    format!("{:.3}M", n as f64 / 1.0e6)
}

/// `7886933800` → `7.887G`; counts under 0.1G fall back to millions
/// (`4738048` → `4.738M`) so small presets don't round to `0.000G`.
pub fn format_flops(n: u64) -> String {
    if n >= 100_000_000 {
        format!("{:.3}G", n as f64 / 1.0e9)
    } else {
        format!("{:.3}M", n as f64 / 1.0e6)
    }
}

fn format_oa(oa: Option<f64>) -> String {
    match oa {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "—".to_string(),
    }
}

fn format_delta(d: Option<f64>) -> String {
    match d {
        Some(v) => format!("{:+.2}", v * 100.0),
        None => "—".to_string(),
    }
}

/// Markdown table: human-readable units, conventions paragraph on top.
pub fn render_markdown(
    title: &str,
    n_points: usize,
    rows: &[ReportRow],
    baselines: &[String],
) -> Result<String> {
    let deltas = delta_columns(rows, baselines)?;
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out);
    let _ = writeln!(out, "{CONVENTIONS} Point count: {n_points}.");
    let _ = writeln!(out);
    let mut header = "| Model | Scale | #Params | FLOPs |".to_string();
    let mut rule = "|---|---|---:|---:|".to_string();
    let any_oa = rows.iter().any(|r| r.oa.is_some());
    if any_oa {
        header.push_str(" OA (%) |");
        rule.push_str("---:|");
        for b in baselines {
            let _ = write!(header, " ΔAcc vs {b} (%) |");
            rule.push_str("---:|");
        }
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{rule}");
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(
            out,
            "| {} | {} | {} | {} |",
            r.label,
            r.scale,
            format_params(r.params),
            format_flops(r.flops)
        );
        if any_oa {
            let _ = write!(out, " {} |", format_oa(r.oa));
            for col in &deltas {
                let _ = write!(out, " {} |", format_delta(col[i]));
            }
        }
        let _ = writeln!(out);
    }
    Ok(out)
}

/// CSV table: raw integers and fractional accuracies for downstream tools.
/// Conventions ride along as `#`-prefixed comment lines.
pub fn render_csv(
    title: &str,
    n_points: usize,
    rows: &[ReportRow],
    baselines: &[String],
) -> Result<String> {
    let deltas = delta_columns(rows, baselines)?;
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out, "# {CONVENTIONS} Point count: {n_points}.");
    let mut header = "label,scale,params,flops,oa".to_string();
    for b in baselines {
        let _ = write!(header, ",delta_vs_{b}");
    }
    let _ = writeln!(out, "{header}");
    for (i, r) in rows.iter().enumerate() {
        let oa = r.oa.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = write!(out, "{},{},{},{},{}", r.label, r.scale, r.params, r.flops, oa);
        for col in &deltas {
            let d = col[i].map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = write!(out, ",{d}");
        }
        let _ = writeln!(out);
    }
    Ok(out)
}

/// One aggregated sweep row: accuracies of all completed runs that share a
/// label (for multi-seed sweeps there is one accuracy per seed).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub oas: Vec<f64>,
}

impl SweepRow {
    pub fn mean(&self) -> f64 {
        self.oas.iter().sum::<f64>() / self.oas.len() as f64
    }

    /// Sample standard deviation; only defined for ≥ 2 runs.
    pub fn std(&self) -> Option<f64> {
        if self.oas.len() < 2 {
            return None;
        }
        let m = self.mean();
        let var = self.oas.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            / (self.oas.len() - 1) as f64;
        Some(var.sqrt())
    }
}

/// Sweep table: mean accuracy per row, ± sample std when a row aggregates at
/// least two runs, and the difference against a named baseline row.
pub fn render_sweep_markdown(
    title: &str,
    rows: &[SweepRow],
    baseline: Option<&str>,
) -> Result<String> {
    if rows.iter().any(|r| r.oas.is_empty()) {
        return Err(Error::Contract("sweep row without any completed run".to_string()));
    }
    let base_mean = match baseline {
        Some(name) => Some(
            rows.iter()
                .find(|r| r.label == name)
                .ok_or_else(|| {
                    Error::Config(format!("baseline '{name}' is not a sweep row"))
                })?
                .mean(),
        ),
        None => None,
    };
    let show_std = rows.iter().any(|r| r.oas.len() >= 2);
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out);
    let mut header = "| Run | Seeds | OA (%) |".to_string();
    let mut rule = "|---|---:|---:|".to_string();
    if show_std {
        header.push_str(" ± std |");
        rule.push_str("---:|");
    }
    if base_mean.is_some() {
        let _ = write!(header, " ΔAcc vs {} (%) |", baseline.unwrap());
        rule.push_str("---:|");
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{rule}");
    for r in rows {
        let _ = write!(
            out,
            "| {} | {} | {} |",
            r.label,
            r.oas.len(),
            format_oa(Some(r.mean()))
        );
        if show_std {
            let cell = match r.std() {
                Some(s) => format!("{:.2}", s * 100.0),
                None => "—".to_string(),
            };
            let _ = write!(out, " {cell} |");
        }
        if let Some(b) = base_mean {
            let _ = write!(out, " {} |", format_delta(Some(r.mean() - b)));
        }
        let _ = writeln!(out);
    }
    Ok(out)
}

/// CSV twin of the sweep table.
pub fn render_sweep_csv(
    title: &str,
    rows: &[SweepRow],
    baseline: Option<&str>,
) -> Result<String> {
    if rows.iter().any(|r| r.oas.is_empty()) {
        return Err(Error::Contract("sweep row without any completed run".to_string()));
    }
    let base_mean = match baseline {
        Some(name) => Some(
            rows.iter()
                .find(|r| r.label == name)
                .ok_or_else(|| {
                    Error::Config(format!("baseline '{name}' is not a sweep row"))
                })?
                .mean(),
        ),
        None => None,
    };
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let mut header = "label,runs,mean_oa,std_oa".to_string();
    if base_mean.is_some() {
        header.push_str(",delta_oa");
    }
    let _ = writeln!(out, "{header}");
    for r in rows {
        let std = r.std().map(|s| format!("{s:.6}")).unwrap_or_default();
        let _ = write!(out, "{},{},{:.6},{}", r.label, r.oas.len(), r.mean(), std);
        if let Some(b) = base_mean {
            let _ = write!(out, ",{:.6}", r.mean() - b);
        }
        let _ = writeln!(out);
    }
    Ok(out)
}
