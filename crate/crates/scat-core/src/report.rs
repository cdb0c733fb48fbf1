//! Comparative robustness reports.
//!
//! A [`ComparativeReport`] holds, per model row and per attacker, the raw
//! per-seed measurements (clean and after-attack accuracy) together with the
//! derived numbers (attack failure rates, means, spreads). The raw values
//! stay embedded so [`verify`] can recompute every derived number and flag
//! any that drifted by more than [`TOLERANCE`].
//!
//! [`render_markdown`] lays the report out as one table: a model per row, a
//! clean-accuracy column, and after-attack accuracy / attack-failure-rate
//! columns per attacker. An attacker evaluated both without and with
//! antonym filtering renders those cells as a `without/with` pair (the
//! slash convention, e.g. `0.5/3.4`). Cells show `mean (SD)` when a run
//! covers several seeds — except slash pairs, which show the two means —
//! and a single number otherwise.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::AttackerKind;
use crate::error::{Error, Result};
use crate::eval::{aggregate_seeds, round1, AggregateReport, MetricTriple};

/// Largest accepted |stored − recomputed| before verification fails.
pub const TOLERANCE: f64 = 0.05;

/// One attacker's results against one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerBlock {
    pub attacker: AttackerKind,
    /// Results with antonym filtering off.
    pub unfiltered: AggregateReport,
    /// Results with antonym filtering on, when that mode was also run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtered: Option<AggregateReport>,
}

/// One model's row: the same victim attacked by each listed attacker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub blocks: Vec<AttackerBlock>,
}

/// A full comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparativeReport {
    pub title: String,
    /// Seeds every cell aggregates over.
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
}

pub fn save_report(path: &Path, report: &ComparativeReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<ComparativeReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn attacker_name(kind: AttackerKind) -> &'static str {
    match kind {
        AttackerKind::SynonymGreedy => "Synonym",
        AttackerKind::MlmGreedy => "MLM",
        AttackerKind::Labelfree => "Label-free",
    }
}

fn fmt_mean(value: f64) -> String {
    format!("{:.1}", round1(value))
}

/// `mean (SD)` over several seeds, plain mean over one.
fn fmt_stats(report: &AggregateReport, metric: fn(&AggregateReport) -> (f64, f64)) -> String {
    let (mean, sd) = metric(report);
    if report.per_seed.len() > 1 {
        format!("{} ({:.2})", fmt_mean(mean), sd)
    } else {
        fmt_mean(mean)
    }
}

fn fmt_cell(block: &AttackerBlock, metric: fn(&AggregateReport) -> (f64, f64)) -> String {
    match &block.filtered {
        Some(filtered) => format!(
            "{}/{}",
            fmt_mean(metric(&block.unfiltered).0),
            fmt_mean(metric(filtered).0)
        ),
        None => fmt_stats(&block.unfiltered, metric),
    }
}

fn atk_acc_of(report: &AggregateReport) -> (f64, f64) {
    (report.atk_acc.mean, report.atk_acc.sd)
}

fn afr_of(report: &AggregateReport) -> (f64, f64) {
    (report.afr.mean, report.afr.sd)
}

/// Render the comparison as a markdown table.
pub fn render_markdown(report: &ComparativeReport) -> String {
    let mut attackers: Vec<AttackerKind> = Vec::new();
    for row in &report.rows {
        for block in &row.blocks {
            if !attackers.contains(&block.attacker) {
                attackers.push(block.attacker);
            }
        }
    }

    let mut out = format!("# {}\n\n", report.title);
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    writeln!(
        out,
        "Seeds: {}. Multi-seed cells are mean (SD); `a/b` cells are without/with antonym filtering.",
        seeds.join(", ")
    )
    .expect("string write");
    out.push('\n');

    out.push_str("| Model | Acc |");
    for &attacker in &attackers {
        let name = attacker_name(attacker);
        write!(out, " {name} Atk Acc | {name} AFR |").expect("string write");
    }
    out.push('\n');
    out.push_str("|---|---|");
    out.push_str(&"---|---|".repeat(attackers.len()));
    out.push('\n');

    for row in &report.rows {
        write!(out, "| {} |", row.model).expect("string write");
        match row.blocks.first() {
            Some(block) => write!(out, " {} |", fmt_stats(&block.unfiltered, |r| (r.acc.mean, r.acc.sd))),
            None => write!(out, " — |"),
        }
        .expect("string write");
        for &attacker in &attackers {
            match row.blocks.iter().find(|b| b.attacker == attacker) {
                Some(block) => write!(
                    out,
                    " {} | {} |",
                    fmt_cell(block, atk_acc_of),
                    fmt_cell(block, afr_of)
                ),
                None => write!(out, " — | — |"),
            }
            .expect("string write");
        }
        out.push('\n');
    }
    out
}

fn check(label: &str, stored: f64, recomputed: f64) -> Result<()> {
    if (stored - recomputed).abs() > TOLERANCE + 1e-9 {
        return Err(Error::Report(format!(
            "{label}: stored {stored} but recomputed {recomputed}"
        )));
    }
    Ok(())
}

fn verify_aggregate(label: &str, seeds: usize, aggregate: &AggregateReport) -> Result<()> {
    if aggregate.per_seed.len() != seeds {
        return Err(Error::Report(format!(
            "{label}: {} per-seed entries for {seeds} seeds",
            aggregate.per_seed.len()
        )));
    }
    for (i, triple) in aggregate.per_seed.iter().enumerate() {
        let fresh = MetricTriple::from_accuracies(triple.acc, triple.atk_acc)
            .map_err(|e| Error::Report(format!("{label}, seed {i}: {e}")))?;
        check(&format!("{label}, seed {i}: afr"), triple.afr, fresh.afr)?;
        if triple.afr_undefined != fresh.afr_undefined {
            return Err(Error::Report(format!(
                "{label}, seed {i}: afr_undefined flag does not match the accuracies"
            )));
        }
    }
    let fresh = aggregate_seeds(&aggregate.per_seed)?;
    for (metric, stored, recomputed) in [
        ("acc", &aggregate.acc, &fresh.acc),
        ("atk_acc", &aggregate.atk_acc, &fresh.atk_acc),
        ("afr", &aggregate.afr, &fresh.afr),
    ] {
        check(&format!("{label}: {metric} mean"), stored.mean, recomputed.mean)?;
        check(&format!("{label}: {metric} SD"), stored.sd, recomputed.sd)?;
    }
    Ok(())
}

/// Recompute every derived number (per-seed failure rates, means, SDs) from
/// the embedded raw accuracies and fail on any mismatch beyond
/// [`TOLERANCE`]. Also checks structural consistency: one block per
/// attacker per row, and the same clean accuracies wherever a row's victim
/// appears.
pub fn verify(report: &ComparativeReport) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::Report("report has no rows".into()));
    }
    for row in &report.rows {
        if row.blocks.is_empty() {
            return Err(Error::Report(format!("row '{}' has no results", row.model)));
        }
        let mut seen = Vec::new();
        for block in &row.blocks {
            if seen.contains(&block.attacker) {
                return Err(Error::Report(format!(
                    "row '{}' lists attacker {:?} twice",
                    row.model, block.attacker
                )));
            }
            seen.push(block.attacker);

            let name = attacker_name(block.attacker);
            let label = format!("row '{}', {name}", row.model);
            verify_aggregate(&label, report.seeds.len(), &block.unfiltered)?;
            if let Some(filtered) = &block.filtered {
                verify_aggregate(&format!("{label} (filtered)"), report.seeds.len(), filtered)?;
            }

            // Same victim ⇒ same clean accuracy everywhere in the row.
            let reference = &row.blocks[0].unfiltered.per_seed;
            for aggregate in std::iter::once(&block.unfiltered).chain(block.filtered.as_ref()) {
                for (i, triple) in aggregate.per_seed.iter().enumerate() {
                    check(
                        &format!("{label}, seed {i}: clean accuracy vs the row's first block"),
                        triple.acc,
                        reference[i].acc,
                    )?;
                }
            }
        }
    }
    Ok(())
}
