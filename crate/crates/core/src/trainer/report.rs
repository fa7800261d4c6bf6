//! Plain-text and CSV emission for run summaries and ablation tables.
//!
//! Keys and labels never contain commas, so the CSV stays quoting-free and
//! splits cleanly on `,`.

use crate::error::{Error, Result};

use super::ablation::AblationOutcome;
use super::metrics::EvalReport;

/// Aligned text table for one trained model.
pub fn summary_text(
    source: Option<&EvalReport>,
    target: Option<&EvalReport>,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>10} {:>12}\n",
        "split", "accuracy", "weighted_f1"
    ));
    if let Some(s) = source {
        out.push_str(&format!(
            "{:<24} {:>10.4} {:>12.4}\n",
            "source", s.accuracy, s.weighted_f1
        ));
    }
    if let Some(t) = target {
        out.push_str(&format!(
            "{:<24} {:>10.4} {:>12.4}\n",
            "target", t.accuracy, t.weighted_f1
        ));
    }
    out
}

pub fn summary_csv(source: Option<&EvalReport>, target: Option<&EvalReport>) -> String {
    let mut out = String::from("split,accuracy,weighted_f1\n");
    if let Some(s) = source {
        out.push_str(&format!("source,{},{}\n", s.accuracy, s.weighted_f1));
    }
    if let Some(t) = target {
        out.push_str(&format!("target,{},{}\n", t.accuracy, t.weighted_f1));
    }
    out
}

pub fn ablation_text(outcome: &AblationOutcome) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<34} {:>22} {:>22}\n",
        "configuration", "target accuracy", "target weighted F1"
    ));
    for row in &outcome.rows {
        out.push_str(&format!(
            "{:<34} {:>13.4} +- {:>6.4} {:>13.4} +- {:>6.4}\n",
            row.label,
            row.mean_target_accuracy,
            row.std_target_accuracy,
            row.mean_target_weighted_f1,
            row.std_target_weighted_f1,
        ));
    }
    out.push_str(&format!("seeds: {:?}\n", outcome.seeds));
    out
}

pub fn ablation_csv(outcome: &AblationOutcome) -> String {
    let mut out = String::from(
        "row,mean_target_accuracy,std_target_accuracy,mean_target_weighted_f1,std_target_weighted_f1",
    );
    for seed in &outcome.seeds {
        out.push_str(&format!(",acc_seed_{seed}"));
    }
    out.push('\n');
    for row in &outcome.rows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            row.key,
            row.mean_target_accuracy,
            row.std_target_accuracy,
            row.mean_target_weighted_f1,
            row.std_target_weighted_f1
        ));
        for seed in &row.per_seed {
            out.push_str(&format!(",{}", seed.target.accuracy));
        }
        out.push('\n');
    }
    out
}

/// One parsed row of the ablation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAblationRow {
    pub key: String,
    pub mean_target_accuracy: f64,
    pub std_target_accuracy: f64,
    pub mean_target_weighted_f1: f64,
    pub std_target_weighted_f1: f64,
    pub per_seed_accuracy: Vec<f64>,
}

pub fn parse_ablation_csv(text: &str) -> Result<Vec<ParsedAblationRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty ablation CSV".into()))?;
    if !header.starts_with("row,mean_target_accuracy") {
        return Err(Error::Format(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(Error::Format(format!("short row: {line}")));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number {s}: {e}")))
        };
        rows.push(ParsedAblationRow {
            key: fields[0].to_string(),
            mean_target_accuracy: num(fields[1])?,
            std_target_accuracy: num(fields[2])?,
            mean_target_weighted_f1: num(fields[3])?,
            std_target_weighted_f1: num(fields[4])?,
            per_seed_accuracy: fields[5..]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    Ok(rows)
}
