//! Importance summary across labels and plain-text table rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use trafprof_core::dataset::FeatureCategory;
use trafprof_core::summary::{importance_summary, reference_share, ImportanceSummary, REFERENCE_TALLIES};
use trafprof_core::FeatureSchema;

use crate::formats::SCHEMA_VERSION;
use crate::train::LabelReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTally {
    pub category: FeatureCategory,
    pub count: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema_version: u32,
    pub summary: ImportanceSummary,
    pub skipped_labels: Vec<String>,
    /// Tallies of the original 143-subject study, for comparison only.
    pub reference_tallies: Vec<ReferenceTally>,
}

/// Tallies the top features of every evaluated label by category.
pub fn summarize(reports: &[LabelReport], schema: &FeatureSchema) -> SummaryFile {
    let rankings: Vec<(String, Vec<(String, f64)>)> = reports
        .iter()
        .filter(|r| r.skipped.is_none())
        .map(|r| (r.label.clone(), r.top_features.iter().map(|f| (f.name.clone(), f.importance)).collect()))
        .collect();
    SummaryFile {
        schema_version: SCHEMA_VERSION,
        summary: importance_summary(&rankings, schema),
        skipped_labels: reports.iter().filter(|r| r.skipped.is_some()).map(|r| r.label.clone()).collect(),
        reference_tallies: REFERENCE_TALLIES
            .iter()
            .map(|&(category, count)| ReferenceTally { category, count, percent: reference_share(category) })
            .collect(),
    }
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &mut rule.iter().map(String::as_str));
    for row in rows {
        line(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

/// Best-F1 configuration per label.
pub fn results_table(reports: &[LabelReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| match &r.best_f1 {
            Some(best) => {
                let s = &best.scores;
                vec![
                    r.title.clone(),
                    s.algorithm.as_str().to_string(),
                    s.features.to_string(),
                    format!("{:.3}", s.accuracy),
                    format!("{:.3}", s.wauc),
                    format!("{:.3}", s.w_precision),
                    format!("{:.3}", s.w_recall),
                    format!("{:.3}", s.f1),
                ]
            }
            None => {
                let mut row = vec![r.title.clone(), "skipped".to_string()];
                row.resize(8, "-".to_string());
                row
            }
        })
        .collect();
    render(&["Label", "Algorithm", "Features", "Accuracy", "WAUC", "W-Precision", "W-Recall", "F1"], &rows)
}

/// Category counts of the top features, with the reference study beside.
pub fn importance_table(file: &SummaryFile) -> String {
    let rows: Vec<Vec<String>> = file
        .summary
        .tallies
        .iter()
        .map(|t| {
            let reference = file.reference_tallies.iter().find(|r| r.category == t.category);
            vec![
                t.category.title().to_string(),
                t.count.to_string(),
                format!("{:.0}%", t.percent),
                reference.map_or("-".into(), |r| r.count.to_string()),
                reference.map_or("-".into(), |r| format!("{:.0}%", r.percent)),
            ]
        })
        .collect();
    let mut out = render(&["Category", "Count", "Share", "Reference", "Reference share"], &rows);
    let _ = writeln!(out, "\nTop {} features per label:", trafprof_core::summary::TOP_FEATURES);
    for label in &file.summary.labels {
        let names: Vec<&str> = label.features.iter().map(|f| f.name.as_str()).collect();
        let _ = writeln!(out, "  {}: {}", label.label, names.join(", "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_columns_align() {
        let t = render(&["a", "bbb"], &[vec!["xxxx".into(), "y".into()]]);
        assert_eq!(t, "a     bbb\n----  ---\nxxxx  y\n");
    }
}
