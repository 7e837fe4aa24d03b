//! Scoring: confusion matrix over the three patient codes, per-class
//! precision/recall/F1, micro- and macro-averaged F1, exclusion and
//! fallback accounting, and report formatting.
//!
//! Conventions: micro-F1 is computed as trace/total, which in this
//! single-label three-class setting equals accuracy exactly. Per-class F1
//! uses the 0/0 -> 0 convention; classes absent from both gold and
//! predictions are dropped from the macro mean.

use crate::chain::MethodId;
use crate::extraction::{PredictionRecord, Provenance};
use crate::labels::PatientCode;
use crate::transcript::WindowId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// 3x3 counts indexed `[gold][predicted]` in the order
/// [ChangeTalk, FollowNeutral, SustainTalk].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: PatientCode, predicted: PatientCode) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn get(&self, gold: PatientCode, predicted: PatientCode) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn gold_total(&self, class: PatientCode) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn predicted_total(&self, class: PatientCode) -> u64 {
        self.counts.iter().map(|row| row[class.index()]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method_id: MethodId,
    pub model_id: String,
    pub confusion: ConfusionMatrix,
    /// Indexed like the confusion matrix rows.
    pub per_class: [ClassMetrics; 3],
    /// None when no windows were scored.
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub n_scored: u64,
    pub n_excluded: u64,
    pub n_fallback: u64,
}

impl EvalReport {
    pub fn metrics_defined(&self) -> bool {
        self.n_scored > 0
    }

    /// |NoMatch and not excluded| / |scored|.
    pub fn fallback_rate(&self) -> Option<f64> {
        if self.n_scored == 0 {
            None
        } else {
            Some(self.n_fallback as f64 / self.n_scored as f64)
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction for {window} does not align with the gold set")]
    IdentityMismatch { window: WindowId },
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Aggregate predictions against gold labels. Excluded records count only
/// toward `n_excluded`; every other record must align with a gold entry by
/// window identity.
pub fn score(
    method_id: MethodId,
    model_id: &str,
    predictions: &[PredictionRecord],
    golds: &BTreeMap<WindowId, PatientCode>,
) -> Result<EvalReport, MetricsError> {
    let mut confusion = ConfusionMatrix::default();
    let mut n_excluded = 0u64;
    let mut n_fallback = 0u64;
    let mut seen: BTreeSet<&WindowId> = BTreeSet::new();
    for record in predictions {
        if !seen.insert(&record.window_id) {
            return Err(MetricsError::IdentityMismatch {
                window: record.window_id.clone(),
            });
        }
        let gold = *golds
            .get(&record.window_id)
            .ok_or_else(|| MetricsError::IdentityMismatch {
                window: record.window_id.clone(),
            })?;
        if gold != record.gold {
            return Err(MetricsError::IdentityMismatch {
                window: record.window_id.clone(),
            });
        }
        match record.provenance {
            Provenance::Excluded => {
                n_excluded += 1;
                continue;
            }
            Provenance::RandomFallback => n_fallback += 1,
            Provenance::Extracted => {}
        }
        let predicted = record
            .predicted
            .ok_or_else(|| MetricsError::IdentityMismatch {
                window: record.window_id.clone(),
            })?;
        confusion.add(gold, predicted.patient_code());
    }

    let n_scored = confusion.total();
    let mut per_class = [ClassMetrics::default(); 3];
    let mut macro_sum = 0.0;
    let mut macro_classes = 0u32;
    for class in PatientCode::ALL {
        let tp = confusion.get(class, class) as f64;
        let gold_total = confusion.gold_total(class) as f64;
        let pred_total = confusion.predicted_total(class) as f64;
        let precision = safe_div(tp, pred_total);
        let recall = safe_div(tp, gold_total);
        let f1 = safe_div(2.0 * precision * recall, precision + recall);
        per_class[class.index()] = ClassMetrics {
            precision,
            recall,
            f1,
        };
        if gold_total + pred_total > 0.0 {
            macro_sum += f1;
            macro_classes += 1;
        }
    }

    let (micro_f1, macro_f1) = if n_scored == 0 {
        (None, None)
    } else {
        (
            Some(confusion.trace() as f64 / n_scored as f64),
            Some(macro_sum / f64::from(macro_classes)),
        )
    };
    Ok(EvalReport {
        method_id,
        model_id: model_id.to_string(),
        confusion,
        per_class,
        micro_f1,
        macro_f1,
        n_scored,
        n_excluded,
        n_fallback,
    })
}

fn percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "--".to_string(),
    }
}

/// Render a grid of reports as a fixed-width table: one row per method,
/// one (micro, macro) column pair per model, plus an unweighted average
/// pair over models. Values are percentages to one decimal.
pub fn format_report(reports: &[EvalReport]) -> String {
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        if !models.iter().any(|m| *m == r.model_id) {
            models.push(&r.model_id);
        }
    }
    models.sort_unstable();
    let methods: Vec<MethodId> = MethodId::ALL
        .into_iter()
        .filter(|m| reports.iter().any(|r| r.method_id == *m))
        .collect();

    let by_cell: BTreeMap<(MethodId, &str), &EvalReport> = reports
        .iter()
        .map(|r| ((r.method_id, r.model_id.as_str()), r))
        .collect();

    const METHOD_WIDTH: usize = 10;
    const CELL_WIDTH: usize = 8;
    let mut out = String::new();

    let mut group_line = format!("{:<METHOD_WIDTH$}", "");
    let mut header_line = format!("{:<METHOD_WIDTH$}", "method");
    for model in models.iter().copied().chain(std::iter::once("average")) {
        group_line.push_str(&format!("  {:^width$}", model, width = CELL_WIDTH * 2 + 1));
        header_line.push_str(&format!(
            "  {:>CELL_WIDTH$} {:>CELL_WIDTH$}",
            "micro", "macro"
        ));
    }
    out.push_str(group_line.trim_end());
    out.push('\n');
    out.push_str(&header_line);
    out.push('\n');

    for method in methods {
        let mut line = format!("{:<METHOD_WIDTH$}", method.display_name());
        let mut micro_values = Vec::new();
        let mut macro_values = Vec::new();
        for model in &models {
            match by_cell.get(&(method, model)) {
                Some(report) => {
                    line.push_str(&format!(
                        "  {:>CELL_WIDTH$} {:>CELL_WIDTH$}",
                        percent(report.micro_f1),
                        percent(report.macro_f1)
                    ));
                    if let (Some(micro), Some(macro_)) = (report.micro_f1, report.macro_f1) {
                        micro_values.push(micro);
                        macro_values.push(macro_);
                    }
                }
                None => {
                    line.push_str(&format!("  {:>CELL_WIDTH$} {:>CELL_WIDTH$}", "--", "--"));
                }
            }
        }
        let average = |values: &[f64]| {
            if values.is_empty() {
                None
            } else {
                Some(values.iter().sum::<f64>() / values.len() as f64)
            }
        };
        line.push_str(&format!(
            "  {:>CELL_WIDTH$} {:>CELL_WIDTH$}",
            percent(average(&micro_values)),
            percent(average(&macro_values))
        ));
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// One JSON record per report, in input order.
pub fn reports_to_jsonl(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for report in reports {
        out.push_str(&serde_json::to_string(report).expect("reports serialize"));
        out.push('\n');
    }
    out
}
