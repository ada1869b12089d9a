//! Binary classification metrics.

use std::fmt::Write as _;

use crate::model::Variant;

/// Metrics for one evaluation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldMetrics {
    /// Percent correct.
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
}

/// Scores are class-1 probabilities; a subject is predicted positive when its
/// score exceeds 0.5.
pub fn binary_metrics(scores: &[f64], labels: &[u8]) -> FoldMetrics {
    assert_eq!(scores.len(), labels.len(), "one score per label");
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
    FoldMetrics {
        accuracy: accuracy_percent(&preds, labels),
        auc: rank_auc(scores, labels),
        f1: f1_score(&preds, labels),
    }
}

pub fn accuracy_percent(preds: &[u8], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * correct as f64 / labels.len() as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. 0.5 when either class is absent.
pub fn rank_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l != 1).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut credit = 0.0;
    for &p in &pos {
        for &n in &neg {
            credit += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / (pos.len() * neg.len()) as f64
}

/// F1 with label 1 as the positive class; 0 when there are no true positives.
pub fn f1_score(preds: &[u8], labels: &[u8]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Per-fold metrics with population mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: String,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> MeanStd {
    let n = values.clone().count();
    if n == 0 {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    MeanStd { mean, std: var.sqrt() }
}

impl MetricsReport {
    pub fn accuracy(&self) -> MeanStd {
        mean_std(self.folds.iter().map(|m| m.accuracy))
    }

    pub fn auc(&self) -> MeanStd {
        mean_std(self.folds.iter().map(|m| m.auc))
    }

    pub fn f1(&self) -> MeanStd {
        mean_std(self.folds.iter().map(|m| m.f1))
    }

    /// `key: value` summary lines followed by a per-fold table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let (acc, auc, f1) = (self.accuracy(), self.auc(), self.f1());
        writeln!(out, "variant: {}", self.variant).unwrap();
        writeln!(out, "folds: {}", self.folds.len()).unwrap();
        writeln!(out, "accuracy_mean: {:.4}", acc.mean).unwrap();
        writeln!(out, "accuracy_std: {:.4}", acc.std).unwrap();
        writeln!(out, "auc_mean: {:.6}", auc.mean).unwrap();
        writeln!(out, "auc_std: {:.6}", auc.std).unwrap();
        writeln!(out, "f1_mean: {:.6}", f1.mean).unwrap();
        writeln!(out, "f1_std: {:.6}", f1.std).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "fold  accuracy  auc       f1").unwrap();
        for (i, m) in self.folds.iter().enumerate() {
            writeln!(out, "{i:<4}  {:<8.4}  {:<8.6}  {:.6}", m.accuracy, m.auc, m.f1).unwrap();
        }
        out
    }
}

pub const METRICS_CSV_HEADER: &str = "variant,fold,acc,auc,f1";

/// Machine-readable rows for several reports.
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in reports {
        for (i, m) in r.folds.iter().enumerate() {
            writeln!(out, "{},{i},{:.6},{:.6},{:.6}", r.variant, m.accuracy, m.auc, m.f1).unwrap();
        }
    }
    out
}

/// Summary table with one `mean ± std` row per report.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let row = |out: &mut String, cells: [&str; 4]| {
        writeln!(out, "{:<18}  {:<16}  {:<16}  {}", cells[0], cells[1], cells[2], cells[3]).unwrap();
    };
    row(&mut out, ["variant", "accuracy (%)", "auc", "f1"]);
    for r in reports {
        let (acc, auc, f1) = (r.accuracy(), r.auc(), r.f1());
        row(
            &mut out,
            [
                Variant::parse(&r.variant).map_or(r.variant.as_str(), |v| v.label()),
                &format!("{:.2} ± {:.2}", acc.mean, acc.std),
                &format!("{:.4} ± {:.4}", auc.mean, auc.std),
                &format!("{:.4} ± {:.4}", f1.mean, f1.std),
            ],
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ordering_gives_unit_auc() {
        assert_eq!(rank_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), 1.0);
    }

    #[test]
    fn identical_scores_give_half_auc() {
        assert_eq!(rank_auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]), 0.5);
    }

    #[test]
    fn auc_matches_pair_count() {
        // pos {0.4, 0.7}, neg {0.4, 0.5}: pairs 0.5 + 0 + 1 + 1
        assert_eq!(rank_auc(&[0.4, 0.7, 0.4, 0.5], &[1, 1, 0, 0]), 2.5 / 4.0);
    }

    #[test]
    fn f1_from_confusion_counts() {
        // TP=3 FP=1 FN=1 TN=2
        let preds = [1, 1, 1, 1, 0, 0, 0];
        let labels = [1, 1, 1, 0, 1, 0, 0];
        assert!((f1_score(&preds, &labels) - 2.0 * 3.0 / (2.0 * 3.0 + 1.0 + 1.0)).abs() < 1e-15);
        assert!((accuracy_percent(&preds, &labels) - 500.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn population_std_over_folds() {
        let fold = |a| FoldMetrics {
            accuracy: a,
            auc: 0.5,
            f1: 0.5,
        };
        let r = MetricsReport {
            variant: "full".into(),
            folds: vec![fold(80.0), fold(90.0), fold(100.0), fold(90.0)],
        };
        assert_eq!(r.accuracy().mean, 90.0);
        assert!((r.accuracy().std - 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.auc().std, 0.0);
    }

    #[test]
    fn csv_has_one_row_per_fold() {
        let r = MetricsReport {
            variant: "no-br".into(),
            folds: vec![binary_metrics(&[0.9, 0.1], &[1, 0]); 3],
        };
        let csv = metrics_csv(&[r.clone(), r]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_CSV_HEADER);
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[1], "no-br,0,100.000000,1.000000,1.000000");
    }
}
