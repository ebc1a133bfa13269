//! Multi-class classification metrics: accuracy and macro
//! precision/recall/F1, plus aggregation across runs.
//!
//! The class universe is the distinct gold labels of the sample. The
//! reserved `UNPARSED` label (and any other predicted-only label) gets a
//! column of its own: it is wrong for every gold class and contributes a
//! false positive to no real class. Empty ratios follow the standard
//! macro-averaging convention 0/0 = 0, so every metric stays total.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Reserved prediction label for decisions no option could be parsed from.
pub const UNPARSED: &str = "UNPARSED";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("golds and predictions differ in length: {golds} vs {preds}")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("'{UNPARSED}' appeared as a gold label at index {0}")]
    UnparsedGold(usize),
    #[error("no reports to aggregate")]
    EmptyList,
}

/// Exact tally of (gold, predicted) pairs.
///
/// Rows are the gold classes; columns are the gold classes followed by
/// any predicted-only labels. `UNPARSED` never appears as a row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub gold_classes: Vec<String>,
    pub pred_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, gold: &str, pred: &str) -> u64 {
        let Some(r) = self.gold_classes.iter().position(|c| c == gold) else {
            return 0;
        };
        let Some(c) = self.pred_labels.iter().position(|c| c == pred) else {
            return 0;
        };
        self.counts[r][c]
    }
}

/// Per-class precision/recall/F1 with the class support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Accuracy and macro metrics over one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub total: u64,
}

/// Tally golds against predictions. The class set is the gold-label
/// universe of the sample; predicted-only labels (including `UNPARSED`)
/// become extra columns.
pub fn confusion(golds: &[String], preds: &[String]) -> Result<ConfusionMatrix, MetricsError> {
    if golds.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(i) = golds.iter().position(|g| g == UNPARSED) {
        return Err(MetricsError::UnparsedGold(i));
    }

    let mut gold_classes: Vec<String> = golds.to_vec();
    gold_classes.sort();
    gold_classes.dedup();

    let mut extra: Vec<String> = preds
        .iter()
        .filter(|p| !gold_classes.contains(p))
        .cloned()
        .collect();
    extra.sort();
    extra.dedup();

    let mut pred_labels = gold_classes.clone();
    pred_labels.extend(extra);

    let mut counts = vec![vec![0u64; pred_labels.len()]; gold_classes.len()];
    for (g, p) in golds.iter().zip(preds) {
        let r = gold_classes.binary_search(g).expect("gold class present");
        let c = pred_labels
            .iter()
            .position(|l| l == p)
            .expect("pred label present");
        counts[r][c] += 1;
    }
    Ok(ConfusionMatrix {
        gold_classes,
        pred_labels,
        counts,
    })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Compute the metrics report from a confusion matrix.
///
/// accuracy = correct/total; per-class precision = TP/(TP+FP) and
/// recall = TP/(TP+FN); F1 = 2PR/(P+R); macro values are unweighted
/// means over the gold classes; 0/0 ratios are defined as 0.
pub fn compute(cm: &ConfusionMatrix) -> MetricsReport {
    let total = cm.total();
    let c = cm.gold_classes.len();
    let mut per_class = BTreeMap::new();
    let mut correct = 0u64;
    let (mut sum_p, mut sum_r, mut sum_f1) = (0.0, 0.0, 0.0);

    for (i, class) in cm.gold_classes.iter().enumerate() {
        let tp = cm.counts[i][i];
        correct += tp;
        let row_sum: u64 = cm.counts[i].iter().sum();
        let col_sum: u64 = cm.counts.iter().map(|row| row[i]).sum();
        let fp = col_sum - tp;
        let fn_ = row_sum - tp;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        sum_p += precision;
        sum_r += recall;
        sum_f1 += f1;
        per_class.insert(
            class.clone(),
            ClassMetrics {
                precision,
                recall,
                f1,
                support: row_sum,
            },
        );
    }

    MetricsReport {
        accuracy: ratio(correct, total),
        macro_precision: sum_p / c as f64,
        macro_recall: sum_r / c as f64,
        macro_f1: sum_f1 / c as f64,
        per_class,
        total,
    }
}

/// Tally and compute in one step.
pub fn evaluate(golds: &[String], preds: &[String]) -> Result<MetricsReport, MetricsError> {
    Ok(compute(&confusion(golds, preds)?))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Field-wise arithmetic mean and population standard deviation across
/// runs. Per-class entries are aggregated over the runs in which the
/// class appears.
pub fn aggregate(
    reports: &[MetricsReport],
) -> Result<(MetricsReport, MetricsReport), MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyList);
    }

    macro_rules! field {
        ($f:ident) => {
            mean_std(&reports.iter().map(|r| r.$f).collect::<Vec<_>>())
        };
    }
    let (acc_m, acc_s) = field!(accuracy);
    let (p_m, p_s) = field!(macro_precision);
    let (r_m, r_s) = field!(macro_recall);
    let (f_m, f_s) = field!(macro_f1);

    let mut classes: Vec<&String> = reports.iter().flat_map(|r| r.per_class.keys()).collect();
    classes.sort();
    classes.dedup();

    let mut per_class_mean = BTreeMap::new();
    let mut per_class_std = BTreeMap::new();
    for class in classes {
        let rows: Vec<&ClassMetrics> = reports
            .iter()
            .filter_map(|r| r.per_class.get(class))
            .collect();
        let (pm, ps) = mean_std(&rows.iter().map(|m| m.precision).collect::<Vec<_>>());
        let (rm, rs) = mean_std(&rows.iter().map(|m| m.recall).collect::<Vec<_>>());
        let (fm, fs) = mean_std(&rows.iter().map(|m| m.f1).collect::<Vec<_>>());
        let support: u64 = rows.iter().map(|m| m.support).sum::<u64>() / rows.len() as u64;
        per_class_mean.insert(
            class.clone(),
            ClassMetrics {
                precision: pm,
                recall: rm,
                f1: fm,
                support,
            },
        );
        per_class_std.insert(
            class.clone(),
            ClassMetrics {
                precision: ps,
                recall: rs,
                f1: fs,
                support,
            },
        );
    }

    let total_mean = reports.iter().map(|r| r.total).sum::<u64>() / reports.len() as u64;
    let mean = MetricsReport {
        accuracy: acc_m,
        macro_precision: p_m,
        macro_recall: r_m,
        macro_f1: f_m,
        per_class: per_class_mean,
        total: total_mean,
    };
    let std = MetricsReport {
        accuracy: acc_s,
        macro_precision: p_s,
        macro_recall: r_s,
        macro_f1: f_s,
        per_class: per_class_std,
        total: total_mean,
    };
    Ok((mean, std))
}
