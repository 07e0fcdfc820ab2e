//! Serializable experiment reports.
//!
//! Maps are `BTreeMap`s and floats are written in shortest round-trip form,
//! so a report serializes to the same bytes whenever its values agree.

use std::collections::BTreeMap;

use serde::Serialize;

/// TPR at each requested FPR (keyed by the FPR written as a decimal) for one
/// group of queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetrics {
    #[serde(flatten)]
    pub tpr: BTreeMap<String, f64>,
    pub n_member: usize,
    pub n_nonmember: usize,
    /// Some FPR target allows less than one false positive on this group.
    pub underpowered: bool,
}

/// Realized rates of an attack's hard decisions on all queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecisionPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellDiagnostics {
    pub target_train_accuracy: f64,
    pub target_holdout_accuracy: f64,
    /// Per shadow model: mean softmax mass on a dropped label over that
    /// class's nonmember queries (maximum over dropped classes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shadow_dropped_label_probability: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub id: String,
    pub seed: u64,
    pub variant: String,
    pub dropped_classes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    pub public_rows: usize,
    /// attack → group (`class_i`, `seen`, `unseen`, `all`) → metrics.
    pub attacks: BTreeMap<String, BTreeMap<String, GroupMetrics>>,
    /// attack → alpha → realized rates of the calibrated decision rule.
    pub decisions: BTreeMap<String, BTreeMap<String, DecisionPoint>>,
    pub diagnostics: CellDiagnostics,
}

impl CellReport {
    pub fn tpr(&self, attack: &str, group: &str, fpr: f64) -> Option<f64> {
        self.attacks.get(attack)?.get(group)?.tpr.get(&fpr.to_string()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub experiment: String,
    /// Echo of the run configuration, filled in by the caller.
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub fpr_targets: Vec<f64>,
    pub cells: Vec<CellReport>,
    /// variant → attack → group → fpr → median TPR over seeds.
    pub summary: BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values serialize");
        s.push('\n');
        s
    }

    /// Cells of one variant in seed order.
    pub fn cells_for<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a CellReport> + 'a {
        self.cells.iter().filter(move |c| c.variant == variant)
    }
}

/// Median; the mean of the two middle values for even counts, NaN if empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn group_metrics_flatten_fpr_keys() {
        let g = GroupMetrics {
            tpr: BTreeMap::from([("0.05".to_string(), 0.25), ("0.01".to_string(), 0.0)]),
            n_member: 4,
            n_nonmember: 8,
            underpowered: true,
        };
        assert_eq!(
            serde_json::to_string(&g).unwrap(),
            r#"{"0.01":0.0,"0.05":0.25,"n_member":4,"n_nonmember":8,"underpowered":true}"#
        );
    }
}
