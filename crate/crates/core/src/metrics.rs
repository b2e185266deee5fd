//! Confusion counts, per-class accuracy and precision, macro/micro
//! aggregation and comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
}

/// Per class: predicted positive ⇔ `p ≥ threshold`.
pub fn confusion(predictions: &Tensor, labels: &Tensor, threshold: f64) -> Result<ConfusionCounts> {
    if predictions.shape() != labels.shape() || predictions.dims().len() != 2 {
        return Err(Error::Shape(format!(
            "predictions {} vs labels {} (want matching [N, K])",
            predictions.shape(),
            labels.shape()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Input(format!("threshold {threshold} outside (0, 1)")));
    }
    let k = predictions.dims()[1];
    let mut classes = vec![ClassCounts::default(); k];
    for (i, (&p, &t)) in predictions.data().iter().zip(labels.data()).enumerate() {
        let c = &mut classes[i % k];
        let positive = p as f64 >= threshold;
        match (positive, t != 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(ConfusionCounts { classes })
}

/// `(TP + TN) / (TP + TN + FP + FN)`.
pub fn accuracy(c: &ConfusionCounts, class: usize) -> Result<f64> {
    let cc = class_counts(c, class)?;
    if cc.total() == 0 {
        return Err(Error::UndefinedMetric(format!("accuracy of class {class} over zero examples")));
    }
    Ok((cc.tp + cc.tn) as f64 / cc.total() as f64)
}

/// `TP / (TP + FP)`; `(0, true)` when nothing was predicted positive.
pub fn precision(c: &ConfusionCounts, class: usize) -> Result<(f64, bool)> {
    let cc = class_counts(c, class)?;
    if cc.tp + cc.fp == 0 {
        return Ok((0.0, true));
    }
    Ok((cc.tp as f64 / (cc.tp + cc.fp) as f64, false))
}

fn class_counts(c: &ConfusionCounts, class: usize) -> Result<&ClassCounts> {
    c.classes
        .get(class)
        .ok_or_else(|| Error::Input(format!("class {class} out of range for {}", c.classes.len())))
}

/// Metric values are fractions in `[0, 1]`; tables show percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub attribute_names: Vec<String>,
    pub accuracy: Vec<f64>,
    pub precision: Vec<f64>,
    pub precision_undefined: Vec<bool>,
    pub overall_accuracy_macro: f64,
    pub overall_precision_macro: f64,
    pub overall_precision_micro: f64,
    pub counts: Option<ConfusionCounts>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Macro means of the per-class values, micro precision from summed counts.
pub fn aggregate(c: &ConfusionCounts, attribute_names: &[String]) -> Result<MetricsReport> {
    let k = c.classes.len();
    if k == 0 || attribute_names.len() != k {
        return Err(Error::Input(format!("{} names for {k} classes", attribute_names.len())));
    }
    let accuracy = (0..k).map(|i| accuracy(c, i)).collect::<Result<Vec<_>>>()?;
    let (precision, undefined): (Vec<f64>, Vec<bool>) = (0..k).map(|i| precision(c, i)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let tp: u64 = c.classes.iter().map(|x| x.tp).sum();
    let fp: u64 = c.classes.iter().map(|x| x.fp).sum();
    Ok(MetricsReport {
        attribute_names: attribute_names.to_vec(),
        overall_accuracy_macro: mean(&accuracy),
        overall_precision_macro: mean(&precision),
        overall_precision_micro: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
        accuracy,
        precision,
        precision_undefined: undefined,
        counts: Some(c.clone()),
    })
}

/// Two decimals, halves rounded away from zero. A tiny slack treats values
/// like 78.605 (stored just below the tie in binary) as the tie they denote.
pub fn round_half_up(value: f64) -> String {
    if !value.is_finite() {
        return "n/a".into();
    }
    let r = ((value.abs() * 100.0) + 0.5 + 1e-9).floor() / 100.0;
    let s = format!("{:.2}", r.copysign(value));
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Which metric a comparison table shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Precision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub metric: Metric,
    pub header: Vec<String>,
    /// Algorithm name and percentage cells.
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ComparisonTable {
    /// Aligned text; the maximum of each column is wrapped in `**`.
    pub fn to_text(&self) -> String {
        let cols = self.header.len() - 1;
        let maxima: Vec<f64> = (0..cols)
            .map(|j| self.rows.iter().map(|r| r.1[j]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut cells: Vec<Vec<String>> = vec![self.header.clone()];
        for (name, values) in &self.rows {
            let mut row = vec![name.clone()];
            for (j, &v) in values.iter().enumerate() {
                let s = round_half_up(v);
                row.push(if round_half_up(v) == round_half_up(maxima[j]) { format!("**{s}**") } else { s });
            }
            cells.push(row);
        }
        let widths: Vec<usize> = (0..=cols).map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).expect("string write");
            if i == 0 {
                writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * cols)).expect("string write");
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(",");
        out.push('\n');
        for (name, values) in &self.rows {
            out.push_str(&csv_field(name));
            for v in values {
                write!(out, ",{}", round_half_up(*v)).expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Accuracy and precision tables over `reports` (in map order).
pub fn render_comparison(reports: &BTreeMap<String, MetricsReport>) -> Result<(ComparisonTable, ComparisonTable)> {
    render_comparison_ordered(&reports.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>())
}

/// As [`render_comparison`] with an explicit row order.
pub fn render_comparison_ordered(reports: &[(String, MetricsReport)]) -> Result<(ComparisonTable, ComparisonTable)> {
    let first = reports.first().ok_or_else(|| Error::Input("no reports to compare".into()))?;
    let names = &first.1.attribute_names;
    for (alg, r) in reports {
        if &r.attribute_names != names || r.accuracy.len() != names.len() || r.precision.len() != names.len() {
            return Err(Error::Input(format!("report `{alg}` has a different attribute set")));
        }
    }
    let mut acc_header = vec!["algorithm".to_string()];
    acc_header.extend(names.iter().cloned());
    let mut prec_header = acc_header.clone();
    acc_header.push("overall_macro".into());
    prec_header.push("overall_macro".into());
    prec_header.push("overall_micro".into());
    let pct = |v: &[f64]| v.iter().map(|x| x * 100.0).collect::<Vec<_>>();
    let acc = ComparisonTable {
        metric: Metric::Accuracy,
        header: acc_header,
        rows: reports
            .iter()
            .map(|(a, r)| {
                let mut v = pct(&r.accuracy);
                v.push(r.overall_accuracy_macro * 100.0);
                (a.clone(), v)
            })
            .collect(),
    };
    let prec = ComparisonTable {
        metric: Metric::Precision,
        header: prec_header,
        rows: reports
            .iter()
            .map(|(a, r)| {
                let mut v = pct(&r.precision);
                v.push(r.overall_precision_macro * 100.0);
                v.push(r.overall_precision_micro * 100.0);
                (a.clone(), v)
            })
            .collect(),
    };
    Ok((acc, prec))
}

/// A report from per-class percentages alone (no counts), e.g. to check a
/// printed table's overall column.
pub fn report_from_percentages(attribute_names: &[String], accuracy: &[f64], precision: &[f64]) -> Result<MetricsReport> {
    if accuracy.len() != attribute_names.len() || precision.len() != attribute_names.len() {
        return Err(Error::Input("per-class values do not match the attribute count".into()));
    }
    let acc: Vec<f64> = accuracy.iter().map(|v| v / 100.0).collect();
    let prec: Vec<f64> = precision.iter().map(|v| v / 100.0).collect();
    Ok(MetricsReport {
        attribute_names: attribute_names.to_vec(),
        overall_accuracy_macro: mean(&acc),
        overall_precision_macro: mean(&prec),
        overall_precision_micro: f64::NAN,
        accuracy: acc,
        precision: prec,
        precision_undefined: vec![false; attribute_names.len()],
        counts: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    fn t(dims: [usize; 2], v: &[f32]) -> Tensor {
        Tensor::from_vec(dims, v.to_vec()).unwrap()
    }

    fn one(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts {
            classes: vec![ClassCounts { tp, tn, fp, fn_ }],
        }
    }

    #[test]
    fn confusion_examples() {
        let c = confusion(&t([2, 1], &[0.9, 0.1]), &t([2, 1], &[1.0, 0.0]), 0.5).unwrap();
        assert_eq!(c.classes[0], ClassCounts { tp: 1, tn: 1, fp: 0, fn_: 0 });
        let c = confusion(&t([7, 1], &[0.99; 7]), &t([7, 1], &[0.0; 7]), 0.5).unwrap();
        assert_eq!(c.classes[0], ClassCounts { tp: 0, tn: 0, fp: 7, fn_: 0 });
        assert!(confusion(&t([2, 1], &[0.9, 0.1]), &t([1, 2], &[1.0, 0.0]), 0.5).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&one(1, 1, 1, 1), 0).unwrap(), 0.5);
        assert_eq!(accuracy(&one(3, 4, 0, 0), 0).unwrap(), 1.0);
        assert!((accuracy(&one(30, 50, 10, 10), 0).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(accuracy(&one(0, 0, 0, 0), 0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision(&one(3, 0, 1, 0), 0).unwrap(), (0.75, false));
        assert_eq!(precision(&one(0, 0, 5, 0), 0).unwrap(), (0.0, false));
        assert_eq!(precision(&one(0, 9, 0, 1), 0).unwrap(), (0.0, true));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(78.605), "78.61");
        assert_eq!(round_half_up(79.9), "79.90");
        assert_eq!(round_half_up(0.004), "0.00");
        assert_eq!(round_half_up(1.005), "1.01");
        assert_eq!(round_half_up(87.384), "87.38");
    }

    #[test]
    fn single_class_overall_is_the_class() {
        let r = aggregate(&one(30, 50, 10, 10), &["a".into()]).unwrap();
        assert_eq!(r.overall_accuracy_macro, r.accuracy[0]);
        assert_eq!(r.overall_precision_macro, r.precision[0]);
    }

    #[test]
    fn table_structure_and_bold() {
        let names: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
        let a = report_from_percentages(&names, &[90.0; 5], &[50.0; 5]).unwrap();
        let b = report_from_percentages(&names, &[80.0; 5], &[60.0; 5]).unwrap();
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), a);
        m.insert("b".to_string(), b);
        let (acc, prec) = render_comparison(&m).unwrap();
        assert_eq!(acc.rows.len(), 2);
        assert_eq!(acc.header.len(), 7);
        assert_eq!(acc.rows[0].1.len(), 6);
        assert!(acc.to_text().contains("**90.00**"));
        assert!(prec.to_csv().starts_with("algorithm,c0,c1,c2,c3,c4,overall_macro,overall_micro\n"));
        let other = report_from_percentages(&names[..4], &[1.0; 4], &[1.0; 4]).unwrap();
        m.insert("c".to_string(), other);
        assert!(render_comparison(&m).is_err());
    }

    proptest! {
        #[test]
        fn counts_conserved_and_monotone(seed in any::<u64>(), n in 1usize..60, k in 1usize..5) {
            let mut rng = Rng::new(seed);
            let p: Vec<f32> = (0..n * k).map(|_| rng.uniform() as f32).collect();
            let y: Vec<f32> = (0..n * k).map(|_| (rng.uniform() < 0.3) as u8 as f32).collect();
            let (p, y) = (Tensor::from_vec([n, k], p).unwrap(), Tensor::from_vec([n, k], y).unwrap());
            let mut prev: Option<ConfusionCounts> = None;
            for step in 1..20 {
                let c = confusion(&p, &y, step as f64 * 0.05).unwrap();
                for cc in &c.classes {
                    prop_assert_eq!(cc.total(), n as u64);
                }
                if let Some(prev) = &prev {
                    for (a, b) in prev.classes.iter().zip(&c.classes) {
                        prop_assert!(b.tp <= a.tp && b.fp <= a.fp);
                    }
                }
                prev = Some(c);
            }
        }

        #[test]
        fn micro_equals_macro_for_identical_classes(tp in 0u64..50, fp in 1u64..50, tn in 0u64..50, fn_ in 0u64..50, k in 1usize..6) {
            let c = ConfusionCounts { classes: vec![ClassCounts { tp, tn, fp, fn_ }; k] };
            let names: Vec<String> = (0..k).map(|i| i.to_string()).collect();
            let r = aggregate(&c, &names).unwrap();
            prop_assert!((r.overall_precision_micro - r.overall_precision_macro).abs() < 1e-12);
        }
    }
}
