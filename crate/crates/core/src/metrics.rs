//! Confusion matrices and macro-averaged classification metrics.

use crate::cells::{forward_from_zero, CellParams};
use crate::data::{Dataset, SequenceSample};
use crate::error::{check_dim, Error, Result};
use crate::parallel::{map_ordered, Execution};

/// `counts[i][j]` = samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        let mut cm = ConfusionMatrix::new(c);
        for (i, row) in rows.iter().enumerate() {
            check_dim("confusion row", c, row.len())?;
            cm.counts[i * c..(i + 1) * c].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.num_classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for j in 0..self.num_classes {
            out.push_str(&format!(",pred_{j}"));
        }
        out.push('\n');
        for i in 0..self.num_classes {
            out.push_str(&i.to_string());
            for j in 0..self.num_classes {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Index of the largest logit; ties go to the smaller index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &CellParams, sample: &SequenceSample) -> Result<usize> {
    let tr = forward_from_zero(params, &sample.inputs)?;
    Ok(argmax(&params.logits(tr.last())?))
}

pub fn evaluate(params: &CellParams, data: &Dataset, exec: Execution) -> Result<ConfusionMatrix> {
    check_dim("evaluate input dim", params.input_dim, data.input_dim)?;
    check_dim("evaluate classes", params.num_classes, data.num_classes)?;
    let predictions = map_ordered(exec, &data.samples, |s| predict(params, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new(data.num_classes);
    for (s, p) in data.samples.iter().zip(predictions) {
        cm.record(s.label, p);
    }
    Ok(cm)
}

/// Accuracy plus unweighted means of per-class precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Empty denominators contribute 0 for that class.
pub fn summarize(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::param("confusion matrix", "no samples recorded"));
    }
    let c = cm.num_classes();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let tp = cm.get(k, k);
        let predicted: u64 = (0..c).map(|i| cm.get(i, k)).sum();
        let actual: u64 = (0..c).map(|j| cm.get(k, j)).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let n = c as f64;
    Ok(Metrics {
        accuracy: ratio(cm.trace(), total),
        precision_macro: p_sum / n,
        recall_macro: r_sum / n,
        f1_macro: f_sum / n,
    })
}

impl Metrics {
    /// `key = value` lines, values as percentages with one decimal.
    pub fn to_text(&self) -> String {
        format!(
            "accuracy = {:.1}\nprecision_macro = {:.1}\nrecall_macro = {:.1}\nf1_macro = {:.1}\n",
            100.0 * self.accuracy,
            100.0 * self.precision_macro,
            100.0 * self.recall_macro,
            100.0 * self.f1_macro
        )
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.accuracy,
            self.precision_macro,
            self.recall_macro,
            self.f1_macro,
        ]
    }
}
