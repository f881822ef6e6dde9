//! Confusion counts and Macro/Micro-F1.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{InputView, MultiViewSample};
use crate::network::FusionNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Zero denominators score 0; the macro average runs over all `num_classes`.
pub fn evaluate(preds: &[usize], truths: &[usize], num_classes: usize) -> Result<EvaluationReport> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch(preds.len(), truths.len()));
    }
    if num_classes == 0 {
        return Err(Error::Invalid("num_classes must be positive".into()));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        let bad = if p >= num_classes { Some(p) } else if t >= num_classes { Some(t) } else { None };
        if let Some(label) = bad {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        confusion[t][p] += 1;
    }

    let mut per_class = Vec::with_capacity(num_classes);
    let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
    for t in 0..num_classes {
        let tp = confusion[t][t];
        let row: u64 = confusion[t].iter().sum();
        let col: u64 = confusion.iter().map(|r| r[t]).sum();
        let (fp, fn_) = (col - tp, row - tp);
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        per_class.push(ClassScores { precision, recall, f1: f1(precision, recall), support: row });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64;
    let micro_f1 = f1(ratio(tp_all, tp_all + fp_all), ratio(tp_all, tp_all + fn_all));
    Ok(EvaluationReport { confusion, per_class, macro_f1, micro_f1 })
}

impl EvaluationReport {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Per-class rows followed by a summary row; `names` label the classes.
    pub fn to_csv(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (t, c) in self.per_class.iter().enumerate() {
            let name = names.and_then(|n| n.get(t)).cloned().unwrap_or_else(|| t.to_string());
            let _ = writeln!(out, "{name},{:.6},{:.6},{:.6},{}", c.precision, c.recall, c.f1, c.support);
        }
        let _ = writeln!(out, "summary,macro_f1={:.6},micro_f1={:.6},,{}", self.macro_f1, self.micro_f1, self.total());
        out
    }

    pub fn to_markdown(&self, title: &str) -> String {
        comparison_markdown(&[(title.to_string(), self.macro_f1, self.micro_f1)])
    }
}

/// `| Method | Macro-F1 | Micro-F1 |` with percentages.
pub fn comparison_markdown(rows: &[(String, f64, f64)]) -> String {
    let mut out = String::from("| Method | Macro-F1 | Micro-F1 |\n|---|---|---|\n");
    for (name, macro_f1, micro_f1) in rows {
        let _ = writeln!(out, "| {name} | {:.2}% | {:.2}% |", macro_f1 * 100.0, micro_f1 * 100.0);
    }
    out
}

/// First index of the maximum.
pub fn argmax(p: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn inputs_matrix(samples: &[MultiViewSample], view: InputView) -> Result<Array2<f64>> {
    let first = samples.first().ok_or(Error::Empty("samples"))?;
    let dim = first.input(view).len();
    let mut flat = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        let x = s.input(view);
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
        }
        flat.extend(x);
    }
    Ok(Array2::from_shape_vec((samples.len(), dim), flat).expect("rows of equal length"))
}

pub fn argmax_predict(net: &FusionNetwork, view: InputView, samples: &[MultiViewSample]) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let probs = net.predict_proba(inputs_matrix(samples, view)?.view())?;
    Ok(probs.rows().into_iter().map(argmax).collect())
}
