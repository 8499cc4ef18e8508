//! Accuracy, binary F1, confusion matrices, PCA and evaluation reports.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{binarize_labels, CellType};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "prediction count {} differs from label count {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("metrics need at least one sample".into()));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1 {
    pub value: f64,
    pub precision: f64,
    pub recall: f64,
    /// Precision + recall was zero; `value` is 0 by convention.
    pub undefined: bool,
}

/// F1 of the positive class (label 1) over binary labels.
pub fn f1_binary(pred: &[usize], truth: &[usize]) -> Result<F1> {
    check_pair(pred, truth)?;
    if let Some(l) = pred.iter().chain(truth).find(|&&l| l > 1) {
        return Err(Error::Input(format!("f1_binary needs 0/1 labels, found {l}")));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fneg);
    let undefined = precision + recall == 0.0;
    let value = if undefined {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1 {
        value,
        precision,
        recall,
        undefined,
    })
}

/// `counts[t][p]` = samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Per-class support (row sums).
    pub fn support(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    check_pair(pred, truth)?;
    let mut counts = vec![vec![0usize; classes]; classes];
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p >= classes || t >= classes {
            return Err(Error::Input(format!(
                "label pair (truth {t}, predicted {p}) at row {i} outside [0, {classes})"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// `n×k` scores of the centered data.
    pub projection: Matrix<f64>,
    /// Share of total variance carried by each returned component.
    pub explained_ratio: Vec<f64>,
    /// `k×d` unit principal directions (zero rows for padded components).
    pub components: Matrix<f64>,
    pub mean: Vec<f64>,
    pub warning: Option<String>,
}

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

/// Projects onto the top-`k` principal directions of the column-centered
/// data. Each direction is flipped so its largest-magnitude loading is
/// positive; directions beyond the numerical rank are zero-padded.
pub fn pca_project(z: &Matrix<f32>, k: usize) -> Result<Pca> {
    let (n, d) = z.shape();
    if n < 2 {
        return Err(Error::Input(format!("pca needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::Input(format!("pca component count {k} outside [1, {}]", n.min(d))));
    }
    let mut mean = vec![0f64; d];
    for row in z.iter_rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| z[(i, j)] as f64 - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut components = Matrix::zeros(k, d);
    let mut explained_ratio = Vec::with_capacity(k);
    let mut padded = 0;
    for (c, &idx) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda <= RANK_TOL * top || top == 0.0 {
            padded += 1;
            explained_ratio.push(0.0);
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        let mut lead = 0;
        for j in 1..d {
            if v[j].abs() > v[lead].abs() {
                lead = j;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[(c, j)] = sign * v[j];
        }
        explained_ratio.push(if total > 0.0 { lambda / total } else { 0.0 });
    }
    let mut projection = Matrix::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            projection[(i, c)] = (0..d).map(|j| centered[(i, j)] * components[(c, j)]).sum();
        }
    }
    let warning = (padded > 0).then(|| {
        format!("data rank below {k}: {padded} principal component(s) zero-padded")
    });
    Ok(Pca {
        projection,
        explained_ratio,
        components,
        mean,
        warning,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransferMode {
    #[serde(rename = "in-population")]
    InPopulation,
    #[serde(rename = "zero-shot")]
    ZeroShot,
}

impl TransferMode {
    pub fn name(self) -> &'static str {
        match self {
            TransferMode::InPopulation => "in-population",
            TransferMode::ZeroShot => "zero-shot",
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "multiclass-7")]
    Multiclass,
    #[serde(rename = "binary")]
    Binary,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Multiclass => "multiclass-7",
            Task::Binary => "binary",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Task::Multiclass => crate::data::DiseaseLabel::COUNT,
            Task::Binary => 2,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass-7" | "multiclass" => Ok(Task::Multiclass),
            "binary" => Ok(Task::Binary),
            _ => Err(Error::Config(format!("unknown task {s:?}; expected multiclass-7 or binary"))),
        }
    }
}

/// Metrics of one (model, population, transfer mode) evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub cell_type: CellType,
    pub mode: TransferMode,
    pub task: Task,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: f64,
    /// F1 of Normal (0) vs any disease (1) after binarizing predictions and labels.
    pub binary_f1: F1,
    pub test_count: usize,
    pub confusion: ConfusionMatrix,
    pub fingerprints: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Scores predictions against labels; both use the task's class indices.
    pub fn from_predictions(
        model: &str,
        cell_type: CellType,
        mode: TransferMode,
        task: Task,
        train_accuracy: Option<f64>,
        pred: &[usize],
        truth: &[usize],
    ) -> Result<Self> {
        let confusion = confusion_matrix(pred, truth, task.num_classes())?;
        let binary_f1 = f1_binary(&binarize_labels(pred), &binarize_labels(truth))?;
        let mut notes = Vec::new();
        if binary_f1.undefined {
            notes.push("binary F1 undefined (no predicted or true disease samples); reported as 0".into());
        }
        Ok(Self {
            model: model.to_string(),
            cell_type,
            mode,
            task,
            train_accuracy,
            test_accuracy: accuracy(pred, truth)?,
            binary_f1,
            test_count: pred.len(),
            confusion,
            fingerprints: BTreeMap::new(),
            notes,
        })
    }

    pub const CSV_HEADER: &'static str =
        "model,cell_type,mode,task,train_accuracy,test_accuracy,binary_f1,f1_undefined,test_count";

    pub fn csv_row(&self) -> String {
        let train = self.train_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.6},{:.6},{},{}",
            self.model,
            self.cell_type,
            self.mode,
            self.task,
            train,
            self.test_accuracy,
            self.binary_f1.value,
            self.binary_f1.undefined,
            self.test_count
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_binary(&[1, 0, 1], &[1, 0, 1]).unwrap().value, 1.0);
        // TP=2, FP=1, FN=1
        let f = f1_binary(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]).unwrap();
        assert_abs_diff_eq!(f.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.recall, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.value, 2.0 / 3.0, epsilon = 1e-15);
        let none = f1_binary(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(none.undefined);
    }

    #[test]
    fn confusion_examples() {
        let c = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(c.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let c = confusion_matrix(&[0, 1, 1, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(c.counts, vec![vec![1, 1], vec![1, 1]]);
        assert_eq!(c.total(), 4);
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
    }

    #[test]
    fn pca_line_and_padding() {
        let z = Matrix::from_vec(5, 2, (0..5).flat_map(|i| [i as f32, 2.0 * i as f32]).collect()).unwrap();
        let p = pca_project(&z, 2).unwrap();
        assert!(p.explained_ratio[0] > 0.999);
        assert!(p.warning.is_some());
        assert!(p.components[(0, 1)] > 0.0);
    }
}
