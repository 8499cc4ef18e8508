//! Stateless forward kernels shared by the tape and by direct (inference) callers.

use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, Matrix, Scalar};

pub fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
    BinaryCrossEntropy,
}

/// What a loss compares predictions against.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a, T> {
    Values(&'a Matrix<T>),
    Labels(&'a [usize]),
}

/// Mean loss over the batch. Cross-entropy variants consume raw logits.
pub fn loss<T: Scalar>(kind: LossKind, pred: &Matrix<T>, target: Target<'_, T>) -> Result<T> {
    match (kind, target) {
        (LossKind::Mse, Target::Values(t)) => mse(pred, t),
        (LossKind::CrossEntropy, Target::Labels(l)) => Ok(cross_entropy(pred, l)?.0),
        (LossKind::BinaryCrossEntropy, Target::Labels(l)) => {
            let targets = binary_targets(l)?;
            bce_with_logits(pred, &targets)
        }
        (LossKind::BinaryCrossEntropy, Target::Values(t)) => {
            if t.shape() != pred.shape() {
                return Err(Error::shape("bce targets", pred.shape(), t.shape()));
            }
            bce_with_logits(pred, t.as_slice())
        }
        (kind, _) => Err(Error::Input(format!("{kind:?} does not accept this target type"))),
    }
}

pub(crate) fn mse<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse target", pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return Err(Error::Input("mse of an empty batch".into()));
    }
    let s: T = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(s / T::from_usize(pred.len()))
}

/// Returns the mean loss and the softmax probabilities.
pub(crate) fn cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::Dimension {
            context: "cross-entropy labels".into(),
            expected: format!("{} labels", logits.rows()),
            actual: format!("{} labels", labels.len()),
        });
    }
    if logits.rows() == 0 {
        return Err(Error::Input("cross-entropy of an empty batch".into()));
    }
    let c = logits.cols();
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Input(format!(
                "label {y} at row {i} outside class range [0, {c})"
            )));
        }
        let row = logits.row(i);
        total += log_sum_exp(row) - row[y];
    }
    Ok((total / T::from_usize(labels.len()), softmax_rows(logits)))
}

pub(crate) fn binary_targets<T: Scalar>(labels: &[usize]) -> Result<Vec<T>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| match y {
            0 => Ok(T::zero()),
            1 => Ok(T::one()),
            _ => Err(Error::Input(format!(
                "label {y} at row {i} outside binary range [0, 2)"
            ))),
        })
        .collect()
}

pub(crate) fn bce_with_logits<T: Scalar>(logits: &Matrix<T>, targets: &[T]) -> Result<T> {
    if logits.cols() != 1 || targets.len() != logits.rows() {
        return Err(Error::Dimension {
            context: "binary cross-entropy".into(),
            expected: format!("{}x1 logits with matching targets", targets.len()),
            actual: format!("{}x{}", logits.rows(), logits.cols()),
        });
    }
    if targets.is_empty() {
        return Err(Error::Input("binary cross-entropy of an empty batch".into()));
    }
    let s: T = logits
        .as_slice()
        .iter()
        .zip(targets)
        .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
        .sum();
    Ok(s / T::from_usize(targets.len()))
}

/// Scaled dot-product attention for one head. Returns the output and the
/// attention weights (`L×L`, rows summing to one).
pub fn attention_head<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    scale: T,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if q.shape() != k.shape() || k.rows() != v.rows() {
        return Err(Error::shape("attention keys", q.shape(), k.shape()));
    }
    let mut scores = matmul_nt(q, k)?;
    for i in 0..scores.rows() {
        let row = scores.row_mut(i);
        row.iter_mut().for_each(|s| *s *= scale);
        softmax_in_place(row);
    }
    let out = matmul_nn(&scores, v)?;
    Ok((out, scores))
}

/// `softmax(QKᵀ/√width)V` where `width` is the column count of `Q`.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    let scale = T::one() / T::from_usize(q.cols().max(1)).sqrt();
    Ok(attention_head(q, k, v, scale)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&m(&[vec![-1.0, 0.0, 2.0]])), m(&[vec![0.0, 0.0, 2.0]]));
        let pos = m(&[vec![0.5, 3.0], vec![1.0, 2.0]]);
        assert_eq!(relu(&pos), pos);
        assert_eq!(relu(&m(&[vec![-5.0]])), m(&[vec![0.0]]));
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_rows(&m(&[vec![0.0, 0.0, 0.0]]));
        for &p in u.as_slice() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
        let big = softmax_rows(&m(&[vec![1000.0, 0.0]]));
        assert!(big.is_finite());
        assert_abs_diff_eq!(big[(0, 0)], 1.0, epsilon = 1e-12);
        let l = softmax_rows(&m(&[vec![1f64.ln(), 2f64.ln(), 3f64.ln()]]));
        for (j, want) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
            assert_abs_diff_eq!(l[(0, j)], *want, epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let p = m(&[vec![1.0, 2.0]]);
        assert_eq!(loss(LossKind::Mse, &p, Target::Values(&p)).unwrap(), 0.0);
        let ce = loss(LossKind::CrossEntropy, &m(&[vec![0.0, 0.0]]), Target::Labels(&[0])).unwrap();
        assert_abs_diff_eq!(ce, 2f64.ln(), epsilon = 1e-12);
        let bce = loss(LossKind::BinaryCrossEntropy, &m(&[vec![0.0]]), Target::Labels(&[1])).unwrap();
        assert_abs_diff_eq!(bce, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_labels_rejected() {
        let logits = m(&[vec![0.0, 0.0]]);
        assert!(matches!(
            loss(LossKind::CrossEntropy, &logits, Target::Labels(&[2])),
            Err(Error::Input(_))
        ));
        assert!(loss(LossKind::BinaryCrossEntropy, &m(&[vec![0.0]]), Target::Labels(&[3])).is_err());
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let l = loss(LossKind::BinaryCrossEntropy, &m(&[vec![-800.0]]), Target::Labels(&[1])).unwrap();
        assert_abs_diff_eq!(l, 800.0, epsilon = 1e-9);
    }

    #[test]
    fn attention_examples() {
        let v = m(&[vec![1.0, 2.0], vec![3.0, 5.0], vec![-1.0, 0.0]]);
        let zero = Matrix::zeros(3, 2);
        let k = m(&[vec![0.3, 1.0], vec![2.0, -1.0], vec![0.0, 0.5]]);
        let out = scaled_dot_attention(&zero, &k, &v).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(out[(i, 0)], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(out[(i, 1)], 7.0 / 3.0, epsilon = 1e-12);
        }

        let single = scaled_dot_attention(&m(&[vec![4.0]]), &m(&[vec![-2.0]]), &m(&[vec![9.0]])).unwrap();
        assert_eq!(single, m(&[vec![9.0]]));

        // L=2, width 1: scores q·k/1. Row 0: q=ln2 against k=[1,0] gives weights
        // [2/3, 1/3]; row 1: q=0 gives [1/2, 1/2].
        let q = m(&[vec![2f64.ln()], vec![0.0]]);
        let k = m(&[vec![1.0], vec![0.0]]);
        let v = m(&[vec![3.0], vec![6.0]]);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        assert_abs_diff_eq!(out[(0, 0)], 2.0 / 3.0 * 3.0 + 1.0 / 3.0 * 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(1, 0)], 4.5, epsilon = 1e-12);
    }
}
