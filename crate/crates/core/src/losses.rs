//! Softmax cross-entropy shared by the supervised, rotation and episodic
//! objectives. Computed in `f64` with max-logit subtraction.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// Mean cross-entropy over rows and its gradient with respect to `logits`.
pub fn softmax_cross_entropy(logits: &Matrix<f64>, labels: &[usize]) -> Result<(f64, Matrix<f64>)> {
    if logits.rows != labels.len() {
        return Err(Error::validation(format!(
            "{} logit rows for {} labels",
            logits.rows,
            labels.len()
        )));
    }
    if logits.rows == 0 {
        return Err(Error::validation("cross-entropy over an empty batch"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= logits.cols) {
        return Err(Error::validation(format!(
            "label {bad} outside 0..{}",
            logits.cols
        )));
    }
    if !logits.is_finite() {
        return Err(Error::validation("non-finite logits"));
    }
    let n = logits.rows as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        total += lse - row[y];
        for (g, x) in grad.row_mut(r).iter_mut().zip(row) {
            *g = (x - lse).exp() / n;
        }
        grad.row_mut(r)[y] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

/// Row-wise argmax, ties resolved to the lowest column.
pub fn argmax_rows(m: &Matrix<f64>) -> Vec<usize> {
    (0..m.rows)
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let (l, _) = softmax_cross_entropy(&Matrix::zeros(3, 5), &[0, 2, 4]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let m = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, -1.0]]);
        let (_, g) = softmax_cross_entropy(&m, &[1, 2]).unwrap();
        for r in 0..2 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_label() {
        assert!(softmax_cross_entropy(&Matrix::zeros(1, 4), &[4]).is_err());
    }

    #[test]
    fn stable_for_huge_logits() {
        let m = Matrix::from_rows(&[vec![1000.0, 0.0]]);
        let (l, g) = softmax_cross_entropy(&m, &[0]).unwrap();
        assert!(l.abs() < 1e-12 && g.is_finite());
    }

    #[test]
    fn argmax_tie_goes_low() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0, 0.0]]);
        assert_eq!(argmax_rows(&m), vec![0]);
    }
}
