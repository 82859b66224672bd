//! Least squares for the small, possibly badly scaled systems of the LIME
//! surrogate.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Minimizes `sum_i w_i (y_i - x_i . beta)^2 + sum_j penalty_j beta_j^2`
/// by Householder QR of the row-scaled design augmented with
/// `sqrt(penalty_j) e_j` rows. Working on the design directly (rather than
/// the normal equations) keeps tiny weights from being lost to rounding.
///
/// `design` is row-major with `cols` columns.
pub(crate) fn weighted_ridge(
    design: &[f64],
    targets: &[f64],
    weights: &[f64],
    penalty: &[f64],
    cols: usize,
) -> Result<Vec<f64>> {
    let rows = targets.len();
    debug_assert_eq!(design.len(), rows * cols);
    debug_assert_eq!(weights.len(), rows);
    debug_assert_eq!(penalty.len(), cols);

    let extra = penalty.iter().filter(|&&p| p > 0.0).count();
    let m = rows + extra;
    // column-major copy of the augmented system
    let mut a = vec![0.0; m * cols];
    let mut b = vec![0.0; m];
    for i in 0..rows {
        let s = libm::sqrt(weights[i]);
        for j in 0..cols {
            a[j * m + i] = s * design[i * cols + j];
        }
        b[i] = s * targets[i];
    }
    let mut r = rows;
    for (j, &p) in penalty.iter().enumerate() {
        if p > 0.0 {
            a[j * m + r] = libm::sqrt(p);
            r += 1;
        }
    }

    let mut diag = vec![0.0; cols];
    for k in 0..cols {
        let col = &mut a[k * m..(k + 1) * m];
        let norm = libm::sqrt(col[k..].iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return Err(Error::Singular);
        }
        let alpha = if col[k] > 0.0 { -norm } else { norm };
        col[k] -= alpha;
        let vnorm2: f64 = col[k..].iter().map(|v| v * v).sum();
        diag[k] = alpha;
        // reflect the remaining columns and the right-hand side
        let v: Vec<f64> = col[k..].to_vec();
        for j in k + 1..cols {
            let c = &mut a[j * m + k..(j + 1) * m];
            let dot: f64 = v.iter().zip(c.iter()).map(|(x, y)| x * y).sum();
            let f = 2.0 * dot / vnorm2;
            c.iter_mut().zip(&v).for_each(|(y, x)| *y -= f * x);
        }
        let dot: f64 = v.iter().zip(&b[k..]).map(|(x, y)| x * y).sum();
        let f = 2.0 * dot / vnorm2;
        b[k..].iter_mut().zip(&v).for_each(|(y, x)| *y -= f * x);
    }

    let scale = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= scale * 1e-12) {
        return Err(Error::Singular);
    }
    let mut beta = vec![0.0; cols];
    for k in (0..cols).rev() {
        let tail: f64 = (k + 1..cols).map(|j| a[j * m + k] * beta[j]).sum();
        beta[k] = (b[k] - tail) / diag[k];
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit() {
        // y = 1 + 2x on three points
        let design = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let beta = weighted_ridge(&design, &[1.0, 3.0, 5.0], &[1.0; 3], &[0.0; 2], 2).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-14 && (beta[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ridge_shrinks_penalized_column_only() {
        // single feature, y = 2x at x = 1: beta = 2 / (1 + lambda)
        let beta = weighted_ridge(&[1.0], &[2.0], &[1.0], &[1.0], 1).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_weights_survive() {
        let design = [1.0, 1.0, 1.0, 0.0];
        let beta = weighted_ridge(&design, &[0.7, 0.2], &[500.0, 1e-7], &[0.0, 0.0], 2).unwrap();
        assert!((beta[0] - 0.2).abs() < 1e-12 && (beta[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn detects_singular() {
        let design = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(
            weighted_ridge(&design, &[1.0, 2.0], &[1.0; 2], &[0.0; 2], 2),
            Err(Error::Singular)
        );
    }
}
