//! Ordinary least squares: `y = bias + theta . x + noise`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Regressor;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Ridge term added to the Gram matrix when it is (numerically) singular.
/// One-hot groups sum to the intercept column, so this is the common case on
/// encoded feature matrices.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Gram matrices with `min_eig <= SINGULAR_RATIO * max_eig` get the ridge term.
const SINGULAR_RATIO: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub theta: Vec<f64>,
    pub bias: f64,
    pub ridge_applied: bool,
    /// Condition number of the Gram matrix actually solved.
    pub condition_number: f64,
}

impl Regressor for LinearModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.bias + self.theta.iter().zip(x).map(|(t, v)| t * v).sum::<f64>()
    }
}

fn design(train: &FeatureMatrix) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p) = (train.n_rows(), train.n_cols());
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { train.row(i)[j - 1] });
    (a, DVector::from_column_slice(&train.target))
}

fn condition(gram: &DMatrix<f64>) -> (f64, f64, f64) {
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    (min, max, if min > 0.0 { max / min } else { f64::MAX })
}

/// Solves the normal equations `(A^T A) w = A^T y` with an intercept column.
///
/// Singular systems are regularized with [`RIDGE_LAMBDA`] on the non-intercept
/// coefficients. If even that fails to factor, the SVD pseudo-inverse is used
/// and a warning carries the condition number.
pub fn lr_fit(train: &FeatureMatrix) -> Result<LinearModel> {
    if train.n_rows() == 0 {
        return Err(Error::InsufficientData("linear regression on zero rows".into()));
    }
    let (a, y) = design(train);
    let at = a.transpose();
    let mut gram = &at * &a;
    let rhs = &at * &y;

    let (min, max, mut cond) = condition(&gram);
    let ridge_applied = min <= SINGULAR_RATIO * max;
    if ridge_applied {
        for j in 1..gram.nrows() {
            gram[(j, j)] += RIDGE_LAMBDA;
        }
        cond = condition(&gram).2;
    }
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            log::warn!("Gram matrix still rank-deficient after ridge (condition number {cond:e}); using pseudo-inverse");
            gram.svd(true, true)
                .solve(&rhs, 1e-12 * max)
                .map_err(|e| Error::InsufficientData(e.to_string()))?
        }
    };
    Ok(LinearModel {
        theta: w.iter().skip(1).copied().collect(),
        bias: w[0],
        ridge_applied,
        condition_number: cond,
    })
}

/// Full-batch gradient descent on the same objective, from zero weights.
/// Used to cross-check [`lr_fit`].
pub fn lr_fit_gd(train: &FeatureMatrix, learning_rate: f64, iterations: usize) -> LinearModel {
    let (n, p) = (train.n_rows(), train.n_cols());
    let mut theta = vec![0.0; p];
    let mut bias = 0.0;
    let mut grad = vec![0.0; p];
    for _ in 0..iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, &t) in train.rows().zip(&train.target) {
            let r = bias + theta.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - t;
            gb += 2.0 * r;
            for (g, v) in grad.iter_mut().zip(x) {
                *g += 2.0 * r * v;
            }
        }
        bias -= learning_rate * gb / n as f64;
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= learning_rate * g / n as f64;
        }
    }
    LinearModel {
        theta,
        bias,
        ridge_applied: false,
        condition_number: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ColumnMeta;
    use crate::models::mse;
    use proptest::prelude::*;

    fn matrix(rows: &[Vec<f64>], y: &[f64]) -> FeatureMatrix {
        let cols = (0..rows[0].len()).map(|j| ColumnMeta::numeric(format!("x{j}"))).collect();
        FeatureMatrix::from_rows(cols, rows, y.to_vec()).unwrap()
    }

    #[test]
    fn two_points_exact_line() {
        let m = lr_fit(&matrix(&[vec![0.0], vec![1.0]], &[1.0, 3.0])).unwrap();
        assert!((m.bias - 1.0).abs() < 1e-12);
        assert!((m.theta[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_target_gives_zero_model() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = lr_fit(&matrix(&rows, &[0.0; 10])).unwrap();
        assert_eq!(m.bias, 0.0);
        assert!(m.theta.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn collinear_columns_use_ridge_and_still_fit() {
        // Two one-hot columns that sum to the intercept.
        let rows: Vec<Vec<f64>> = (0..20).map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 3.0 } else { 5.0 }).collect();
        let data = matrix(&rows, &y);
        let m = lr_fit(&data).unwrap();
        assert!(m.ridge_applied);
        assert!(m.condition_number > 1e6);
        assert!(mse(&m.predict(&data), &y) < 1e-12);
    }

    #[test]
    fn normal_equations_agree_with_gradient_descent() {
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let a = ((i * 37) % 101) as f64 / 50.0 - 1.0;
                let b = ((i * 53) % 97) as f64 / 48.0 - 1.0;
                vec![a, b]
            })
            .collect();
        let y: Vec<f64> = rows.iter().enumerate().map(|(i, r)| 0.5 + 2.0 * r[0] - r[1] + ((i % 7) as f64 - 3.0) * 0.1).collect();
        let data = matrix(&rows, &y);
        let exact = mse(&lr_fit(&data).unwrap().predict(&data), &y);
        let gd = mse(&lr_fit_gd(&data, 0.1, 20_000).predict(&data), &y);
        assert!((exact - gd).abs() < 1e-4, "{exact} vs {gd}");
        assert!(exact <= gd + 1e-12);
    }

    proptest! {
        #[test]
        fn prediction_is_affine(
            theta in prop::collection::vec(-5.0f64..5.0, 3),
            bias in -5.0f64..5.0,
            x1 in prop::collection::vec(-10.0f64..10.0, 3),
            x2 in prop::collection::vec(-10.0f64..10.0, 3),
            a in 0.0f64..1.0,
        ) {
            let m = LinearModel { theta, bias, ridge_applied: false, condition_number: 1.0 };
            let mix: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + (1.0 - a) * q).collect();
            let lhs = m.predict_row(&mix);
            let rhs = a * m.predict_row(&x1) + (1.0 - a) * m.predict_row(&x2);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn training_mse_beats_best_constant(ys in prop::collection::vec(-10.0f64..10.0, 12)) {
            let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
            let data = matrix(&rows, &ys);
            let fitted = mse(&lr_fit(&data).unwrap().predict(&data), &ys);
            let mean = ys.iter().sum::<f64>() / 12.0;
            let constant = mse(&[mean; 12], &ys);
            prop_assert!(fitted <= constant + 1e-9);
        }
    }
}
