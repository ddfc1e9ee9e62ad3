use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    /// `sqrt((1/T) Σ_t ‖y_t - ŷ_t‖²)` over the data that carry evaluated entries.
    pub per_datum: f64,
    /// `sqrt(Σ (y - ŷ)² / #entries)`
    pub per_entry: f64,
    pub entries: usize,
    pub data: usize,
}

/// RMSE over `(prediction, truth)` pairs grouped by datum. Data without any
/// evaluated entry do not count toward `T`.
pub fn rmse(pairs: &[Vec<(f64, f64)>]) -> Result<Rmse> {
    let mut sq = 0.0;
    let mut entries = 0;
    let mut data = 0;
    for group in pairs.iter().filter(|g| !g.is_empty()) {
        data += 1;
        for &(pred, truth) in group {
            sq += (pred - truth) * (pred - truth);
            entries += 1;
        }
    }
    if entries == 0 {
        return Err(Error::domain("no entries to evaluate"));
    }
    Ok(Rmse { per_datum: (sq / data as f64).sqrt(), per_entry: (sq / entries as f64).sqrt(), entries, data })
}

/// A linear rule `sign(wᵀψ + b)` fitted by ridge least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct LsClassifier {
    pub weights: DVector<f64>,
    pub bias: f64,
}

impl LsClassifier {
    /// Fit `min Σ (wᵀψ + b - y)² + ridge·‖w‖²` on labels in `{-1, +1}`.
    pub fn fit(features: &[DVector<f64>], labels: &[i8], ridge: f64) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::dim(format!("{} features, {} labels", features.len(), labels.len())));
        }
        if labels.iter().any(|&y| y != 1 && y != -1) {
            return Err(Error::domain("labels must be -1 or +1"));
        }
        if labels.iter().all(|&y| y == labels[0]) {
            return Err(Error::domain("training set holds a single class"));
        }
        let d = features[0].len();
        let n = features.len();
        let x = DMatrix::from_fn(n, d + 1, |r, c| if c == d { 1.0 } else { features[r][c] });
        let y = DVector::from_iterator(n, labels.iter().map(|&l| l as f64));
        let mut gram = x.transpose() * &x;
        for k in 0..d {
            gram[(k, k)] += ridge;
        }
        let rhs = x.transpose() * y;
        let sol = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Numerical { context: "least-squares fit", detail: e.to_string() })?,
        };
        Ok(Self { weights: sol.rows(0, d).into_owned(), bias: sol[d] })
    }

    pub fn predict(&self, psi: &DVector<f64>) -> i8 {
        if self.weights.dot(psi) + self.bias > 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Fit on the training sketches, classify the test sketches and report the
/// misclassified fraction.
pub fn ls_classify(
    train: &[DVector<f64>],
    train_labels: &[i8],
    test: &[DVector<f64>],
    test_labels: &[i8],
    ridge: f64,
) -> Result<(Vec<i8>, f64)> {
    if test.is_empty() || test.len() != test_labels.len() {
        return Err(Error::dim(format!("{} test sketches, {} labels", test.len(), test_labels.len())));
    }
    let clf = LsClassifier::fit(train, train_labels, ridge)?;
    let pred: Vec<i8> = test.iter().map(|p| clf.predict(p)).collect();
    let wrong = pred.iter().zip(test_labels).filter(|(a, b)| a != b).count();
    Ok((pred, wrong as f64 / test.len() as f64))
}
