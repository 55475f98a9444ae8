//! Test-set scoring and model comparison.

use serde::{Deserialize, Serialize};

use super::{mse, ModelFile};
use crate::error::Result;
use crate::features::{column_mismatch, FeatureMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse: f64,
    pub mae: f64,
    pub predictions: Vec<f64>,
}

/// Scores `model` on `test`; the column names must match the training ones.
pub fn evaluate(model: &ModelFile, test: &FeatureMatrix) -> Result<Evaluation> {
    let expected: Vec<String> = model.columns.iter().map(|c| c.name.clone()).collect();
    let found = test.column_names();
    if expected != found {
        return Err(column_mismatch(&expected, &found));
    }
    let predictions = model.model.regressor().predict(test);
    let mae = if test.n_rows() == 0 {
        0.0
    } else {
        predictions.iter().zip(&test.target).map(|(p, y)| (p - y).abs()).sum::<f64>() / test.n_rows() as f64
    };
    Ok(Evaluation {
        mse: mse(&predictions, &test.target),
        mae,
        predictions,
    })
}

/// `100 * (1 - mse_a / mse_b)` rounded to one decimal.
pub fn improvement_pct(mse_a: f64, mse_b: f64) -> f64 {
    if mse_a == mse_b {
        return 0.0;
    }
    (1000.0 * (1.0 - mse_a / mse_b)).round() / 10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub name: String,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub model: String,
    pub baseline: String,
    /// Percent, one decimal.
    pub improvement_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Ascending MSE; ties keep input order.
    pub ranking: Vec<ModelScore>,
    /// Every ordered pair (model, baseline) with model ranked before baseline.
    pub improvements: Vec<Improvement>,
}

impl ComparisonReport {
    pub fn get(&self, name: &str) -> Option<&ModelScore> {
        self.ranking.iter().find(|s| s.name == name)
    }

    pub fn improvement(&self, model: &str, baseline: &str) -> Option<f64> {
        self.improvements
            .iter()
            .find(|i| i.model == model && i.baseline == baseline)
            .map(|i| i.improvement_pct)
    }
}

pub fn compare(scores: &[ModelScore]) -> ComparisonReport {
    let mut ranking = scores.to_vec();
    ranking.sort_by(|a, b| a.mse.total_cmp(&b.mse));
    let mut improvements = Vec::new();
    for (i, a) in ranking.iter().enumerate() {
        for b in &ranking[i + 1..] {
            improvements.push(Improvement {
                model: a.name.clone(),
                baseline: b.name.clone(),
                improvement_pct: improvement_pct(a.mse, b.mse),
            });
        }
    }
    ComparisonReport { ranking, improvements }
}
