//! Regression models trained on a [`FeatureMatrix`].
//!
//! Every learner is implemented here from scratch and is deterministic for a
//! given seed, data and config:
//!
//! - [`linear`]: least squares via the normal equations,
//! - [`mlp`]: ReLU perceptrons, one hidden layer (wide) or three (deep),
//! - [`tree`]: CART regression trees,
//! - [`gbt`]: gradient-boosted trees with impurity importances,
//! - [`eval`]: test-set scoring and model comparison.

pub mod eval;
pub mod gbt;
pub mod linear;
pub mod mlp;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ColumnMeta, FeatureMatrix};

pub use eval::{compare, evaluate, improvement_pct, ComparisonReport, Evaluation, Improvement, ModelScore};
pub use gbt::{gbt_fit, GbtConfig, GbtEnsemble};
pub use linear::{lr_fit, LinearModel};
pub use mlp::{mlp_init, mlp_train, Arch, MlpModel, Optimizer, TrainHistory};
pub use tree::{cart_fit, RegressionTree, TreeConfig};

pub trait Regressor {
    /// Prediction for one row; the row length must match the training columns.
    fn predict_row(&self, x: &[f64]) -> f64;

    fn predict(&self, m: &FeatureMatrix) -> Vec<f64> {
        m.rows().map(|r| self.predict_row(r)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub dnn_hidden: Vec<usize>,
    pub wnn_hidden: Vec<usize>,
    pub cart: TreeConfig,
    pub gbt: GbtConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::Adam,
            dnn_hidden: vec![64, 32, 16],
            wnn_hidden: vec![256],
            cart: TreeConfig::default(),
            gbt: GbtConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("cart.max_depth", self.cart.max_depth),
            ("cart.min_leaf", self.cart.min_leaf),
            ("gbt.max_depth", self.gbt.max_depth),
            ("gbt.min_leaf", self.gbt.min_leaf),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("bad learning_rate {}", self.learning_rate)));
        }
        for (name, widths) in [("dnn_hidden", &self.dnn_hidden), ("wnn_hidden", &self.wnn_hidden)] {
            if widths.is_empty() || widths.contains(&0) {
                return Err(Error::Config(format!(
                    "{name} needs at least one hidden layer of nonzero width, got {widths:?}"
                )));
            }
        }
        if !(self.gbt.shrinkage > 0.0 && self.gbt.shrinkage <= 1.0) {
            return Err(Error::Config(format!("gbt.shrinkage {} outside (0, 1]", self.gbt.shrinkage)));
        }
        Ok(())
    }

    pub fn hidden_for(&self, arch: Arch) -> &[usize] {
        match arch {
            Arch::Wnn => &self.wnn_hidden,
            Arch::Dnn | Arch::Custom => &self.dnn_hidden,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Wnn,
    Dnn,
    Cart,
    Gbt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Lr, ModelKind::Wnn, ModelKind::Dnn, ModelKind::Cart, ModelKind::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Wnn => "wnn",
            ModelKind::Dnn => "dnn",
            ModelKind::Cart => "cart",
            ModelKind::Gbt => "gbt",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}; expected lr, wnn, dnn, cart or gbt")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "lowercase")]
pub enum ModelParams {
    Lr(LinearModel),
    Wnn(MlpModel),
    Dnn(MlpModel),
    Cart(RegressionTree),
    Gbt(GbtEnsemble),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Lr(_) => ModelKind::Lr,
            ModelParams::Wnn(_) => ModelKind::Wnn,
            ModelParams::Dnn(_) => ModelKind::Dnn,
            ModelParams::Cart(_) => ModelKind::Cart,
            ModelParams::Gbt(_) => ModelKind::Gbt,
        }
    }

    pub fn regressor(&self) -> &dyn Regressor {
        match self {
            ModelParams::Lr(m) => m,
            ModelParams::Wnn(m) | ModelParams::Dnn(m) => m,
            ModelParams::Cart(m) => m,
            ModelParams::Gbt(m) => m,
        }
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Serialized trained model with the columns it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub columns: Vec<ColumnMeta>,
    pub config: TrainConfig,
    pub seed: u64,
    pub model: ModelParams,
}

impl ModelFile {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format_version {} not supported (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Outcome of [`train`]: the model file and, for neural models, the loss curve.
#[derive(Clone, Debug)]
pub struct Trained {
    pub file: ModelFile,
    pub history: Option<TrainHistory>,
}

/// Fits one model kind on `train`, using `val` for epoch selection where it applies.
pub fn train(kind: ModelKind, train: &FeatureMatrix, val: &FeatureMatrix, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if train.n_rows() == 0 {
        return Err(Error::InsufficientData("training matrix is empty".into()));
    }
    let mut history = None;
    let model = match kind {
        ModelKind::Lr => ModelParams::Lr(lr_fit(train)?),
        ModelKind::Wnn | ModelKind::Dnn => {
            let arch = if kind == ModelKind::Wnn { Arch::Wnn } else { Arch::Dnn };
            let init = MlpModel::init(arch, cfg.hidden_for(arch), train.n_cols(), cfg.seed)?;
            let (model, h) = mlp_train(init, train, val, cfg)?;
            history = Some(h);
            if kind == ModelKind::Wnn {
                ModelParams::Wnn(model)
            } else {
                ModelParams::Dnn(model)
            }
        }
        ModelKind::Cart => ModelParams::Cart(cart_fit(train, &cfg.cart)),
        ModelKind::Gbt => ModelParams::Gbt(gbt_fit(train, &cfg.gbt)),
    };
    Ok(Trained {
        file: ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            columns: train.columns.clone(),
            config: cfg.clone(),
            seed: cfg.seed,
            model,
        },
        history,
    })
}

pub(crate) fn mse(pred: &[f64], target: &[f64]) -> f64 {
    if target.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / target.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.dnn_hidden = vec![];
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.wnn_hidden = vec![0];
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.gbt.shrinkage = 0.0;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn model_kind_parsing() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn model_file_roundtrip_and_determinism() {
        let cols = vec![ColumnMeta::numeric("x0"), ColumnMeta::numeric("x1")];
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 10.0, ((i * 7) % 11) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[1] + 1.0).collect();
        let m = FeatureMatrix::from_rows(cols, &rows, y).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.epochs = 3;
        cfg.wnn_hidden = vec![8];
        cfg.dnn_hidden = vec![4, 4, 4];
        for kind in ModelKind::ALL {
            let a = train(kind, &m, &m, &cfg).unwrap();
            let b = train(kind, &m, &m, &cfg).unwrap();
            let ja = a.file.to_json().unwrap();
            assert_eq!(ja, b.file.to_json().unwrap(), "{kind}");
            let back = ModelFile::from_json(&ja).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(back.model.regressor().predict(&m), a.file.model.regressor().predict(&m));
            assert_eq!(a.history.is_some(), matches!(kind, ModelKind::Wnn | ModelKind::Dnn));
        }
    }
}
