//! Training: loss, optimizer, folds, the epoch loop and test-set selection.

mod adam;
mod folds;
mod fit;
mod loss;
mod split;

pub use adam::{adam_step, AdamParams, AdamState};
pub use folds::{make_folds, FoldAssignment, TEN_SEGMENT};
pub use fit::{
    steps_per_epoch, train_fold, train_resume, validation_f1_bar, EpochRecord, StopReason, TrainExample, TrainOutcome,
    TrainState, ValExample,
};
pub use loss::{generalized_dice_loss, one_hot, rasterize, LabelMask, GDL_EPS};
pub use split::{draw_candidates, select_median_split, Candidate, PoolSubject, SplitConstraints, SplitSelection};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 12,
            patience_epochs: 300,
            max_epochs: 800,
            folds: 6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.learning_rate) || !pos(self.eps_adam) {
            return Err(Error::Config("learning_rate and eps_adam must be positive".into()));
        }
        if !(pos(self.beta1) && self.beta1 < 1.0 && pos(self.beta2) && self.beta2 < 1.0) {
            return Err(Error::Config("beta1 and beta2 must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.folds == 0 {
            return Err(Error::Config("batch_size, max_epochs and folds must be >= 1".into()));
        }
        if self.patience_epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "patience_epochs {} exceeds max_epochs {}",
                self.patience_epochs, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps_adam }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.batch_size, c.patience_epochs, c.max_epochs, c.folds), (12, 300, 800, 6));
        assert!(TrainConfig { patience_epochs: 900, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
        assert_eq!(serde_json::from_str::<TrainConfig>(r#"{"seed": 4}"#).unwrap().seed, 4);
    }
}
