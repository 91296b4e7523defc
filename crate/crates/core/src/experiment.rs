//! End-to-end comparison against the linear baseline: generate data from a
//! nonlinear model, fit the nonlinear estimator and an OLS VAR on the same
//! train/test split, compare held-out one-step MSE.

use crate::baseline::{evaluate_linear, fit_ols, DEFAULT_RIDGE};
use crate::error::Result;
use crate::forward::evaluate_mse;
use crate::synthetic::{generate_dataset, SyntheticConfig};
use crate::training::{fit, split_panel, TrainConfig};
use crate::types::{ModelShape, NlVarModel, TrainReport, VarCoefficients};

/// Innovation scale used by [`ComparisonConfig::reference`]. Large enough
/// that the latent process reaches the curved part of the generating maps;
/// with much smaller noise the maps act almost linearly on the visited range.
pub const REFERENCE_NOISE_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub generator: SyntheticConfig,
    pub estimator: ModelShape,
    pub train: TrainConfig,
    pub linear_order: usize,
    pub ridge: f64,
}

impl ComparisonConfig {
    /// Ten nodes, generator order 2, 1000 samples; estimator with five units
    /// and order 3; linear baseline of order 3.
    pub fn reference(seed: u64) -> Self {
        Self {
            generator: SyntheticConfig {
                noise_std: REFERENCE_NOISE_STD,
                seed,
                ..SyntheticConfig::reference()
            },
            estimator: ModelShape {
                n_nodes: 10,
                order: 3,
                n_units: 5,
            },
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            linear_order: 3,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub ground_truth: NlVarModel,
    pub model: NlVarModel,
    pub report: TrainReport,
    pub linear: VarCoefficients,
    pub linear_train_mse: f64,
    pub linear_test_mse: f64,
    pub ground_truth_test_mse: f64,
}

impl ComparisonResult {
    /// Held-out MSE of the nonlinear model at its best epoch.
    pub fn best_test_mse(&self) -> f64 {
        self.report
            .final_model_digest
            .best_test_mse
            .unwrap_or(f64::NAN)
    }

    /// Fractional reduction of held-out MSE relative to the linear baseline.
    pub fn improvement(&self) -> f64 {
        1.0 - self.best_test_mse() / self.linear_test_mse
    }
}

pub fn run_comparison(config: &ComparisonConfig) -> Result<ComparisonResult> {
    let data = generate_dataset(&config.generator)?;
    let (train, test) = split_panel(
        &data.observed,
        config.train.test_fraction,
        config.linear_order.max(config.estimator.order),
    )?;
    let linear = fit_ols(&train, config.linear_order, config.ridge)?;
    let linear_train_mse = evaluate_linear(&linear, &train)?;
    let linear_test_mse = evaluate_linear(&linear, &test)?;
    let ground_truth_test_mse = evaluate_mse(&data.ground_truth, &test)?;
    let (model, report) = fit(&data.observed, config.estimator, &config.train)?;
    Ok(ComparisonResult {
        ground_truth: data.ground_truth,
        model,
        report,
        linear,
        linear_train_mse,
        linear_test_mse,
        ground_truth_test_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RangeBounds;

    #[test]
    fn small_comparison_runs_and_is_consistent() {
        let mut config = ComparisonConfig::reference(1);
        config.generator.shape = ModelShape::new(2, 1, 3).unwrap();
        config.generator.ranges = vec![RangeBounds::new(-1.0, 1.0).unwrap(); 2];
        config.generator.t_total = 200;
        config.estimator = ModelShape::new(2, 1, 3).unwrap();
        config.linear_order = 1;
        config.train.epochs = 3;
        let result = run_comparison(&config).unwrap();
        assert_eq!(result.report.test_mse.len(), 3);
        let best = result
            .report
            .test_mse
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(result.best_test_mse(), best);
        assert!(result.linear_test_mse > 0.0 && result.ground_truth_test_mse > 0.0);
        assert_eq!(result, run_comparison(&config).unwrap());
    }
}
