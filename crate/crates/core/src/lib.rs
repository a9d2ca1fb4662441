//! Constraint-aware three-stage gradient boosting for sales forecasting under
//! product cannibalization.
//!
//! The crate bundles a second-order gradient-boosted tree learner that accepts
//! group-coupled objectives ([`gbdt`]), the stage losses ([`objective`]), the
//! three-stage cascade with its diagnostics ([`pipeline`]), a synthetic scenario
//! generator ([`scenario`]) and evaluation metrics ([`metrics`]).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for common use.

pub mod cli;
pub mod config;
pub mod error;
pub mod exact_sum;
pub mod gbdt;
pub mod matrix;
pub mod metrics;
pub mod objective;
pub mod panel;
pub mod pipeline;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use gbdt::{fit, predict, GbdtModel, GradHess, Objective, RegressionTree, TrainConfig};
pub use matrix::FeatureMatrix;
pub use panel::{PanelDataset, PanelRecord, PanelSchema, WeekGroup};
pub use pipeline::{run_pipeline, DiagnosticsReport, PipelineConfig, StageOutputs};
pub use scalar::Scalar;
pub use scenario::{generate, ScenarioConfig};

pub type PanelDatasetF64 = PanelDataset<f64>;
pub type PanelDatasetF32 = PanelDataset<f32>;
pub type GbdtModelF64 = GbdtModel<f64>;
pub type GbdtModelF32 = GbdtModel<f32>;
pub type TrainConfigF64 = TrainConfig<f64>;
pub type TrainConfigF32 = TrainConfig<f32>;
pub type PipelineConfigF64 = PipelineConfig<f64>;
pub type FeatureMatrixF64 = FeatureMatrix<f64>;
pub type StageOutputsF64 = StageOutputs<f64>;
