//! The three-stage cascade and its diagnostics.
//!
//! 1. Stage 1 fits squared error on historical rows and predicts every row.
//! 2. Stage 2 trains on all rows against actuals (history) and Stage-1
//!    predictions (future), plus the weekly category-sum penalty.
//! 3. Stage 3 receives the Stage-2 predictions as one extra input column and
//!    trains toward each row's Stage-1 share of its week rescaled to the
//!    week's total, again with the weekly-sum penalty.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{apply_train, write_train, KvConfig};
use crate::error::{Error, Result};
use crate::gbdt::{fit, GbdtModel, TrainConfig};
use crate::matrix::FeatureMatrix;
use crate::objective::{
    constraint_term, pred_ratio, stage3_target, week_residuals, ConstraintOnlyObjective, CoupledObjective,
    RatioVector, Stage1Objective, StageKind, StageTargets,
};
use crate::panel::{PanelDataset, WeekGroup};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig<T> {
    pub stage1: TrainConfig<T>,
    pub stage2: TrainConfig<T>,
    pub stage3: TrainConfig<T>,
    /// Training settings of the constraint-only probe.
    pub probe: TrainConfig<T>,
    /// Share of historical weeks held out when measuring Stage-1 bias.
    pub bias_tail_fraction: f64,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            stage1: base.clone(),
            stage2: base.clone(),
            stage3: base,
            probe: TrainConfig {
                num_rounds: 200,
                max_depth: 8,
                learning_rate: T::of(0.1),
                ..TrainConfig::default()
            },
            bias_tail_fraction: 0.2,
        }
    }
}

impl<T: Scalar> PipelineConfig<T> {
    /// Unprefixed keys set all three stages; `stage1.`, `stage2.`, `stage3.`
    /// and `probe.` prefixed keys override one of them.
    pub fn from_kv(mut kv: KvConfig) -> Result<Self> {
        let mut cfg = Self::default();
        let mut base = cfg.stage1.clone();
        apply_train(&mut base, &mut kv, "")?;
        cfg.stage1 = base.clone();
        cfg.stage2 = base.clone();
        cfg.stage3 = base.clone();
        apply_train(&mut cfg.stage1, &mut kv, "stage1.")?;
        apply_train(&mut cfg.stage2, &mut kv, "stage2.")?;
        apply_train(&mut cfg.stage3, &mut kv, "stage3.")?;
        apply_train(&mut cfg.probe, &mut kv, "probe.")?;
        if let Some(v) = kv.take("bias_tail_fraction")? {
            cfg.bias_tail_fraction = v;
        }
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        write_train(&self.stage1, &mut kv, "stage1.");
        write_train(&self.stage2, &mut kv, "stage2.");
        write_train(&self.stage3, &mut kv, "stage3.");
        write_train(&self.probe, &mut kv, "probe.");
        kv.set("bias_tail_fraction", self.bias_tail_fraction);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.stage3.validate()?;
        self.probe.validate()?;
        if !(self.bias_tail_fraction > 0.0 && self.bias_tail_fraction < 1.0) {
            return Err(Error::Config("bias_tail_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Sets the same training settings for all three stages.
    pub fn uniform(config: TrainConfig<T>) -> Self {
        Self {
            stage1: config.clone(),
            stage2: config.clone(),
            stage3: config,
            ..Self::default()
        }
    }
}

/// A trained stage: its model, in-sample loss curve and predictions on all rows.
#[derive(Clone, Debug)]
pub struct StageFit<T> {
    pub model: GbdtModel<T>,
    pub predictions: Vec<T>,
    pub loss_curve: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutputs<T> {
    pub stage1: Vec<T>,
    pub stage2: Vec<T>,
    pub stage3: Vec<T>,
    pub ratios: RatioVector<T>,
    pub stage3_targets: StageTargets<T>,
}

pub fn run_stage1<T: Scalar>(dataset: &PanelDataset<T>, config: &TrainConfig<T>) -> Result<StageFit<T>> {
    let x = dataset.feature_matrix();
    let targets = StageTargets {
        values: dataset.actuals(),
        kind: StageKind::Stage1,
    };
    let objective = Stage1Objective::new(&targets)?;
    let out = fit(&x.head(dataset.m()), &objective, config).map_err(Error::in_stage(1))?;
    let predictions = out.model.predict(&x).map_err(Error::in_stage(1))?;
    Ok(StageFit {
        model: out.model,
        predictions,
        loss_curve: out.loss_curve,
    })
}

/// Actuals on historical rows, Stage-1 predictions on future rows.
pub fn stage2_targets<T: Scalar>(dataset: &PanelDataset<T>, stage1_preds: &[T]) -> Result<StageTargets<T>> {
    if stage1_preds.len() != dataset.n() {
        return Err(Error::Validation(format!(
            "{} stage-1 predictions for {} rows",
            stage1_preds.len(),
            dataset.n()
        )));
    }
    let mut values = dataset.actuals();
    values.extend_from_slice(&stage1_preds[dataset.m()..]);
    Ok(StageTargets {
        values,
        kind: StageKind::Stage2,
    })
}

pub fn run_stage2<T: Scalar>(
    dataset: &PanelDataset<T>,
    stage1_preds: &[T],
    config: &TrainConfig<T>,
) -> Result<StageFit<T>> {
    let targets = stage2_targets(dataset, stage1_preds).map_err(Error::in_stage(2))?;
    let objective = CoupledObjective::new(dataset.groups(), &targets)?;
    let x = dataset.feature_matrix();
    let out = fit(&x, &objective, config).map_err(Error::in_stage(2))?;
    Ok(StageFit {
        model: out.model,
        predictions: out.predictions,
        loss_curve: out.loss_curve,
    })
}

/// Dataset features with the Stage-2 predictions appended as the last column.
pub fn stage3_features<T: Scalar>(dataset: &PanelDataset<T>, stage2_preds: &[T]) -> Result<FeatureMatrix<T>> {
    dataset.feature_matrix().with_column(stage2_preds)
}

#[derive(Clone, Debug)]
pub struct Stage3Fit<T> {
    pub fit: StageFit<T>,
    pub ratios: RatioVector<T>,
    pub targets: StageTargets<T>,
}

pub fn run_stage3<T: Scalar>(
    dataset: &PanelDataset<T>,
    stage1_preds: &[T],
    stage2_preds: &[T],
    config: &TrainConfig<T>,
) -> Result<Stage3Fit<T>> {
    let ratios = pred_ratio(stage1_preds, dataset.groups()).map_err(Error::in_stage(3))?;
    let targets = stage3_target(&ratios, dataset.groups()).map_err(Error::in_stage(3))?;
    let x = stage3_features(dataset, stage2_preds).map_err(Error::in_stage(3))?;
    let objective = CoupledObjective::new(dataset.groups(), &targets)?;
    let out = fit(&x, &objective, config).map_err(Error::in_stage(3))?;
    Ok(Stage3Fit {
        fit: StageFit {
            model: out.model,
            predictions: out.predictions,
            loss_curve: out.loss_curve,
        },
        ratios,
        targets,
    })
}

#[derive(Clone, Debug)]
pub struct PipelineRun<T> {
    pub stage1: StageFit<T>,
    pub stage2: StageFit<T>,
    pub stage3: StageFit<T>,
    pub outputs: StageOutputs<T>,
    pub diagnostics: DiagnosticsReport,
}

pub fn run_pipeline<T: Scalar>(dataset: &PanelDataset<T>, config: &PipelineConfig<T>) -> Result<PipelineRun<T>> {
    config.validate()?;
    let s1 = run_stage1(dataset, &config.stage1)?;
    let s2 = run_stage2(dataset, &s1.predictions, &config.stage2)?;
    let s3 = run_stage3(dataset, &s1.predictions, &s2.predictions, &config.stage3)?;
    let outputs = StageOutputs {
        stage1: s1.predictions.clone(),
        stage2: s2.predictions.clone(),
        stage3: s3.fit.predictions.clone(),
        ratios: s3.ratios,
        stage3_targets: s3.targets,
    };
    let diagnostics = diagnose(dataset, &outputs, &DiagnoseOptions::from_pipeline(config))?;
    Ok(PipelineRun {
        stage1: s1,
        stage2: s2,
        stage3: s3.fit,
        outputs,
        diagnostics,
    })
}

/// Recomputes all stage outputs from persisted models.
pub fn predict_stages<T: Scalar>(dataset: &PanelDataset<T>, models: [&GbdtModel<T>; 3]) -> Result<StageOutputs<T>> {
    let x = dataset.feature_matrix();
    let stage1 = models[0].predict(&x).map_err(Error::in_stage(1))?;
    let stage2 = models[1].predict(&x).map_err(Error::in_stage(2))?;
    let x3 = stage3_features(dataset, &stage2)?;
    let stage3 = models[2].predict(&x3).map_err(Error::in_stage(3))?;
    let ratios = pred_ratio(&stage1, dataset.groups()).map_err(Error::in_stage(3))?;
    let stage3_targets = stage3_target(&ratios, dataset.groups())?;
    Ok(StageOutputs {
        stage1,
        stage2,
        stage3,
        ratios,
        stage3_targets,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseOptions<T> {
    /// Refit Stage 1 on the historical head to score the held-out tail.
    /// `None` scores the tail with the supplied Stage-1 predictions instead.
    pub bias_refit: Option<TrainConfig<T>>,
    pub tail_fraction: f64,
    pub probe: TrainConfig<T>,
}

impl<T: Scalar> DiagnoseOptions<T> {
    pub fn from_pipeline(config: &PipelineConfig<T>) -> Self {
        Self {
            bias_refit: Some(config.stage1.clone()),
            tail_fraction: config.bias_tail_fraction,
            probe: config.probe.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekSumDeviation {
    pub week: u32,
    pub predicted_sum: f64,
    pub category_total: f64,
    /// Predicted sum minus category total.
    pub deviation: f64,
    pub squared: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasDirection {
    Over,
    Under,
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTally {
    pub tail_weeks: usize,
    pub rows: usize,
    pub over: usize,
    pub under: usize,
    /// Share of tail rows whose error has the majority sign.
    pub consistency_rate: f64,
    pub direction: BiasDirection,
    pub refit: bool,
}

/// The two Stage-2 loss terms at the Stage-2 solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermMagnitudes {
    /// `(1/n) sum_{future rows} (stage1 - stage2)^2`.
    pub fit_future: f64,
    /// `(1/n) sum_{future weeks} R_w^2`.
    pub constraint_future: f64,
    /// `fit_future / constraint_future`; absent when the constraint term is 0.
    pub fit_to_constraint_ratio: Option<f64>,
    pub fit_all: f64,
    pub constraint_all: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrivialProbe {
    pub rounds: usize,
    /// Max over rows of `|p - C_w / count_w|`.
    pub max_gap: f64,
    /// Same gap relative to `C_w / count_w`.
    pub max_relative_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub stage1_week_deviation: Vec<WeekSumDeviation>,
    pub stage1_sum_squared_deviation: f64,
    pub bias: BiasTally,
    pub terms: TermMagnitudes,
    pub trivial_probe: TrivialProbe,
}

pub fn diagnose<T: Scalar>(
    dataset: &PanelDataset<T>,
    outputs: &StageOutputs<T>,
    options: &DiagnoseOptions<T>,
) -> Result<DiagnosticsReport> {
    let n = dataset.n();
    for (name, v) in [
        ("stage1", &outputs.stage1),
        ("stage2", &outputs.stage2),
        ("stage3", &outputs.stage3),
    ] {
        if v.len() != n {
            return Err(Error::Validation(format!("{name} has {} values for {n} rows", v.len())));
        }
    }
    let future: Vec<WeekGroup<T>> = dataset.future_groups().cloned().collect();

    let stage1_week_deviation: Vec<WeekSumDeviation> = future
        .iter()
        .zip(week_residuals(&future, &outputs.stage1))
        .map(|(g, r)| {
            let total = g.category_total.to_f64_lossy();
            let deviation = -r.to_f64_lossy();
            WeekSumDeviation {
                week: g.week,
                predicted_sum: total + deviation,
                category_total: total,
                deviation,
                squared: deviation * deviation,
            }
        })
        .collect();
    let stage1_sum_squared_deviation = stage1_week_deviation.iter().map(|d| d.squared).sum();

    let bias = bias_tally(dataset, &outputs.stage1, options)?;
    let terms = term_magnitudes(dataset, &outputs.stage1, &outputs.stage2)?;
    let trivial_probe = trivial_probe(dataset, &options.probe)?;

    Ok(DiagnosticsReport {
        stage1_week_deviation,
        stage1_sum_squared_deviation,
        bias,
        terms,
        trivial_probe,
    })
}

fn bias_tally<T: Scalar>(dataset: &PanelDataset<T>, stage1: &[T], options: &DiagnoseOptions<T>) -> Result<BiasTally> {
    let hist: Vec<&WeekGroup<T>> = dataset.historical_groups().collect();
    let tail_weeks = ((hist.len() as f64 * options.tail_fraction).ceil() as usize).clamp(1, hist.len());
    let tail_start = hist[hist.len() - tail_weeks].members[0];
    let tail = tail_start..dataset.m();
    let refit = options.bias_refit.is_some() && tail_start > 0;

    let preds: Vec<T> = match &options.bias_refit {
        Some(cfg) if refit => {
            let x = dataset.feature_matrix();
            let head = StageTargets {
                values: dataset.actuals()[..tail_start].to_vec(),
                kind: StageKind::Stage1,
            };
            let out = fit(&x.head(tail_start), &Stage1Objective::new(&head)?, cfg)?;
            let tail_rows: Vec<usize> = tail.clone().collect();
            out.model.predict(&x.select_rows(&tail_rows))?
        }
        _ => stage1[tail.clone()].to_vec(),
    };
    let actuals = dataset.actuals();
    let (mut over, mut under) = (0, 0);
    for (p, a) in preds.iter().zip(&actuals[tail.clone()]) {
        if p > a {
            over += 1;
        } else if p < a {
            under += 1;
        }
    }
    let rows = tail.len();
    let direction = match over.cmp(&under) {
        std::cmp::Ordering::Greater => BiasDirection::Over,
        std::cmp::Ordering::Less => BiasDirection::Under,
        std::cmp::Ordering::Equal => BiasDirection::Balanced,
    };
    Ok(BiasTally {
        tail_weeks,
        rows,
        over,
        under,
        consistency_rate: over.max(under) as f64 / rows as f64,
        direction,
        refit,
    })
}

/// Stage-2 fit and constraint terms evaluated at `stage2` with Stage-2 targets.
pub fn term_magnitudes<T: Scalar>(dataset: &PanelDataset<T>, stage1: &[T], stage2: &[T]) -> Result<TermMagnitudes> {
    let targets = stage2_targets(dataset, stage1)?;
    let n = dataset.n();
    let nn = T::of_usize(n);
    let sq = |range: std::ops::Range<usize>| {
        let mut s = T::zero();
        for i in range {
            let d = targets.values[i] - stage2[i];
            s = s + d * d;
        }
        s / nn
    };
    let future: Vec<WeekGroup<T>> = dataset.future_groups().cloned().collect();
    let fit_future = sq(dataset.m()..n).to_f64_lossy();
    let constraint_future = constraint_term(&future, stage2, n).to_f64_lossy();
    Ok(TermMagnitudes {
        fit_future,
        constraint_future,
        fit_to_constraint_ratio: (constraint_future > 0.0).then(|| fit_future / constraint_future),
        fit_all: sq(0..n).to_f64_lossy(),
        constraint_all: constraint_term(dataset.groups(), stage2, n).to_f64_lossy(),
    })
}

/// Features that are constant within every week: the week index alone.
pub fn probe_features<T: Scalar>(dataset: &PanelDataset<T>) -> FeatureMatrix<T> {
    let weeks: Vec<T> = dataset.records().iter().map(|r| T::of(r.week as f64)).collect();
    FeatureMatrix::column(&weeks).expect("week indices are finite")
}

/// Constraint-only training on features that cannot tell a week's products
/// apart. Returns the probe predictions.
pub fn run_trivial_probe<T: Scalar>(dataset: &PanelDataset<T>, config: &TrainConfig<T>) -> Result<Vec<T>> {
    let objective = ConstraintOnlyObjective::new(dataset.groups());
    Ok(fit(&probe_features(dataset), &objective, config)?.predictions)
}

fn trivial_probe<T: Scalar>(dataset: &PanelDataset<T>, config: &TrainConfig<T>) -> Result<TrivialProbe> {
    let preds = run_trivial_probe(dataset, config)?;
    let (mut max_gap, mut max_relative_gap) = (0.0f64, 0.0f64);
    for g in dataset.groups() {
        let level = g.category_total.to_f64_lossy() / g.count as f64;
        for &j in &g.members {
            let gap = (preds[j].to_f64_lossy() - level).abs();
            max_gap = max_gap.max(gap);
            if level != 0.0 {
                max_relative_gap = max_relative_gap.max(gap / level.abs());
            }
        }
    }
    Ok(TrivialProbe {
        rounds: config.num_rounds,
        max_gap,
        max_relative_gap,
    })
}

/// Record of one `train` run, serialised as JSON next to the model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// Effective configuration as flat key/value pairs.
    pub config: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub diagnostics: DiagnosticsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: u8,
    pub model_path: String,
    pub loss_curve: Vec<f64>,
}

impl RunManifest {
    pub fn new<T: Scalar>(config: &PipelineConfig<T>, run: &PipelineRun<T>, model_paths: [String; 3]) -> Self {
        let stages = [&run.stage1, &run.stage2, &run.stage3]
            .into_iter()
            .zip(model_paths)
            .enumerate()
            .map(|(i, (fit, model_path))| StageRecord {
                stage: i as u8 + 1,
                model_path,
                loss_curve: fit.loss_curve.iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect();
        Self {
            tool: "cascadeboost".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.stage1.seed,
            config: config.to_kv().entries().clone(),
            stages,
            diagnostics: run.diagnostics.clone(),
            metrics: None,
        }
    }
}
