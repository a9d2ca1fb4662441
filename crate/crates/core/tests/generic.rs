//! The cascade instantiated at single precision.

use cascadeboost::gbdt::{load_model, save_model, TrainConfig};
use cascadeboost::metrics::category_adherence;
use cascadeboost::pipeline::{predict_stages, run_pipeline, PipelineConfig};
use cascadeboost::scenario::{generate, ScenarioConfig};
use cascadeboost::{GbdtModelF32, PanelDatasetF32};

#[test]
fn f32_cascade_runs_and_round_trips() {
    let d: PanelDatasetF32 = generate::<f32>(&ScenarioConfig::default()).unwrap().dataset;
    let cfg = PipelineConfig::uniform(TrainConfig {
        num_rounds: 60,
        max_depth: 4,
        ..TrainConfig::default()
    });
    let run = run_pipeline(&d, &cfg).unwrap();
    assert!(run.outputs.stage3.iter().all(|p| p.is_finite()));

    let a1 = category_adherence(&run.outputs.stage1, d.future_groups()).unwrap();
    let a3 = category_adherence(&run.outputs.stage3, d.future_groups()).unwrap();
    assert!(a3.mean < a1.mean, "{} vs {}", a3.mean, a1.mean);

    let reload = |m: &GbdtModelF32| load_model::<f32>(&save_model(m).unwrap()).unwrap();
    let models = [reload(&run.stage1.model), reload(&run.stage2.model), reload(&run.stage3.model)];
    assert_eq!(models[2], run.stage3.model);
    let again = predict_stages(&d, [&models[0], &models[1], &models[2]]).unwrap();
    assert_eq!(again, run.outputs);
}
