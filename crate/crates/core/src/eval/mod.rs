//! Metrics, end-to-end scenarios and sweeps.

mod demo;
mod metrics;
mod scenario;
mod sweep;

pub use demo::{demo_config, run_demo, DemoOutcome};
pub use metrics::{auroc, metrics, rwcg, ConfusionCounts, Metrics};
pub use scenario::{
    detection_features, detection_latency_ms, detector_training_set, head_features, load_data, load_train_images,
    model_spec, run_scenario, run_scenario_with, tail_outcomes, train_attacker, train_detector_advae, Cell,
    DataConfig, DataSource, Pipeline, Pretrained, ScenarioConfig, ScenarioReport, Stage, TINY_CONV_NET,
};
pub use sweep::{sweep, sweep_with, to_csv, to_json, write_reports, SweepAxes, SweepRow, CSV_HEADER};
