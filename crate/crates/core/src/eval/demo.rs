use serde::{Deserialize, Serialize};

use super::scenario::{detection_latency_ms, tail_outcomes, Pipeline, ScenarioConfig, ScenarioReport};
use super::sweep::{to_csv, SweepRow};
use crate::detector::Variant;
use crate::error::Result;
use crate::noise::NoiseLevel;

/// Small self-contained configuration: moderate channel, deep cut,
/// `nu = 0.8`, noise-aware detector.
pub fn demo_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        cut: "deep".into(),
        nu: 0.8,
        noise: NoiseLevel::Moderate,
        variant: Variant::NoiseAware,
        seed,
        timing: false,
        ..ScenarioConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoOutcome {
    pub report: ScenarioReport,
    pub test_accuracy: f64,
    /// Samples in the mixed benign + adversarial stream.
    pub stream: usize,
    pub blocked: usize,
    pub blocked_adversarial: usize,
    pub blocked_benign: usize,
    /// Adversarial samples that passed the detector and were misclassified,
    /// as a fraction of all adversarial samples.
    pub asr_after_blocking: f64,
    /// Wall-clock; kept out of the CSV.
    pub latency_ms: f64,
    pub csv: String,
}

/// Trains every artifact, screens the mixed stream, and forwards only the
/// unflagged samples to the tail.
pub fn run_demo(cfg: &ScenarioConfig, latency_samples: usize) -> Result<DemoOutcome> {
    cfg.validate()?;
    let pipeline = Pipeline::train(cfg)?;
    let test_accuracy = pipeline.test_accuracy()?;
    let mut stage = pipeline.stage(&cfg.cut, cfg.noise)?;
    let cell = stage.cell(cfg, cfg.nu)?;
    let report = stage.report(cfg, &cell, cfg.variant)?;
    let det = stage.detector(cfg, cfg.variant)?;

    let benign_flags: Vec<bool> = stage.benign_features.iter().map(|f| det.judge(f).anomalous).collect();
    let adv_flags: Vec<bool> = cell.features.iter().map(|f| det.judge(f).anomalous).collect();
    let passed: Vec<_> = cell
        .adversarial
        .iter()
        .zip(&adv_flags)
        .filter(|(_, &flag)| !flag)
        .map(|(h, _)| h.clone())
        .collect();
    let fooled = tail_outcomes(&stage.tail, &passed)?.iter().filter(|o| !o.0).count();
    let blocked_benign = benign_flags.iter().filter(|&&f| f).count();
    let blocked_adversarial = adv_flags.iter().filter(|&&f| f).count();
    let latency_ms = detection_latency_ms(&det, &stage.noisy_benign, &cell.adversarial, latency_samples.max(1))?;
    let csv = String::from_utf8(to_csv(&[SweepRow::from(report.clone())])?).expect("csv is utf-8");
    Ok(DemoOutcome {
        report,
        test_accuracy,
        stream: benign_flags.len() + adv_flags.len(),
        blocked: blocked_benign + blocked_adversarial,
        blocked_adversarial,
        blocked_benign,
        asr_after_blocking: fooled as f64 / adv_flags.len() as f64,
        latency_ms,
        csv,
    })
}
