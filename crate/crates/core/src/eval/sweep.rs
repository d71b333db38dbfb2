use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{check_nu, Pipeline, ScenarioConfig, ScenarioReport, Stage};
use crate::detector::Variant;
use crate::error::{Error, Result};
use crate::noise::NoiseLevel;

pub const CSV_HEADER: &str = "model,cut,nu,noise,variant,accuracy,precision,recall,f1_anom,balanced_acc,auroc,far,dr,asr,mean_conf,rwcg,delta_acc,latency_ms,degenerate_flags";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub cuts: Vec<String>,
    pub noise: Vec<NoiseLevel>,
    pub nu: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl SweepAxes {
    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("cuts", self.cuts.is_empty()),
            ("noise", self.noise.is_empty()),
            ("nu", self.nu.is_empty()),
            ("variants", self.variants.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("sweep.{name}: axis must not be empty")));
            }
        }
        self.nu.iter().try_for_each(|&n| check_nu(n))
    }

    pub fn cells(&self) -> usize {
        self.cuts.len() * self.noise.len() * self.nu.len() * self.variants.len()
    }
}

/// One CSV/JSON row; metric fields are empty when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub cut: String,
    pub nu: f64,
    pub noise: String,
    pub variant: String,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1_anom: Option<f64>,
    pub balanced_acc: Option<f64>,
    pub auroc: Option<f64>,
    pub far: Option<f64>,
    pub dr: Option<f64>,
    pub asr: Option<f64>,
    pub mean_conf: Option<f64>,
    pub rwcg: Option<f64>,
    pub delta_acc: Option<f64>,
    pub latency_ms: Option<f64>,
    pub degenerate_flags: String,
}

impl SweepRow {
    pub fn succeeded(&self) -> bool {
        self.auroc.is_some()
    }

    fn failed(model: &str, cut: &str, nu: f64, noise: NoiseLevel, variant: Variant, err: &Error) -> Self {
        Self {
            model: model.into(),
            cut: cut.into(),
            nu,
            noise: noise.to_string(),
            variant: variant.to_string(),
            accuracy: None,
            precision: None,
            recall: None,
            f1_anom: None,
            balanced_acc: None,
            auroc: None,
            far: None,
            dr: None,
            asr: None,
            mean_conf: None,
            rwcg: None,
            delta_acc: None,
            latency_ms: None,
            degenerate_flags: format!("error: {err}"),
        }
    }
}

impl From<ScenarioReport> for SweepRow {
    fn from(r: ScenarioReport) -> Self {
        Self {
            model: r.model,
            cut: r.cut,
            nu: r.nu,
            noise: r.noise,
            variant: r.variant,
            accuracy: Some(r.accuracy),
            precision: Some(r.precision),
            recall: Some(r.recall),
            f1_anom: Some(r.f1_anom),
            balanced_acc: Some(r.balanced_acc),
            auroc: Some(r.auroc),
            far: Some(r.far),
            dr: Some(r.dr),
            asr: Some(r.asr),
            mean_conf: Some(r.mean_conf),
            rwcg: Some(r.rwcg),
            delta_acc: Some(r.delta_acc),
            latency_ms: r.latency_ms,
            degenerate_flags: r.degenerate_flags,
        }
    }
}

/// Cartesian product ordered cut, preset, nu, variant (innermost). Trained
/// artifacts are shared within a `(cut, preset)` and crafted features within
/// a `(cut, preset, nu)`. A failure marks the affected rows and the sweep
/// moves on.
pub fn sweep(pipeline: &Pipeline, axes: &SweepAxes) -> Result<Vec<SweepRow>> {
    sweep_with(pipeline, axes, |cut, noise| pipeline.stage(cut, noise))
}

/// Like [`sweep`], with the caller building each `(cut, preset)` stage
/// (for example from stored checkpoints).
pub fn sweep_with(
    pipeline: &Pipeline,
    axes: &SweepAxes,
    mut make_stage: impl FnMut(&str, NoiseLevel) -> Result<Stage>,
) -> Result<Vec<SweepRow>> {
    axes.validate()?;
    let base = &pipeline.cfg;
    let mut rows = Vec::with_capacity(axes.cells());
    for cut in &axes.cuts {
        for &noise in &axes.noise {
            let mut stage = match make_stage(cut, noise) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("stage {cut}/{noise} failed: {e}");
                    for &nu in &axes.nu {
                        for &v in &axes.variants {
                            rows.push(SweepRow::failed(&base.model, cut, nu, noise, v, &e));
                        }
                    }
                    continue;
                }
            };
            for &nu in &axes.nu {
                let cfg = ScenarioConfig {
                    cut: cut.clone(),
                    noise,
                    nu,
                    ..base.clone()
                };
                match stage.cell(&cfg, nu) {
                    Ok(cell) => {
                        for &v in &axes.variants {
                            let row = match stage.report(&ScenarioConfig { variant: v, ..cfg.clone() }, &cell, v) {
                                Ok(r) => r.into(),
                                Err(e) => SweepRow::failed(&base.model, cut, nu, noise, v, &e),
                            };
                            rows.push(row);
                        }
                    }
                    Err(e) => {
                        for &v in &axes.variants {
                            rows.push(SweepRow::failed(&base.model, cut, nu, noise, v, &e));
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Usage(format!("csv: {e}")))?;
    }
    if rows.is_empty() {
        return Ok(format!("{CSV_HEADER}\n").into_bytes());
    }
    w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))
}

pub fn to_json(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(rows).map_err(|e| Error::Usage(format!("json: {e}")))?;
    v.push(b'\n');
    Ok(v)
}

/// Writes `results.csv` and `results.json` under `dir`.
pub fn write_reports(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), to_csv(rows)?)?;
    std::fs::write(dir.join("results.json"), to_json(rows)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: Variant) -> SweepRow {
        SweepRow::failed("m", "deep", 0.5, NoiseLevel::None, v, &Error::Training("x".into()))
    }

    #[test]
    fn header_is_exact() {
        let csv = String::from_utf8(to_csv(&[row(Variant::NoiseAware)]).unwrap()).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        let empty = String::from_utf8(to_csv(&[]).unwrap()).unwrap();
        assert_eq!(empty.trim_end(), CSV_HEADER);
        let json: serde_json::Value = serde_json::from_slice(&to_json(&[row(Variant::Radius)]).unwrap()).unwrap();
        let keys: Vec<&str> = json[0].as_object().unwrap().keys().map(String::as_str).collect();
        let mut header: Vec<&str> = CSV_HEADER.split(',').collect();
        let mut sorted = keys.clone();
        header.sort_unstable();
        sorted.sort_unstable();
        assert_eq!(sorted, header);
    }

    #[test]
    fn axes_cardinality_and_validation() {
        let axes = SweepAxes {
            cuts: vec!["deep".into()],
            noise: vec![NoiseLevel::None, NoiseLevel::Moderate],
            nu: vec![0.2, 0.5, 0.8],
            variants: vec![Variant::NoiseAware, Variant::NoiseUnaware],
        };
        assert_eq!(axes.cells(), 12);
        axes.validate().unwrap();
        let bad = SweepAxes { nu: vec![2.0], ..axes.clone() };
        assert!(bad.validate().is_err());
        let empty = SweepAxes { cuts: vec![], ..axes };
        assert!(empty.validate().is_err());
    }
}
