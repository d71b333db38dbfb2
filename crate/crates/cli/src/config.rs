use std::path::{Path, PathBuf};

use serde::Deserialize;
use splitguard::detector::Variant;
use splitguard::eval::{ScenarioConfig, SweepAxes};
use splitguard::noise::NoiseLevel;
use splitguard::split::{ModelSpec, SYNTHETIC_SHAPE};
use splitguard::{Error, Result};

/// Top-level run file. Unknown keys are rejected at every level.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Overrides `scenario.seed` when present.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Defaults to `<out>/artifacts`.
    pub artifacts: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    pub sweep: Option<SweepAxes>,
}

fn default_name() -> String {
    "run".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: default_name(),
            seed: None,
            out: None,
            artifacts: None,
            scenario: ScenarioConfig::default(),
            sweep: None,
        }
    }
}

/// Command-line overrides; each beats the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub noise: Option<NoiseLevel>,
    pub variant: Option<Variant>,
    pub cut: Option<String>,
}

/// A validated run: scenario, axes and output locations.
#[derive(Debug, Clone)]
pub struct Run {
    pub name: String,
    pub scenario: ScenarioConfig,
    pub axes: SweepAxes,
    pub out: PathBuf,
    pub artifacts: PathBuf,
}

pub fn read(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Applies overrides and checks everything before any file is written.
    pub fn resolve(self, o: &Overrides) -> Result<Run> {
        let mut scenario = self.scenario;
        if let Some(seed) = o.seed.or(self.seed) {
            scenario.seed = seed;
        }
        if let Some(n) = o.noise {
            scenario.noise = n;
        }
        if let Some(v) = o.variant {
            scenario.variant = v;
        }
        if let Some(c) = &o.cut {
            scenario.cut = c.clone();
        }
        let mut axes = self.sweep.unwrap_or_else(|| SweepAxes {
            cuts: vec![scenario.cut.clone()],
            noise: vec![scenario.noise],
            nu: vec![scenario.nu],
            variants: vec![scenario.variant],
        });
        if let Some(n) = o.noise {
            axes.noise = vec![n];
        }
        if let Some(v) = o.variant {
            axes.variants = vec![v];
        }
        if let Some(c) = &o.cut {
            axes.cuts = vec![c.clone()];
        }

        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::Config(format!("name: {:?} is not a plain directory name", self.name)));
        }
        scenario.validate()?;
        axes.validate()?;
        let known: Vec<String> = ModelSpec::tiny_conv_net(SYNTHETIC_SHAPE, scenario.data.classes)
            .cuts
            .into_iter()
            .map(|c| c.label)
            .collect();
        for c in axes.cuts.iter().chain([&scenario.cut]) {
            if !known.contains(c) {
                return Err(Error::Config(format!("cut: unknown cut {c:?} (expected one of {})", known.join(", "))));
            }
        }
        let out = o.out.clone().or(self.out).unwrap_or_else(|| PathBuf::from("."));
        let artifacts = self.artifacts.unwrap_or_else(|| out.join("artifacts"));
        Ok(Run {
            name: self.name,
            scenario,
            axes,
            out,
            artifacts,
        })
    }
}

impl Run {
    pub fn classifier_path(&self) -> PathBuf {
        self.artifacts.join("classifier.ssnn")
    }

    pub fn attack_path(&self, cut: &str, noise: NoiseLevel) -> PathBuf {
        self.artifacts.join(format!("attack-{cut}-{noise}.ssav"))
    }

    pub fn detector_path(&self, cut: &str, noise: NoiseLevel, variant: Variant) -> PathBuf {
        self.artifacts.join(format!("detector-{cut}-{noise}-{variant}.ssdt"))
    }

    /// `(cut, preset)` pairs covered by the axes, in sweep order.
    pub fn stages(&self) -> Vec<(String, NoiseLevel)> {
        self.axes
            .cuts
            .iter()
            .flat_map(|c| self.axes.noise.iter().map(move |&n| (c.clone(), n)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse(r#"{"scenario": {"benign": 10, "bogus": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("bogus"));
        assert!(parse(r#"{"nmae": "x"}"#).is_err());
    }

    #[test]
    fn overrides_restrict_axes() {
        let cfg = parse(
            r#"{"sweep": {"cuts": ["deep"], "noise": ["none", "moderate"], "nu": [0.5], "variants": ["NA", "NU"]}}"#,
        )
        .unwrap();
        let run = cfg
            .resolve(&Overrides {
                noise: Some(NoiseLevel::Extreme),
                variant: Some(Variant::NoiseAware),
                seed: Some(3),
                ..Overrides::default()
            })
            .unwrap();
        assert_eq!(run.axes.noise, vec![NoiseLevel::Extreme]);
        assert_eq!(run.axes.variants, vec![Variant::NoiseAware]);
        assert_eq!(run.scenario.seed, 3);
        assert_eq!(run.artifacts, PathBuf::from("./artifacts"));
    }

    #[test]
    fn bad_cut_and_name_fail() {
        let bad_cut = RunConfig::default().resolve(&Overrides {
            cut: Some("middle".into()),
            ..Overrides::default()
        });
        assert!(bad_cut.unwrap_err().to_string().contains("cut"));
        let bad_name = RunConfig {
            name: "../x".into(),
            ..RunConfig::default()
        };
        assert!(bad_name.resolve(&Overrides::default()).unwrap_err().to_string().contains("name"));
    }
}
