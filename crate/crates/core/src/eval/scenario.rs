use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{auroc, metrics, rwcg, ConfusionCounts};
use crate::attack::{collect_features, train_attack_vae, AttackVae};
use crate::detector::{
    extract_features, median, train_advae, AdVae, AdVaeHistory, DetectionFeatures, Detector, DetectorConfig,
    DetectorMeta, Variant,
};
use crate::error::{Error, Result};
use crate::nn::vae::{EpochLoss, VaeConfig};
use crate::nn::Tensor;
use crate::noise::{corrupt_features, preset, NoiseLevel};
use crate::split::{
    gen_synthetic, load_idx, load_idx_images, partition, run_head, run_tail, train_classifier, ClassifierConfig,
    ClassifierEpoch, CutPoint, FeatureDataset, FeatureVector, Head, ImageDataset, Model, ModelSpec, Split, Tail,
};
use crate::{par, rng};

pub const TINY_CONV_NET: &str = "tiny_conv_net";

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Generated stripe-and-blob images.
    Synthetic,
    /// IDX files; labels are only read where ground truth is needed.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    /// Synthetic only; IDX sizes come from the files.
    pub train_images: usize,
    pub test_images: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            classes: 10,
            train_images: 2000,
            test_images: 1000,
        }
    }
}

fn require_file(field: &str, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!("{field}: no such file {}", path.display())));
    }
    Ok(())
}

impl DataConfig {
    /// Checks that the image files exist. Label files are checked only when
    /// labels are actually loaded.
    pub fn validate(&self) -> Result<()> {
        if let DataSource::Idx {
            train_images,
            test_images,
            ..
        } = &self.source
        {
            require_file("data.source.train_images", train_images)?;
            require_file("data.source.test_images", test_images)?;
        }
        Ok(())
    }
}

/// Everything that determines one report row, seeds included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub model: String,
    pub data: DataConfig,
    pub classifier: ClassifierConfig,
    pub cut: String,
    pub nu: f64,
    pub noise: NoiseLevel,
    pub variant: Variant,
    /// Benign evaluation samples.
    pub benign: usize,
    /// Adversarial evaluation samples.
    pub adversarial: usize,
    /// Benign features the detector trains on.
    pub detector_samples: usize,
    /// Features the attacker collects.
    pub attack_samples: usize,
    pub attack: VaeConfig,
    pub detector: DetectorConfig,
    /// Attacker trains on post-channel observations; `false` means it taps
    /// the link before the channel.
    pub attacker_observes_noisy: bool,
    pub seed: u64,
    /// Measure per-sample detection latency (wall clock, not reproducible).
    pub timing: bool,
    pub latency_samples: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: TINY_CONV_NET.into(),
            data: DataConfig::default(),
            classifier: ClassifierConfig::default(),
            cut: "deep".into(),
            nu: 0.8,
            noise: NoiseLevel::Moderate,
            variant: Variant::NoiseAware,
            benign: 700,
            adversarial: 300,
            detector_samples: 1000,
            attack_samples: 1000,
            attack: VaeConfig::default(),
            detector: DetectorConfig::default(),
            attacker_observes_noisy: true,
            seed: 7,
            timing: false,
            latency_samples: 1000,
        }
    }
}

impl ScenarioConfig {
    /// Checks everything except the cell-specific fields.
    pub fn validate_base(&self) -> Result<()> {
        self.attack.validate().map_err(|e| Error::Config(format!("attack: {e}")))?;
        self.detector.validate().map_err(|e| Error::Config(format!("detector: {e}")))?;
        if self.timing && self.latency_samples == 0 {
            return Err(Error::Config("latency_samples: must be positive when timing".into()));
        }
        if self.model != TINY_CONV_NET {
            return Err(Error::Config(format!("model: unknown model {:?} (expected {TINY_CONV_NET})", self.model)));
        }
        for (name, v) in [
            ("benign", self.benign),
            ("adversarial", self.adversarial),
            ("detector_samples", self.detector_samples),
            ("attack_samples", self.attack_samples),
            ("data.classes", self.data.classes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name}: must be positive")));
            }
        }
        self.data.validate()?;
        if self.data.source != DataSource::Synthetic {
            return Ok(());
        }
        if self.data.train_images < self.detector_samples + self.attack_samples {
            return Err(Error::Config(format!(
                "data.train_images: {} is fewer than detector_samples + attack_samples = {}",
                self.data.train_images,
                self.detector_samples + self.attack_samples
            )));
        }
        if self.data.test_images < self.benign + self.adversarial {
            return Err(Error::Config(format!(
                "data.test_images: {} is fewer than benign + adversarial = {}",
                self.data.test_images,
                self.benign + self.adversarial
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_base()?;
        check_nu(self.nu)
    }
}

pub(crate) fn check_nu(nu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Config(format!("nu: {nu} outside [0, 1]")));
    }
    Ok(())
}

/// One row of a sweep: the configuration echo and all metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub model: String,
    pub cut: String,
    pub nu: f64,
    pub noise: String,
    pub variant: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_anom: f64,
    pub balanced_acc: f64,
    pub auroc: f64,
    pub far: f64,
    pub dr: f64,
    pub asr: f64,
    pub mean_conf: f64,
    /// Change in the right-wrong confidence gap caused by the channel.
    pub rwcg: f64,
    /// Tail accuracy on noisy benign minus clean benign.
    pub delta_acc: f64,
    pub latency_ms: Option<f64>,
    /// `|`-separated names of quantities that hit a zero denominator.
    pub degenerate_flags: String,
}

/// Train and test images for a config.
pub fn load_data(cfg: &ScenarioConfig) -> Result<(ImageDataset, ImageDataset)> {
    match &cfg.data.source {
        DataSource::Synthetic => {
            let train =
                gen_synthetic(cfg.data.classes, cfg.data.train_images, rng::derive_str(cfg.seed, "train-images"))?;
            let test = gen_synthetic(cfg.data.classes, cfg.data.test_images, rng::derive_str(cfg.seed, "test-images"))?;
            Ok((train, test))
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            require_file("data.source.train_labels", train_labels)?;
            require_file("data.source.test_labels", test_labels)?;
            let mut train = load_idx(train_images, train_labels)?;
            let mut test = load_idx(test_images, test_labels)?;
            train.num_classes = cfg.data.classes;
            test.num_classes = cfg.data.classes;
            if let Some(l) = train.labels.iter().chain(&test.labels).find(|&&l| l >= cfg.data.classes) {
                return Err(Error::Config(format!("data.classes: label {l} outside {} classes", cfg.data.classes)));
            }
            Ok((train, test))
        }
    }
}

/// Training images only, for the attacker and the detector, which never
/// see labels. Synthetic labels are generated and dropped.
pub fn load_train_images(cfg: &ScenarioConfig) -> Result<Vec<Tensor>> {
    match &cfg.data.source {
        DataSource::Synthetic => Ok(gen_synthetic(
            cfg.data.classes,
            cfg.data.train_images,
            rng::derive_str(cfg.seed, "train-images"),
        )?
        .images),
        DataSource::Idx { train_images, .. } => load_idx_images(train_images),
    }
}

fn check_pools(cfg: &ScenarioConfig, train: usize, test: usize) -> Result<()> {
    let need = cfg.detector_samples + cfg.attack_samples;
    if train < need {
        return Err(Error::Config(format!(
            "data: {train} training images, fewer than detector_samples + attack_samples = {need}"
        )));
    }
    if test < cfg.benign + cfg.adversarial {
        return Err(Error::Config(format!(
            "data: {test} test images, fewer than benign + adversarial = {}",
            cfg.benign + cfg.adversarial
        )));
    }
    Ok(())
}

pub fn model_spec(cfg: &ScenarioConfig, image_shape: &[usize]) -> Result<ModelSpec> {
    let shape: [usize; 3] = image_shape
        .try_into()
        .map_err(|_| Error::Config(format!("data: images must be [c, h, w], got {image_shape:?}")))?;
    let spec = ModelSpec::tiny_conv_net(shape, cfg.data.classes);
    spec.shapes()?;
    Ok(spec)
}

/// Runs the head over images without attaching labels.
pub fn head_features(head: &Head, images: &[Tensor]) -> Result<Vec<FeatureVector>> {
    par::try_map(images, |x| run_head(head, x))
}

fn stage_key(cut: &CutPoint, noise: NoiseLevel) -> String {
    format!("{}/{}", cut.label, noise)
}

fn stage_rng(cfg: &ScenarioConfig, what: &str, key: &str) -> crate::rng::Rng {
    rng::seeded(rng::derive_str(cfg.seed, &format!("{what}/{key}")))
}

/// Attack VAE from the attacker's slice of the training images; the
/// observed stream is passed through the channel unless the attacker taps
/// the link before it.
pub fn train_attacker(
    cfg: &ScenarioConfig,
    head: &Head,
    train_images: &[Tensor],
    noise: NoiseLevel,
) -> Result<(AttackVae, Vec<EpochLoss>)> {
    let det = cfg.detector_samples;
    let pool = train_images
        .get(det..det + cfg.attack_samples)
        .ok_or_else(|| Error::Config("attack_samples: not enough training images".into()))?;
    let key = stage_key(&head.cut, noise);
    let clean = head_features(head, pool)?;
    let observed = if cfg.attacker_observes_noisy {
        corrupt_features(&clean, &preset(noise), &mut stage_rng(cfg, "noise-attacker", &key))?
    } else {
        clean
    };
    let d_h = collect_features(observed, cfg.attack_samples, &head.cut)?;
    train_attack_vae(&d_h, &cfg.attack, rng::derive_str(cfg.seed, &format!("attack/{key}")))
}

/// Noisy benign features the detector trains on.
pub fn detector_training_set(
    cfg: &ScenarioConfig,
    head: &Head,
    train_images: &[Tensor],
    noise: NoiseLevel,
) -> Result<FeatureDataset> {
    let pool = train_images
        .get(..cfg.detector_samples)
        .ok_or_else(|| Error::Config("detector_samples: not enough training images".into()))?;
    let clean = head_features(head, pool)?;
    let noisy = corrupt_features(&clean, &preset(noise), &mut stage_rng(cfg, "noise-detector", &stage_key(&head.cut, noise)))?;
    FeatureDataset::new(head.cut.clone(), Split::Train, noisy)
}

pub fn train_detector_advae(cfg: &ScenarioConfig, set: &FeatureDataset, noise: NoiseLevel) -> Result<(AdVae, AdVaeHistory)> {
    let key = stage_key(&set.cut, noise);
    train_advae(set, &cfg.detector.advae, rng::derive_str(cfg.seed, &format!("advae/{key}")))
}

/// Trained classifier plus the image pools every stage draws from.
pub struct Pipeline {
    pub cfg: ScenarioConfig,
    pub model: Model,
    pub train: ImageDataset,
    pub test: ImageDataset,
    pub classifier_log: Vec<ClassifierEpoch>,
}

/// Pre-trained artifacts for [`Pipeline::stage_with`].
#[derive(Default)]
pub struct Pretrained {
    pub attack: Option<AttackVae>,
    pub advae: Option<Arc<AdVae>>,
    pub detectors: Vec<Detector>,
}

impl Pipeline {
    pub fn train(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate_base()?;
        let (train, test) = load_data(cfg)?;
        check_pools(cfg, train.len(), test.len())?;
        let spec = model_spec(cfg, train.image_shape().unwrap_or(&[]))?;
        let mut model = Model::build(spec, rng::derive_str(cfg.seed, "classifier-init"))?;
        let log = train_classifier(
            &mut model,
            &train,
            Some(&test),
            &cfg.classifier,
            rng::derive_str(cfg.seed, "classifier-train"),
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            model,
            train,
            test,
            classifier_log: log,
        })
    }

    /// Uses an already trained classifier.
    pub fn with_model(cfg: &ScenarioConfig, model: Model) -> Result<Self> {
        cfg.validate_base()?;
        let (train, test) = load_data(cfg)?;
        check_pools(cfg, train.len(), test.len())?;
        let spec = model_spec(cfg, train.image_shape().unwrap_or(&[]))?;
        if model.spec() != &spec {
            return Err(Error::Config(format!(
                "model: checkpoint architecture {} does not match the configured data",
                model.spec().name
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            model,
            train,
            test,
            classifier_log: Vec::new(),
        })
    }

    pub fn cut(&self, label: &str) -> Result<CutPoint> {
        self.model.cut(label).cloned().map_err(|e| Error::Config(format!("cut: {e}")))
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        self.model.accuracy(&self.test)
    }

    /// Test features `[range]` with ground-truth labels, for scoring only.
    fn labeled_test_features(&self, head: &Head, range: std::ops::Range<usize>) -> Result<Vec<FeatureVector>> {
        let mut feats = head_features(head, &self.test.images[range.clone()])?;
        for (h, &l) in feats.iter_mut().zip(&self.test.labels[range]) {
            h.source_label = Some(l);
        }
        Ok(feats)
    }

    /// Trains the attacker and the shared adVAE for one `(cut, preset)`.
    pub fn stage(&self, cut_label: &str, noise: NoiseLevel) -> Result<Stage> {
        self.stage_with(cut_label, noise, Pretrained::default())
    }

    /// Like [`Pipeline::stage`], reusing whatever artifacts are supplied.
    pub fn stage_with(&self, cut_label: &str, noise: NoiseLevel, pre: Pretrained) -> Result<Stage> {
        let cfg = &self.cfg;
        let cut = self.cut(cut_label)?;
        let (head, tail) = partition(&self.model, &cut)?;
        let key = stage_key(&cut, noise);

        let det_set = detector_training_set(cfg, &head, &self.train.images, noise)?;
        let advae = match pre.advae {
            Some(a) => a,
            None => Arc::new(train_detector_advae(cfg, &det_set, noise)?.0),
        };
        let train_features = detection_features(&advae, &det_set.samples)?;
        let attack = match pre.attack {
            Some(a) => a,
            None => train_attacker(cfg, &head, &self.train.images, noise)?.0,
        };

        let clean_benign = self.labeled_test_features(&head, 0..cfg.benign)?;
        let sources = self.labeled_test_features(&head, cfg.benign..cfg.benign + cfg.adversarial)?;
        let noisy_benign = corrupt_features(&clean_benign, &preset(noise), &mut stage_rng(cfg, "noise-benign", &key))?;
        let benign_features = detection_features(&advae, &noisy_benign)?;
        let clean_preds = tail_outcomes(&tail, &clean_benign)?;
        let noisy_preds = tail_outcomes(&tail, &noisy_benign)?;
        let acc = |p: &[(bool, f64)]| p.iter().filter(|x| x.0).count() as f64 / p.len() as f64;
        let (rwcg_clean, f1) = rwcg(&clean_preds);
        let (rwcg_noisy, f2) = rwcg(&noisy_preds);
        let mut detectors = BTreeMap::new();
        for d in pre.detectors {
            if d.meta.cut != cut.label || d.meta.noise != noise.as_str() || !Arc::ptr_eq(&d.advae, &advae) && *d.advae != *advae {
                return Err(Error::Config(format!(
                    "detector checkpoint for {}/{} does not match stage {key}",
                    d.meta.cut, d.meta.noise
                )));
            }
            detectors.insert(d.variant, Arc::new(d));
        }
        Ok(Stage {
            cut,
            noise,
            tail,
            advae,
            attack,
            train_features,
            clean_benign,
            noisy_benign,
            benign_features,
            sources,
            clean_accuracy: acc(&clean_preds),
            noisy_accuracy: acc(&noisy_preds),
            rwcg_delta: rwcg_noisy - rwcg_clean,
            rwcg_degenerate: f1 || f2,
            detectors,
        })
    }
}

pub fn detection_features(advae: &AdVae, samples: &[FeatureVector]) -> Result<Vec<DetectionFeatures>> {
    par::try_map(samples, |h| extract_features(advae, h))
}

/// `(correct, confidence)` of the tail on labeled features.
pub fn tail_outcomes(tail: &Tail, samples: &[FeatureVector]) -> Result<Vec<(bool, f64)>> {
    par::try_map(samples, |h| {
        let label = h.source_label.ok_or_else(|| Error::Usage("feature without a source label".into()))?;
        run_tail(tail, h).map(|p| (p.class == label, p.confidence))
    })
}

/// Artifacts shared by every `(nu, variant)` cell of one `(cut, preset)`.
pub struct Stage {
    pub cut: CutPoint,
    pub noise: NoiseLevel,
    pub tail: Tail,
    pub advae: Arc<AdVae>,
    pub attack: AttackVae,
    /// Detection features of the (noisy) benign training set.
    pub train_features: Vec<DetectionFeatures>,
    pub clean_benign: Vec<FeatureVector>,
    pub noisy_benign: Vec<FeatureVector>,
    pub benign_features: Vec<DetectionFeatures>,
    /// Clean labeled features the attacker perturbs.
    pub sources: Vec<FeatureVector>,
    pub clean_accuracy: f64,
    pub noisy_accuracy: f64,
    pub rwcg_delta: f64,
    pub rwcg_degenerate: bool,
    detectors: BTreeMap<Variant, Arc<Detector>>,
}

/// Adversarial stream for one attack strength.
pub struct Cell {
    pub nu: f64,
    /// Crafted and then passed through the channel.
    pub adversarial: Vec<FeatureVector>,
    pub features: Vec<DetectionFeatures>,
    pub asr: f64,
    pub mean_conf: f64,
}

impl Stage {
    fn key(&self) -> String {
        stage_key(&self.cut, self.noise)
    }

    pub fn delta_acc(&self) -> f64 {
        self.noisy_accuracy - self.clean_accuracy
    }

    pub fn cell(&self, cfg: &ScenarioConfig, nu: f64) -> Result<Cell> {
        check_nu(nu)?;
        let key = format!("{}/{:016x}", self.key(), nu.to_bits());
        let crafted = self.attack.craft_batch(&self.sources, nu, rng::derive_str(cfg.seed, &format!("craft/{key}")))?;
        let mut r = rng::seeded(rng::derive_str(cfg.seed, &format!("noise-adversarial/{key}")));
        let adversarial = corrupt_features(&crafted, &preset(self.noise), &mut r)?;
        let features = detection_features(&self.advae, &adversarial)?;
        let outcomes = tail_outcomes(&self.tail, &adversarial)?;
        let n = outcomes.len() as f64;
        Ok(Cell {
            nu,
            asr: outcomes.iter().filter(|o| !o.0).count() as f64 / n,
            mean_conf: outcomes.iter().map(|o| o.1).sum::<f64>() / n,
            adversarial,
            features,
        })
    }

    /// Fits (once) and returns the detector for `variant`.
    pub fn detector(&mut self, cfg: &ScenarioConfig, variant: Variant) -> Result<Arc<Detector>> {
        if let Some(d) = self.detectors.get(&variant) {
            return Ok(d.clone());
        }
        let meta = DetectorMeta {
            cut: self.cut.label.clone(),
            noise: self.noise.to_string(),
        };
        let det = Arc::new(Detector::fit(variant, self.advae.clone(), &self.train_features, &cfg.detector, meta)?);
        self.detectors.insert(variant, det.clone());
        Ok(det)
    }

    pub fn report(&mut self, cfg: &ScenarioConfig, cell: &Cell, variant: Variant) -> Result<ScenarioReport> {
        let det = self.detector(cfg, variant)?;
        let benign: Vec<_> = self.benign_features.iter().map(|f| det.judge(f)).collect();
        let adversarial: Vec<_> = cell.features.iter().map(|f| det.judge(f)).collect();
        let counts = ConfusionCounts::from_flags(
            &benign.iter().map(|v| v.anomalous).collect::<Vec<_>>(),
            &adversarial.iter().map(|v| v.anomalous).collect::<Vec<_>>(),
        );
        let m = metrics(&counts);
        let auc = auroc(
            &benign.iter().map(|v| v.score).collect::<Vec<_>>(),
            &adversarial.iter().map(|v| v.score).collect::<Vec<_>>(),
        )?;
        let latency_ms = if cfg.timing {
            Some(detection_latency_ms(&det, &self.noisy_benign, &cell.adversarial, cfg.latency_samples)?)
        } else {
            None
        };
        let mut flags: Vec<&str> = m.degenerate.clone();
        if self.rwcg_degenerate {
            flags.push("rwcg");
        }
        Ok(ScenarioReport {
            model: cfg.model.clone(),
            cut: self.cut.label.clone(),
            nu: cell.nu,
            noise: self.noise.to_string(),
            variant: variant.to_string(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1_anom: m.f1_anom,
            balanced_acc: m.balanced_accuracy,
            auroc: auc,
            far: m.far,
            dr: m.dr,
            asr: cell.asr,
            mean_conf: cell.mean_conf,
            rwcg: self.rwcg_delta,
            delta_acc: self.delta_acc(),
            latency_ms,
            degenerate_flags: flags.join("|"),
        })
    }
}

/// Median wall-clock milliseconds of single-sample detections (adVAE
/// forward plus boundary decision), cycling through the mixed stream.
pub fn detection_latency_ms(det: &Detector, benign: &[FeatureVector], adversarial: &[FeatureVector], samples: usize) -> Result<f64> {
    let stream: Vec<&FeatureVector> = benign.iter().chain(adversarial).collect();
    if stream.is_empty() {
        return Err(Error::Usage("no samples to time".into()));
    }
    let mut times = Vec::with_capacity(samples);
    for i in 0..samples {
        let h = stream[i % stream.len()];
        let start = Instant::now();
        std::hint::black_box(det.detect(h)?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&times))
}

/// Trains everything the config needs and reports its single cell.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let pipeline = Pipeline::train(cfg)?;
    run_scenario_with(&pipeline, cfg)
}

/// Like [`run_scenario`] with a prepared classifier.
pub fn run_scenario_with(pipeline: &Pipeline, cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let mut stage = pipeline.stage(&cfg.cut, cfg.noise)?;
    let cell = stage.cell(cfg, cfg.nu)?;
    stage.report(cfg, &cell, cfg.variant)
}
