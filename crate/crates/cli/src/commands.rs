use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use splitguard::attack::AttackVae;
use splitguard::detector::{Detector, DetectorMeta};
use splitguard::eval::{
    detection_features, detector_training_set, load_train_images, run_demo, sweep_with, to_csv, to_json,
    train_attacker, train_detector_advae, Pipeline, Pretrained, SweepRow,
};
use splitguard::nn::Tensor;
use splitguard::split::{partition, Model};
use splitguard::{Error, Result};

use crate::config::Run;

/// What a command failed with; maps onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    AllRowsFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Core(Error::Training(_)) => 3,
            Failure::Core(_) => 2,
            Failure::AllRowsFailed(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::AllRowsFailed(n) => write!(f, "all {n} sweep rows failed"),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Usage(format!("json: {e}")))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn log_path(artifact: &Path) -> PathBuf {
    let stem = artifact.file_stem().and_then(|s| s.to_str()).unwrap_or("artifact");
    artifact.with_file_name(format!("{stem}-log.json"))
}

fn missing(what: &str, path: &Path) -> Error {
    Error::Config(format!("{what} checkpoint {} not found (train it first or pass --auto)", path.display()))
}

pub fn train_classifier(run: &Run) -> Result<PathBuf> {
    let pipeline = Pipeline::train(&run.scenario)?;
    let path = run.classifier_path();
    pipeline.model.save(&path)?;
    write_json(&log_path(&path), &pipeline.classifier_log)?;
    if let Some(last) = pipeline.classifier_log.last() {
        info!("classifier: train accuracy {:.4}, test accuracy {:?}", last.train_accuracy, last.test_accuracy);
    }
    Ok(path)
}

fn classifier(run: &Run, auto: bool) -> Result<Model> {
    let path = run.classifier_path();
    if path.is_file() {
        return Model::load(&path);
    }
    if !auto {
        return Err(missing("classifier", &path));
    }
    info!("training missing classifier");
    train_classifier(run)?;
    Model::load(&path)
}

/// Classifier plus unlabeled training images whose shape it accepts.
fn model_and_images(run: &Run, auto: bool) -> Result<(Model, Vec<Tensor>)> {
    let model = classifier(run, auto)?;
    let images = load_train_images(&run.scenario)?;
    if let Some(x) = images.first() {
        if x.shape() != model.spec().input_shape.as_slice() {
            return Err(Error::Config(format!(
                "data: images are {:?} but the classifier expects {:?}",
                x.shape(),
                model.spec().input_shape
            )));
        }
    }
    Ok((model, images))
}

pub fn train_attack(run: &Run, auto: bool) -> Result<Vec<PathBuf>> {
    let (model, images) = model_and_images(run, auto)?;
    let mut written = Vec::new();
    for (cut, noise) in run.stages() {
        let (head, _) = partition(&model, model.cut(&cut)?)?;
        let (attack, log) = train_attacker(&run.scenario, &head, &images, noise)?;
        let path = run.attack_path(&cut, noise);
        attack.save(&path)?;
        write_json(&log_path(&path), &log)?;
        info!("attack {cut}/{noise}: final loss {:.3}", log.last().map_or(f64::NAN, |l| l.total));
        written.push(path);
    }
    Ok(written)
}

pub fn train_detector(run: &Run, auto: bool) -> Result<Vec<PathBuf>> {
    let (model, images) = model_and_images(run, auto)?;
    let mut written = Vec::new();
    for (cut, noise) in run.stages() {
        let (head, _) = partition(&model, model.cut(&cut)?)?;
        let set = detector_training_set(&run.scenario, &head, &images, noise)?;
        let (advae, history) = train_detector_advae(&run.scenario, &set, noise)?;
        let advae = std::sync::Arc::new(advae);
        let feats = detection_features(&advae, &set.samples)?;
        write_json(&run.artifacts.join(format!("detector-{cut}-{noise}-log.json")), &history)?;
        for &variant in &run.axes.variants {
            let meta = DetectorMeta {
                cut: cut.clone(),
                noise: noise.to_string(),
            };
            let det = Detector::fit(variant, advae.clone(), &feats, &run.scenario.detector, meta)?;
            let path = run.detector_path(&cut, noise, variant);
            det.save(&path)?;
            info!("detector {cut}/{noise}/{variant} written");
            written.push(path);
        }
    }
    Ok(written)
}

/// Loads every checkpoint the sweep needs; absent ones are `None` and
/// only allowed with `auto`.
fn pretrained(run: &Run, cut: &str, noise: splitguard::noise::NoiseLevel, auto: bool) -> Result<Pretrained> {
    let mut pre = Pretrained::default();
    let path = run.attack_path(cut, noise);
    if path.is_file() {
        pre.attack = Some(AttackVae::load(&path)?);
    } else if !auto {
        return Err(missing("attack", &path));
    }
    for &variant in &run.axes.variants {
        let path = run.detector_path(cut, noise, variant);
        if path.is_file() {
            let det = Detector::load(&path)?;
            match &pre.advae {
                Some(a) if **a != *det.advae => {
                    return Err(Error::Config(format!(
                        "{}: adVAE differs from the other detectors of {cut}/{noise}",
                        path.display()
                    )))
                }
                Some(_) => {}
                None => pre.advae = Some(det.advae.clone()),
            }
            pre.detectors.push(det);
        } else if !auto {
            return Err(missing("detector", &path));
        }
    }
    Ok(pre)
}

pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
}

fn timestamped_dir(base: &Path) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S").to_string();
    let mut dir = base.join(&stamp);
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{k}"));
        k += 1;
    }
    dir
}

pub fn sweep(run: &Run, auto: bool) -> std::result::Result<SweepOutcome, Failure> {
    let model = classifier(run, auto)?;
    let pipeline = Pipeline::with_model(&run.scenario, model)?;
    // every checkpoint is resolved up front so a missing one fails before output
    let mut pre = Vec::new();
    for (cut, noise) in run.stages() {
        pre.push(pretrained(run, &cut, noise, auto)?);
    }
    let mut pre = pre.into_iter();
    let rows = sweep_with(&pipeline, &run.axes, |cut, noise| {
        let p = pre.next().expect("one entry per stage");
        let trained_attack = p.attack.is_none();
        let mut stage = pipeline.stage_with(cut, noise, p)?;
        if trained_attack {
            stage.attack.save(&run.attack_path(cut, noise))?;
        }
        for &v in &run.axes.variants {
            let path = run.detector_path(cut, noise, v);
            let det = stage.detector(&run.scenario, v)?;
            if !path.is_file() {
                det.save(&path)?;
            }
        }
        Ok(stage)
    })?;
    let dir = timestamped_dir(&run.out.join("reports").join(&run.name));
    write_file(&dir.join("results.csv"), &to_csv(&rows)?)?;
    write_file(&dir.join("results.json"), &to_json(&rows)?)?;
    let ok = rows.iter().filter(|r| r.succeeded()).count();
    for r in rows.iter().filter(|r| !r.succeeded()) {
        log::warn!("row {}/{}/{}/{} failed: {}", r.cut, r.noise, r.nu, r.variant, r.degenerate_flags);
    }
    if ok == 0 {
        return Err(Failure::AllRowsFailed(rows.len()));
    }
    Ok(SweepOutcome { dir, rows })
}

pub fn demo(run: &Run) -> Result<PathBuf> {
    let outcome = run_demo(&run.scenario, run.scenario.latency_samples)?;
    let dir = run.out.join("reports").join("demo");
    write_file(&dir.join("results.csv"), outcome.csv.as_bytes())?;
    write_json(&dir.join("summary.json"), &outcome)?;
    let r = &outcome.report;
    println!("classifier test accuracy  {:.4}", outcome.test_accuracy);
    println!(
        "scenario                  cut={} noise={} nu={} variant={}",
        r.cut, r.noise, r.nu, r.variant
    );
    println!("AUROC({})                 {:.4}", r.variant, r.auroc);
    println!("FAR / DR                  {:.4} / {:.4}", r.far, r.dr);
    println!("ASR without detector      {:.4}", r.asr);
    println!(
        "blocked                   {} of {} ({} adversarial, {} benign)",
        outcome.blocked, outcome.stream, outcome.blocked_adversarial, outcome.blocked_benign
    );
    println!("ASR after blocking        {:.4}", outcome.asr_after_blocking);
    println!("tail accuracy change      {:+.4}", r.delta_acc);
    println!("detection latency         {:.4} ms/sample (median)", outcome.latency_ms);
    Ok(dir)
}
