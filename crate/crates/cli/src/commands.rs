use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use serde_json::json;

use ttc_core::annotate::label_sequence;
use ttc_core::config::RunConfig;
use ttc_core::dataset::{read_manifest, write_manifest, write_sequence, Dataset, DatasetIndex};
use ttc_core::estimate::{
    DetectionEstimator, Estimator, FeatureEstimator, PixelMseEstimator, ScaleHead, ScaleSearchConfig,
};
use ttc_core::eval::{evaluate_dataset, format_table, table_csv, EvaluationReport};
use ttc_core::learn::{
    load_model, loss_curve_csv, read_weights_manifest, save_model, train_loop, validation_mid, CheckpointSink,
    Model, TrainSample,
};
use ttc_core::rng::derive_seed;
use ttc_core::sequence::SEQUENCE_LEN;
use ttc_core::ttc::truncate_ttc;
use ttc_core::TtcSeconds;

use crate::{Cli, Command, EstimatorName};

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

const USAGE: u8 = 2;
const INTERNAL: u8 = 1;

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: INTERNAL, error: e.into() }
    }
}

trait UsageExt<T> {
    /// Marks the error as bad user input.
    fn usage(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageExt<T> for Result<T, E> {
    fn usage(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: USAGE, error: e.into().context(what()) })
    }
}

fn usage_error(msg: String) -> Failure {
    Failure { code: USAGE, error: anyhow!(msg) }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).usage(|| format!("cannot load config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.train.search = cfg.feature.clone();
    match cli.command {
        Command::Synth { out, force } => synth(&cfg, &out, force),
        Command::Annotate { dataset, out, tolerance, force } => annotate(&cfg, &dataset, out, tolerance, force),
        Command::Estimate { sequence, estimator, weights, gap } => {
            estimate(&cfg, &sequence, estimator, weights.as_deref(), gap)
        }
        Command::Train { dataset, out, weights, force } => train(&cfg, &dataset, &out, weights.as_deref(), force),
        Command::Eval { dataset, estimator, weights, gap, out, force } => {
            eval(&cfg, &dataset, estimator, weights.as_deref(), gap, &out, force)
        }
        Command::Report { reports, out, force } => report(&reports, out.as_deref(), force),
    }
}

fn open_dataset(root: &Path, cfg: &RunConfig, force: bool) -> Result<Dataset, Failure> {
    let ds = Dataset::open(root).usage(|| format!("cannot open dataset {}", root.display()))?;
    let hash = cfg.hash();
    if ds.index.config_hash != hash {
        let msg = format!(
            "dataset {} was built with config {}, current config is {hash}",
            root.display(),
            ds.index.config_hash
        );
        if !force {
            return Err(usage_error(format!("{msg}; pass --force to proceed")));
        }
        warn!("{msg}");
    }
    Ok(ds)
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(usage_error(format!("{} already exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<(), Failure> {
    refuse_overwrite(&out.join(ttc_core::dataset::INDEX_FILE), force)?;
    let hash = cfg.hash();
    let mut ids = Vec::new();
    for seq in cfg.synthesize() {
        let dir = out.join(&seq.id);
        write_sequence(&dir, &seq, &hash).with_context(|| format!("writing {}", dir.display()))?;
        info!("wrote {}", seq.id);
        ids.push(seq.id);
    }
    let index = DatasetIndex { config_hash: hash.clone(), count: ids.len(), sequences: ids };
    Dataset::write_index(out, &index).with_context(|| format!("writing index in {}", out.display()))?;
    println!("{} sequences written to {} (config {hash})", index.count, out.display());
    Ok(())
}

fn annotate(cfg: &RunConfig, root: &Path, out: Option<PathBuf>, tolerance: f64, force: bool) -> Result<(), Failure> {
    let ds = open_dataset(root, cfg, force)?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let (mut exceeding, mut added, mut accelerating) = (0usize, 0usize, 0usize);
    for id in &ds.index.sequences {
        let dir = ds.sequence_dir(id);
        let mut manifest = read_manifest(&dir).usage(|| format!("cannot read manifest of {id}"))?;
        let seq = manifest.clone().into_sequence(&dir).usage(|| format!("cannot load {id}"))?;
        let label = label_sequence(&seq, &cfg.annotate).with_context(|| format!("labelling {id}"))?;
        accelerating += label.flags.accelerating as usize;
        let deviation = manifest.label.as_ref().map(|old| {
            (truncate_ttc(TtcSeconds(label.tau_s)).value() - truncate_ttc(TtcSeconds(old.tau_s)).value()).abs()
        });
        match deviation {
            Some(d) => {
                worst = worst.max(d);
                if d > tolerance {
                    exceeding += 1;
                    warn!("{id}: annotated tau differs from the stored label by {d:.3e} s");
                }
            }
            None => {
                manifest.label = Some(label.clone());
                write_manifest(&dir, &manifest)?;
                added += 1;
            }
        }
        rows.push(json!({ "sequence_id": id, "label": label, "tau_deviation_s": deviation }));
    }
    let summary = json!({
        "config_hash": ds.index.config_hash,
        "count": rows.len(),
        "labels_added": added,
        "accelerating": accelerating,
        "tolerance_s": tolerance,
        "max_tau_deviation_s": worst,
        "exceeding_tolerance": exceeding,
        "sequences": rows,
    });
    let path = out.unwrap_or_else(|| root.join("annotations.json"));
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{} sequences annotated, {added} labels added, {accelerating} accelerating; \
         max |tau - stored| = {worst:.3e} s, {exceeding} above {tolerance:e} s",
        summary["count"]
    );
    Ok(())
}

fn with_gap(mut search: ScaleSearchConfig, gap: Option<u32>) -> Result<ScaleSearchConfig, Failure> {
    if let Some(g) = gap {
        if g as usize >= SEQUENCE_LEN {
            return Err(usage_error(format!("--gap {g} exceeds the {} frames of a sequence", SEQUENCE_LEN - 1)));
        }
        search.frame_gap = g;
        search.validate().usage(|| format!("invalid --gap {g}"))?;
    }
    Ok(search)
}

fn build_estimator(
    cfg: &RunConfig,
    name: EstimatorName,
    weights: Option<&Path>,
    gap: Option<u32>,
    force: bool,
) -> Result<Box<dyn Estimator>, Failure> {
    Ok(match name {
        EstimatorName::Detection => Box::new(DetectionEstimator::new(with_gap(cfg.pixel.clone(), gap)?, cfg.detection)),
        EstimatorName::PixelMse => Box::new(PixelMseEstimator::new(with_gap(cfg.pixel.clone(), gap)?)),
        EstimatorName::FeatureScale => {
            let path = weights.ok_or_else(|| usage_error("feature_scale needs --weights".into()))?;
            let model = load_weights(path, cfg, force)?;
            Box::new(FeatureEstimator::new(with_gap(cfg.feature.clone(), gap)?, model.extractor, Some(model.head)))
        }
    })
}

fn load_weights(path: &Path, cfg: &RunConfig, force: bool) -> Result<Model, Failure> {
    let what = || format!("cannot load weights {}", path.display());
    let side = read_weights_manifest(path).usage(what)?;
    if side.config_hash != cfg.hash() {
        let msg = format!("weights {} were trained under config {}", path.display(), side.config_hash);
        if !force {
            return Err(usage_error(format!("{msg}; pass --force to use them")));
        }
        warn!("{msg}");
    }
    let model = load_model(path).usage(what)?;
    if model.head.n != cfg.feature.n_bins {
        return Err(usage_error(format!(
            "weights have {} scale bins, config expects {}",
            model.head.n, cfg.feature.n_bins
        )));
    }
    Ok(model)
}

fn estimate(
    cfg: &RunConfig,
    dir: &Path,
    name: EstimatorName,
    weights: Option<&Path>,
    gap: Option<u32>,
) -> Result<(), Failure> {
    let manifest = read_manifest(dir).usage(|| format!("cannot read sequence {}", dir.display()))?;
    if manifest.config_hash != cfg.hash() {
        warn!("sequence {} was built under config {}", manifest.sequence_id, manifest.config_hash);
    }
    let seq = manifest.into_sequence(dir).usage(|| format!("cannot load sequence {}", dir.display()))?;
    // Debug command: weights from another config are allowed with a warning.
    let est = build_estimator(cfg, name, weights, gap, true)?;
    let out = est.estimate(&seq)?;
    let gt = seq.alpha_gt_10hz(est.config().frame_gap, est.config().reference).ok().map(|a| a.value());
    let value = json!({
        "sequence_id": seq.id,
        "estimator": est.id(),
        "alpha_hat": out.alpha_hat.value(),
        "alpha_hat_10hz": out.alpha_hat_10hz.value(),
        "tau_hat_s": out.tau_hat.value(),
        "low_confidence": out.low_confidence,
        "alpha_gt_10hz": gt,
        "tau_gt_s": seq.label.as_ref().map(|l| l.tau_s),
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn train(cfg: &RunConfig, root: &Path, out: &Path, init: Option<&Path>, force: bool) -> Result<(), Failure> {
    let weights_path = out.join("weights.bin");
    refuse_overwrite(&weights_path, force)?;
    let ds = open_dataset(root, cfg, force)?;
    let tc = &cfg.train;
    let mut samples = Vec::with_capacity(ds.index.count);
    for seq in ds.iter() {
        let seq = seq.usage(|| "cannot load dataset sequence".into())?;
        match TrainSample::from_sequence(&seq, tc) {
            Ok(s) => samples.push(s),
            Err(e) => warn!("skipping {}: {e}", seq.id),
        }
    }
    let n_val = (samples.len() as f64 * tc.val_fraction).round() as usize;
    let val = samples.split_off(samples.len() - n_val);
    if samples.is_empty() {
        return Err(usage_error(format!("dataset {} has no usable training sequences", root.display())));
    }
    let model = match init {
        Some(p) => load_weights(p, cfg, force)?,
        None => Model::new(
            tc.extractor.build(derive_seed(cfg.seed, 0xc0))?,
            ScaleHead::random(cfg.feature.n_bins, derive_seed(cfg.seed, 0x4e)),
        ),
    };
    let before = if val.is_empty() { None } else { Some(validation_mid(&model, &val, &cfg.feature)?) };
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    let hash = cfg.hash();
    let outcome = train_loop(model, &samples, &val, tc, Some(CheckpointSink { dir: &ckpt_dir, config_hash: &hash }))?;
    save_model(&outcome.model, &weights_path, &hash)?;
    let curve = out.join("loss_curve.csv");
    fs::write(&curve, loss_curve_csv(&outcome.curve)).with_context(|| format!("writing {}", curve.display()))?;
    let last = outcome.curve.last().expect("at least one epoch");
    println!(
        "trained on {} sequences ({} validation); final train loss {:.5}; val MiD {} -> {}",
        samples.len(),
        val.len(),
        last.train_loss,
        fmt_opt(before),
        fmt_opt(last.val_mid)
    );
    println!("weights written to {}", weights_path.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into())
}

fn eval(
    cfg: &RunConfig,
    root: &Path,
    name: EstimatorName,
    weights: Option<&Path>,
    gap: Option<u32>,
    out: &Path,
    force: bool,
) -> Result<(), Failure> {
    refuse_overwrite(out, force)?;
    let ds = open_dataset(root, cfg, force)?;
    let est = build_estimator(cfg, name, weights, gap, force)?;
    let sequences = ds.iter().map(|s| s.map_err(Into::into));
    let report = evaluate_dataset(sequences, est.as_ref(), &cfg.hash())?;
    write_report(&report, out)?;
    print!("{}", format_table(std::slice::from_ref(&report)));
    let failures = report.overall.failures;
    if failures > 0 {
        warn!("{failures} sequences failed and are excluded from the means");
    }
    Ok(())
}

fn write_report(report: &EvaluationReport, out: &Path) -> Result<(), Failure> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(out, report.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    let csv = out.with_extension("csv");
    fs::write(&csv, table_csv(std::slice::from_ref(report))).with_context(|| format!("writing {}", csv.display()))?;
    Ok(())
}

fn report(paths: &[PathBuf], out: Option<&Path>, force: bool) -> Result<(), Failure> {
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(p).usage(|| format!("cannot read report {}", p.display()))?;
        reports.push(EvaluationReport::from_json(&text).usage(|| format!("cannot parse report {}", p.display()))?);
    }
    let first = &reports[0].config_hash;
    if let Some(other) = reports.iter().find(|r| &r.config_hash != first) {
        let msg = format!("reports come from different configs ({first} and {})", other.config_hash);
        if !force {
            return Err(usage_error(format!("{msg}; pass --force to merge anyway")));
        }
        warn!("{msg}");
    }
    print!("{}", format_table(&reports));
    if let Some(path) = out {
        fs::write(path, table_csv(&reports)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
