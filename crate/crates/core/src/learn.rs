//! Training of the feature-scale head (and optionally the conv stack):
//! Gaussian soft labels over scale bins, per-bin binary cross-entropy, SGD
//! with momentum, weight decay and a cosine schedule, and a central
//! finite-difference gradient check of the whole trainable path.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result, TtcError};
use crate::estimate::{
    bin_alphas, cosine_similarity_map_backward, grid_sample_backward, prepare_pair, score_pair, ConvStack,
    ConvStackSpec, ExtractorKind, FeatureEstimator, FeatureExtractor, FeatureMap, PreparedPair, ScaleHead,
    ScaleSearchConfig,
};
use crate::eval::mid_10hz;
use crate::raster::Raster;
use crate::rng::{derive_seed, rng_for};
use crate::sequence::Sequence;
use crate::ttc::{convert_scale_ratio_fps, ScaleRatio, REFERENCE_FPS};

/// Peak-normalized Gaussian over bin indices centered on the continuous bin
/// position of `alpha_gt`. `sigma == 0` gives a one-hot at the nearest bin.
pub fn soft_label(alpha_gt: f64, cfg: &ScaleSearchConfig, sigma: f64) -> Vec<f64> {
    let a = alpha_gt.clamp(cfg.alpha_min, cfg.alpha_max);
    let center = (a - cfg.alpha_min) / cfg.bin_width();
    if sigma <= 0.0 {
        let k = center.round() as usize;
        return (0..cfg.n_bins).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
    }
    (0..cfg.n_bins)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with logits and its gradient `(sigma(z) - y) / n`.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(TtcError::Shape(format!("{} logits vs {} labels", logits.len(), labels.len())));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        // max(z, 0) - z y + ln(1 + e^-|z|) equals -[y ln s + (1-y) ln(1-s)]
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((loss / n, grad))
}

/// Binary entropy of the labels: the loss floor reached when `sigma(z) == y`.
pub fn bce_floor(labels: &[f64]) -> f64 {
    let h = |y: f64| if y <= 0.0 || y >= 1.0 { 0.0 } else { -(y * y.ln() + (1.0 - y) * (1.0 - y).ln()) };
    labels.iter().map(|&y| h(y)).sum::<f64>() / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Per-channel multiplicative jitter range.
    pub gain: (f64, f64),
    /// Per-channel additive jitter range.
    pub bias: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { gain: (0.8, 1.2), bias: (-0.05, 0.05) }
    }
}

/// Serializable choice of feature extractor for a fresh model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorChoice {
    Identity,
    #[default]
    HandCrafted,
    ConvStack(ConvStackSpec),
}

impl ExtractorChoice {
    pub fn build(&self, seed: u64) -> Result<ExtractorKind> {
        Ok(match self {
            ExtractorChoice::Identity => ExtractorKind::Identity,
            ExtractorChoice::HandCrafted => ExtractorKind::HandCrafted,
            ExtractorChoice::ConvStack(spec) => ExtractorKind::ConvStack(ConvStack::new(*spec, seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to `1e-4 * batch_size`.
    pub base_lr: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Soft-label width, bins.
    pub sigma: f64,
    pub augment: Option<AugmentConfig>,
    pub extractor: ExtractorChoice,
    /// Also update the conv stack when the extractor has one.
    pub train_extractor: bool,
    /// Trailing share of the dataset held out for validation.
    pub val_fraction: f64,
    /// Taken from the run configuration's feature section, not serialized.
    #[serde(skip, default = "ScaleSearchConfig::feature")]
    pub search: ScaleSearchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 36,
            batch_size: 16,
            base_lr: None,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            sigma: 1.0,
            augment: Some(AugmentConfig::default()),
            extractor: ExtractorChoice::default(),
            train_extractor: false,
            val_fraction: 0.2,
            search: ScaleSearchConfig::feature(),
        }
    }
}

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        self.base_lr.unwrap_or(1e-4 * self.batch_size as f64)
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.lr() >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.sigma >= 0.0
            && (0.0..1.0).contains(&self.val_fraction);
        if !ok {
            return Err(TtcError::Config("training hyperparameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SgdState {
    pub momentum: Vec<f64>,
}

/// Cosine-annealed learning rate at `progress` in `[0, 1]`.
pub fn cosine_lr(base_lr: f64, progress: f64) -> f64 {
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos())
}

/// `m <- mu m + (g + wd p)`, `p <- p - lr(t) m`. Non-finite gradients abort
/// without touching the parameters.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut SgdState,
    cfg: &TrainConfig,
    progress: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(TtcError::Shape(format!("{} params vs {} grads", params.len(), grads.len())));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TtcError::Diverged {
            epoch: (progress * cfg.epochs as f64) as usize,
            reason: format!("gradient {i} is {}", grads[i]),
        });
    }
    if state.momentum.len() != params.len() {
        state.momentum = vec![0.0; params.len()];
    }
    let lr = cosine_lr(cfg.lr(), progress);
    for ((p, &g), m) in params.iter_mut().zip(grads).zip(state.momentum.iter_mut()) {
        *m = cfg.momentum * *m + (g + cfg.weight_decay * *p);
        *p -= lr * *m;
    }
    Ok(())
}

/// Extractor plus scale head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub extractor: ExtractorKind,
    pub head: ScaleHead,
}

impl Model {
    pub fn new(extractor: ExtractorKind, head: ScaleHead) -> Self {
        Self { extractor, head }
    }

    fn conv(&self, with_extractor: bool) -> Option<&ConvStack> {
        match (&self.extractor, with_extractor) {
            (ExtractorKind::ConvStack(c), true) => Some(c),
            _ => None,
        }
    }

    /// Trainable parameters: conv stack first (if included), then the head.
    pub fn params(&self, with_extractor: bool) -> Vec<f64> {
        let mut p = self.conv(with_extractor).map(ConvStack::params).unwrap_or_default();
        p.extend(self.head.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64], with_extractor: bool) -> Result<()> {
        let nc = self.conv(with_extractor).map_or(0, |c| c.num_params());
        if p.len() != nc + self.head.num_params() {
            return Err(TtcError::Shape(format!("model expects {} params, got {}", nc + self.head.num_params(), p.len())));
        }
        if let (ExtractorKind::ConvStack(c), true) = (&mut self.extractor, with_extractor) {
            c.set_params(&p[..nc])?;
        }
        self.head.set_params(&p[nc..])
    }

    pub fn estimator(&self, cfg: &ScaleSearchConfig) -> FeatureEstimator {
        FeatureEstimator::new(cfg.clone(), self.extractor.clone(), Some(self.head.clone()))
    }
}

/// One supervised example: a prepared window pair and its soft label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub pair: PreparedPair,
    pub label: Vec<f64>,
    /// Ground-truth ratio at the training gap and its 10 Hz equivalent.
    pub alpha_gt: f64,
    pub alpha_gt_10hz: f64,
    /// Stream rate of the reference/target pair, Hz.
    pub pair_fps: f64,
}

impl TrainSample {
    pub fn from_sequence(seq: &Sequence, cfg: &TrainConfig) -> Result<Self> {
        let s = &cfg.search;
        let alpha = seq.alpha_gt(s.frame_gap, s.reference)?.value();
        let pair_fps = seq.fps / s.frame_gap as f64;
        Ok(Self {
            id: seq.id.clone(),
            pair: prepare_pair(seq, s.frame_gap, s)?,
            label: soft_label(alpha, s, cfg.sigma),
            alpha_gt: alpha,
            alpha_gt_10hz: convert_scale_ratio_fps(ScaleRatio::new(alpha)?, pair_fps, REFERENCE_FPS)?.value(),
            pair_fps,
        })
    }
}

/// Loss and gradient of one sample at zero center offset.
pub fn forward_backward(
    model: &Model,
    pair: &PreparedPair,
    label: &[f64],
    cfg: &ScaleSearchConfig,
    with_extractor: bool,
) -> Result<(f64, Vec<f64>)> {
    let conv = model.conv(with_extractor);
    let (fr, ft, tapes) = match conv {
        Some(c) => {
            let (fr, tr) = c.extract_tape(&pair.reference);
            let (ft, tt) = c.extract_tape(&pair.target);
            (fr, ft, Some((tr, tt)))
        }
        None => (model.extractor.extract(&pair.reference), model.extractor.extract(&pair.target), None),
    };
    let scores = score_pair(&fr, &ft, pair, cfg, 0, 0)?;
    let head = &model.head;
    let z = head.forward(&scores.s);
    let (loss, gz) = bce_loss(&z, label)?;

    let n = head.n;
    let mut head_grad = vec![0.0; head.num_params()];
    for i in 0..n {
        for j in 0..n {
            head_grad[i * n + j] = gz[i] * scores.s[j];
        }
        head_grad[n * n + i] = gz[i];
    }
    let Some((tape_r, tape_t)) = tapes else {
        return Ok((loss, head_grad));
    };
    let conv = conv.expect("tapes imply a conv stack");

    let ds: Vec<f64> = (0..n).map(|j| (0..n).map(|i| head.weights[i * n + j] * gz[i]).sum()).collect();
    let tp = &scores.target_patch;
    let cells = (tp.height * tp.width) as f64;
    let mut g_fr = FeatureMap::zeros(fr.channels, fr.height, fr.width);
    let mut g_ft = FeatureMap::zeros(ft.channels, ft.height, ft.width);
    let mut g_tp = FeatureMap::zeros(tp.channels, tp.height, tp.width);
    for j in 0..n {
        let gmap = FeatureMap { data: vec![ds[j] / cells; tp.height * tp.width], ..FeatureMap::zeros(1, tp.height, tp.width) };
        let (ga, gb) = cosine_similarity_map_backward(&scores.ref_patches[j], tp, &gmap)?;
        grid_sample_backward(&mut g_fr, &scores.ref_boxes[j], &ga);
        for (d, s) in g_tp.data.iter_mut().zip(&gb.data) {
            *d += s;
        }
    }
    grid_sample_backward(&mut g_ft, &pair.target_box(), &g_tp);
    let mut grad = conv.backward(&tape_r, &g_fr);
    for (d, s) in grad.iter_mut().zip(conv.backward(&tape_t, &g_ft)) {
        *d += s;
    }
    grad.extend(head_grad);
    Ok((loss, grad))
}

/// Loss of one sample at zero center offset, without the backward pass.
pub fn sample_loss(model: &Model, pair: &PreparedPair, label: &[f64], cfg: &ScaleSearchConfig) -> Result<f64> {
    let fr = model.extractor.extract(&pair.reference);
    let ft = model.extractor.extract(&pair.target);
    let scores = score_pair(&fr, &ft, pair, cfg, 0, 0)?;
    Ok(bce_loss(&model.head.forward(&scores.s), label)?.0)
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences with step `epsilon`, over every trainable parameter.
/// The differences at `epsilon` and `epsilon / 2` are Richardson-combined to
/// cancel the second-order truncation term, which otherwise dominates on the
/// cosine path. Components below `1e-6` are compared absolutely.
pub fn finite_diff_gradcheck(
    model: &Model,
    sample: &TrainSample,
    cfg: &ScaleSearchConfig,
    with_extractor: bool,
    epsilon: f64,
) -> Result<f64> {
    let (_, analytic) = forward_backward(model, &sample.pair, &sample.label, cfg, with_extractor)?;
    let p0 = model.params(with_extractor);
    if p0.len() > 5000 {
        return Err(TtcError::Config(format!("{} parameters is too many for an exhaustive check", p0.len())));
    }
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        let mut eval = |d: f64| -> Result<f64> {
            let mut p = p0.clone();
            p[i] += d;
            probe.set_params(&p, with_extractor)?;
            sample_loss(&probe, &sample.pair, &sample.label, cfg)
        };
        let d1 = (eval(epsilon)? - eval(-epsilon)?) / (2.0 * epsilon);
        let h = epsilon / 2.0;
        let d2 = (eval(h)? - eval(-h)?) / (2.0 * h);
        let fd = (4.0 * d2 - d1) / 3.0;
        let a = analytic[i];
        if !a.is_finite() {
            return Ok(f64::INFINITY);
        }
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn augment(r: &Raster, aug: &AugmentConfig, rng: &mut impl Rng) -> Raster {
    let ch = r.channels();
    let gains: Vec<f32> = (0..ch).map(|_| rng.gen_range(aug.gain.0..=aug.gain.1) as f32).collect();
    let biases: Vec<f32> = (0..ch).map(|_| rng.gen_range(aug.bias.0..=aug.bias.1) as f32).collect();
    let mut out = r.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % ch;
        *v = (gains[c] * *v + biases[c]).clamp(0.0, 1.0);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean MiD on the validation set; `None` without one.
    pub val_mid: Option<f64>,
}

pub fn loss_curve_csv(curve: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_mid\n");
    for e in curve {
        let v = e.val_mid.map(|v| format!("{v:.6}")).unwrap_or_default();
        s.push_str(&format!("{},{:.8},{}\n", e.epoch, e.train_loss, v));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<EpochStats>,
    /// Path of the last checkpoint written, if any.
    pub last_checkpoint: Option<PathBuf>,
}

/// Mean MiD of `model` over `samples`, with the configured center shift.
pub fn validation_mid(model: &Model, samples: &[TrainSample], cfg: &ScaleSearchConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(TtcError::Config("empty validation set".into()));
    }
    let est = model.estimator(cfg);
    let alphas = bin_alphas(cfg);
    let mut total = 0.0;
    for s in samples {
        let (z, _) = est.logits(&s.pair)?;
        let a = fuse(&alphas, &z, cfg.top_k);
        let a10 = convert_scale_ratio_fps(ScaleRatio::new(a)?, s.pair_fps, REFERENCE_FPS)?;
        total += mid_10hz(a10, ScaleRatio::new(s.alpha_gt_10hz)?);
    }
    Ok(total / samples.len() as f64)
}

fn fuse(alphas: &[f64], z: &[f64], k: usize) -> f64 {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let (mut num, mut den) = (0.0, 0.0);
    for &i in idx.iter().take(k) {
        let w = sigmoid(z[i]);
        num += w * alphas[i];
        den += w;
    }
    num / den
}

/// Precomputed pooled similarities per center offset, valid while the
/// extractor is frozen: validation then only needs the head.
struct FrozenVal {
    /// Per sample, per offset in lexicographic order.
    scores: Vec<Vec<Vec<f64>>>,
}

impl FrozenVal {
    fn new(model: &Model, samples: &[TrainSample], cfg: &ScaleSearchConfig) -> Result<Self> {
        let c = cfg.shift_c as i32;
        let mut scores = Vec::with_capacity(samples.len());
        for s in samples {
            let fr = model.extractor.extract(&s.pair.reference);
            let ft = model.extractor.extract(&s.pair.target);
            let mut per = Vec::new();
            for dx in -c..=c {
                for dy in -c..=c {
                    per.push(score_pair(&fr, &ft, &s.pair, cfg, dx, dy)?.s);
                }
            }
            scores.push(per);
        }
        Ok(Self { scores })
    }

    fn mid(&self, head: &ScaleHead, samples: &[TrainSample], cfg: &ScaleSearchConfig) -> Result<f64> {
        let alphas = bin_alphas(cfg);
        let mut total = 0.0;
        for (s, per) in samples.iter().zip(&self.scores) {
            let mut best = vec![f64::NEG_INFINITY; head.n];
            for sv in per {
                for (b, z) in best.iter_mut().zip(head.forward(sv)) {
                    if z > *b {
                        *b = z;
                    }
                }
            }
            let a = fuse(&alphas, &best, cfg.top_k);
            let a10 = convert_scale_ratio_fps(ScaleRatio::new(a)?, s.pair_fps, REFERENCE_FPS)?;
            total += mid_10hz(a10, ScaleRatio::new(s.alpha_gt_10hz)?);
        }
        Ok(total / samples.len() as f64)
    }
}

/// Mini-batch SGD over `train`. Shuffling and augmentation draw from streams
/// derived from the seed, so runs are reproducible; gradients are averaged in
/// ascending sample order. With a checkpoint sink, weights are written
/// after every epoch.
pub fn train_loop(
    init: Model,
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
    checkpoints: Option<CheckpointSink<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TtcError::Config("empty training set".into()));
    }
    if init.head.n != cfg.search.n_bins {
        return Err(TtcError::Shape(format!("head has {} bins, config has {}", init.head.n, cfg.search.n_bins)));
    }
    let with_ext = cfg.train_extractor && matches!(init.extractor, ExtractorKind::ConvStack(_));
    let mut model = init;
    let mut params = model.params(with_ext);
    let mut state = SgdState::default();
    let frozen = if !with_ext && !val.is_empty() { Some(FrozenVal::new(&model, val, &cfg.search)?) } else { None };
    let batches = train.len().div_ceil(cfg.batch_size);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut last_checkpoint = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng_for(cfg.seed, derive_seed(0x5u64, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let mut grad = vec![0.0; params.len()];
            for &i in &idx {
                let s = &train[i];
                let pair = match &cfg.augment {
                    Some(aug) => {
                        let mut rng = rng_for(derive_seed(cfg.seed, epoch as u64), i as u64);
                        PreparedPair {
                            reference: augment(&s.pair.reference, aug, &mut rng),
                            target: augment(&s.pair.target, aug, &mut rng),
                            ..s.pair.clone()
                        }
                    }
                    None => s.pair.clone(),
                };
                let (loss, g) = forward_backward(&model, &pair, &s.label, &cfg.search, with_ext)?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, &format!("loss is {loss} on {}", s.id), &last_checkpoint));
                }
                loss_sum += loss;
                for (d, v) in grad.iter_mut().zip(g) {
                    *d += v / idx.len() as f64;
                }
            }
            let progress = (epoch as f64 + b as f64 / batches as f64) / cfg.epochs as f64;
            sgd_step(&mut params, &grad, &mut state, cfg, progress)
                .map_err(|e| diverged(epoch, &e.to_string(), &last_checkpoint))?;
            model.set_params(&params, with_ext)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_mid = match (&frozen, val.is_empty()) {
            (_, true) => None,
            (Some(f), _) => Some(f.mid(&model.head, val, &cfg.search)?),
            (None, _) => Some(validation_mid(&model, val, &cfg.search)?),
        };
        info!("epoch {}: train loss {train_loss:.6}, val MiD {val_mid:?}", epoch + 1);
        curve.push(EpochStats { epoch: epoch + 1, train_loss, val_mid });
        if let Some(sink) = &checkpoints {
            let path = sink.dir.join(format!("epoch_{:03}.bin", epoch + 1));
            save_model(&model, &path, sink.config_hash)?;
            last_checkpoint = Some(path);
        }
    }
    Ok(TrainOutcome { model, curve, last_checkpoint })
}

fn diverged(epoch: usize, reason: &str, last: &Option<PathBuf>) -> TtcError {
    let where_ = last.as_ref().map(|p| format!("; last good checkpoint {}", p.display())).unwrap_or_default();
    TtcError::Diverged { epoch: epoch + 1, reason: format!("{reason}{where_}") }
}

/// Where per-epoch checkpoints go and the run they belong to.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointSink<'a> {
    pub dir: &'a Path,
    pub config_hash: &'a str,
}

/// Sidecar describing a flat little-endian f32 weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub format: String,
    pub config_hash: String,
    pub extractor: String,
    pub conv: Option<ConvStackSpec>,
    pub n_bins: usize,
    pub tensors: Vec<TensorInfo>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes all model parameters (conv stack first, then head) and the sidecar.
pub fn save_model(model: &Model, path: &Path, config_hash: &str) -> Result<()> {
    let conv = match &model.extractor {
        ExtractorKind::ConvStack(c) => Some(c),
        _ => None,
    };
    let mut tensors: Vec<TensorInfo> = conv
        .map(|c| c.tensor_shapes().into_iter().map(|(name, shape)| TensorInfo { name, shape }).collect())
        .unwrap_or_default();
    let n = model.head.n;
    tensors.push(TensorInfo { name: "head.weight".into(), shape: vec![n, n] });
    tensors.push(TensorInfo { name: "head.bias".into(), shape: vec![n] });
    let params = model.params(true);
    let manifest = WeightsManifest {
        format: "f32le".into(),
        config_hash: config_hash.into(),
        extractor: model.extractor.name().into(),
        conv: conv.map(|c| c.spec),
        n_bins: n,
        tensors,
        count: params.len(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for p in &params {
        bytes.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&manifest)? + "\n").map_err(io_err(&side))?;
    Ok(())
}

pub fn read_weights_manifest(path: &Path) -> Result<WeightsManifest> {
    let side = sidecar_path(path);
    Ok(serde_json::from_str(&fs::read_to_string(&side).map_err(io_err(&side))?)?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let manifest = read_weights_manifest(path)?;
    if manifest.format != "f32le" {
        return Err(TtcError::Config(format!("unsupported weight format {}", manifest.format)));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != manifest.count * 4 {
        return Err(TtcError::Shape(format!("{} holds {} bytes, sidecar says {} floats", path.display(), bytes.len(), manifest.count)));
    }
    let params: Vec<f64> =
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let extractor = match (manifest.extractor.as_str(), manifest.conv) {
        ("identity", _) => ExtractorKind::Identity,
        ("hand_crafted", _) => ExtractorKind::HandCrafted,
        ("conv_stack", Some(spec)) => ExtractorKind::ConvStack(ConvStack::new(spec, 0)?),
        (other, _) => return Err(TtcError::Config(format!("unknown extractor {other}"))),
    };
    let mut model = Model::new(extractor, ScaleHead::identity(manifest.n_bins));
    model.set_params(&params, true)?;
    Ok(model)
}
