use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};
use crate::geometry::BoundingBox;
use crate::raster::Raster;
use crate::rng::rng_for;
use crate::sequence::Sequence;

use super::boxes::{bin_alphas, expand_box};
use super::features::{cosine_similarity_map, grid_sample_features, ExtractorKind, FeatureExtractor, FeatureMap};
use super::sampling::crop_resize;
use super::{fuse_top_k, Estimator, ProfileKind, ScaleSearchConfig, SimilarityProfile, TtcEstimate};

/// Side of the feature window relative to the largest candidate box; the
/// slack leaves room for the center shift.
const ROI_MARGIN: f64 = 1.25;

pub(crate) const DEFAULT_GRID: (usize, usize) = (50, 50);

/// Fully connected layer from the `n` pooled similarities to `n` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleHead {
    pub n: usize,
    /// Row-major `n x n`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ScaleHead {
    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        Self { n, weights, bias: vec![0.0; n] }
    }

    /// Untrained head: weights drawn from N(0, 1/n), zero bias.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0x4ead);
        let normal = Normal::new(0.0, 1.0 / (n as f64).sqrt()).expect("positive std");
        Self { n, weights: (0..n * n).map(|_| normal.sample(&mut rng)).collect(), bias: vec![0.0; n] }
    }

    pub fn forward(&self, s: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.bias[i] + self.weights[i * self.n..(i + 1) * self.n].iter().zip(s).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.n * self.n + self.n
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(TtcError::Shape(format!("head has {} params, got {}", self.num_params(), p.len())));
        }
        let nn = self.n * self.n;
        self.weights.copy_from_slice(&p[..nn]);
        self.bias.copy_from_slice(&p[nn..]);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.n * self.n || self.bias.len() != self.n {
            return Err(TtcError::Shape("head weight shapes disagree with n".into()));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(TtcError::Domain("head weights must be finite".into()));
        }
        Ok(())
    }
}

/// Square windows around the reference and target boxes, resampled to a
/// common resolution with the same scale factor so the ratio is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub reference: Raster,
    pub target: Raster,
    /// Expanded target box size in window pixels.
    pub box_w: f64,
    pub box_h: f64,
}

impl PreparedPair {
    pub fn resolution(&self) -> usize {
        self.target.width()
    }

    fn center(&self) -> f64 {
        self.resolution() as f64 / 2.0
    }

    pub fn target_box(&self) -> BoundingBox {
        let c = self.center();
        BoundingBox { x: c, y: c, w: self.box_w, h: self.box_h }
    }

    /// Candidate box for scale `alpha` at integer window offset `(dx, dy)`.
    pub fn candidate_box(&self, alpha: f64, dx: i32, dy: i32) -> BoundingBox {
        let c = self.center();
        BoundingBox { x: c + dx as f64, y: c + dy as f64, w: alpha * self.box_w, h: alpha * self.box_h }
    }
}

pub fn prepare_pair(seq: &Sequence, gap: u32, cfg: &ScaleSearchConfig) -> Result<PreparedPair> {
    let (r, t) = seq.pair(gap)?;
    let b0 = expand_box(&r.bbox, cfg.expand_cap, r.image_size());
    let b1 = expand_box(&t.bbox, cfg.expand_cap, t.image_size());
    let side = cfg.alpha_max * b1.w.max(b1.h) * ROI_MARGIN;
    let res = cfg.roi_resolution;
    let k = res as f64 / side;
    let window = |b: &BoundingBox| BoundingBox { x: b.x, y: b.y, w: side, h: side };
    Ok(PreparedPair {
        reference: crop_resize(&r.image, &window(&b0), res, res),
        target: crop_resize(&t.image, &window(&b1), res, res),
        box_w: b1.w * k,
        box_h: b1.h * k,
    })
}

/// Pooled similarities for one center offset, with the intermediates the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct PairScores {
    pub target_patch: FeatureMap,
    pub ref_patches: Vec<FeatureMap>,
    pub ref_boxes: Vec<BoundingBox>,
    pub cos_maps: Vec<FeatureMap>,
    /// Global-average-pooled cosine per bin.
    pub s: Vec<f64>,
}

pub fn score_pair(
    feat_ref: &FeatureMap,
    feat_tgt: &FeatureMap,
    pair: &PreparedPair,
    cfg: &ScaleSearchConfig,
    dx: i32,
    dy: i32,
) -> Result<PairScores> {
    let (gw, gh) = cfg.target_size.unwrap_or(DEFAULT_GRID);
    let target_patch = grid_sample_features(feat_tgt, &pair.target_box(), gw, gh);
    let alphas = bin_alphas(cfg);
    let mut out = PairScores {
        target_patch,
        ref_patches: Vec::with_capacity(alphas.len()),
        ref_boxes: Vec::with_capacity(alphas.len()),
        cos_maps: Vec::with_capacity(alphas.len()),
        s: Vec::with_capacity(alphas.len()),
    };
    for a in alphas {
        let b = pair.candidate_box(a, dx, dy);
        let patch = grid_sample_features(feat_ref, &b, gw, gh);
        let cos = cosine_similarity_map(&patch, &out.target_patch)?;
        out.s.push(cos.mean());
        out.ref_patches.push(patch);
        out.ref_boxes.push(b);
        out.cos_maps.push(cos);
    }
    Ok(out)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Feature-space scale classification.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEstimator {
    pub cfg: ScaleSearchConfig,
    pub extractor: ExtractorKind,
    pub head: Option<ScaleHead>,
}

impl FeatureEstimator {
    pub fn new(cfg: ScaleSearchConfig, extractor: ExtractorKind, head: Option<ScaleHead>) -> Self {
        Self { cfg, extractor, head }
    }

    /// Per-bin logits maximized over center offsets, plus the winning offsets.
    pub fn logits(&self, pair: &PreparedPair) -> Result<(Vec<f64>, Vec<(i32, i32)>)> {
        let head = self.head.as_ref().ok_or_else(|| TtcError::Uninitialized("feature head has no weights".into()))?;
        head.validate()?;
        if head.n != self.cfg.n_bins {
            return Err(TtcError::Shape(format!("head has {} bins, config has {}", head.n, self.cfg.n_bins)));
        }
        let fr = self.extractor.extract(&pair.reference);
        let ft = self.extractor.extract(&pair.target);
        let c = self.cfg.shift_c as i32;
        let mut best = vec![f64::NEG_INFINITY; head.n];
        let mut shifts = vec![(0, 0); head.n];
        for dx in -c..=c {
            for dy in -c..=c {
                let z = head.forward(&score_pair(&fr, &ft, pair, &self.cfg, dx, dy)?.s);
                for i in 0..head.n {
                    if z[i] > best[i] {
                        best[i] = z[i];
                        shifts[i] = (dx, dy);
                    }
                }
            }
        }
        Ok((best, shifts))
    }
}

impl Estimator for FeatureEstimator {
    fn id(&self) -> String {
        format!("feature_scale:{}", self.extractor.name())
    }

    fn config(&self) -> &ScaleSearchConfig {
        &self.cfg
    }

    fn estimate_gap(&self, seq: &Sequence, gap: u32) -> Result<(f64, SimilarityProfile, bool)> {
        let pair = prepare_pair(seq, gap, &self.cfg)?;
        let (scores, shifts) = self.logits(&pair)?;
        let profile = SimilarityProfile { kind: ProfileKind::Logit, alphas: bin_alphas(&self.cfg), scores, shifts };
        let lo = profile.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = profile.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let alpha = fuse_top_k(&profile, self.cfg.top_k, sigmoid);
        Ok((alpha, profile, hi - lo <= 1e-12))
    }
}

pub fn feature_scale_estimate(
    seq: &Sequence,
    extractor: &ExtractorKind,
    head: Option<&ScaleHead>,
    cfg: &ScaleSearchConfig,
) -> Result<TtcEstimate> {
    FeatureEstimator::new(cfg.clone(), extractor.clone(), head.cloned()).estimate(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{FrameSample, Generator, Provenance};
    use crate::synth::{constant_velocity_sequence, random_texture, CameraModel, SynthOptions};
    use crate::ttc::TtcReference;

    fn seq_from(frames: Vec<FrameSample>) -> Sequence {
        Sequence {
            id: "t".into(),
            fps: 10.0,
            frames,
            label: None,
            provenance: Provenance { generator: Generator::External, seed: 0, script_id: None },
        }
    }

    fn static_seq(img: &Raster, b: BoundingBox) -> Sequence {
        seq_from(
            (0..6)
                .map(|_| FrameSample { image: img.clone(), bbox: b, exact_bbox: None, timestamp: 0.0, depth: None, box3d: None })
                .collect(),
        )
    }

    fn opts() -> SynthOptions {
        SynthOptions {
            camera: CameraModel { f: 1000.0, cx: 200.0, cy: 120.0, width: 400, height: 240 },
            ..SynthOptions::default()
        }
    }

    #[test]
    fn identity_pair_peaks_at_one() {
        let img = random_texture(5, 160, 120);
        let seq = static_seq(&img, BoundingBox::new(80.0, 60.0, 50.0, 40.0).unwrap());
        let cfg = ScaleSearchConfig::feature();
        let est = FeatureEstimator::new(cfg.clone(), ExtractorKind::Identity, Some(ScaleHead::identity(20)));
        let e = est.estimate(&seq).unwrap();
        let best = e.profile.alphas[e.profile.best_bin()];
        let nearest = e.profile.alphas.iter().copied().min_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs())).unwrap();
        assert_eq!(best, nearest);
    }

    #[test]
    fn recovers_ratio_with_hand_crafted_features() {
        let seq = constant_velocity_sequence(4.5, 25.0, 0.1, 3, "h".into(), &opts()).unwrap();
        let oracle = seq.alpha_gt(5, TtcReference::ReferenceFrame).unwrap().value();
        assert!((oracle - 0.9).abs() < 1e-12);
        let cfg = ScaleSearchConfig::feature();
        let e = feature_scale_estimate(&seq, &ExtractorKind::HandCrafted, Some(&ScaleHead::identity(20)), &cfg).unwrap();
        assert!((e.alpha_hat.value() - 0.9).abs() <= 2.0 * cfg.bin_width(), "{}", e.alpha_hat.value());
    }

    #[test]
    fn uniform_logits_average_first_bins() {
        let img = Raster::filled(100, 80, 3, 0.3);
        let seq = static_seq(&img, BoundingBox::new(50.0, 40.0, 30.0, 20.0).unwrap());
        let cfg = ScaleSearchConfig::feature();
        let e = feature_scale_estimate(&seq, &ExtractorKind::HandCrafted, Some(&ScaleHead::identity(20)), &cfg).unwrap();
        let a = &e.profile.alphas;
        assert!((e.alpha_hat.value() - (a[0] + a[1] + a[2] + a[3]) / 4.0).abs() < 1e-12);
        assert!(e.low_confidence);
    }

    #[test]
    fn missing_head_is_an_error() {
        let img = random_texture(5, 100, 80);
        let seq = static_seq(&img, BoundingBox::new(50.0, 40.0, 30.0, 20.0).unwrap());
        let cfg = ScaleSearchConfig::feature();
        let r = feature_scale_estimate(&seq, &ExtractorKind::HandCrafted, None, &cfg);
        assert!(matches!(r, Err(TtcError::Uninitialized(_))));
        let r = feature_scale_estimate(&seq, &ExtractorKind::HandCrafted, Some(&ScaleHead::identity(7)), &cfg);
        assert!(matches!(r, Err(TtcError::Shape(_))));
    }

    #[test]
    fn window_preserves_scale_ratio() {
        let seq = constant_velocity_sequence(3.0, 30.0, 0.0, 2, "w".into(), &opts()).unwrap();
        let cfg = ScaleSearchConfig::feature();
        let p = prepare_pair(&seq, 5, &cfg).unwrap();
        let (r, t) = seq.pair(5).unwrap();
        let k = p.box_w / expand_box(&t.bbox, cfg.expand_cap, t.image_size()).w;
        assert!((p.box_h / k - expand_box(&t.bbox, cfg.expand_cap, t.image_size()).h).abs() < 1e-9);
        // the true-ratio candidate covers the reference box scaled by the same factor
        let alpha = r.bbox.w / t.bbox.w;
        let cand = p.candidate_box(alpha, 0, 0);
        assert!((cand.w - alpha * p.box_w).abs() < 1e-12);
        assert_eq!(p.reference.width(), cfg.roi_resolution);
    }

    #[test]
    fn head_params_round_trip() {
        let mut h = ScaleHead::random(5, 1);
        let p: Vec<f64> = (0..30).map(|i| i as f64).collect();
        h.set_params(&p).unwrap();
        assert_eq!(h.params(), p);
        assert!(h.set_params(&p[..29]).is_err());
        let z = ScaleHead::identity(3).forward(&[0.1, 0.2, 0.3]);
        assert_eq!(z, vec![0.1, 0.2, 0.3]);
    }
}
