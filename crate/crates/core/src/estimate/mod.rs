//! Scale-ratio estimators: the detection box-ratio baseline, pixel MSE scale
//! search and feature-space scale classification.
//!
//! All three share the same candidate machinery: `n` scale bins uniformly
//! spaced over `[alpha_min, alpha_max]`, candidate boxes centered on the
//! reference box with the target box's size times `alpha_i`, and an integer
//! center-shift search of radius `c`.

mod boxes;
mod deep;
mod features;
mod pixel;
mod sampling;

pub use boxes::{bin_alphas, expand_box, scaled_candidate_boxes};
pub use deep::{
    feature_scale_estimate, prepare_pair, score_pair, FeatureEstimator, PairScores, PreparedPair, ScaleHead,
};
pub use features::{
    cosine_similarity_map, cosine_similarity_map_backward, grid_sample_backward, grid_sample_features,
    ConvStack, ConvStackSpec, ExtractorKind, FeatureExtractor, FeatureMap, HandCrafted, Identity,
};
pub use pixel::{detection_ratio_estimate, pixel_mse_estimate, DetectionEstimator, DetectionMode, PixelMseEstimator};
pub use sampling::{center_shift_search, crop_resize};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};
use crate::sequence::Sequence;
use crate::ttc::{
    convert_scale_ratio_fps, ttc_from_scale_ratio_with, ScaleRatio, TtcReference, TtcSeconds, REFERENCE_FPS,
};

/// Serialized sections must be complete: a partial one would silently pick
/// up the pixel defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSearchConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub n_bins: usize,
    pub top_k: usize,
    /// Center-shift radius, pixels (ROI pixels on the feature path).
    pub shift_c: u32,
    pub expand_cap: f64,
    pub frame_gap: u32,
    /// Resample size; `None` uses the target box's own size.
    pub target_size: Option<(usize, usize)>,
    /// Side of the square window features are computed on (feature path only).
    pub roi_resolution: usize,
    pub reference: TtcReference,
    /// Extra reference gaps whose 10 Hz estimates are averaged with `frame_gap`.
    #[serde(default)]
    pub fusion_gaps: Vec<u32>,
}

impl Default for ScaleSearchConfig {
    fn default() -> Self {
        Self::pixel()
    }
}

impl ScaleSearchConfig {
    /// Pixel MSE defaults: 125 bins, top 3, shift radius 3.
    pub fn pixel() -> Self {
        Self {
            alpha_min: 0.65,
            alpha_max: 1.5,
            n_bins: 125,
            top_k: 3,
            shift_c: 3,
            expand_cap: 1.1,
            frame_gap: 5,
            target_size: None,
            roi_resolution: 64,
            reference: TtcReference::default(),
            fusion_gaps: Vec::new(),
        }
    }

    /// Feature-path defaults: 20 bins, top 4, shift radius 1, 50x50 grid.
    pub fn feature() -> Self {
        Self { n_bins: 20, top_k: 4, shift_c: 1, target_size: Some((50, 50)), ..Self::pixel() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TtcError::Config(m.to_string()));
        if !(self.alpha_min > 0.0 && self.alpha_min < self.alpha_max && self.alpha_max.is_finite()) {
            return bad("need 0 < alpha_min < alpha_max");
        }
        if self.n_bins < 2 {
            return bad("n_bins must be >= 2");
        }
        if self.top_k == 0 || self.top_k > self.n_bins {
            return bad("top_k must be in 1..=n_bins");
        }
        if !(self.expand_cap >= 1.0) {
            return bad("expand_cap must be >= 1");
        }
        if self.frame_gap == 0 || self.fusion_gaps.contains(&0) {
            return bad("frame gaps must be >= 1");
        }
        if matches!(self.target_size, Some((w, h)) if w == 0 || h == 0) {
            return bad("target size must be positive");
        }
        if self.roi_resolution < 4 {
            return bad("roi_resolution must be >= 4");
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.alpha_max - self.alpha_min) / (self.n_bins - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Lower is better.
    Mse,
    /// Higher is better.
    Logit,
    /// Single-value profile of the box-ratio baseline.
    BoxRatio,
}

impl ProfileKind {
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            ProfileKind::Mse => a < b,
            ProfileKind::Logit | ProfileKind::BoxRatio => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub kind: ProfileKind,
    pub alphas: Vec<f64>,
    pub scores: Vec<f64>,
    /// Best center shift per bin, pixels.
    pub shifts: Vec<(i32, i32)>,
}

impl SimilarityProfile {
    /// Bin indices ordered best first; ties keep ascending index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            let (sa, sb) = (self.scores[a], self.scores[b]);
            let o = sa.total_cmp(&sb);
            match self.kind {
                ProfileKind::Mse => o,
                _ => o.reverse(),
            }
            .then(a.cmp(&b))
        });
        idx
    }

    pub fn best_bin(&self) -> usize {
        self.ranking()[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtcEstimate {
    /// Scale ratio at the evaluation frame gap.
    pub alpha_hat: ScaleRatio,
    pub alpha_hat_10hz: ScaleRatio,
    pub tau_hat: TtcSeconds,
    pub profile: SimilarityProfile,
    /// Set when the profile carries no usable scale information.
    pub low_confidence: bool,
}

/// Anything that turns a sequence into a TTC estimate.
pub trait Estimator {
    fn id(&self) -> String;
    fn config(&self) -> &ScaleSearchConfig;
    /// Scale ratio and profile for the reference frame `gap` frames before the target.
    fn estimate_gap(&self, seq: &Sequence, gap: u32) -> Result<(f64, SimilarityProfile, bool)>;

    fn estimate(&self, seq: &Sequence) -> Result<TtcEstimate> {
        let cfg = self.config();
        cfg.validate()?;
        let (alpha, profile, low) = self.estimate_gap(seq, cfg.frame_gap)?;
        if cfg.fusion_gaps.is_empty() {
            return finalize(seq, cfg, alpha, profile, low);
        }
        let mut sum = convert_scale_ratio_fps(ScaleRatio::new(alpha)?, seq.fps / cfg.frame_gap as f64, REFERENCE_FPS)?
            .value();
        let mut low_any = low;
        for &g in &cfg.fusion_gaps {
            let (a, _, l) = self.estimate_gap(seq, g)?;
            sum += convert_scale_ratio_fps(ScaleRatio::new(a)?, seq.fps / g as f64, REFERENCE_FPS)?.value();
            low_any |= l;
        }
        let mean10 = ScaleRatio::new(sum / (1 + cfg.fusion_gaps.len()) as f64)?;
        let back = convert_scale_ratio_fps(mean10, REFERENCE_FPS, seq.fps / cfg.frame_gap as f64)?.value();
        finalize(seq, cfg, back.clamp(cfg.alpha_min, cfg.alpha_max), profile, low_any)
    }
}

/// Converts a gap-level ratio into the reported estimate. The TTC is taken
/// from the 10 Hz equivalent ratio, so the reference-frame offset is one
/// 10 Hz step whatever the gap.
pub(crate) fn finalize(
    seq: &Sequence,
    cfg: &ScaleSearchConfig,
    alpha: f64,
    profile: SimilarityProfile,
    low_confidence: bool,
) -> Result<TtcEstimate> {
    let gap = seq.frame_gap(cfg.frame_gap)?;
    let alpha_hat = ScaleRatio::new(alpha)?;
    let alpha_hat_10hz = convert_scale_ratio_fps(alpha_hat, gap.effective_fps(), REFERENCE_FPS)?;
    let tau_hat = ttc_from_scale_ratio_with(alpha_hat_10hz, 1.0 / REFERENCE_FPS, cfg.reference)?;
    Ok(TtcEstimate { alpha_hat, alpha_hat_10hz, tau_hat, profile, low_confidence })
}

/// Weighted mean of the `k` best bins.
pub(crate) fn fuse_top_k(profile: &SimilarityProfile, k: usize, weight: impl Fn(f64) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in profile.ranking().iter().take(k) {
        let w = weight(profile.scores[i]);
        num += w * profile.alphas[i];
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        profile.alphas[profile.best_bin()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ScaleSearchConfig::pixel().validate().unwrap();
        ScaleSearchConfig::feature().validate().unwrap();
        assert!((ScaleSearchConfig::pixel().bin_width() - 0.85 / 124.0).abs() < 1e-15);
        assert!((ScaleSearchConfig::pixel().bin_width() - 0.006855).abs() < 1e-6);
        assert!((ScaleSearchConfig::feature().bin_width() - 0.0447).abs() < 1e-4);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = ScaleSearchConfig::pixel();
        for cfg in [
            ScaleSearchConfig { alpha_min: 1.5, alpha_max: 0.65, ..base.clone() },
            ScaleSearchConfig { n_bins: 1, ..base.clone() },
            ScaleSearchConfig { top_k: 126, ..base.clone() },
            ScaleSearchConfig { frame_gap: 0, ..base.clone() },
            ScaleSearchConfig { expand_cap: 0.9, ..base.clone() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn ranking_ties_keep_index_order() {
        let p = SimilarityProfile {
            kind: ProfileKind::Logit,
            alphas: vec![0.8, 0.9, 1.0, 1.1],
            scores: vec![0.5, 0.5, 0.5, 0.5],
            shifts: vec![(0, 0); 4],
        };
        assert_eq!(p.ranking(), vec![0, 1, 2, 3]);
        let m = SimilarityProfile { kind: ProfileKind::Mse, scores: vec![3.0, 1.0, 2.0, 1.0], ..p };
        assert_eq!(m.ranking(), vec![1, 3, 2, 0]);
    }

    /// Reports the exact depth ratio at every gap.
    struct Exact(ScaleSearchConfig);

    impl Estimator for Exact {
        fn id(&self) -> String {
            "exact".into()
        }
        fn config(&self) -> &ScaleSearchConfig {
            &self.0
        }
        fn estimate_gap(&self, seq: &Sequence, gap: u32) -> Result<(f64, SimilarityProfile, bool)> {
            let a = seq.alpha_gt(gap, self.0.reference)?.value();
            let p = SimilarityProfile { kind: ProfileKind::BoxRatio, alphas: vec![a], scores: vec![0.0], shifts: vec![(0, 0)] };
            Ok((a, p, false))
        }
    }

    #[test]
    fn tau_is_taken_at_the_10hz_step() {
        use crate::synth::{constant_velocity_sequence, SynthOptions};
        let seq = constant_velocity_sequence(4.0, 30.0, 0.0, 1, "t".into(), &SynthOptions::default()).unwrap();
        let tau_t = seq.label.as_ref().unwrap().tau_s;
        for gap in [1, 3, 5] {
            let target = ScaleSearchConfig { frame_gap: gap, reference: TtcReference::TargetFrame, ..ScaleSearchConfig::pixel() };
            let e = Exact(target.clone()).estimate(&seq).unwrap();
            assert!((e.tau_hat.value() - tau_t).abs() < 1e-9, "gap {gap}: {}", e.tau_hat.value());
            // one 10 Hz step earlier, independent of the gap
            let reference = ScaleSearchConfig { reference: TtcReference::ReferenceFrame, ..target };
            let e = Exact(reference).estimate(&seq).unwrap();
            assert!((e.tau_hat.value() - (tau_t + 0.1)).abs() < 1e-9, "gap {gap}: {}", e.tau_hat.value());
        }
    }
}

