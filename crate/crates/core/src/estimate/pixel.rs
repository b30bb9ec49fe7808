use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};
use crate::sequence::Sequence;

use super::boxes::{expand_box, scaled_candidate_boxes, bin_alphas};
use super::sampling::{center_shift_search, crop_resize, resampled_mse};
use super::{fuse_top_k, Estimator, ProfileKind, ScaleSearchConfig, SimilarityProfile, TtcEstimate};

const MSE_EPS: f64 = 1e-12;

/// Scale search by mean squared error of channel-averaged intensities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelMseEstimator {
    pub cfg: ScaleSearchConfig,
}

impl PixelMseEstimator {
    pub fn new(cfg: ScaleSearchConfig) -> Self {
        Self { cfg }
    }
}

impl Estimator for PixelMseEstimator {
    fn id(&self) -> String {
        "pixel_mse".into()
    }

    fn config(&self) -> &ScaleSearchConfig {
        &self.cfg
    }

    fn estimate_gap(&self, seq: &Sequence, gap: u32) -> Result<(f64, SimilarityProfile, bool)> {
        let cfg = &self.cfg;
        let (r, t) = seq.pair(gap)?;
        let size = t.image_size();
        let b0 = expand_box(&r.bbox, cfg.expand_cap, r.image_size());
        let b1 = expand_box(&t.bbox, cfg.expand_cap, size);
        let (tw, th) = cfg
            .target_size
            .unwrap_or_else(|| (b1.w.round().max(1.0) as usize, b1.h.round().max(1.0) as usize));
        let ref_gray = r.image.to_gray();
        let template = crop_resize(&t.image.to_gray(), &b1, tw, th);

        let mut scores = Vec::with_capacity(cfg.n_bins);
        let mut shifts = Vec::with_capacity(cfg.n_bins);
        for cand in scaled_candidate_boxes(&b0, &b1, cfg) {
            let (s, dx, dy) =
                center_shift_search(|b| resampled_mse(&ref_gray, b, &template), &cand, cfg.shift_c, ProfileKind::Mse);
            scores.push(s);
            shifts.push((dx, dy));
        }
        let profile = SimilarityProfile { kind: ProfileKind::Mse, alphas: bin_alphas(cfg), scores, shifts };
        let lo = profile.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = profile.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let low_confidence = hi - lo <= 1e-12 + 1e-9 * hi.abs();
        let alpha = fuse_top_k(&profile, cfg.top_k, |m| 1.0 / (m + MSE_EPS));
        Ok((alpha, profile, low_confidence))
    }
}

pub fn pixel_mse_estimate(seq: &Sequence, cfg: &ScaleSearchConfig) -> Result<TtcEstimate> {
    PixelMseEstimator::new(cfg.clone()).estimate(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Square root of the area ratio, a linear-scale ratio like the other estimators.
    #[default]
    SqrtArea,
    /// Raw area ratio.
    Area,
}

/// Box-ratio baseline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionEstimator {
    pub cfg: ScaleSearchConfig,
    pub mode: DetectionMode,
}

impl DetectionEstimator {
    pub fn new(cfg: ScaleSearchConfig, mode: DetectionMode) -> Self {
        Self { cfg, mode }
    }
}

impl Estimator for DetectionEstimator {
    fn id(&self) -> String {
        match self.mode {
            DetectionMode::SqrtArea => "detection".into(),
            DetectionMode::Area => "detection_area".into(),
        }
    }

    fn config(&self) -> &ScaleSearchConfig {
        &self.cfg
    }

    fn estimate_gap(&self, seq: &Sequence, gap: u32) -> Result<(f64, SimilarityProfile, bool)> {
        let (r, t) = seq.pair(gap)?;
        let (a0, a1) = (r.bbox.area(), t.bbox.area());
        if !(a0 > 0.0 && a1 > 0.0) {
            return Err(TtcError::InvalidSequence(format!("sequence {} has a zero-area box", seq.id)));
        }
        let ratio = a0 / a1;
        let alpha = match self.mode {
            DetectionMode::SqrtArea => ratio.sqrt(),
            DetectionMode::Area => ratio,
        }
        .clamp(self.cfg.alpha_min, self.cfg.alpha_max);
        let profile =
            SimilarityProfile { kind: ProfileKind::BoxRatio, alphas: vec![alpha], scores: vec![1.0], shifts: vec![(0, 0)] };
        Ok((alpha, profile, false))
    }
}

pub fn detection_ratio_estimate(seq: &Sequence, cfg: &ScaleSearchConfig) -> Result<TtcEstimate> {
    DetectionEstimator::new(cfg.clone(), DetectionMode::default()).estimate(seq)
}
