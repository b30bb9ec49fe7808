use crate::geometry::{BoundingBox, ImageSize};

use super::ScaleSearchConfig;

/// Candidate scale ratios, uniformly spaced with both ends included.
pub fn bin_alphas(cfg: &ScaleSearchConfig) -> Vec<f64> {
    let step = cfg.bin_width();
    (0..cfg.n_bins)
        .map(|i| if i + 1 == cfg.n_bins { cfg.alpha_max } else { cfg.alpha_min + i as f64 * step })
        .collect()
}

/// Grows `b` about its center by the largest ratio up to `cap` that keeps it
/// inside the image. A box that already crosses the border is returned as is.
pub fn expand_box(b: &BoundingBox, cap: f64, image: ImageSize) -> BoundingBox {
    let (w, h) = (image.width as f64, image.height as f64);
    let limits = [2.0 * b.x / b.w, 2.0 * (w - b.x) / b.w, 2.0 * b.y / b.h, 2.0 * (h - b.y) / b.h];
    let r = limits.iter().fold(cap, |acc, &l| acc.min(l));
    if r <= 1.0 {
        return *b;
    }
    b.scaled(r)
}

/// One box per bin: centered on the reference box, sized `alpha_i` times the target box.
pub fn scaled_candidate_boxes(b0: &BoundingBox, b1: &BoundingBox, cfg: &ScaleSearchConfig) -> Vec<BoundingBox> {
    bin_alphas(cfg)
        .into_iter()
        .map(|a| BoundingBox { x: b0.x, y: b0.y, w: a * b1.w, h: a * b1.h })
        .collect()
}
