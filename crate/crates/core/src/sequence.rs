//! Frames, sequences and their ground-truth labels.

use serde::{Deserialize, Serialize};

use crate::annotate::Box3D;
use crate::error::{Result, TtcError};
use crate::geometry::{BoundingBox, ImageSize};
use crate::raster::Raster;
use crate::ttc::{
    convert_scale_ratio_fps, scale_ratio_from_ttc_with, FrameGap, ScaleRatio, TtcReference,
    TtcSeconds, REFERENCE_FPS,
};

/// Number of frames in an evaluation sequence; the last one is the target.
pub const SEQUENCE_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub image: Raster,
    /// Box handed to estimators (possibly noisy).
    pub bbox: BoundingBox,
    /// Noise-free projected box, when known.
    pub exact_bbox: Option<BoundingBox>,
    pub timestamp: f64,
    pub depth: Option<f64>,
    pub box3d: Option<Box3D>,
}

impl FrameSample {
    pub fn image_size(&self) -> ImageSize {
        ImageSize::new(self.image.width(), self.image.height())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFlags {
    pub accelerating: bool,
    pub manual_checked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLabel {
    /// TTC of the target frame, seconds, untruncated.
    pub tau_s: f64,
    /// Scale ratio between the last two frames expressed at 10 Hz.
    pub alpha_10hz: f64,
    pub velocity_mps: f64,
    /// Velocity-fit window for annotated labels; `None` for oracle labels.
    pub q_used: Option<u32>,
    pub flags: LabelFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Synth,
    Real,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: Generator,
    pub seed: u64,
    pub script_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub fps: f64,
    pub frames: Vec<FrameSample>,
    pub label: Option<SequenceLabel>,
    pub provenance: Provenance,
}

impl Sequence {
    pub fn target_index(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    /// Reference and target frames for a gap counted back from the last frame.
    pub fn pair(&self, gap: u32) -> Result<(&FrameSample, &FrameSample)> {
        let gap = gap as usize;
        if gap == 0 || gap >= self.frames.len() {
            return Err(TtcError::InvalidSequence(format!(
                "sequence {} has {} frames, cannot use gap {gap}",
                self.id,
                self.frames.len()
            )));
        }
        let t = self.target_index();
        Ok((&self.frames[t - gap], &self.frames[t]))
    }

    pub fn frame_gap(&self, gap: u32) -> Result<FrameGap> {
        FrameGap::new(gap, self.fps)
    }

    /// Ground-truth scale ratio at `gap`: the depth ratio when depths are
    /// known, otherwise derived from the TTC label.
    pub fn alpha_gt(&self, gap: u32, reference: TtcReference) -> Result<ScaleRatio> {
        let (r, t) = self.pair(gap)?;
        if let (Some(dr), Some(dt)) = (r.depth, t.depth) {
            return ScaleRatio::new(dt / dr);
        }
        let label = self.label.as_ref().ok_or_else(|| {
            TtcError::InvalidSequence(format!("sequence {} has no label", self.id))
        })?;
        let dt = gap as f64 / self.fps;
        scale_ratio_from_ttc_with(TtcSeconds(label.tau_s).truncated(), dt, reference)
    }

    /// Ground-truth ratio at `gap`, re-expressed at 10 Hz.
    pub fn alpha_gt_10hz(&self, gap: u32, reference: TtcReference) -> Result<ScaleRatio> {
        let a = self.alpha_gt(gap, reference)?;
        convert_scale_ratio_fps(a, self.fps / gap as f64, REFERENCE_FPS)
    }
}
