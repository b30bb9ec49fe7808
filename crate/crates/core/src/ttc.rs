//! Time-to-contact algebra.
//!
//! Conversions among depth/velocity, TTC and image scale ratio, the frame-rate
//! conversion of scale ratios, truncation to the evaluated TTC range and the
//! interval partition used for per-interval metrics.
//!
//! Sign convention: TTC is positive for approaching objects. Velocities passed
//! to [`ttc_from_depth_velocity`] are closing rates (`-dy/dt`).

use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};

/// Upper bound of the evaluated TTC range, seconds. The range is symmetric.
pub const TTC_BOUND: f64 = 20.0;

/// Closing rates below this magnitude are treated as "never contacts".
pub const DEFAULT_EPSILON_V: f64 = 1e-6;

/// Frame rate all scale ratios are normalized to before computing MiD.
pub const REFERENCE_FPS: f64 = 10.0;

/// Time to contact in seconds. Positive means approaching.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TtcSeconds(pub f64);

impl TtcSeconds {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn truncated(self) -> Self {
        truncate_ttc(self)
    }

    pub fn interval(self) -> TtcInterval {
        ttc_interval(self.truncated())
    }
}

/// Ratio of image sizes `s(t0) / s(t1)` between a reference and a target frame.
/// Values below one mean the object grew, i.e. it is approaching.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleRatio(f64);

impl ScaleRatio {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(Self(alpha))
        } else {
            Err(TtcError::Domain(format!("scale ratio must be finite and > 0, got {alpha}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Distance in frames between reference and target, at a base frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGap {
    pub gap: u32,
    pub base_fps: f64,
}

impl FrameGap {
    pub fn new(gap: u32, base_fps: f64) -> Result<Self> {
        if gap == 0 {
            return Err(TtcError::Domain("frame gap must be >= 1".into()));
        }
        if !(base_fps.is_finite() && base_fps > 0.0) {
            return Err(TtcError::Domain(format!("fps must be > 0, got {base_fps}")));
        }
        Ok(Self { gap, base_fps })
    }

    pub fn effective_fps(&self) -> f64 {
        self.base_fps / self.gap as f64
    }

    /// Time between reference and target, seconds.
    pub fn dt(&self) -> f64 {
        self.gap as f64 / self.base_fps
    }
}

impl Default for FrameGap {
    fn default() -> Self {
        Self { gap: 5, base_fps: REFERENCE_FPS }
    }
}

/// Which frame the TTC derived from a scale ratio refers to.
///
/// `ReferenceFrame` evaluates `dt / (1 - alpha)` as written. Under constant
/// velocity that is the TTC at the reference frame; `TargetFrame` returns the
/// TTC at the target frame, `dt * alpha / (1 - alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtcReference {
    #[default]
    ReferenceFrame,
    TargetFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtcInterval {
    Crucial,
    Small,
    Large,
    Negative,
}

impl TtcInterval {
    pub const ALL: [TtcInterval; 4] =
        [TtcInterval::Crucial, TtcInterval::Small, TtcInterval::Large, TtcInterval::Negative];

    /// `[lo, hi]` in seconds. Upper bounds are exclusive except for `Large`.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            TtcInterval::Crucial => (0.0, 3.0),
            TtcInterval::Small => (3.0, 6.0),
            TtcInterval::Large => (6.0, TTC_BOUND),
            TtcInterval::Negative => (-TTC_BOUND, 0.0),
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            TtcInterval::Crucial => "c",
            TtcInterval::Small => "s",
            TtcInterval::Large => "l",
            TtcInterval::Negative => "n",
        }
    }
}

/// `tau = y / v` with `v` the closing rate. Zero velocity maps to the upper
/// truncation bound. The result is not truncated.
pub fn ttc_from_depth_velocity(depth: f64, closing_rate: f64, epsilon_v: f64) -> Result<TtcSeconds> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(TtcError::Domain(format!("depth must be > 0, got {depth}")));
    }
    if !closing_rate.is_finite() {
        return Err(TtcError::Domain(format!("velocity must be finite, got {closing_rate}")));
    }
    if closing_rate.abs() < epsilon_v {
        return Ok(TtcSeconds(TTC_BOUND));
    }
    Ok(TtcSeconds(depth / closing_rate))
}

/// TTC from a scale ratio observed over `dt` seconds, truncated to the range.
pub fn ttc_from_scale_ratio(alpha: ScaleRatio, dt: f64) -> Result<TtcSeconds> {
    ttc_from_scale_ratio_with(alpha, dt, TtcReference::ReferenceFrame)
}

pub fn ttc_from_scale_ratio_with(
    alpha: ScaleRatio,
    dt: f64,
    reference: TtcReference,
) -> Result<TtcSeconds> {
    check_dt(dt)?;
    let a = alpha.value();
    if a == 1.0 {
        return Ok(TtcSeconds(TTC_BOUND));
    }
    let tau = match reference {
        TtcReference::ReferenceFrame => dt / (1.0 - a),
        TtcReference::TargetFrame => dt * a / (1.0 - a),
    };
    Ok(truncate_ttc(TtcSeconds(tau)))
}

/// Inverse of [`ttc_from_scale_ratio`]: `1 - dt / tau`.
pub fn scale_ratio_from_ttc(tau: TtcSeconds, dt: f64) -> Result<ScaleRatio> {
    scale_ratio_from_ttc_with(tau, dt, TtcReference::ReferenceFrame)
}

pub fn scale_ratio_from_ttc_with(
    tau: TtcSeconds,
    dt: f64,
    reference: TtcReference,
) -> Result<ScaleRatio> {
    check_dt(dt)?;
    let t = tau.value();
    if t == 0.0 || !t.is_finite() {
        return Err(TtcError::Domain(format!("tau must be finite and non-zero, got {t}")));
    }
    let alpha = match reference {
        TtcReference::ReferenceFrame => 1.0 - dt / t,
        TtcReference::TargetFrame => t / (t + dt),
    };
    if alpha.is_finite() && alpha > 0.0 {
        Ok(ScaleRatio(alpha))
    } else {
        Err(TtcError::Range(format!("tau={t} s over dt={dt} s gives non-positive scale ratio {alpha}")))
    }
}

/// Re-expresses a scale ratio observed at `fps_from` as the ratio that the same
/// target-frame TTC produces at `fps_to`.
pub fn convert_scale_ratio_fps(alpha: ScaleRatio, fps_from: f64, fps_to: f64) -> Result<ScaleRatio> {
    for fps in [fps_from, fps_to] {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(TtcError::Domain(format!("fps must be > 0, got {fps}")));
        }
    }
    if fps_from == fps_to {
        return Ok(alpha);
    }
    let denom = (fps_from / fps_to) * (1.0 / alpha.value() - 1.0) + 1.0;
    if !(denom.is_finite() && denom > 0.0) {
        return Err(TtcError::Range(format!(
            "ratio {} at {fps_from} Hz has no equivalent at {fps_to} Hz",
            alpha.value()
        )));
    }
    Ok(ScaleRatio(1.0 / denom))
}

/// Scale ratio at `gap` frames of `base_fps`, converted to [`REFERENCE_FPS`].
pub fn scale_ratio_to_reference_fps(alpha: ScaleRatio, gap: FrameGap) -> Result<ScaleRatio> {
    convert_scale_ratio_fps(alpha, gap.effective_fps(), REFERENCE_FPS)
}

/// Clamps to `[-20, 20]`. Infinities clamp to the bounds; NaN maps to the
/// upper bound.
pub fn truncate_ttc(tau: TtcSeconds) -> TtcSeconds {
    let t = tau.value();
    if t.is_nan() {
        return TtcSeconds(TTC_BOUND);
    }
    TtcSeconds(t.clamp(-TTC_BOUND, TTC_BOUND))
}

/// Interval of an already-truncated TTC.
pub fn ttc_interval(tau: TtcSeconds) -> TtcInterval {
    let t = tau.value();
    if t < 0.0 {
        TtcInterval::Negative
    } else if t < 3.0 {
        TtcInterval::Crucial
    } else if t < 6.0 {
        TtcInterval::Small
    } else {
        TtcInterval::Large
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(TtcError::Domain(format!("dt must be > 0, got {dt}")))
    }
}
