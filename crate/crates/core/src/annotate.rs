//! Ground-truth labelling from 3D boxes: nearest-corner depth, robust velocity
//! fitting over the last `q` frames, TTC labels with multi-window arbitration,
//! fixed-length sequence splitting and TTC-distribution rebalancing.

use std::fmt;
use std::ops::Range;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};
use crate::geometry::{BoundingBox, ImageSize};
use crate::rng::rng_for;
use crate::sequence::{LabelFlags, Sequence, SequenceLabel};
use crate::synth::MIN_BOX_SIDE;
use crate::ttc::{
    convert_scale_ratio_fps, truncate_ttc, ttc_from_depth_velocity, ttc_interval, ScaleRatio, TtcInterval,
    TtcSeconds, DEFAULT_EPSILON_V, REFERENCE_FPS, TTC_BOUND,
};

/// Velocity-fit windows tried during arbitration, most reactive first.
pub const Q_CANDIDATES: [usize; 3] = [3, 5, 10];
pub const DEFAULT_Q: usize = 10;

/// Eight corners of a 3D box in vehicle coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Box3D {
    pub corners: [[f64; 3]; 8],
}

impl Box3D {
    /// Checks the corners form a cuboid: they pair up symmetrically about the
    /// centroid and the three edges at corner 0 are non-degenerate and
    /// mutually orthogonal (relative tolerance `tol`).
    pub fn validate(&self, tol: f64) -> Result<()> {
        let c = &self.corners;
        if c.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TtcError::Domain("box corners must be finite".into()));
        }
        let mut m = [0.0; 3];
        for p in c {
            for k in 0..3 {
                m[k] += p[k] / 8.0;
            }
        }
        let scale = c.iter().map(|p| norm(sub(*p, m))).fold(0.0, f64::max);
        if scale <= 0.0 {
            return Err(TtcError::Domain("degenerate cuboid: all corners coincide".into()));
        }
        let eps = tol * scale;
        let partner = |j: usize| -> Option<usize> {
            (0..8).find(|&k| k != j && norm(sub(add(c[j], c[k]), scale3(m, 2.0))) <= eps)
        };
        let d = match partner(0) {
            Some(k) => sub(c[k], c[0]),
            None => return Err(TtcError::Domain("degenerate cuboid: corners are not centrally symmetric".into())),
        };
        for j in 1..8 {
            if partner(j).is_none() {
                return Err(TtcError::Domain("degenerate cuboid: corners are not centrally symmetric".into()));
            }
        }
        // The six remaining corners form three antipodal pairs; from corner 0
        // one member of each pair is an edge vector and the other is the
        // opposite face diagonal. Pick the combination that is orthogonal.
        let p0 = partner(0).unwrap_or(0);
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for j in 1..8 {
            if j == p0 || pairs.iter().any(|&(a, b)| a == j || b == j) {
                continue;
            }
            pairs.push((j, partner(j).unwrap_or(j)));
        }
        if pairs.len() != 3 {
            return Err(TtcError::Domain("degenerate cuboid: repeated corners".into()));
        }
        for mask in 0..8u32 {
            let e: Vec<[f64; 3]> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| sub(c[if mask & (1 << i) == 0 { a } else { b }], c[0]))
                .collect();
            let sum = add(add(e[0], e[1]), e[2]);
            if norm(sub(sum, d)) > eps {
                continue;
            }
            let lens: Vec<f64> = e.iter().map(|v| norm(*v)).collect();
            if lens.iter().any(|&l| l <= eps) {
                continue;
            }
            let orth = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .all(|&(a, b)| dot(e[a], e[b]).abs() <= tol * lens[a] * lens[b]);
            if orth {
                return Ok(());
            }
        }
        Err(TtcError::Domain("degenerate cuboid: edges are not orthogonal".into()))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Forward coordinate of the corner closest to the ego origin. Ties go to the
/// lowest corner index.
pub fn nearest_corner_depth(b: &Box3D) -> Result<f64> {
    b.validate(1e-3)?;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in b.corners.iter().enumerate() {
        let d = norm(*c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    Ok(b.corners[best][1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSource {
    Lidar,
    Manual,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub t: f64,
    pub depth: f64,
    pub source: DepthSource,
}

/// Depth history of one track, ordered by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTrack {
    pub track_id: String,
    points: Vec<DepthPoint>,
}

impl DepthTrack {
    pub fn new(track_id: impl Into<String>, points: Vec<DepthPoint>) -> Result<Self> {
        for w in points.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(TtcError::Domain("track timestamps must be strictly increasing".into()));
            }
        }
        if let Some(p) = points.iter().find(|p| !(p.depth > 0.0 && p.depth.is_finite())) {
            return Err(TtcError::Domain(format!("track depth must be > 0, got {}", p.depth)));
        }
        Ok(Self { track_id: track_id.into(), points })
    }

    /// Uniformly sampled synthetic track.
    pub fn from_depths(track_id: impl Into<String>, t0: f64, dt: f64, depths: &[f64]) -> Result<Self> {
        let points = depths
            .iter()
            .enumerate()
            .map(|(i, &d)| DepthPoint { t: t0 + i as f64 * dt, depth: d, source: DepthSource::Synthetic })
            .collect();
        Self::new(track_id, points)
    }

    pub fn points(&self) -> &[DepthPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Track truncated to its first `n` points, i.e. the history available at
    /// frame `n - 1`.
    pub fn prefix(&self, n: usize) -> DepthTrack {
        DepthTrack { track_id: self.track_id.clone(), points: self.points[..n.min(self.points.len())].to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier residual threshold, meters.
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { inlier_threshold: 0.5, iterations: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityFit {
    /// Closing rate `-d(depth)/dt`, m/s.
    pub velocity: f64,
    /// Fitted depth at t = 0 (intercept) and slope of `depth = a + b t`.
    pub intercept: f64,
    pub slope: f64,
    /// Inlier flags for the last `q` points, oldest first.
    pub inliers: Vec<bool>,
}

/// Least-squares line `y = a + b t`. Time is centered for conditioning.
fn least_squares(ts: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = ts.len() as f64;
    if ts.len() < 2 {
        return None;
    }
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (t, y) in ts.iter().zip(ys) {
        stt += (t - tm) * (t - tm);
        sty += (t - tm) * (y - ym);
    }
    if stt <= 0.0 {
        return None;
    }
    let b = sty / stt;
    Some((ym - b * tm, b))
}

/// RANSAC line fit of depth against time over the last `q` points, refit by
/// least squares on the consensus set. When all point pairs fit within the
/// iteration budget they are enumerated exhaustively.
pub fn ransac_fit_velocity(track: &DepthTrack, q: usize, cfg: &RansacConfig) -> Result<VelocityFit> {
    let pts = &track.points()[track.len().saturating_sub(q)..];
    if pts.len() < 2 {
        return Err(TtcError::FitFailed(format!(
            "track {} has {} points in the last {q} frames",
            track.track_id,
            pts.len()
        )));
    }
    let ts: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.depth).collect();
    let n = pts.len();

    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    let mut evaluate = |i: usize, j: usize| {
        let dt = ts[j] - ts[i];
        if dt == 0.0 {
            return;
        }
        let b = (ys[j] - ys[i]) / dt;
        let a = ys[i] - b * ts[i];
        let mut count = 0;
        let mut cost = 0.0;
        let mask: Vec<bool> = (0..n)
            .map(|k| {
                let r = (ys[k] - (a + b * ts[k])).abs();
                let inlier = r <= cfg.inlier_threshold;
                if inlier {
                    count += 1;
                    cost += r * r;
                }
                inlier
            })
            .collect();
        let better = match &best {
            None => true,
            Some((c, s, _)) => count > *c || (count == *c && cost < *s),
        };
        if better {
            best = Some((count, cost, mask));
        }
    };
    let pairs = n * (n - 1) / 2;
    if pairs <= cfg.iterations {
        for i in 0..n {
            for j in i + 1..n {
                evaluate(i, j);
            }
        }
    } else {
        let mut rng = rng_for(cfg.seed, n as u64);
        for _ in 0..cfg.iterations {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            evaluate(i.min(j), i.max(j));
        }
    }
    let (count, _, mask) = best.ok_or_else(|| TtcError::FitFailed("no valid minimal sample".into()))?;
    if count < 2 {
        return Err(TtcError::FitFailed(format!("only {count} inliers")));
    }
    let (ti, yi): (Vec<f64>, Vec<f64>) =
        mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| (ts[k], ys[k])).unzip();
    let (a, b) = least_squares(&ti, &yi).ok_or_else(|| TtcError::FitFailed("degenerate inlier set".into()))?;
    Ok(VelocityFit { velocity: -b, intercept: a, slope: b, inliers: mask })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtcLabel {
    /// Truncated TTC, seconds.
    pub tau: TtcSeconds,
    pub q_used: usize,
    /// Closing rate, m/s.
    pub velocity: f64,
    pub depth: f64,
    pub accelerating: bool,
    pub manual_checked: bool,
}

impl TtcLabel {
    pub fn interval(&self) -> TtcInterval {
        ttc_interval(self.tau)
    }
}

/// Label from a depth and closing rate. Zero velocity maps to the upper bound.
pub fn ttc_label(depth: f64, velocity: f64, q_used: usize) -> Result<TtcLabel> {
    let tau = ttc_from_depth_velocity(depth, velocity, DEFAULT_EPSILON_V)?;
    Ok(TtcLabel {
        tau: truncate_ttc(tau),
        q_used,
        velocity,
        depth,
        accelerating: false,
        manual_checked: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationConfig {
    /// Maximum relative spread of candidate TTCs still treated as constant velocity.
    pub spread_threshold: f64,
    pub ransac: RansacConfig,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        Self { spread_threshold: 0.10, ransac: RansacConfig::default() }
    }
}

/// Labels the last point of the track using fits over 3, 5 and 10 frames.
///
/// Consistent candidates yield the 10-frame label. Otherwise the track is
/// flagged as accelerating and the candidate closest to `depth /
/// reference_velocity` is chosen, or the 3-frame one without a reference.
pub fn arbitrate_multi_q(
    track: &DepthTrack,
    reference_velocity: Option<f64>,
    cfg: &ArbitrationConfig,
) -> Result<TtcLabel> {
    let depth = track
        .points()
        .last()
        .map(|p| p.depth)
        .ok_or_else(|| TtcError::FitFailed("empty track".into()))?;
    let mut candidates = Vec::with_capacity(Q_CANDIDATES.len());
    for q in Q_CANDIDATES {
        let fit = ransac_fit_velocity(track, q, &cfg.ransac)?;
        candidates.push(ttc_label(depth, fit.velocity, q)?);
    }
    let taus: Vec<f64> = candidates.iter().map(|c| c.tau.value()).collect();
    let lo = taus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let anchor = taus[taus.len() - 1].abs().max(1e-9);
    if (hi - lo) / anchor <= cfg.spread_threshold {
        return Ok(candidates.pop().expect("three candidates"));
    }
    let mut chosen = match reference_velocity {
        Some(v) => {
            let reference = truncate_ttc(ttc_from_depth_velocity(depth, v, DEFAULT_EPSILON_V)?).value();
            let mut best = 0;
            for (i, c) in candidates.iter().enumerate() {
                if (c.tau.value() - reference).abs() < (candidates[best].tau.value() - reference).abs() {
                    best = i;
                }
            }
            candidates.swap_remove(best)
        }
        None => candidates.swap_remove(0),
    };
    chosen.accelerating = true;
    Ok(chosen)
}

/// Depth track of a sequence: nearest-corner depth of each frame's 3D box,
/// or the stored depth for frames without one.
pub fn sequence_depth_track(seq: &Sequence) -> Result<DepthTrack> {
    let mut points = Vec::with_capacity(seq.frames.len());
    for (i, f) in seq.frames.iter().enumerate() {
        let (depth, source) = match (&f.box3d, f.depth) {
            (Some(b), _) => (nearest_corner_depth(b)?, DepthSource::Lidar),
            (None, Some(d)) => (d, DepthSource::Manual),
            (None, None) => {
                return Err(TtcError::InvalidSequence(format!("sequence {} frame {i} has no depth", seq.id)));
            }
        };
        points.push(DepthPoint { t: f.timestamp, depth, source });
    }
    DepthTrack::new(seq.id.clone(), points)
}

/// Re-derives the target-frame label of a sequence from its depths.
pub fn label_sequence(seq: &Sequence, cfg: &ArbitrationConfig) -> Result<SequenceLabel> {
    let track = sequence_depth_track(seq)?;
    let label = arbitrate_multi_q(&track, None, cfg)?;
    let pts = track.points();
    let (prev, last) = (pts[pts.len() - 2], pts[pts.len() - 1]);
    let fps = 1.0 / (last.t - prev.t);
    let alpha = convert_scale_ratio_fps(ScaleRatio::new(last.depth / prev.depth)?, fps, REFERENCE_FPS)?;
    Ok(SequenceLabel {
        tau_s: ttc_from_depth_velocity(label.depth, label.velocity, DEFAULT_EPSILON_V)?.value(),
        alpha_10hz: alpha.value(),
        velocity_mps: label.velocity,
        q_used: Some(label.q_used as u32),
        flags: LabelFlags { accelerating: label.accelerating, manual_checked: label.manual_checked },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TooSmall,
    Truncated,
    MissingLabel,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::TooSmall => "box smaller than 15x15 px",
            DropReason::Truncated => "truncated object",
            DropReason::MissingLabel => "target frame has no label",
        })
    }
}

/// One frame of a tracklet as seen by the splitter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletFrame {
    pub bbox: BoundingBox,
    pub label: Option<TtcLabel>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitOutcome {
    /// Frame ranges of the kept windows.
    pub windows: Vec<Range<usize>>,
    pub dropped: Vec<(Range<usize>, DropReason)>,
}

/// Splits a tracklet into non-overlapping windows of `len` frames, dropping
/// windows with a box below 15 px on a side or not fully inside the image,
/// and windows whose last frame has no label. Trailing frames that do not fill
/// a window are discarded.
pub fn build_sequences(frames: &[TrackletFrame], len: usize, image: ImageSize) -> SplitOutcome {
    let mut out = SplitOutcome::default();
    if len == 0 {
        return out;
    }
    for start in (0..frames.len() / len).map(|k| k * len) {
        let range = start..start + len;
        let window = &frames[range.clone()];
        let reason = if window.iter().any(|f| f.bbox.w < MIN_BOX_SIDE || f.bbox.h < MIN_BOX_SIDE) {
            Some(DropReason::TooSmall)
        } else if window.iter().any(|f| !f.bbox.is_inside(image)) {
            Some(DropReason::Truncated)
        } else if window[len - 1].label.is_none() {
            Some(DropReason::MissingLabel)
        } else {
            None
        };
        match reason {
            Some(r) => {
                log::debug!("dropping frames {range:?}: {r}");
                out.dropped.push((range, r));
            }
            None => out.windows.push(range),
        }
    }
    out
}

/// One bin of a target TTC distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

/// Target distribution over truncated TTC. Bins are `[lo, hi)` except the last,
/// which is closed, and must tile `[-20, 20]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetHistogram {
    pub bins: Vec<HistogramBin>,
}

impl TargetHistogram {
    pub fn new(bins: Vec<HistogramBin>) -> Result<Self> {
        let h = Self { bins };
        h.validate()?;
        Ok(h)
    }

    /// Equal weight on the four evaluation intervals.
    pub fn uniform_intervals() -> Self {
        Self::over_intervals([1.0; 4])
    }

    /// Weights for negative, crucial, small and large, in that order.
    pub fn over_intervals(weights: [f64; 4]) -> Self {
        let order = [TtcInterval::Negative, TtcInterval::Crucial, TtcInterval::Small, TtcInterval::Large];
        Self {
            bins: order
                .iter()
                .zip(weights)
                .map(|(iv, weight)| {
                    let (lo, hi) = iv.bounds();
                    HistogramBin { lo, hi, weight }
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bins;
        let tiles = !b.is_empty()
            && b[0].lo == -TTC_BOUND
            && b[b.len() - 1].hi == TTC_BOUND
            && b.windows(2).all(|w| w[0].hi == w[1].lo)
            && b.iter().all(|x| x.hi > x.lo && x.weight >= 0.0 && x.weight.is_finite());
        if !tiles || b.iter().map(|x| x.weight).sum::<f64>() <= 0.0 {
            return Err(TtcError::Config("histogram bins must tile [-20, 20] with non-negative weights".into()));
        }
        Ok(())
    }

    pub fn bin_of(&self, tau: TtcSeconds) -> usize {
        let t = truncate_ttc(tau).value();
        let last = self.bins.len() - 1;
        self.bins.iter().position(|b| t >= b.lo && t < b.hi).unwrap_or(last)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceOutcome {
    /// Selected indices into the input, ascending.
    pub selected: Vec<usize>,
    /// Requested and available counts per bin.
    pub quotas: Vec<(usize, usize)>,
    /// Messages for bins that could not be filled.
    pub warnings: Vec<String>,
}

/// Subsamples without replacement so the bin proportions of `taus` follow the
/// target histogram. `total` defaults to the input size. Quotas use largest
/// remainders so they sum to `total`; bins short of their quota are filled
/// with what is available and reported.
pub fn rebalance_sample(
    taus: &[TtcSeconds],
    target: &TargetHistogram,
    total: Option<usize>,
    seed: u64,
) -> Result<RebalanceOutcome> {
    target.validate()?;
    let total = total.unwrap_or(taus.len());
    let nb = target.bins.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for (i, &t) in taus.iter().enumerate() {
        members[target.bin_of(t)].push(i);
    }
    let wsum: f64 = target.bins.iter().map(|b| b.weight).sum();
    let exact: Vec<f64> = target.bins.iter().map(|b| total as f64 * b.weight / wsum).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        quota[i] += 1;
        rest -= 1;
    }

    let mut selected = Vec::with_capacity(total);
    let mut warnings = Vec::new();
    let mut quotas = Vec::with_capacity(nb);
    for (b, idx) in members.iter_mut().enumerate() {
        let want = quota[b];
        quotas.push((want, idx.len()));
        if idx.len() < want {
            let msg = format!(
                "bin [{}, {}] underfilled: {} of {want} requested",
                target.bins[b].lo,
                target.bins[b].hi,
                idx.len()
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        let mut rng = rng_for(seed, b as u64);
        idx.shuffle(&mut rng);
        selected.extend_from_slice(&idx[..want.min(idx.len())]);
    }
    selected.sort_unstable();
    Ok(RebalanceOutcome { selected, quotas, warnings })
}
