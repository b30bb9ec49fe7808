use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use super::kinematics::{run_script, ScenarioScript, Trajectory};
use super::render::{render_frame, Background, NoiseModel, PlanarTarget};
use crate::annotate::Box3D;
use crate::rng::{derive_seed, rng_for};
use crate::sequence::{FrameSample, Generator, LabelFlags, Provenance, Sequence, SequenceLabel, SEQUENCE_LEN};
use crate::ttc::{convert_scale_ratio_fps, ttc_from_depth_velocity, ScaleRatio, DEFAULT_EPSILON_V, REFERENCE_FPS};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub camera: CameraModel,
    pub background: Background,
    pub noise: NoiseModel,
    pub fps: f64,
    pub len: usize,
    /// Seconds of script to simulate.
    pub horizon: f64,
    /// Length of the vehicle cuboid behind the rendered face, meters.
    pub vehicle_length: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            camera: CameraModel::default(),
            background: Background::default(),
            noise: NoiseModel::default(),
            fps: REFERENCE_FPS,
            len: SEQUENCE_LEN,
            horizon: 20.0,
            vehicle_length: 4.5,
        }
    }
}

/// Why a window of a trajectory did not become a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "frame")]
pub enum SkipReason {
    /// The trajectory ended (contact or horizon) before the window filled.
    TooShort,
    TooSmall(usize),
    Truncated(usize),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::TooShort => write!(f, "trajectory too short"),
            SkipReason::TooSmall(i) => write!(f, "box below minimum size in frame {i}"),
            SkipReason::Truncated(i) => write!(f, "truncated object in frame {i}"),
        }
    }
}

/// Cuboid of a vehicle whose rear face is the rendered target, in vehicle
/// coordinates (x right, y forward, z up).
pub fn vehicle_box3d(target: &PlanarTarget, depth: f64, lateral_x: f64, length: f64) -> Box3D {
    let xc = target.lateral_offset_x + lateral_x;
    let zc = -target.vertical_offset_z;
    let (hw, hh) = (0.5 * target.physical_width, 0.5 * target.physical_height);
    let mut corners = [[0.0; 3]; 8];
    for (j, c) in corners.iter_mut().enumerate() {
        c[0] = if j & 1 == 0 { xc - hw } else { xc + hw };
        c[1] = if j & 2 == 0 { depth } else { depth + length };
        c[2] = if j & 4 == 0 { zc - hh } else { zc + hh };
    }
    Box3D { corners }
}

/// Renders frames `start..start + len` of a trajectory into a labelled sequence.
///
/// Labels are exact: the target-frame TTC from the kinematic state and scale
/// ratios from depth ratios.
pub fn generate_sequence(
    trajectory: &Trajectory,
    start: usize,
    target: &PlanarTarget,
    opts: &SynthOptions,
    seed: u64,
    id: String,
    script_id: Option<u32>,
) -> std::result::Result<Sequence, SkipReason> {
    let samples = trajectory.samples.get(start..start + opts.len).ok_or(SkipReason::TooShort)?;
    let noise_seed = derive_seed(opts.noise.seed, seed);
    let mut frames = Vec::with_capacity(opts.len);
    for (i, s) in samples.iter().enumerate() {
        let mut rng = rng_for(noise_seed, i as u64);
        let r = render_frame(&opts.camera, target, &opts.background, s.y, s.lateral_x, &opts.noise, &mut rng)
            .map_err(|_| SkipReason::TooShort)?;
        if r.truncated {
            return Err(SkipReason::Truncated(i));
        }
        if r.too_small {
            return Err(SkipReason::TooSmall(i));
        }
        frames.push(FrameSample {
            image: r.image,
            bbox: r.noisy_box,
            exact_bbox: Some(r.exact_box),
            timestamp: s.t,
            depth: Some(s.y),
            box3d: Some(vehicle_box3d(target, s.y, s.lateral_x, opts.vehicle_length)),
        });
    }
    let last = samples[samples.len() - 1];
    let prev = samples[samples.len() - 2];
    let tau = ttc_from_depth_velocity(last.y, last.closing_rate, DEFAULT_EPSILON_V)
        .map_err(|_| SkipReason::TooShort)?;
    let alpha_1 = ScaleRatio::new(last.y / prev.y).map_err(|_| SkipReason::TooShort)?;
    let alpha_10hz = convert_scale_ratio_fps(alpha_1, trajectory.fps, REFERENCE_FPS)
        .map_err(|_| SkipReason::TooShort)?;
    Ok(Sequence {
        id,
        fps: trajectory.fps,
        frames,
        label: Some(SequenceLabel {
            tau_s: tau.value(),
            alpha_10hz: alpha_10hz.value(),
            velocity_mps: last.closing_rate,
            q_used: None,
            flags: LabelFlags::default(),
        }),
        provenance: Provenance { generator: Generator::Synth, seed, script_id },
    })
}

pub struct ScriptOutcome {
    pub sequences: Vec<Sequence>,
    /// `(window start frame, reason)` for every window that was dropped.
    pub skipped: Vec<(usize, SkipReason)>,
}

/// Splits a script's trajectory into non-overlapping windows and renders
/// each valid one. At most `max_sequences` are rendered.
pub fn generate_script_sequences(
    script: &ScenarioScript,
    opts: &SynthOptions,
    seed: u64,
    max_sequences: usize,
) -> ScriptOutcome {
    let trajectory = run_script(script, opts.fps, opts.horizon);
    let script_seed = derive_seed(seed, script.id as u64);
    let target = PlanarTarget::vehicle(script_seed);
    let mut sequences = Vec::new();
    let mut skipped = Vec::new();
    let mut start = 0;
    while start + opts.len <= trajectory.samples.len() && sequences.len() < max_sequences {
        let id = format!("s{:05}_w{:03}", script.id, start / opts.len);
        let seq_seed = derive_seed(script_seed, start as u64);
        match generate_sequence(&trajectory, start, &target, opts, seq_seed, id, Some(script.id)) {
            Ok(s) => sequences.push(s),
            Err(r) => skipped.push((start, r)),
        }
        start += opts.len;
    }
    ScriptOutcome { sequences, skipped }
}

/// Random constant-velocity scenes with target-frame TTC and depth drawn
/// uniformly from the given ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantVelocitySuite {
    pub count: usize,
    pub tau_range: (f64, f64),
    /// Depth at the target frame, meters.
    pub depth_range: (f64, f64),
    pub lateral_range: (f64, f64),
    pub seed: u64,
}

impl Default for ConstantVelocitySuite {
    fn default() -> Self {
        Self { count: 100, tau_range: (1.5, 15.0), depth_range: (20.0, 40.0), lateral_range: (-1.0, 1.0), seed: 7 }
    }
}

impl ConstantVelocitySuite {
    /// The `i`-th sequence. Draws are retried until the window is valid.
    pub fn sequence(&self, i: usize, opts: &SynthOptions) -> Sequence {
        let base = derive_seed(self.seed, i as u64);
        for attempt in 0..64u64 {
            let seed = derive_seed(base, attempt);
            let mut rng = rng_for(seed, 1);
            let tau = rng.gen_range(self.tau_range.0..=self.tau_range.1);
            let depth = rng.gen_range(self.depth_range.0..=self.depth_range.1);
            let lateral = rng.gen_range(self.lateral_range.0..=self.lateral_range.1);
            match constant_velocity_sequence(tau, depth, lateral, seed, format!("cv{i:05}"), opts) {
                Ok(s) => return s,
                Err(_) => continue,
            }
        }
        panic!("suite parameters never yield a valid window for sequence {i}");
    }

    pub fn iter<'a>(&'a self, opts: &'a SynthOptions) -> impl Iterator<Item = Sequence> + 'a {
        (0..self.count).map(move |i| self.sequence(i, opts))
    }
}

/// One sequence whose target frame has TTC `tau` at depth `depth`.
pub fn constant_velocity_sequence(
    tau: f64,
    depth: f64,
    lateral: f64,
    seed: u64,
    id: String,
    opts: &SynthOptions,
) -> std::result::Result<Sequence, SkipReason> {
    let v = depth / tau;
    let span = (opts.len - 1) as f64 / opts.fps;
    let mut script = ScenarioScript::constant_closing(0, depth + v * span, v);
    script.lateral0 = lateral;
    let trajectory = run_script(&script, opts.fps, span);
    let target = PlanarTarget::vehicle(seed);
    generate_sequence(&trajectory, 0, &target, opts, seed, id, None)
}
