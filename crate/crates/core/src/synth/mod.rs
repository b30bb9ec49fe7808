//! Synthetic ground truth: a pinhole camera rendering a textured planar
//! target that moves under scripted straight-lane kinematics.

mod camera;
mod generate;
mod kinematics;
mod render;
pub mod scripts;

pub use camera::{project_size, CameraModel};
pub use generate::{
    constant_velocity_sequence, generate_script_sequences, generate_sequence, vehicle_box3d,
    ConstantVelocitySuite, ScriptOutcome, SkipReason, SynthOptions,
};
pub use kinematics::{run_script, KinematicSample, Phase, ScenarioScript, Trajectory, Until};
pub use render::{
    random_texture, render_frame, Background, NoiseModel, PlanarTarget, RenderedFrame, MIN_BOX_SIDE,
};
