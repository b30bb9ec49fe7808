//! Run configuration covering data generation, labelling, estimation and
//! training, plus the canonical hash stamped on every artifact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::ArbitrationConfig;
use crate::error::{io_err, Result, TtcError};
use crate::estimate::{DetectionMode, ScaleSearchConfig};
use crate::learn::TrainConfig;
use crate::rng::derive_seed;
use crate::sequence::Sequence;
use crate::synth::scripts::expand_families;
use crate::synth::{generate_script_sequences, CameraModel, ConstantVelocitySuite, NoiseModel, SynthOptions};

/// Which scenes `synth` renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSelection {
    /// Script families 1..=6 to expand.
    pub families: Vec<u32>,
    /// Keep only the first scripts of each family.
    pub max_scripts_per_family: Option<usize>,
    /// Non-overlapping windows rendered per script and seed.
    pub max_windows_per_script: usize,
    /// Each script is rendered once per entry, with textures and noise
    /// derived from it.
    pub seeds: Vec<u64>,
    /// Random constant-velocity scenes, rendered after the scripts.
    pub suite: Option<ConstantVelocitySuite>,
}

impl Default for ScenarioSelection {
    fn default() -> Self {
        Self {
            families: Vec::new(),
            max_scripts_per_family: None,
            max_windows_per_script: 4,
            seeds: vec![0],
            suite: Some(ConstantVelocitySuite::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub camera: CameraModel,
    pub noise: NoiseModel,
    pub fps: f64,
    /// Seconds of each script to simulate.
    pub horizon: f64,
    pub vehicle_length: f64,
    pub scenarios: ScenarioSelection,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let o = SynthOptions::default();
        Self {
            camera: o.camera,
            noise: o.noise,
            fps: o.fps,
            horizon: o.horizon,
            vehicle_length: o.vehicle_length,
            scenarios: ScenarioSelection::default(),
        }
    }
}

impl SynthConfig {
    pub fn options(&self) -> SynthOptions {
        SynthOptions {
            camera: self.camera,
            noise: self.noise.clone(),
            fps: self.fps,
            horizon: self.horizon,
            vehicle_length: self.vehicle_length,
            ..SynthOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every generator stream derives from it.
    pub seed: u64,
    pub synth: SynthConfig,
    pub annotate: ArbitrationConfig,
    pub pixel: ScaleSearchConfig,
    pub feature: ScaleSearchConfig,
    pub detection: DetectionMode,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            annotate: ArbitrationConfig::default(),
            pixel: ScaleSearchConfig::pixel(),
            feature: ScaleSearchConfig::feature(),
            detection: DetectionMode::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.camera.validate()?;
        self.synth.noise.validate()?;
        if !(self.synth.fps > 0.0 && self.synth.horizon > 0.0) {
            return Err(TtcError::Config("synth fps and horizon must be positive".into()));
        }
        if let Some(f) = self.synth.scenarios.families.iter().find(|f| !(1..=6).contains(*f)) {
            return Err(TtcError::Config(format!("unknown scenario family {f}")));
        }
        self.pixel.validate()?;
        self.feature.validate()?;
        self.train.validate()
    }

    /// Compact JSON in declaration order: the canonical form that is hashed.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Every sequence the synth section selects, rendered lazily in a fixed
    /// order: scripts by family, then seeds, then windows, then the suite.
    pub fn synthesize(&self) -> impl Iterator<Item = Sequence> + '_ {
        let opts = self.synth.options();
        let sel = &self.synth.scenarios;
        let scripts: Vec<_> = sel
            .families
            .iter()
            .flat_map(|&f| {
                let all = expand_families(&[f]);
                let keep = sel.max_scripts_per_family.unwrap_or(all.len());
                all.into_iter().take(keep)
            })
            .collect();
        let multi_seed = sel.seeds.len() > 1;
        let master = self.seed;
        let scripted = scripts.into_iter().flat_map({
            let opts = opts.clone();
            move |script| {
                let opts = opts.clone();
                sel.seeds.iter().flat_map(move |&s| {
                    let out = generate_script_sequences(&script, &opts, derive_seed(master, s), sel.max_windows_per_script);
                    out.sequences.into_iter().map(move |mut q| {
                        if multi_seed {
                            q.id = format!("{}_r{s}", q.id);
                        }
                        q
                    })
                })
            }
        });
        let suite = sel.suite.clone().map(|mut suite| {
            suite.seed = derive_seed(master, suite.seed);
            suite
        });
        let suite_iter = suite.into_iter().flat_map(move |suite| {
            let opts = opts.clone();
            (0..suite.count).map(move |i| suite.sequence(i, &opts))
        });
        scripted.chain(suite_iter)
    }
}
