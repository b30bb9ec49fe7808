//! On-disk dataset layout: one directory per sequence holding six PNG frames
//! and `manifest.json`, plus a top-level `index.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::Box3D;
use crate::error::{io_err, Result, TtcError};
use crate::geometry::BoundingBox;
use crate::raster::Raster;
use crate::sequence::{FrameSample, Provenance, Sequence, SequenceLabel, SEQUENCE_LEN};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.json";

/// Tolerance on the spacing of consecutive timestamps, seconds.
const TIMESTAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub timestamp_s: f64,
    /// `[cx, cy, w, h]`, pixels.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub depth_m: Option<f64>,
    #[serde(default)]
    pub exact_bbox: Option<[f64; 4]>,
    /// Eight corners, meters.
    #[serde(default)]
    pub box3d: Option<Box3D>,
}

/// Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub config_hash: String,
    pub fps: f64,
    pub frames: Vec<FrameEntry>,
    pub label: Option<SequenceLabel>,
    pub provenance: Provenance,
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i}.png")
}

impl SequenceManifest {
    pub fn from_sequence(seq: &Sequence, config_hash: &str) -> Self {
        let frames = seq
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| FrameEntry {
                image_path: frame_file_name(i),
                timestamp_s: f.timestamp,
                bbox: f.bbox.as_array(),
                depth_m: f.depth,
                exact_bbox: f.exact_bbox.map(|b| b.as_array()),
                box3d: f.box3d,
            })
            .collect();
        Self {
            sequence_id: seq.id.clone(),
            config_hash: config_hash.into(),
            fps: seq.fps,
            frames,
            label: seq.label.clone(),
            provenance: seq.provenance.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TtcError::InvalidSequence(format!("{}: {m}", self.sequence_id)));
        if self.frames.len() != SEQUENCE_LEN {
            return bad(format!("expected {SEQUENCE_LEN} frames, found {}", self.frames.len()));
        }
        if !(self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        let dt = 1.0 / self.fps;
        for w in self.frames.windows(2) {
            let step = w[1].timestamp_s - w[0].timestamp_s;
            if (step - dt).abs() > TIMESTAMP_TOL {
                return bad(format!("timestamps {} and {} are not 1/fps apart", w[0].timestamp_s, w[1].timestamp_s));
            }
        }
        for f in &self.frames {
            BoundingBox::from_array(f.bbox)?;
            if f.image_path.contains("..") || Path::new(&f.image_path).is_absolute() {
                return bad(format!("image path {} leaves the sequence directory", f.image_path));
            }
        }
        Ok(())
    }

    /// Loads the frames relative to `dir`.
    pub fn into_sequence(self, dir: &Path) -> Result<Sequence> {
        self.validate()?;
        let mut frames = Vec::with_capacity(self.frames.len());
        for f in self.frames {
            frames.push(FrameSample {
                image: Raster::load_png(dir.join(&f.image_path))?,
                bbox: BoundingBox::from_array(f.bbox)?,
                exact_bbox: f.exact_bbox.map(BoundingBox::from_array).transpose()?,
                timestamp: f.timestamp_s,
                depth: f.depth_m,
                box3d: f.box3d,
            });
        }
        Ok(Sequence { id: self.sequence_id, fps: self.fps, frames, label: self.label, provenance: self.provenance })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path).map_err(io_err(path))?)?)
}

pub fn read_manifest(seq_dir: &Path) -> Result<SequenceManifest> {
    read_json(&seq_dir.join(MANIFEST_FILE))
}

pub fn write_manifest(seq_dir: &Path, manifest: &SequenceManifest) -> Result<()> {
    write_json(&seq_dir.join(MANIFEST_FILE), manifest)
}

/// Writes frames and manifest into `seq_dir`, creating it.
pub fn write_sequence(seq_dir: &Path, seq: &Sequence, config_hash: &str) -> Result<SequenceManifest> {
    fs::create_dir_all(seq_dir).map_err(io_err(seq_dir))?;
    let manifest = SequenceManifest::from_sequence(seq, config_hash);
    manifest.validate()?;
    for (f, e) in seq.frames.iter().zip(&manifest.frames) {
        f.image.save_png(seq_dir.join(&e.image_path))?;
    }
    write_manifest(seq_dir, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub config_hash: String,
    pub count: usize,
    /// Sequence ids, which are also directory names, in generation order.
    pub sequences: Vec<String>,
}

/// A dataset directory opened through its index.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let index: DatasetIndex = read_json(&root.join(INDEX_FILE))?;
        if index.count != index.sequences.len() {
            return Err(TtcError::InvalidSequence(format!(
                "index lists {} sequences but claims {}",
                index.sequences.len(),
                index.count
            )));
        }
        Ok(Self { root: root.to_path_buf(), index })
    }

    pub fn write_index(root: &Path, index: &DatasetIndex) -> Result<()> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        write_json(&root.join(INDEX_FILE), index)
    }

    pub fn sequence_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn manifest(&self, id: &str) -> Result<SequenceManifest> {
        read_manifest(&self.sequence_dir(id))
    }

    pub fn load(&self, id: &str) -> Result<Sequence> {
        let dir = self.sequence_dir(id);
        read_manifest(&dir)?.into_sequence(&dir)
    }

    /// Sequences in index order, loaded one at a time.
    pub fn iter(&self) -> impl Iterator<Item = Result<Sequence>> + '_ {
        self.index.sequences.iter().map(|id| self.load(id))
    }

    /// Ids whose manifests carry a hash other than the index's.
    pub fn mismatched_hashes(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for id in &self.index.sequences {
            if self.manifest(id)?.config_hash != self.index.config_hash {
                out.push(id.clone());
            }
        }
        Ok(out)
    }
}
