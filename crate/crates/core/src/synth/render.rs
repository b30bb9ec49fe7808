use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use crate::error::{Result, TtcError};
use crate::geometry::BoundingBox;
use crate::raster::Raster;
use crate::rng::rng_for;

/// Minimum box side for a frame to be usable, pixels.
pub const MIN_BOX_SIDE: f64 = 15.0;

/// Sub-samples per pixel axis when pasting the texture.
const SUPERSAMPLE: usize = 3;

/// A frontal-parallel textured rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarTarget {
    /// Meters.
    pub physical_width: f64,
    /// Meters.
    pub physical_height: f64,
    pub texture: Raster,
    /// Right-positive lateral offset, meters. Added to the scripted lateral offset.
    pub lateral_offset_x: f64,
    /// Down-positive vertical offset from the optical axis, meters.
    pub vertical_offset_z: f64,
}

impl PlanarTarget {
    pub fn new(physical_width: f64, physical_height: f64, texture: Raster) -> Result<Self> {
        let t = Self {
            physical_width,
            physical_height,
            texture,
            lateral_offset_x: 0.0,
            vertical_offset_z: 0.3,
        };
        t.validate()?;
        Ok(t)
    }

    /// Rear face of a passenger car with a random texture.
    pub fn vehicle(seed: u64) -> Self {
        Self {
            physical_width: 1.8,
            physical_height: 1.5,
            texture: random_texture(seed, 64, 64),
            lateral_offset_x: 0.0,
            vertical_offset_z: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.physical_width > 0.0 && self.physical_height > 0.0) {
            return Err(TtcError::Domain("target dimensions must be > 0".into()));
        }
        let d = self.texture.data();
        let first = d.first().copied().unwrap_or(0.0);
        if d.iter().all(|&v| v == first) {
            return Err(TtcError::Domain("target texture must not be constant".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Flat([f32; 3]),
    /// Screen-space raster, sampled with edge clamping when sizes differ.
    Image(Raster),
}

impl Default for Background {
    fn default() -> Self {
        Background::Flat([0.5, 0.5, 0.5])
    }
}

impl Background {
    fn fill(&self, camera: &CameraModel) -> Raster {
        match self {
            Background::Flat(rgb) => {
                Raster::from_fn(camera.width, camera.height, 3, |_, _, c| rgb[c])
            }
            Background::Image(img) if img.width() == camera.width && img.height() == camera.height => {
                img.clone()
            }
            Background::Image(img) => {
                let sx = img.width() as f64 / camera.width as f64;
                let sy = img.height() as f64 / camera.height as f64;
                Raster::from_fn(camera.width, camera.height, 3, |x, y, c| {
                    img.sample((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy, c.min(img.channels() - 1))
                })
            }
        }
    }
}

/// Box and photometric perturbations applied to rendered frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Box center offset drawn uniformly from `[-j, j]` pixels per axis.
    pub box_center_jitter_px: u32,
    /// Box sides multiplied by `1 + u`, `u` uniform in `[-s, s]`, per side.
    pub box_scale_jitter: f64,
    /// Multiplicative illumination factor range.
    pub gain: (f64, f64),
    /// Additive intensity range.
    pub bias: (f64, f64),
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { box_center_jitter_px: 0, box_scale_jitter: 0.0, gain: (1.0, 1.0), bias: (0.0, 0.0), seed: 0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.box_scale_jitter >= 0.0
            && self.box_scale_jitter < 1.0
            && self.gain.0 <= self.gain.1
            && self.gain.0 >= 0.0
            && self.bias.0 <= self.bias.1;
        if ok {
            Ok(())
        } else {
            Err(TtcError::Config(format!("invalid noise model {self:?}")))
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.box_center_jitter_px == 0
            && self.box_scale_jitter == 0.0
            && self.gain == (1.0, 1.0)
            && self.bias == (0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub image: Raster,
    pub exact_box: BoundingBox,
    pub noisy_box: BoundingBox,
    /// A box side is below [`MIN_BOX_SIDE`].
    pub too_small: bool,
    /// The exact box is not fully inside the image.
    pub truncated: bool,
}

/// Smooth random RGB texture in `[0.1, 0.9]`: a sum of low-frequency
/// sinusoids and Gaussian blobs per channel.
pub fn random_texture(seed: u64, width: usize, height: usize) -> Raster {
    let mut rng = rng_for(seed, 0x7e47);
    struct Wave {
        fx: f64,
        fy: f64,
        phase: f64,
        amp: f64,
    }
    struct Blob {
        x: f64,
        y: f64,
        r: f64,
        amp: f64,
    }
    let mut channels = Vec::new();
    for _ in 0..3 {
        let waves: Vec<Wave> = (0..6)
            .map(|_| Wave {
                fx: rng.gen_range(-4.0..4.0),
                fy: rng.gen_range(-4.0..4.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                amp: rng.gen_range(0.3..1.0),
            })
            .collect();
        let blobs: Vec<Blob> = (0..5)
            .map(|_| Blob {
                x: rng.gen_range(0.0..1.0),
                y: rng.gen_range(0.0..1.0),
                r: rng.gen_range(0.08..0.25),
                amp: rng.gen_range(-1.5..1.5),
            })
            .collect();
        channels.push((waves, blobs));
    }
    let mut values = vec![0.0f64; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64;
            let v = (y as f64 + 0.5) / height as f64;
            for (c, (waves, blobs)) in channels.iter().enumerate() {
                let mut s = 0.0;
                for w in waves {
                    s += w.amp * (std::f64::consts::TAU * (w.fx * u + w.fy * v) + w.phase).sin();
                }
                for b in blobs {
                    let d2 = (u - b.x).powi(2) + (v - b.y).powi(2);
                    s += b.amp * (-d2 / (2.0 * b.r * b.r)).exp();
                }
                values[(y * width + x) * 3 + c] = s;
            }
        }
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let data = values.into_iter().map(|s| (0.1 + 0.8 * (s - lo) / span) as f32).collect();
    Raster::from_vec(width, height, 3, data).expect("sized")
}

/// Renders the target at depth `y` and scripted lateral offset `lateral_x`.
///
/// Pixels are the exact area average of the scene: each pixel is split into
/// sub-cells whose overlap with the projected box weighs a texture sample
/// taken at the sub-cell center.
pub fn render_frame(
    camera: &CameraModel,
    target: &PlanarTarget,
    background: &Background,
    y: f64,
    lateral_x: f64,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<RenderedFrame> {
    camera.validate()?;
    if !(y.is_finite() && y > 0.0) {
        return Err(TtcError::Domain(format!("target depth must be > 0, got {y}")));
    }
    let exact = camera.project_rect(
        target.physical_width,
        target.physical_height,
        target.lateral_offset_x + lateral_x,
        target.vertical_offset_z,
        y,
    )?;
    let mut image = background.fill(camera);
    if exact.intersects(camera.image_size()) {
        paste(&mut image, &target.texture, &exact);
    }

    let gain = draw(rng, noise.gain);
    let bias = draw(rng, noise.bias);
    if gain != 1.0 || bias != 0.0 {
        image.apply_gain_bias(gain as f32, bias as f32);
    }
    let j = noise.box_center_jitter_px as i64;
    let dx = rng.gen_range(-j..=j) as f64;
    let dy = rng.gen_range(-j..=j) as f64;
    let sw = 1.0 + draw(rng, (-noise.box_scale_jitter, noise.box_scale_jitter));
    let sh = 1.0 + draw(rng, (-noise.box_scale_jitter, noise.box_scale_jitter));
    let noisy = BoundingBox { x: exact.x + dx, y: exact.y + dy, w: exact.w * sw, h: exact.h * sh };

    Ok(RenderedFrame {
        image,
        exact_box: exact,
        noisy_box: noisy,
        too_small: exact.w < MIN_BOX_SIDE || exact.h < MIN_BOX_SIDE,
        truncated: !exact.is_inside(camera.image_size()),
    })
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.gen_range(0.0..1.0);
    lo + (hi - lo) * u
}

fn paste(image: &mut Raster, texture: &Raster, b: &BoundingBox) {
    let (left, right, top, bottom) = (b.left(), b.right(), b.top(), b.bottom());
    let x0 = left.floor().max(0.0) as usize;
    let x1 = (right.ceil().max(0.0) as usize).min(image.width());
    let y0 = top.floor().max(0.0) as usize;
    let y1 = (bottom.ceil().max(0.0) as usize).min(image.height());
    let tw = texture.width() as f64;
    let th = texture.height() as f64;
    let sub = 1.0 / SUPERSAMPLE as f64;
    let tc = texture.channels();

    for py in y0..y1 {
        for px in x0..x1 {
            let mut acc = [0.0f64; 3];
            let mut cover = 0.0;
            for sy in 0..SUPERSAMPLE {
                let cy0 = py as f64 + sy as f64 * sub;
                let oy = overlap(cy0, cy0 + sub, top, bottom);
                if oy <= 0.0 {
                    continue;
                }
                let vy = ((cy0 + 0.5 * sub).clamp(top, bottom) - top) / b.h * th;
                for sx in 0..SUPERSAMPLE {
                    let cx0 = px as f64 + sx as f64 * sub;
                    let ox = overlap(cx0, cx0 + sub, left, right);
                    if ox <= 0.0 {
                        continue;
                    }
                    let ux = ((cx0 + 0.5 * sub).clamp(left, right) - left) / b.w * tw;
                    let wgt = ox * oy;
                    cover += wgt;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += wgt * texture.sample(ux, vy, c.min(tc - 1)) as f64;
                    }
                }
            }
            if cover <= 0.0 {
                continue;
            }
            for (c, a) in acc.iter().enumerate() {
                let bg = image.get(px, py, c) as f64;
                image.set(px, py, c, (a + (1.0 - cover) * bg) as f32);
            }
        }
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}
