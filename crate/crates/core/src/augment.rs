//! Random scaling, rotation and translation of whole surfaces, and dataset
//! expansion with synthetic copies.
//!
//! Every axis is handled independently: with probability `p_axis` a scale
//! ratio, a rotation angle and an offset are applied along/about it. The
//! transform is `x' = R (S x) + t` with `R = Rz Ry Rx`.

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::{LabeledMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_axis: f64,
    pub translate_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub angle_range: (f64, f64),
    pub copies: usize,
    pub seed: u64,
    /// One ratio for all three axes instead of per-axis zoom.
    pub uniform_scale: bool,
    /// One activation draw for all three rotations instead of one per axis.
    pub rotate_per_surface: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_axis: 0.5,
            translate_range: (-10.0, 10.0),
            scale_range: (0.8, 1.2),
            angle_range: (-std::f64::consts::PI, std::f64::consts::PI),
            copies: 4,
            seed: 0,
            uniform_scale: false,
            rotate_per_surface: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p_axis) {
            return Err(format!("p_axis {} outside [0, 1]", self.p_axis));
        }
        for (name, (lo, hi)) in [
            ("translate_range", self.translate_range),
            ("scale_range", self.scale_range),
            ("angle_range", self.angle_range),
        ] {
            if !(lo <= hi) {
                return Err(format!("{name} is not ordered: [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}

/// What one augmentation actually applied. Inactive axes hold the identity
/// value (ratio 1, angle 0, offset 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSample {
    pub scale_active: [bool; 3],
    pub scale: [f64; 3],
    pub rotate_active: [bool; 3],
    pub angles: [f64; 3],
    pub translate_active: [bool; 3],
    pub offsets: [f64; 3],
}

impl AugmentSample {
    pub fn draw<R: Rng>(config: &AugmentConfig, rng: &mut R) -> Self {
        let mut s = Self {
            scale_active: [false; 3],
            scale: [1.0; 3],
            rotate_active: [false; 3],
            angles: [0.0; 3],
            translate_active: [false; 3],
            offsets: [0.0; 3],
        };
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        for axis in 0..3 {
            let on = rng.gen_bool(config.p_axis);
            let ratio = uniform(rng, config.scale_range);
            if config.uniform_scale {
                if axis == 0 {
                    s.scale_active = [on; 3];
                    s.scale = if on { [ratio; 3] } else { [1.0; 3] };
                }
            } else if on {
                s.scale_active[axis] = true;
                s.scale[axis] = ratio;
            }
        }
        let surface_rotates = rng.gen_bool(config.p_axis);
        for axis in 0..3 {
            let on = rng.gen_bool(config.p_axis);
            let angle = uniform(rng, config.angle_range);
            let on = if config.rotate_per_surface { surface_rotates } else { on };
            if on {
                s.rotate_active[axis] = true;
                s.angles[axis] = angle;
            }
        }
        for axis in 0..3 {
            let on = rng.gen_bool(config.p_axis);
            let offset = uniform(rng, config.translate_range);
            if on {
                s.translate_active[axis] = true;
                s.offsets[axis] = offset;
            }
        }
        s
    }

    /// `Rz * Ry * Rx`.
    pub fn rotation(&self) -> Matrix3<f64> {
        let rx = Rotation3::from_axis_angle(&Vec3::x_axis(), self.angles[0]);
        let ry = Rotation3::from_axis_angle(&Vec3::y_axis(), self.angles[1]);
        let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), self.angles[2]);
        (rz * ry * rx).into_inner()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let scaled = Vec3::new(p.x * self.scale[0], p.y * self.scale[1], p.z * self.scale[2]);
        self.rotation() * scaled + Vec3::from(self.offsets)
    }

    pub fn within(&self, config: &AugmentConfig) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| lo <= v && v <= hi;
        (0..3).all(|a| {
            (!self.scale_active[a] || inside(self.scale[a], config.scale_range))
                && (!self.rotate_active[a] || inside(self.angles[a], config.angle_range))
                && (!self.translate_active[a] || inside(self.offsets[a], config.translate_range))
        })
    }
}

/// Applies one random transform. Labels and topology are untouched.
pub fn augment_surface<R: Rng>(
    labeled: &LabeledMesh,
    config: &AugmentConfig,
    rng: &mut R,
) -> (LabeledMesh, AugmentSample) {
    let sample = AugmentSample::draw(config, rng);
    let r = sample.rotation();
    let t = Vec3::from(sample.offsets);
    let sc = sample.scale;
    let mesh = labeled
        .mesh
        .map_vertices(|p| r * Vec3::new(p.x * sc[0], p.y * sc[1], p.z * sc[2]) + t)
        .expect("affine image of a valid mesh is valid");
    (
        LabeledMesh {
            mesh,
            labels: labeled.labels.clone(),
        },
        sample,
    )
}

/// Random stream for `(seed, surface, copy)`.
pub fn stream_rng(seed: u64, surface: usize, copy: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((surface as u64) << 32) | copy as u64);
    rng
}

/// One expanded surface with where it came from.
#[derive(Debug, Clone)]
pub struct Expanded {
    pub mesh: LabeledMesh,
    pub source: usize,
    /// `None` for the original.
    pub copy: Option<usize>,
    pub sample: Option<AugmentSample>,
}

/// Originals first, then `copies` augmented versions of each surface in
/// surface-major order.
pub fn expand_with_provenance(surfaces: &[LabeledMesh], config: &AugmentConfig) -> Vec<Expanded> {
    let mut out: Vec<Expanded> = surfaces
        .iter()
        .enumerate()
        .map(|(i, m)| Expanded {
            mesh: m.clone(),
            source: i,
            copy: None,
            sample: None,
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..surfaces.len())
        .flat_map(|s| (0..config.copies).map(move |c| (s, c)))
        .collect();
    let augmented: Vec<Expanded> = jobs
        .par_iter()
        .map(|&(s, c)| {
            let mut rng = stream_rng(config.seed, s, c);
            let (mesh, sample) = augment_surface(&surfaces[s], config, &mut rng);
            Expanded {
                mesh,
                source: s,
                copy: Some(c),
                sample: Some(sample),
            }
        })
        .collect();
    out.extend(augmented);
    out
}

pub fn expand_dataset(surfaces: &[LabeledMesh], config: &AugmentConfig) -> Vec<LabeledMesh> {
    expand_with_provenance(surfaces, config)
        .into_iter()
        .map(|e| e.mesh)
        .collect()
}
