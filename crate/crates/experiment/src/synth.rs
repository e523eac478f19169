//! Procedural lower-jaw stand-ins: a curved gum band (height field over an
//! arch-shaped parameter domain) carrying one smooth, steep-sided bump per
//! tooth. Teeth are numbered outward from the midline on both sides, so the
//! central incisors are T7 and the back teeth T1.

use std::f64::consts::PI;

use meshres_core::{ClassId, LabeledMesh, MeshError, TriangleMesh, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Nominal mesiodistal widths (mm), midline outward.
const TOOTH_WIDTHS: [f64; 7] = [5.4, 5.9, 6.8, 7.0, 7.2, 10.8, 10.2];
const TOOTH_GAP: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthJawSpec {
    pub teeth: usize,
    pub arch_radius: f64,
    pub bump_height: f64,
    /// Minimum face count of every generated mesh.
    pub cells: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthJawSpec {
    fn default() -> Self {
        Self {
            teeth: 14,
            arch_radius: 30.0,
            bump_height: 6.0,
            cells: 16_000,
            noise: 0.03,
            seed: 0,
        }
    }
}

impl SynthJawSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.teeth == 0 || self.teeth > 14 {
            return Err(format!("tooth count {} outside 1..=14", self.teeth));
        }
        if !(self.arch_radius > 0.0 && self.bump_height > 0.0 && self.noise >= 0.0) {
            return Err("arch radius and bump height must be positive, noise non-negative".into());
        }
        if self.cells < 64 {
            return Err(format!("cell target {} is too small", self.cells));
        }
        Ok(())
    }
}

struct Tooth {
    /// Signed arc-length position of the center; negative on the left side.
    center: f64,
    half_length: f64,
    height: f64,
    class: ClassId,
}

struct Arch {
    radius: f64,
    ellipticity: f64,
    theta_max: f64,
    half_width: f64,
    /// Arc length from the midline at `theta_max * i / (len - 1)`.
    arc_table: Vec<f64>,
}

impl Arch {
    fn center(&self, theta: f64) -> (f64, f64) {
        (self.radius * theta.sin(), self.ellipticity * self.radius * theta.cos())
    }

    /// Unit normal in the plane, pointing away from the arch's inside.
    fn normal(&self, theta: f64) -> (f64, f64) {
        let (tx, ty) = (self.radius * theta.cos(), -self.ellipticity * self.radius * theta.sin());
        let len = tx.hypot(ty);
        (-ty / len, tx / len)
    }

    fn arc_length(&self, theta: f64) -> f64 {
        let n = self.arc_table.len() - 1;
        let t = (theta.abs() / self.theta_max * n as f64).min(n as f64);
        let i = (t.floor() as usize).min(n - 1);
        let f = t - i as f64;
        let s = self.arc_table[i] * (1.0 - f) + self.arc_table[i + 1] * f;
        s.copysign(theta)
    }
}

fn fall_off(r: f64) -> f64 {
    const PLATEAU: f64 = 0.55;
    if r >= 1.0 {
        0.0
    } else if r <= PLATEAU {
        1.0
    } else {
        let t = (1.0 - r) / (1.0 - PLATEAU);
        t * t * (3.0 - 2.0 * t)
    }
}

/// Generates jaw `index` of the family described by `spec`.
pub fn synth_jaw(spec: &SynthJawSpec, index: usize) -> Result<LabeledMesh, MeshError> {
    spec.validate().map_err(MeshError::InvalidParameter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let radius = spec.arch_radius * rng.gen_range(0.9..1.1);
    let theta_max = PI * rng.gen_range(0.42..0.48);
    let mut arch = Arch {
        radius,
        ellipticity: rng.gen_range(1.05..1.25),
        theta_max,
        half_width: 0.22 * radius,
        arc_table: Vec::new(),
    };
    const TABLE: usize = 2048;
    let mut s = 0.0;
    arch.arc_table.push(0.0);
    for i in 1..=TABLE {
        let (a, b) = (theta_max * (i - 1) as f64 / TABLE as f64, theta_max * i as f64 / TABLE as f64);
        let (x0, y0) = arch.center(a);
        let (x1, y1) = arch.center(b);
        s += (x1 - x0).hypot(y1 - y0);
        arch.arc_table.push(s);
    }
    let half_arc = s;

    let mut teeth = Vec::new();
    let left = spec.teeth.div_ceil(2);
    for (side, count) in [(-1.0, left), (1.0, spec.teeth - left)] {
        let widths: Vec<f64> = TOOTH_WIDTHS[..count].iter().map(|w| w * rng.gen_range(0.9..1.1)).collect();
        let span: f64 = widths.iter().sum::<f64>() + TOOTH_GAP * count as f64;
        let fit = (0.92 * half_arc / span).min(1.0);
        let mut pos = 0.5 * TOOTH_GAP * fit;
        for (i, w) in widths.iter().enumerate() {
            let w = w * fit;
            teeth.push(Tooth {
                center: side * (pos + 0.5 * w),
                half_length: 0.5 * w,
                height: spec.bump_height * rng.gen_range(0.85..1.15),
                class: ClassId::new(7 - i as u8).expect("at most 7 teeth per side"),
            });
            pos += w + TOOTH_GAP * fit;
        }
    }
    let foot_width = 0.7 * arch.half_width;
    let tooth_radius = |arc: f64, across: f64| -> Option<(f64, &Tooth)> {
        teeth
            .iter()
            .map(|t| {
                let du = (arc - t.center) / t.half_length;
                let dv = across / foot_width;
                ((du * du + dv * dv).sqrt(), t)
            })
            .filter(|(r, _)| *r < 1.0)
            .min_by(|a, b| a.0.total_cmp(&b.0))
    };

    // grid with roughly square cells in the arc-length x across metric
    let ratio = half_arc / arch.half_width;
    let nv = ((spec.cells as f64 / (2.0 * ratio)).sqrt().ceil() as usize).max(2);
    let nu = spec.cells.div_ceil(2 * nv).max(2);
    let mut vertices = Vec::with_capacity((nu + 1) * (nv + 1));
    let mut params = Vec::with_capacity(vertices.capacity());
    for i in 0..=nu {
        let theta = theta_max * (2.0 * i as f64 / nu as f64 - 1.0);
        let arc = arch.arc_length(theta);
        let (cx, cy) = arch.center(theta);
        let (nx, ny) = arch.normal(theta);
        for j in 0..=nv {
            let v = 2.0 * j as f64 / nv as f64 - 1.0;
            let across = v * arch.half_width;
            let mut z = -2.0 * v * v;
            if let Some((r, t)) = tooth_radius(arc, across) {
                z += t.height * fall_off(r) * (1.0 - 0.15 * r * r);
            }
            z += spec.noise * rng.gen_range(-1.0..=1.0);
            vertices.push(Vec3::new(cx + across * nx, cy + across * ny, z));
            params.push((arc, across));
        }
    }
    let id = |i: usize, j: usize| i * (nv + 1) + j;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut mesh = TriangleMesh::new(vertices, faces)?;
    let up: f64 = (0..mesh.face_count()).map(|f| mesh.face_cross(f).z).sum();
    if up < 0.0 {
        let flipped = mesh.faces().iter().map(|&[a, b, c]| [a, c, b]).collect();
        mesh = TriangleMesh::new(mesh.vertices().to_vec(), flipped)?;
    }
    let labels = mesh
        .faces()
        .iter()
        .map(|f| {
            let arc = f.iter().map(|&v| params[v].0).sum::<f64>() / 3.0;
            let across = f.iter().map(|&v| params[v].1).sum::<f64>() / 3.0;
            tooth_radius(arc, across).map_or(ClassId::BACKGROUND, |(_, t)| t.class)
        })
        .collect();
    LabeledMesh::new(mesh, labels)
}

/// `count` jaws, each from its own random stream of `spec.seed`.
pub fn synth_generate(spec: &SynthJawSpec, count: usize) -> Result<Vec<LabeledMesh>, MeshError> {
    (0..count).into_par_iter().map(|i| synth_jaw(spec, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthJawSpec {
        SynthJawSpec {
            cells: 3000,
            ..Default::default()
        }
    }

    #[test]
    fn all_classes_present() {
        let jaw = synth_jaw(&small(), 0).unwrap();
        assert!(jaw.label_histogram().iter().all(|&c| c > 0), "{:?}", jaw.label_histogram());
        assert!(jaw.face_count() >= 3000);
    }

    #[test]
    fn fewer_teeth_drop_back_classes() {
        let spec = SynthJawSpec { teeth: 6, ..small() };
        let hist = synth_jaw(&spec, 0).unwrap().label_histogram();
        assert!(hist[5..].iter().all(|&c| c > 0));
        assert!(hist[1..5].iter().all(|&c| c == 0));
    }

    #[test]
    fn seeds_vary_geometry_not_schema() {
        let a = synth_jaw(&small(), 0).unwrap();
        let b = synth_jaw(&SynthJawSpec { seed: 1, ..small() }, 0).unwrap();
        assert_ne!(a.mesh.vertices(), b.mesh.vertices());
        assert_eq!(a.face_count() > 0, b.face_count() > 0);
        assert_eq!(synth_jaw(&small(), 0).unwrap(), a);
        assert_ne!(synth_jaw(&small(), 1).unwrap().mesh.vertices(), a.mesh.vertices());
    }

    #[test]
    fn faces_point_up() {
        let jaw = synth_jaw(&small(), 3).unwrap();
        let up = (0..jaw.face_count()).filter(|&f| jaw.mesh.face_cross(f).z > 0.0).count();
        assert!(up as f64 > 0.8 * jaw.face_count() as f64);
    }

    #[test]
    fn invalid_specs() {
        assert!(SynthJawSpec { teeth: 15, ..small() }.validate().is_err());
        assert!(SynthJawSpec { arch_radius: 0.0, ..small() }.validate().is_err());
    }
}
