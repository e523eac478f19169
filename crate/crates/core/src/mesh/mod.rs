//! Triangle meshes with per-face class labels.
//!
//! A [`TriangleMesh`] is an indexed face set whose invariants (finite
//! coordinates, in-range indices, no repeated vertex inside a face, at least
//! one face) are checked on construction. Derived geometry (face normals,
//! area-weighted vertex normals, barycenters) lives here as well, together
//! with the dataset label mapping and base cropping used during ingestion.

mod crop;
pub mod io;
mod labels;
pub mod primitives;

use nalgebra::Vector3;
use thiserror::Error;

pub use crop::crop_base;
pub use labels::{map_fdi_labels, ClassId, LabelMode, LabelSidecar, NUM_CLASSES};

/// Millimeters for positions, unitless for directions.
pub type Vec3 = Vector3<f64>;

/// Cross-product norm (mm²) below which a face is treated as degenerate.
pub const DEGENERATE_CROSS_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("face {face} is degenerate (cross product norm {norm:e})")]
    DegenerateFace { face: usize, norm: f64 },
    #[error("vertex {vertex} has no incident face")]
    IsolatedVertex { vertex: usize },
    #[error("incident face normals of vertex {vertex} cancel out")]
    CancelledNormal { vertex: usize },
    #[error("cropping retained no faces")]
    EmptyResult,
    #[error("scan contains third molar label {code}")]
    ThirdMolar { code: i64 },
    #[error("unknown label value {value}")]
    UnknownLabel { value: i64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(MeshError::Validation("mesh has no faces".into()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::Validation(format!("vertex {i} has a non-finite coordinate")));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(MeshError::Validation(format!(
                    "face {fi} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::Validation(format!("face {fi} repeats a vertex index")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal, `(b - a) x (c - a)`; its norm is twice the area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    /// Unit normal of `face` following the right-hand rule on its winding.
    pub fn face_normal(&self, face: usize) -> Result<Vec3> {
        let n = self.face_cross(face);
        let norm = n.norm();
        if norm <= DEGENERATE_CROSS_NORM {
            return Err(MeshError::DegenerateFace { face, norm });
        }
        Ok(n / norm)
    }

    pub fn face_normals(&self) -> Result<Vec<Vec3>> {
        (0..self.face_count()).map(|f| self.face_normal(f)).collect()
    }

    /// Area-weighted average of incident face normals, renormalized.
    pub fn vertex_normals(&self) -> Result<Vec<Vec3>> {
        let mut acc = vec![Vec3::zeros(); self.vertex_count()];
        let mut touched = vec![false; self.vertex_count()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_cross(fi);
            for &v in f {
                acc[v] += n;
                touched[v] = true;
            }
        }
        acc.into_iter()
            .zip(touched)
            .enumerate()
            .map(|(vertex, (n, hit))| {
                if !hit {
                    return Err(MeshError::IsolatedVertex { vertex });
                }
                let norm = n.norm();
                if norm <= DEGENERATE_CROSS_NORM {
                    return Err(MeshError::CancelledNormal { vertex });
                }
                Ok(n / norm)
            })
            .collect()
    }

    pub fn barycenters(&self) -> Vec<Vec3> {
        (0..self.face_count())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                (a + b + c) / 3.0
            })
            .collect()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bounding_box(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Unique undirected edges as `(min, max)` vertex pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn median_edge_length(&self) -> f64 {
        let mut lengths: Vec<f64> = self
            .edges()
            .into_iter()
            .map(|(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .collect();
        lengths.sort_by(f64::total_cmp);
        let n = lengths.len();
        if n % 2 == 1 {
            lengths[n / 2]
        } else {
            0.5 * (lengths[n / 2 - 1] + lengths[n / 2])
        }
    }

    /// Applies `f` to every vertex; topology is kept as is.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        Self::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    /// Keeps the listed faces (in the given order) and drops vertices that
    /// are no longer referenced. Vertex order is preserved.
    pub fn subset(&self, faces: &[usize]) -> Result<Self> {
        let mut remap = vec![usize::MAX; self.vertex_count()];
        let mut used: Vec<usize> = faces.iter().flat_map(|&f| self.faces[f]).collect();
        used.sort_unstable();
        used.dedup();
        let vertices = used
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                remap[old] = new;
                self.vertices[old]
            })
            .collect();
        let new_faces = faces
            .iter()
            .map(|&f| self.faces[f].map(|v| remap[v]))
            .collect();
        Self::new(vertices, new_faces)
    }
}

pub(crate) fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// A triangle mesh with one class label per face.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMesh {
    pub mesh: TriangleMesh,
    pub labels: Vec<ClassId>,
}

impl LabeledMesh {
    pub fn new(mesh: TriangleMesh, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != mesh.face_count() {
            return Err(MeshError::Validation(format!(
                "{} labels for {} faces",
                labels.len(),
                mesh.face_count()
            )));
        }
        Ok(Self { mesh, labels })
    }

    pub fn face_count(&self) -> usize {
        self.mesh.face_count()
    }

    pub fn label_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut hist = [0; NUM_CLASSES];
        for l in &self.labels {
            hist[l.index()] += 1;
        }
        hist
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosphere;
    use nalgebra::Rotation3;

    fn single_face(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::from(a), Vec3::from(b), Vec3::from(c)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 5]]),
            Err(MeshError::Validation(_))
        ));
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 1]]),
            Err(MeshError::Validation(_))
        ));
        assert!(matches!(TriangleMesh::new(v, vec![]), Err(MeshError::Validation(_))));
    }

    #[test]
    fn face_normal_follows_winding() {
        let m = single_face([0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]);
        assert_eq!(m.face_normal(0).unwrap(), Vec3::new(0.0, 0.0, 1.0));
        let m = single_face([0.0, 0.0, 0.0], [0.0, 3.0, 0.0], [3.0, 0.0, 0.0]);
        assert_eq!(m.face_normal(0).unwrap(), Vec3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn degenerate_face_is_an_error() {
        let m = single_face([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        assert!(matches!(m.face_normal(0), Err(MeshError::DegenerateFace { face: 0, .. })));
    }

    #[test]
    fn icosphere_normals_point_outward() {
        let s = icosphere(3, 1.0);
        let bary = s.barycenters();
        for (f, b) in bary.iter().enumerate() {
            let n = s.face_normal(f).unwrap();
            assert!(n.dot(&b.normalize()) > 0.9);
            assert!((n.norm() - 1.0).abs() <= 1e-9);
        }
        for (v, n) in s.vertices().iter().zip(s.vertex_normals().unwrap()) {
            assert!(n.dot(&v.normalize()) >= 0.99);
            assert!((n.norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn flat_quad_vertex_normals() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        for n in m.vertex_normals().unwrap() {
            assert_eq!(n, Vec3::z());
        }
    }

    #[test]
    fn isolated_vertex_is_an_error() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(5.0, 5.0, 5.0)];
        let m = TriangleMesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert!(matches!(m.vertex_normals(), Err(MeshError::IsolatedVertex { vertex: 3 })));
    }

    #[test]
    fn barycenter_is_vertex_mean() {
        let m = single_face([0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]);
        assert_eq!(m.barycenters()[0], Vec3::new(1.0, 1.0, 0.0));
        let t = Vec3::new(1.5, -2.0, 7.25);
        let moved = m.map_vertices(|p| p + t).unwrap();
        assert_eq!(moved.barycenters()[0], Vec3::new(1.0, 1.0, 0.0) + t);
    }

    #[test]
    fn barycenters_match_direct_recompute() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vertices: Vec<Vec3> = (0..60)
            .map(|_| Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        let faces: Vec<[usize; 3]> = (0..100)
            .map(|i| [i % 60, (i * 7 + 1) % 60, (i * 13 + 2) % 60])
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .collect();
        let m = TriangleMesh::new(vertices.clone(), faces.clone()).unwrap();
        for (b, f) in m.barycenters().iter().zip(&faces) {
            let expect = (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0;
            assert_eq!(*b, expect);
        }
    }

    #[test]
    fn rigid_motion_equivariance() {
        let s = icosphere(2, 2.0).map_vertices(|p| p + Vec3::new(0.3, -1.0, 2.0)).unwrap();
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let t = Vec3::new(4.0, 5.0, -6.0);
        let moved = s.map_vertices(|p| rot * p + t).unwrap();
        for (a, b) in s.barycenters().iter().zip(moved.barycenters()) {
            assert!((rot * a + t - b).amax() < 1e-9);
        }
        for f in 0..s.face_count() {
            let a = s.face_normal(f).unwrap();
            let b = moved.face_normal(f).unwrap();
            assert!((rot * a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn subset_reindexes() {
        let s = icosphere(1, 1.0);
        let sub = s.subset(&[3, 7]).unwrap();
        assert_eq!(sub.face_count(), 2);
        assert_eq!(sub.triangle(0), s.triangle(3));
        assert_eq!(sub.triangle(1), s.triangle(7));
        assert!(sub.vertex_count() <= 6);
    }
}
