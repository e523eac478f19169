//! Quadric-error-metric edge-collapse decimation of labeled meshes.
//!
//! Each vertex carries the sum of `p pᵀ` over its incident face planes
//! `p = (a, b, c, d)`. Edges are collapsed cheapest first; a collapse moves
//! the kept vertex to the minimizer of the summed quadric and deletes the one
//! or two faces sharing the edge. Faces are never created, so per-face labels
//! survive unchanged on the faces that remain.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Matrix4};
use thiserror::Error;

use crate::mesh::{LabeledMesh, MeshError, TriangleMesh, Vec3, DEGENERATE_CROSS_NORM};

/// Weight of the perpendicular constraint planes placed on boundary edges.
const BOUNDARY_WEIGHT: f64 = 100.0;

#[derive(Debug, Error)]
pub enum DecimateError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid decimation config: {0}")]
    InvalidConfig(String),
    #[error("no legal collapse left: stopped at {reached} faces, target {target}")]
    TargetUnreachable { target: usize, reached: usize },
}

/// Symmetric 4x4 matrix stored as its upper triangle:
/// `[q00, q01, q02, q03, q11, q12, q13, q22, q23, q33]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quadric([f64; 10]);

impl Quadric {
    pub fn zero() -> Self {
        Self([0.0; 10])
    }

    /// `w * p pᵀ` for the plane `n·x + d = 0`.
    pub fn from_plane(n: Vec3, d: f64, w: f64) -> Self {
        let (a, b, c) = (n.x, n.y, n.z);
        Self([
            w * a * a,
            w * a * b,
            w * a * c,
            w * a * d,
            w * b * b,
            w * b * c,
            w * b * d,
            w * c * c,
            w * c * d,
            w * d * d,
        ])
    }

    /// `vᵀ Q v` with `v = (x, y, z, 1)`.
    pub fn evaluate(&self, p: &Vec3) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let q = &self.0;
        Matrix4::new(
            q[0], q[1], q[2], q[3], //
            q[1], q[4], q[5], q[6], //
            q[2], q[5], q[7], q[8], //
            q[3], q[6], q[8], q[9],
        )
    }

    /// Minimizer of the quadratic form, when the linear part is well conditioned.
    fn minimizer(&self, det_threshold: f64) -> Option<Vec3> {
        let q = &self.0;
        let a = Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        if a.determinant().abs() < det_threshold {
            return None;
        }
        let p = a.lu().solve(&Vec3::new(-q[3], -q[6], -q[8]))?;
        p.iter().all(|c| c.is_finite()).then_some(p)
    }
}

impl std::ops::Add for Quadric {
    type Output = Quadric;

    fn add(mut self, rhs: Quadric) -> Quadric {
        self += rhs;
        self
    }
}

impl std::ops::AddAssign for Quadric {
    fn add_assign(&mut self, rhs: Quadric) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

/// Per-vertex plane quadrics (unit plane normals, unweighted).
pub fn compute_quadrics(mesh: &TriangleMesh) -> Result<Vec<Quadric>, MeshError> {
    let mut out = vec![Quadric::zero(); mesh.vertex_count()];
    for (fi, face) in mesh.faces().iter().enumerate() {
        let n = mesh.face_normal(fi)?;
        let d = -n.dot(&mesh.vertices()[face[0]]);
        let q = Quadric::from_plane(n, d, 1.0);
        for &v in face {
            out[v] += q;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseCandidate {
    pub edge: (usize, usize),
    pub cost: f64,
    pub target_position: Vec3,
}

/// Optimal collapse target for an edge whose endpoint quadrics sum to `q_sum`.
/// Falls back to the cheapest of the endpoints and midpoint when
/// `|det A| < 1e-10 * scale³` for the 3x3 linear block `A`.
pub fn collapse_cost(
    q_sum: &Quadric,
    edge: (usize, usize),
    p1: Vec3,
    p2: Vec3,
    scale: f64,
) -> CollapseCandidate {
    let target_position = q_sum
        .minimizer(1e-10 * scale.powi(3))
        .unwrap_or_else(|| cheapest(q_sum, &[p1, p2, (p1 + p2) * 0.5]));
    CollapseCandidate {
        edge,
        cost: q_sum.evaluate(&target_position),
        target_position,
    }
}

fn cheapest(q: &Quadric, options: &[Vec3]) -> Vec3 {
    let mut best = options[0];
    let mut best_cost = q.evaluate(&best);
    for p in &options[1..] {
        let c = q.evaluate(p);
        if c < best_cost {
            best = *p;
            best_cost = c;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DecimationConfig {
    pub target_faces: usize,
    #[serde(default = "default_true")]
    pub preserve_boundary: bool,
}

fn default_true() -> bool {
    true
}

impl DecimationConfig {
    pub fn new(target_faces: usize) -> Self {
        Self {
            target_faces,
            preserve_boundary: true,
        }
    }
}

/// Bookkeeping from one decimation run.
#[derive(Debug, Clone, Default)]
pub struct DecimationStats {
    /// Cost of every accepted collapse, in acceptance order.
    pub accepted_costs: Vec<f64>,
    /// Face count after each accepted collapse.
    pub face_counts: Vec<usize>,
    pub rejected: usize,
}

pub fn decimate(labeled: &LabeledMesh, config: &DecimationConfig) -> Result<LabeledMesh, DecimateError> {
    decimate_with_stats(labeled, config).map(|(m, _)| m)
}

pub fn decimate_with_stats(
    labeled: &LabeledMesh,
    config: &DecimationConfig,
) -> Result<(LabeledMesh, DecimationStats), DecimateError> {
    let current = labeled.face_count();
    if config.target_faces < 4 {
        return Err(DecimateError::InvalidConfig(format!(
            "target_faces must be at least 4, got {}",
            config.target_faces
        )));
    }
    if config.target_faces > current {
        return Err(DecimateError::InvalidConfig(format!(
            "target {} exceeds current face count {current}",
            config.target_faces
        )));
    }
    if config.target_faces == current {
        return Ok((labeled.clone(), DecimationStats::default()));
    }
    let mut state = Collapser::new(&labeled.mesh, config.preserve_boundary)?;
    let stats = state.run(config.target_faces)?;
    let kept: Vec<usize> = (0..state.faces.len()).filter(|&f| state.face_alive[f]).collect();
    let moved = TriangleMesh::new(state.pos, state.faces)?;
    let mesh = moved.subset(&kept)?;
    let labels = kept.iter().map(|&f| labeled.labels[f]).collect();
    Ok((LabeledMesh::new(mesh, labels)?, stats))
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    cost: f64,
    u: usize,
    v: usize,
    stamp_u: u32,
    stamp_v: u32,
    target: Vec3,
    /// Target already restricted to an endpoint or the midpoint.
    restricted: bool,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // max-heap: the cheapest entry, then the smallest vertex pair, is greatest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| (other.u, other.v).cmp(&(self.u, self.v)))
            .then_with(|| self.restricted.cmp(&other.restricted))
    }
}

struct Collapser {
    pos: Vec<Vec3>,
    quad: Vec<Quadric>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vfaces: Vec<Vec<usize>>,
    stamp: Vec<u32>,
    alive_faces: usize,
    scale: f64,
    preserve_boundary: bool,
}

impl Collapser {
    fn new(mesh: &TriangleMesh, preserve_boundary: bool) -> Result<Self, MeshError> {
        let mut quad = compute_quadrics(mesh)?;
        let mut vfaces = vec![Vec::new(); mesh.vertex_count()];
        for (fi, f) in mesh.faces().iter().enumerate() {
            for &v in f {
                vfaces[v].push(fi);
            }
        }
        let mut state = Self {
            pos: mesh.vertices().to_vec(),
            quad: Vec::new(),
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.face_count()],
            vfaces,
            stamp: vec![0; mesh.vertex_count()],
            alive_faces: mesh.face_count(),
            scale: mesh.bbox_diagonal().max(f64::MIN_POSITIVE),
            preserve_boundary,
        };
        if preserve_boundary {
            for (fi, f) in mesh.faces().iter().enumerate() {
                for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                    if state.shared_faces(a, b).len() == 1 {
                        let n = mesh.face_normal(fi)?;
                        let m = (state.pos[b] - state.pos[a]).cross(&n);
                        let norm = m.norm();
                        if norm > 0.0 {
                            let m = m / norm;
                            let q = Quadric::from_plane(m, -m.dot(&state.pos[a]), BOUNDARY_WEIGHT);
                            quad[a] += q;
                            quad[b] += q;
                        }
                    }
                }
            }
        }
        state.quad = quad;
        Ok(state)
    }

    fn shared_faces(&self, u: usize, v: usize) -> Vec<usize> {
        self.vfaces[u]
            .iter()
            .copied()
            .filter(|&f| self.faces[f].contains(&v))
            .collect()
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.vfaces[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&w| w != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn is_boundary(&self, v: usize) -> bool {
        self.neighbors(v)
            .into_iter()
            .any(|w| self.shared_faces(v, w).len() == 1)
    }

    fn entry(&self, a: usize, b: usize) -> Option<Entry> {
        let (u, v) = (a.min(b), a.max(b));
        let shared = self.shared_faces(u, v).len();
        if shared == 0 || shared > 2 {
            return None;
        }
        let (bu, bv) = (self.is_boundary(u), self.is_boundary(v));
        // an interior edge between two boundary vertices would pinch the surface
        if shared == 2 && bu && bv {
            return None;
        }
        let q = self.quad[u] + self.quad[v];
        let fixed = if self.preserve_boundary && shared == 2 {
            match (bu, bv) {
                (true, false) => Some(self.pos[u]),
                (false, true) => Some(self.pos[v]),
                _ => None,
            }
        } else {
            None
        };
        let (cost, target, restricted) = match fixed {
            Some(p) => (q.evaluate(&p), p, true),
            None => {
                let c = collapse_cost(&q, (u, v), self.pos[u], self.pos[v], self.scale);
                (c.cost, c.target_position, false)
            }
        };
        Some(Entry {
            cost,
            u,
            v,
            stamp_u: self.stamp[u],
            stamp_v: self.stamp[v],
            target,
            restricted,
        })
    }

    /// Link condition plus flip and degeneracy checks for moving both
    /// endpoints to `target`.
    fn is_legal(&self, u: usize, v: usize, target: &Vec3) -> bool {
        let shared = self.shared_faces(u, v);
        let mut opposite: Vec<usize> = shared
            .iter()
            .map(|&f| *self.faces[f].iter().find(|&&w| w != u && w != v).unwrap())
            .collect();
        opposite.sort_unstable();
        let nu = self.neighbors(u);
        let nv = self.neighbors(v);
        let common: Vec<usize> = nu.iter().copied().filter(|w| nv.binary_search(w).is_ok()).collect();
        if common != opposite {
            return false;
        }
        for &x in [u, v].iter() {
            for &f in &self.vfaces[x] {
                if shared.contains(&f) {
                    continue;
                }
                let face = self.faces[f];
                let old = tri_cross(&self.pos, face, None);
                let new = tri_cross(&self.pos, face, Some((x, *target)));
                let new_norm = new.norm();
                if new_norm <= DEGENERATE_CROSS_NORM || old.dot(&new) < 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Cheapest legal endpoint/midpoint target, if any.
    fn restricted_entry(&self, e: &Entry) -> Option<Entry> {
        let q = self.quad[e.u] + self.quad[e.v];
        let (pu, pv) = (self.pos[e.u], self.pos[e.v]);
        let mut options: Vec<(f64, Vec3)> = [pu, pv, (pu + pv) * 0.5]
            .into_iter()
            .map(|p| (q.evaluate(&p), p))
            .collect();
        options.sort_by(|a, b| a.0.total_cmp(&b.0));
        options
            .into_iter()
            .find(|(_, p)| self.is_legal(e.u, e.v, p))
            .map(|(cost, target)| Entry {
                cost,
                target,
                restricted: true,
                ..*e
            })
    }

    fn apply(&mut self, e: &Entry) -> usize {
        let (u, v) = (e.u, e.v);
        let shared = self.shared_faces(u, v);
        for &f in &shared {
            self.face_alive[f] = false;
            for w in self.faces[f] {
                self.vfaces[w].retain(|&g| g != f);
            }
        }
        let moved = std::mem::take(&mut self.vfaces[v]);
        for &f in &moved {
            for w in self.faces[f].iter_mut() {
                if *w == v {
                    *w = u;
                }
            }
        }
        self.vfaces[u].extend(moved);
        self.vfaces[u].sort_unstable();
        self.pos[u] = e.target;
        let qv = self.quad[v];
        self.quad[u] += qv;
        self.stamp[u] += 1;
        self.stamp[v] += 1;
        self.alive_faces -= shared.len();
        shared.len()
    }

    fn all_entries(&self) -> BinaryHeap<Entry> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, &alive)| alive)
            .flat_map(|(f, _)| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.into_iter().filter_map(|(a, b)| self.entry(a, b)).collect()
    }

    fn run(&mut self, target: usize) -> Result<DecimationStats, DecimateError> {
        let mut stats = DecimationStats::default();
        let mut heap = self.all_entries();
        let mut progressed = false;
        while self.alive_faces > target {
            let Some(e) = heap.pop() else {
                if !progressed {
                    return Err(DecimateError::TargetUnreachable {
                        target,
                        reached: self.alive_faces,
                    });
                }
                // neighborhoods changed since the last scan: retry every edge
                progressed = false;
                heap = self.all_entries();
                continue;
            };
            if e.stamp_u != self.stamp[e.u] || e.stamp_v != self.stamp[e.v] {
                continue;
            }
            if !self.is_legal(e.u, e.v, &e.target) {
                stats.rejected += 1;
                if !e.restricted {
                    if let Some(r) = self.restricted_entry(&e) {
                        heap.push(r);
                    }
                }
                continue;
            }
            self.apply(&e);
            progressed = true;
            stats.accepted_costs.push(e.cost);
            stats.face_counts.push(self.alive_faces);
            for w in self.neighbors(e.u) {
                if let Some(n) = self.entry(e.u, w) {
                    heap.push(n);
                }
            }
        }
        Ok(stats)
    }
}

fn tri_cross(pos: &[Vec3], face: [usize; 3], replace: Option<(usize, Vec3)>) -> Vec3 {
    let p = face.map(|i| match replace {
        Some((r, t)) if r == i => t,
        _ => pos[i],
    });
    (p[1] - p[0]).cross(&(p[2] - p[0]))
}
