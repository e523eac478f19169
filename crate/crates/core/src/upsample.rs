//! KNN transfer of per-cell labels between resolutions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{ClassId, LabeledMesh, MeshError, TriangleMesh, Vec3, NUM_CLASSES};
use crate::spatial::KdTree;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("{available} source cells cannot supply k = {k} neighbors")]
    InsufficientSource { available: usize, k: usize },
    #[error("{labels} source labels for {cells} source cells")]
    LengthMismatch { labels: usize, cells: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Among tied classes, the one holding the nearest neighbor.
    Nearest,
    SmallestClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub k: usize,
    pub tie_break: TieBreak,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            k: 3,
            tie_break: TieBreak::Nearest,
        }
    }
}

/// Majority label among the `k` nearest source barycenters of every
/// destination barycenter.
pub fn knn_transfer(
    src_barycenters: &[Vec3],
    src_labels: &[ClassId],
    dst_barycenters: &[Vec3],
    config: &TransferConfig,
) -> Result<Vec<ClassId>, TransferError> {
    if config.k == 0 {
        return Err(TransferError::ZeroK);
    }
    if src_labels.len() != src_barycenters.len() {
        return Err(TransferError::LengthMismatch {
            labels: src_labels.len(),
            cells: src_barycenters.len(),
        });
    }
    if src_barycenters.len() < config.k {
        return Err(TransferError::InsufficientSource {
            available: src_barycenters.len(),
            k: config.k,
        });
    }
    let tree = KdTree::new(src_barycenters);
    Ok(dst_barycenters
        .iter()
        .map(|q| {
            let nbrs = tree.nearest(q, config.k);
            let mut votes = [0usize; NUM_CLASSES];
            for n in &nbrs {
                votes[src_labels[n.index].index()] += 1;
            }
            let top = *votes.iter().max().unwrap();
            match config.tie_break {
                TieBreak::Nearest => nbrs
                    .iter()
                    .map(|n| src_labels[n.index])
                    .find(|c| votes[c.index()] == top)
                    .unwrap(),
                TieBreak::SmallestClass => ClassId::all().find(|c| votes[c.index()] == top).unwrap(),
            }
        })
        .collect())
}

/// Pairs `high_mesh` with labels transferred from the low-resolution prediction.
pub fn upsample_prediction(
    low: &LabeledMesh,
    high_mesh: &TriangleMesh,
    config: &TransferConfig,
) -> Result<LabeledMesh, TransferError> {
    let labels = knn_transfer(&low.mesh.barycenters(), &low.labels, &high_mesh.barycenters(), config)?;
    Ok(LabeledMesh::new(high_mesh.clone(), labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosphere;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(v: u8) -> ClassId {
        ClassId::new(v).unwrap()
    }

    #[test]
    fn hand_distance_check() {
        let src = [Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)];
        let dst = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(9.0, 0.0, 0.0)];
        let cfg = TransferConfig { k: 1, ..Default::default() };
        assert_eq!(knn_transfer(&src, &[c(0), c(1)], &dst, &cfg).unwrap(), vec![c(0), c(1)]);
    }

    #[test]
    fn identity_and_constant() {
        let s = icosphere(2, 1.0);
        let b = s.barycenters();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<ClassId> = (0..b.len()).map(|_| c(rng.gen_range(0..8))).collect();
        let k1 = TransferConfig { k: 1, ..Default::default() };
        assert_eq!(knn_transfer(&b, &labels, &b, &k1).unwrap(), labels);
        for k in 1..6 {
            let cfg = TransferConfig { k, ..Default::default() };
            let out = knn_transfer(&b, &vec![c(4); b.len()], &icosphere(3, 1.0).barycenters(), &cfg).unwrap();
            assert!(out.iter().all(|&l| l == c(4)));
        }
    }

    #[test]
    fn tie_breaks() {
        let src = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)];
        let labels = [c(5), c(2), c(7)];
        let q = [Vec3::zeros()];
        let near = TransferConfig { k: 3, tie_break: TieBreak::Nearest };
        let small = TransferConfig { k: 3, tie_break: TieBreak::SmallestClass };
        assert_eq!(knn_transfer(&src, &labels, &q, &near).unwrap(), vec![c(5)]);
        assert_eq!(knn_transfer(&src, &labels, &q, &small).unwrap(), vec![c(2)]);
        let labels = [c(5), c(2), c(2)];
        assert_eq!(knn_transfer(&src, &labels, &q, &near).unwrap(), vec![c(2)]);
    }

    #[test]
    fn insufficient_source() {
        let cfg = TransferConfig { k: 3, ..Default::default() };
        let err = knn_transfer(&[Vec3::zeros()], &[c(0)], &[Vec3::zeros()], &cfg).unwrap_err();
        assert!(matches!(err, TransferError::InsufficientSource { available: 1, k: 3 }));
    }

    #[test]
    fn rigid_invariance_and_label_subset() {
        let lo = icosphere(2, 4.0);
        // jitter breaks the exact distance ties between nested icospheres
        let hi = icosphere(3, 4.0)
            .map_vertices(|p| p * (1.0 + 0.01 * (12.9898 * p.x + 78.233 * p.y + 37.719 * p.z).sin()))
            .unwrap();
        let labels: Vec<ClassId> = lo.barycenters().iter().map(|b| c(if b.z > 0.5 { 3 } else if b.x > 0.0 { 1 } else { 6 })).collect();
        let low = LabeledMesh::new(lo.clone(), labels.clone()).unwrap();
        let cfg = TransferConfig::default();
        let base = upsample_prediction(&low, &hi, &cfg).unwrap();
        let rot = Rotation3::from_euler_angles(0.4, 1.0, -0.3);
        let t = Vec3::new(3.0, 1.0, -2.0);
        let low_m = LabeledMesh::new(lo.map_vertices(|p| rot * p + t).unwrap(), labels.clone()).unwrap();
        let moved = upsample_prediction(&low_m, &hi.map_vertices(|p| rot * p + t).unwrap(), &cfg).unwrap();
        assert_eq!(base.labels, moved.labels);
        assert!(base.labels.iter().all(|l| labels.contains(l)));
        assert_eq!(base.face_count(), hi.face_count());
    }
}
