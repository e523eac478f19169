//! Per-cell 24-dimensional feature rows and the `MRFT` feature file.
//!
//! Row layout: `[v1, v2, v3, barycenter, n_v1, n_v2, n_v3, n_face]`, each an
//! xyz triple. Columns 0..12 are coordinates, 12..24 unit normals.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array2};
use thiserror::Error;

use crate::mesh::{ClassId, LabeledMesh, MeshError, Vec3};

pub const FEATURE_DIMS: usize = 24;
pub const COORD_COLUMNS: usize = 12;
/// First column of the barycenter xyz triple.
pub const BARYCENTER_COLUMN: usize = 9;

const MAGIC: &[u8; 4] = b"MRFT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed feature file: {0}")]
    Format(String),
}

/// How coordinate columns were transformed: `raw = stored * scale_factor + center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub centered: bool,
    pub center: Vec3,
    pub scale_factor: f64,
}

impl Provenance {
    pub fn identity() -> Self {
        Self {
            centered: false,
            center: Vec3::zeros(),
            scale_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Array2<f64>,
    pub provenance: Provenance,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    /// Barycenter xyz of every row, as stored.
    pub fn barycenters(&self) -> Vec<Vec3> {
        self.rows
            .rows()
            .into_iter()
            .map(|r| Vec3::new(r[BARYCENTER_COLUMN], r[BARYCENTER_COLUMN + 1], r[BARYCENTER_COLUMN + 2]))
            .collect()
    }

    /// Undoes pose normalization on the coordinate columns.
    pub fn denormalized(&self) -> Array2<f64> {
        let mut out = self.rows.clone();
        let p = &self.provenance;
        for mut row in out.rows_mut() {
            for c in 0..COORD_COLUMNS {
                row[c] = row[c] * p.scale_factor + p.center[c % 3];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: FeatureMatrix,
    pub labels: Vec<ClassId>,
}

impl LabeledFeatures {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Builds feature rows for every face. With `normalize`, coordinates are
/// centered on the barycenter centroid and divided by the largest barycenter
/// distance from it; normals are left alone.
pub fn featurize(labeled: &LabeledMesh, normalize: bool) -> Result<LabeledFeatures, FeatureError> {
    let mesh = &labeled.mesh;
    let vnormals = mesh.vertex_normals()?;
    let fnormals = mesh.face_normals()?;
    let bary = mesh.barycenters();
    let n = mesh.face_count();

    let provenance = if normalize {
        let center = bary.iter().fold(Vec3::zeros(), |acc, b| acc + b) / n as f64;
        let radius = bary.iter().map(|b| (b - center).norm()).fold(0.0, f64::max);
        Provenance {
            centered: true,
            center,
            scale_factor: if radius > 0.0 { radius } else { 1.0 },
        }
    } else {
        Provenance::identity()
    };

    let mut rows = Array2::zeros((n, FEATURE_DIMS));
    for (f, face) in mesh.faces().iter().enumerate() {
        let [a, b, c] = mesh.triangle(f);
        let coords = [a, b, c, bary[f]];
        let normals = [vnormals[face[0]], vnormals[face[1]], vnormals[face[2]], fnormals[f]];
        let mut row = rows.row_mut(f);
        for (k, p) in coords.iter().enumerate() {
            let q = (p - provenance.center) / provenance.scale_factor;
            row.slice_mut(s![3 * k..3 * k + 3]).assign(&ndarray::arr1(q.as_slice()));
        }
        for (k, nv) in normals.iter().enumerate() {
            let o = COORD_COLUMNS + 3 * k;
            row.slice_mut(s![o..o + 3]).assign(&ndarray::arr1(nv.as_slice()));
        }
    }
    Ok(LabeledFeatures {
        features: FeatureMatrix { rows, provenance },
        labels: labeled.labels.clone(),
    })
}

/// Writes `MRFT`: magic, version u32, N u64, dims u32, N*dims f32, N label bytes.
pub fn write_mrft<W: Write>(out: &mut W, data: &LabeledFeatures) -> Result<(), FeatureError> {
    let rows = &data.features.rows;
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u64::<LittleEndian>(rows.nrows() as u64)?;
    out.write_u32::<LittleEndian>(rows.ncols() as u32)?;
    for v in rows.iter() {
        out.write_f32::<LittleEndian>(*v as f32)?;
    }
    let labels: Vec<u8> = data.labels.iter().map(|l| l.value()).collect();
    out.write_all(&labels)?;
    Ok(())
}

/// Reads an `MRFT` file. The result carries identity provenance since the
/// file does not record it.
pub fn read_mrft<R: Read>(input: &mut R) -> Result<LabeledFeatures, FeatureError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FeatureError::Format(format!("bad magic {magic:?}")));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(FeatureError::Format(format!("unsupported version {version}")));
    }
    let n = input.read_u64::<LittleEndian>()? as usize;
    let dims = input.read_u32::<LittleEndian>()? as usize;
    if dims != FEATURE_DIMS {
        return Err(FeatureError::Format(format!("expected {FEATURE_DIMS} dims, got {dims}")));
    }
    let mut values = vec![0f32; n * dims];
    input.read_f32_into::<LittleEndian>(&mut values)?;
    let mut labels = vec![0u8; n];
    input.read_exact(&mut labels)?;
    let labels = labels
        .into_iter()
        .map(|b| ClassId::new(b).ok_or_else(|| FeatureError::Format(format!("label {b} out of range"))))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = Array2::from_shape_vec((n, dims), values.into_iter().map(f64::from).collect())
        .map_err(|e| FeatureError::Format(e.to_string()))?;
    Ok(LabeledFeatures {
        features: FeatureMatrix {
            rows,
            provenance: Provenance::identity(),
        },
        labels,
    })
}

pub fn save_mrft(path: &Path, data: &LabeledFeatures) -> Result<(), FeatureError> {
    let mut buf = Vec::new();
    write_mrft(&mut buf, data)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_mrft(path: &Path) -> Result<LabeledFeatures, FeatureError> {
    let bytes = std::fs::read(path)?;
    read_mrft(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosphere;
    use crate::mesh::TriangleMesh;
    use nalgebra::Rotation3;

    fn labeled(mesh: TriangleMesh) -> LabeledMesh {
        let n = mesh.face_count();
        let labels = (0..n).map(|i| ClassId::new((i % 8) as u8).unwrap()).collect();
        LabeledMesh::new(mesh, labels).unwrap()
    }

    #[test]
    fn single_face_row() {
        let m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let f = featurize(&labeled(m), false).unwrap();
        let expect = [
            0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 3.0, 0.0, 1.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0,
        ];
        assert_eq!(f.features.rows.row(0).to_vec(), expect.to_vec());
        assert!(!f.features.provenance.centered);
    }

    #[test]
    fn normalization_contract() {
        let s = icosphere(3, 7.0).map_vertices(|p| p * 1.3 + Vec3::new(10.0, -4.0, 2.0)).unwrap();
        let f = featurize(&labeled(s.clone()), true).unwrap();
        let bary = f.features.barycenters();
        let centroid = bary.iter().fold(Vec3::zeros(), |a, b| a + b) / bary.len() as f64;
        assert!(centroid.amax() < 1e-9);
        let max = bary.iter().map(|b| b.norm()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-9);
        for row in f.features.rows.rows() {
            for k in 0..4 {
                let o = COORD_COLUMNS + 3 * k;
                let n = Vec3::new(row[o], row[o + 1], row[o + 2]);
                assert!((n.norm() - 1.0).abs() <= 1e-6);
            }
        }
        // inverse transform recovers the raw rows
        let raw = featurize(&labeled(s), false).unwrap();
        let back = f.features.denormalized();
        let err = (&back - &raw.features.rows).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rotation_and_translation() {
        let s = icosphere(2, 3.0);
        let rot = Rotation3::from_euler_angles(0.7, 0.2, -1.3);
        let a = featurize(&labeled(s.clone()), false).unwrap();
        let b = featurize(&labeled(s.map_vertices(|p| rot * p).unwrap()), false).unwrap();
        for (ra, rb) in a.features.rows.rows().into_iter().zip(b.features.rows.rows()) {
            for k in 0..8 {
                let va = Vec3::new(ra[3 * k], ra[3 * k + 1], ra[3 * k + 2]);
                let vb = Vec3::new(rb[3 * k], rb[3 * k + 1], rb[3 * k + 2]);
                assert!((rot * va - vb).amax() < 1e-9);
            }
        }
        let t = featurize(&labeled(s.map_vertices(|p| p + Vec3::new(5.0, 6.0, 7.0)).unwrap()), false).unwrap();
        let normals_a = a.features.rows.slice(s![.., COORD_COLUMNS..]).to_owned();
        let normals_t = t.features.rows.slice(s![.., COORD_COLUMNS..]).to_owned();
        let err = (&normals_a - &normals_t).mapv(f64::abs).fold(0.0f64, |x, &y| x.max(y));
        assert!(err < 1e-12);
    }

    #[test]
    fn mrft_round_trip_and_layout() {
        let f = featurize(&labeled(icosphere(1, 1.0)), true).unwrap();
        let mut buf = Vec::new();
        write_mrft(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"MRFT");
        assert_eq!(buf.len(), 4 + 4 + 8 + 4 + 80 * 24 * 4 + 80);
        let back = read_mrft(&mut buf.as_slice()).unwrap();
        assert_eq!(back.labels, f.labels);
        let expect = f.features.rows.mapv(|v| f64::from(v as f32));
        assert_eq!(back.features.rows, expect);
        buf[0] = b'X';
        assert!(matches!(read_mrft(&mut buf.as_slice()), Err(FeatureError::Format(_))));
    }
}
