use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledMesh, MeshError, Result, TriangleMesh};

pub const NUM_CLASSES: usize = 8;

/// Segmentation class: 0 is gingiva/background, 1..=7 are T1 (2nd molar)
/// through T7 (central incisor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct ClassId(u8);

impl ClassId {
    pub const BACKGROUND: ClassId = ClassId(0);

    pub fn new(value: u8) -> Option<Self> {
        (usize::from(value) < NUM_CLASSES).then_some(Self(value))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = ClassId> {
        (0..NUM_CLASSES as u8).map(ClassId)
    }

    /// Short column name: `BG`, `T1` .. `T7`.
    pub fn name(self) -> &'static str {
        ["BG", "T1", "T2", "T3", "T4", "T5", "T6", "T7"][self.index()]
    }
}

impl TryFrom<i64> for ClassId {
    type Error = MeshError;

    fn try_from(value: i64) -> Result<Self> {
        u8::try_from(value)
            .ok()
            .and_then(ClassId::new)
            .ok_or(MeshError::UnknownLabel { value })
    }
}

impl From<ClassId> for i64 {
    fn from(c: ClassId) -> i64 {
        i64::from(c.0)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// FDI code of a lower-jaw tooth (or 0 for gingiva) to class. Left and right
/// quadrants merge; third molars are rejected.
fn fdi_to_class(code: i64) -> Result<ClassId> {
    match code {
        0 => Ok(ClassId::BACKGROUND),
        38 | 48 => Err(MeshError::ThirdMolar { code }),
        31..=37 | 41..=47 => Ok(ClassId((8 - code % 10) as u8)),
        _ => Err(MeshError::UnknownLabel { value: code }),
    }
}

/// Converts per-vertex FDI labels into per-face classes by majority vote over
/// each face's three vertices; with no majority the first vertex wins.
pub fn map_fdi_labels(per_vertex_fdi: &[i64], mesh: &TriangleMesh) -> Result<LabeledMesh> {
    if per_vertex_fdi.len() != mesh.vertex_count() {
        return Err(MeshError::Validation(format!(
            "{} vertex labels for {} vertices",
            per_vertex_fdi.len(),
            mesh.vertex_count()
        )));
    }
    // Scan-level rejection takes priority over unknown codes elsewhere.
    if let Some(&code) = per_vertex_fdi.iter().find(|&&c| c == 38 || c == 48) {
        return Err(MeshError::ThirdMolar { code });
    }
    let classes = per_vertex_fdi
        .iter()
        .map(|&c| fdi_to_class(c))
        .collect::<Result<Vec<_>>>()?;
    let labels = mesh
        .faces()
        .iter()
        .map(|&[a, b, c]| {
            let (ca, cb, cc) = (classes[a], classes[b], classes[c]);
            if cb == cc && cb != ca {
                cb
            } else {
                ca
            }
        })
        .collect();
    LabeledMesh::new(mesh.clone(), labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Face,
    VertexFdi,
}

/// JSON label document: `{"mode": "face" | "vertex_fdi", "labels": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSidecar {
    #[serde(default = "default_mode")]
    pub mode: LabelMode,
    pub labels: Vec<i64>,
}

fn default_mode() -> LabelMode {
    LabelMode::Face
}

impl LabelSidecar {
    pub fn from_classes(labels: &[ClassId]) -> Self {
        Self {
            mode: LabelMode::Face,
            labels: labels.iter().map(|&c| i64::from(c)).collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MeshError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| MeshError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Face classes, validating range (face mode only).
    pub fn face_classes(&self) -> Result<Vec<ClassId>> {
        if self.mode != LabelMode::Face {
            return Err(MeshError::Validation("label sidecar is not in face mode".into()));
        }
        self.labels.iter().map(|&v| ClassId::try_from(v)).collect()
    }

    /// Pairs the sidecar with `mesh`, mapping FDI codes when in vertex mode.
    pub fn attach(&self, mesh: TriangleMesh) -> Result<LabeledMesh> {
        match self.mode {
            LabelMode::Face => LabeledMesh::new(mesh, self.face_classes()?),
            LabelMode::VertexFdi => map_fdi_labels(&self.labels, &mesh),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;

    fn tri() -> TriangleMesh {
        TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn majority_vote() {
        let m = map_fdi_labels(&[31, 31, 0], &tri()).unwrap();
        assert_eq!(m.labels, vec![ClassId(7)]);
        let m = map_fdi_labels(&[31, 41, 0], &tri()).unwrap();
        assert_eq!(m.labels, vec![ClassId(7)]);
        let m = map_fdi_labels(&[0, 33, 33], &tri()).unwrap();
        assert_eq!(m.labels, vec![ClassId(5)]);
        // no majority: first vertex
        let m = map_fdi_labels(&[36, 0, 42], &tri()).unwrap();
        assert_eq!(m.labels, vec![ClassId(2)]);
    }

    #[test]
    fn mapping_table() {
        let expect = [(31, 7), (32, 6), (33, 5), (34, 4), (35, 3), (36, 2), (37, 1)];
        for (code, class) in expect {
            assert_eq!(fdi_to_class(code).unwrap(), ClassId(class));
            assert_eq!(fdi_to_class(code + 10).unwrap(), ClassId(class));
        }
        assert_eq!(fdi_to_class(0).unwrap(), ClassId::BACKGROUND);
    }

    #[test]
    fn third_molar_rejected() {
        assert!(matches!(
            map_fdi_labels(&[48, 0, 0], &tri()),
            Err(MeshError::ThirdMolar { code: 48 })
        ));
        assert!(matches!(
            map_fdi_labels(&[0, 0, 38], &tri()),
            Err(MeshError::ThirdMolar { code: 38 })
        ));
        assert!(matches!(
            map_fdi_labels(&[11, 0, 0], &tri()),
            Err(MeshError::UnknownLabel { value: 11 })
        ));
    }

    #[test]
    fn sidecar_json() {
        let s: LabelSidecar = serde_json::from_str(r#"{"mode":"vertex_fdi","labels":[31,31,0]}"#).unwrap();
        assert_eq!(s.mode, LabelMode::VertexFdi);
        let lm = s.attach(tri()).unwrap();
        assert_eq!(lm.labels[0].name(), "T7");
        let s: LabelSidecar = serde_json::from_str(r#"{"labels":[9]}"#).unwrap();
        assert!(s.attach(tri()).is_err());
    }
}
