//! Loading a directory of labeled scans: `<stem>.{obj,ply,stl}` next to a
//! `<stem>.json` label sidecar.

use std::path::Path;

use log::{info, warn};
use meshres_core::mesh::io::{load_mesh, save_obj, MeshFormat};
use meshres_core::mesh::LabelSidecar;
use meshres_core::{LabeledMesh, MeshError};

use crate::ExperimentError;

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub id: String,
    pub mesh: LabeledMesh,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    /// Sorted by id.
    pub scans: Vec<Scan>,
    /// `(id, reason)` for scans excluded by policy.
    pub skipped: Vec<(String, String)>,
    /// `(id, message)` for scans that failed to load.
    pub errors: Vec<(String, String)>,
}

fn load_scan(mesh_path: &Path, format: MeshFormat) -> Result<LabeledMesh, MeshError> {
    let sidecar = LabelSidecar::read(&mesh_path.with_extension("json"))?;
    sidecar.attach(load_mesh(mesh_path, format)?)
}

/// Ingests every mesh with a sidecar under `root` (not recursive). Failures
/// are collected per file; only a directory without any usable scan is an
/// error.
pub fn ingest_dataset(root: &Path) -> Result<IngestReport, ExperimentError> {
    let mut paths: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && MeshFormat::from_path(p).is_some())
        .collect();
    paths.sort();
    let mut report = IngestReport::default();
    for path in paths {
        let format = MeshFormat::from_path(&path).expect("filtered above");
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match load_scan(&path, format) {
            Ok(mesh) => report.scans.push(Scan { id, mesh }),
            Err(MeshError::ThirdMolar { code }) => {
                warn!("skipping {id}: third molar (FDI {code})");
                report.skipped.push((id, "third molar".into()));
            }
            Err(e) => {
                warn!("failed to ingest {id}: {e}");
                report.errors.push((id, e.to_string()));
            }
        }
    }
    info!(
        "ingested {} scans from {} ({} skipped, {} failed)",
        report.scans.len(),
        root.display(),
        report.skipped.len(),
        report.errors.len()
    );
    if report.scans.is_empty() {
        return Err(ExperimentError::NoUsableScans {
            root: root.display().to_string(),
            skipped: report.skipped.len(),
            failed: report.errors.len(),
        });
    }
    Ok(report)
}

/// Writes `<id>.obj` and a face-mode `<id>.json` per scan.
pub fn write_dataset(dir: &Path, scans: &[Scan]) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    for scan in scans {
        save_obj(&scan.mesh.mesh, &dir.join(format!("{}.obj", scan.id)))?;
        LabelSidecar::from_classes(&scan.mesh.labels).write(&dir.join(format!("{}.json", scan.id)))?;
    }
    Ok(())
}
