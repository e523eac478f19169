use super::{bounding_box, LabeledMesh, MeshError, Result};

/// Drops the scan base: keeps faces whose barycenter lies strictly inside the
/// top `keep_fraction` of the height range, where height runs along the axis
/// of smallest bounding-box extent of the barycenters.
///
/// `keep_fraction == 1.0` returns the input unchanged.
pub fn crop_base(labeled: &LabeledMesh, keep_fraction: f64) -> Result<LabeledMesh> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(MeshError::InvalidParameter(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    if keep_fraction == 1.0 {
        return Ok(labeled.clone());
    }
    let bary = labeled.mesh.barycenters();
    let (lo, hi) = bounding_box(&bary);
    let extent = hi - lo;
    let axis = extent.imin();
    let threshold = hi[axis] - keep_fraction * extent[axis];
    let kept: Vec<usize> = bary
        .iter()
        .enumerate()
        .filter(|(_, b)| b[axis] > threshold)
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Err(MeshError::EmptyResult);
    }
    let mesh = labeled.mesh.subset(&kept)?;
    let labels = kept.iter().map(|&f| labeled.labels[f]).collect();
    LabeledMesh::new(mesh, labels)
}
