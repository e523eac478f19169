//! Procedural meshes used by fixtures and the synthetic data generator.

use std::collections::HashMap;

use super::{TriangleMesh, Vec3};

/// Subdivided icosahedron projected onto a sphere; `20 * 4^subdivisions` faces,
/// counter-clockwise when seen from outside.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriangleMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Regular grid over `[0, size.0] x [0, size.1]` at height `z`, split into
/// `2 * nx * ny` upward-facing triangles.
pub fn grid_plate(nx: usize, ny: usize, size: (f64, f64), z: f64) -> TriangleMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec3::new(
                size.0 * i as f64 / nx as f64,
                size.1 * j as f64 / ny as f64,
                z,
            ));
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("grid is valid")
}

/// Concatenates meshes into one, offsetting indices.
pub fn merge(meshes: &[TriangleMesh]) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for m in meshes {
        let base = vertices.len();
        vertices.extend_from_slice(m.vertices());
        faces.extend(m.faces().iter().map(|f| f.map(|i| i + base)));
    }
    TriangleMesh::new(vertices, faces).expect("merged meshes are valid")
}
