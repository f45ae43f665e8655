//! Fixtures shared by the kernel benchmarks.

use hicon_core::{build_unit_cell_mesh, BlochData, ElasticTensor, Geometry, Result, TriMesh};

/// The worked-example cell at `level` refinements.
pub fn example_mesh(level: usize) -> Result<TriMesh> {
    build_unit_cell_mesh(&Geometry::worked_example())?.refined(level)
}

pub fn example_material() -> ElasticTensor {
    ElasticTensor::isotropic(1.0, 0.1)
}

/// Eleven modes with alternating polarisation, shaped like a converged
/// inclusion spectrum.
pub fn synthetic_bloch() -> BlochData {
    let etas: Vec<f64> = (0..11).map(|k| 1500.0 + 550.0 * k as f64).collect();
    let means = (0..11)
        .map(|k| match k % 3 {
            0 => [0.0, 0.0],
            1 => [0.02, 0.0],
            _ => [0.0, 0.018],
        })
        .collect();
    BlochData::from_parts(etas, means, 0.0057).expect("valid synthetic spectrum")
}
