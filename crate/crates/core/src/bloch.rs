//! Dirichlet eigenpairs of the soft inclusion and their mean vectors.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eigen::{smallest_eigenpairs, EigenOptions};
use crate::error::{HiconError, Result};
use crate::fem::{mean_rows, Constraints, DofMap, ElementOrder, HermitianSystem};
use crate::mesh::{RegionSel, TriMesh};
use crate::tensor::{ElasticTensor, Quasimomentum};

/// Relative gap below which neighbouring eigenvalues share a cluster id.
pub const CLUSTER_RTOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochData {
    /// Ascending.
    pub etas: Vec<f64>,
    /// `∫_{Y_soft} φ_k` for each mode.
    pub means: Vec<[f64; 2]>,
    pub cluster_ids: Vec<usize>,
    pub soft_area: f64,
    pub mesh_hash: String,
    /// Eigenvectors over the soft dof map; not persisted.
    #[serde(skip)]
    pub vectors: Vec<Vec<f64>>,
}

impl BlochData {
    /// Builds data directly from eigenvalues and means (synthetic inputs,
    /// cached artifacts).
    pub fn from_parts(etas: Vec<f64>, means: Vec<[f64; 2]>, soft_area: f64) -> Result<Self> {
        if etas.len() != means.len() || etas.is_empty() {
            return Err(HiconError::Config(
                "eigenvalue and mean lists must be nonempty and of equal length".into(),
            ));
        }
        if etas.windows(2).any(|w| w[1] < w[0]) || etas[0] <= 0.0 {
            return Err(HiconError::Config("eigenvalues must be positive and ascending".into()));
        }
        Ok(Self {
            cluster_ids: clusters(&etas),
            etas,
            means,
            soft_area,
            mesh_hash: String::new(),
            vectors: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.etas.len()
    }

    /// Noise floor below which a mean is treated as zero.
    pub fn mean_floor(&self) -> f64 {
        1e-8 * self.soft_area.sqrt()
    }

    pub fn contributes(&self, k: usize) -> bool {
        let [x, y] = self.means[k];
        x.hypot(y) >= self.mean_floor()
    }

    /// Eigenvalues of the contributing modes (the poles of B).
    pub fn poles(&self) -> Vec<f64> {
        (0..self.n())
            .filter(|&k| self.contributes(k))
            .map(|k| self.etas[k])
            .collect()
    }

    /// Copy truncated to the first `n` modes.
    pub fn truncated(&self, n: usize) -> BlochData {
        let n = n.min(self.n());
        BlochData {
            etas: self.etas[..n].to_vec(),
            means: self.means[..n].to_vec(),
            cluster_ids: self.cluster_ids[..n].to_vec(),
            soft_area: self.soft_area,
            mesh_hash: self.mesh_hash.clone(),
            vectors: self.vectors.iter().take(n).cloned().collect(),
        }
    }

    /// `Σ_{cluster} ⟨φ⟩⊗⟨φ⟩` per cluster id, in ascending id order.
    pub fn cluster_outer_products(&self) -> Vec<(usize, [[f64; 2]; 2])> {
        let mut out: Vec<(usize, [[f64; 2]; 2])> = Vec::new();
        for k in 0..self.n() {
            let c = self.cluster_ids[k];
            let m = self.means[k];
            if out.last().map(|o| o.0) != Some(c) {
                out.push((c, [[0.0; 2]; 2]));
            }
            let acc = &mut out.last_mut().unwrap().1;
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += m[i] * m[j];
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> Result<()> {
        writeln!(w, "# {header}")?;
        writeln!(w, "k,eta,mean_x,mean_y,cluster_id")?;
        for k in 0..self.n() {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{}",
                k + 1,
                self.etas[k],
                self.means[k][0],
                self.means[k][1],
                self.cluster_ids[k]
            )?;
        }
        Ok(())
    }
}

fn clusters(etas: &[f64]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(etas.len());
    let mut id = 0;
    for (k, &e) in etas.iter().enumerate() {
        if k > 0 && (e - etas[k - 1]) > CLUSTER_RTOL * e.abs() {
            id += 1;
        }
        ids.push(id);
    }
    ids
}

/// Soft-region Dirichlet space used by [`bloch_eigs`].
pub fn soft_dofmap(mesh: &TriMesh, order: ElementOrder) -> Result<DofMap> {
    if !mesh.regions.contains(&crate::mesh::Region::Soft) {
        return Err(HiconError::Assembly("mesh has no soft region".into()));
    }
    DofMap::new(mesh, order, RegionSel::Soft, Constraints::DIRICHLET)
}

/// The `n` smallest Dirichlet eigenpairs of the soft inclusion at `χ = 0`.
pub fn bloch_eigs(
    mesh: &TriMesh,
    a_soft: &ElasticTensor,
    n: usize,
    order: ElementOrder,
    opts: &EigenOptions,
) -> Result<BlochData> {
    if n == 0 {
        return Err(HiconError::Config("n_modes must be at least 1".into()));
    }
    a_soft.validate()?;
    let dofmap = Arc::new(soft_dofmap(mesh, order)?);
    let sys = HermitianSystem::<f64>::assemble(mesh, dofmap.clone(), a_soft, Quasimomentum::ZERO)?;
    let set = smallest_eigenpairs(&sys.k, &sys.m, n, None, opts)?;
    if set.values[0] <= 0.0 {
        return Err(HiconError::Convergence(format!(
            "first Dirichlet eigenvalue {} is not positive",
            set.values[0]
        )));
    }
    let means = eigen_means(mesh, &dofmap, &set.vectors)?;
    Ok(BlochData {
        cluster_ids: clusters(&set.values),
        etas: set.values,
        means,
        soft_area: mesh.soft_area(),
        mesh_hash: mesh.hash(),
        vectors: set.vectors,
    })
}

/// `∫ u` per component for each field, by exact quadrature.
pub fn eigen_means(mesh: &TriMesh, dofmap: &DofMap, vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let rows = mean_rows(mesh, dofmap)?;
    Ok(vectors
        .iter()
        .map(|x| {
            let f = |r: &Vec<f64>| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            [f(&rows[0]), f(&rows[1])]
        })
        .collect())
}

/// Normalized correlation `⟨u, R u⟩/⟨u, u⟩` (nodal values) between a field
/// and its mirror image across the line through `center` perpendicular to
/// coordinate axis `axis`. Close to ±1 for modes of a mirror-symmetric mesh.
pub fn reflection_parity(dofmap: &DofMap, center: [f64; 2], axis: usize, x: &[f64]) -> Result<f64> {
    let vals = dofmap.expand(x);
    let key = |p: [f64; 2]| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
    let index: HashMap<(i64, i64), usize> = dofmap.nodes.iter().enumerate().map(|(i, &p)| (key(p), i)).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for (n, &p) in dofmap.nodes.iter().enumerate() {
        let mut q = p;
        q[axis] = 2.0 * center[axis] - p[axis];
        let Some(&m) = index.get(&key(q)) else {
            return Err(HiconError::Mesh(format!("node {n} has no mirror image")));
        };
        let mut r = vals[m];
        r[axis] = -r[axis];
        num += vals[n][0] * r[0] + vals[n][1] * r[1];
        den += vals[n][0] * vals[n][0] + vals[n][1] * vals[n][1];
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_cell_mesh, Geometry};

    fn coarse() -> TriMesh {
        build_unit_cell_mesh(&Geometry::worked_example()).unwrap()
    }

    #[test]
    fn lame_scaling_scales_every_eta() {
        let m = coarse();
        let opts = EigenOptions::default();
        let a = ElasticTensor::isotropic(1.0, 0.1);
        let b1 = bloch_eigs(&m, &a, 6, ElementOrder::P1, &opts).unwrap();
        let b3 = bloch_eigs(&m, &a.scaled(3.0), 6, ElementOrder::P1, &opts).unwrap();
        for (x, y) in b1.etas.iter().zip(&b3.etas) {
            assert!((3.0 * x - y).abs() < 1e-9 * y);
        }
    }

    #[test]
    fn constant_field_mean_is_area_times_value() {
        let m = coarse();
        let d = DofMap::new(&m, ElementOrder::P2, RegionSel::Soft, Constraints::default()).unwrap();
        let c = [0.7, -1.2];
        let x = d.interpolate(|_| c);
        let mean = eigen_means(&m, &d, &[x]).unwrap()[0];
        let area = m.soft_area();
        assert!((mean[0] - area * c[0]).abs() < 1e-12 && (mean[1] - area * c[1]).abs() < 1e-12);
    }

    #[test]
    fn modes_are_normalized_and_means_bounded() {
        let m = coarse();
        let b = bloch_eigs(
            &m,
            &ElasticTensor::isotropic(1.0, 0.1),
            11,
            ElementOrder::P2,
            &EigenOptions::default(),
        )
        .unwrap();
        assert!(b.etas[0] > 0.0);
        let bound = b.soft_area.sqrt() * (1.0 + 1e-8);
        for mean in &b.means {
            assert!(mean[0].abs() <= bound && mean[1].abs() <= bound);
        }
    }

    #[test]
    fn clustering_groups_close_values() {
        assert_eq!(clusters(&[1.0, 1.001, 2.0, 2.5, 2.51]), vec![0, 0, 1, 2, 2]);
    }
}
