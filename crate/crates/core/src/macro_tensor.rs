//! Perforated-cell corrector problems and the macroscopic tensor.
//!
//! For a constant strain `E` the corrector `u_E` is periodic, has zero mean
//! on the stiff region and satisfies
//! `∫_{Y_stiff} A(sym∇u_E + E) : sym∇v = 0` for every periodic `v`.
//! The tensor is then the energy form
//! `A_macro E_i : E_j = ∫ A(sym∇u_i + E_i) : (sym∇u_j + E_j)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HiconError, Result};
use crate::fem::{assemble_stiffness, assemble_strain_load, mean_rows, Constraints, DofMap, ElementOrder};
use crate::mesh::{RegionSel, TriMesh};
use crate::small::{sym3_eigenvalues, Mat3};
use crate::sparse::{CsrMatrix, SparseSolver};
use crate::tensor::{strain_basis, to_voigt, ElasticTensor, Quasimomentum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroTensor {
    /// Voigt matrix on `(e11, e22, √2·e12)`.
    pub voigt: Mat3,
    /// Smallest Voigt eigenvalue.
    pub margin: f64,
    /// `max |F_ij − F_ji| / max |F|` for the flux form
    /// `F_ij = ∫ A(sym∇u_i + E_i) : E_j`, which is symmetric only when the
    /// correctors are accurate.
    pub symmetry_residual: f64,
    pub stiff_area: f64,
    pub mesh_hash: String,
}

impl MacroTensor {
    pub fn tensor(&self) -> ElasticTensor {
        ElasticTensor { voigt: self.voigt }
    }

    pub fn max_entry(&self) -> f64 {
        self.voigt.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest normal/shear coupling relative to the largest entry.
    pub fn shear_coupling(&self) -> f64 {
        self.voigt[0][2].abs().max(self.voigt[1][2].abs()) / self.max_entry()
    }

    pub fn write_json<W: Write>(&self, w: W, tool_version: &str, config_hash: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            tool_version: &'a str,
            config_hash: &'a str,
            voigt: Mat3,
            margin: f64,
            symmetry_residual: f64,
            stiff_area: f64,
            mesh_hash: &'a str,
        }
        serde_json::to_writer_pretty(
            w,
            &Out {
                tool_version,
                config_hash,
                voigt: self.voigt,
                margin: self.margin,
                symmetry_residual: self.symmetry_residual,
                stiff_area: self.stiff_area,
                mesh_hash: &self.mesh_hash,
            },
        )?;
        Ok(())
    }
}

/// Factorized cell problem.
pub struct CellProblem {
    pub dofmap: DofMap,
    pub a: ElasticTensor,
    pub k: CsrMatrix<f64>,
    mean: [Vec<f64>; 2],
    /// Interpolants of the unit translations.
    translations: [Vec<f64>; 2],
    /// Free DOFs other than the two pinned ones.
    kept: Vec<usize>,
    solver: SparseSolver<f64>,
    stiff_area: f64,
    h_min: f64,
    mesh_hash: String,
}

/// One corrector solution.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub strain: [f64; 3],
    pub u: Vec<f64>,
    /// `F_i = ∫ A E : sym∇φ_i`.
    pub load: Vec<f64>,
    /// `max |K u + F|` relative to the load size.
    pub residual: f64,
    /// Lagrange multipliers of the mean constraints.
    pub multipliers: [f64; 2],
}

impl CellProblem {
    pub fn new(mesh: &TriMesh, a: &ElasticTensor, order: ElementOrder) -> Result<Self> {
        a.validate()?;
        let dofmap = DofMap::new(mesh, order, RegionSel::Stiff, Constraints::PERIODIC_MEAN_ZERO)?;
        let k: CsrMatrix<f64> = assemble_stiffness(mesh, &dofmap, a, Quasimomentum::ZERO)?;
        let mean = mean_rows(mesh, &dofmap)?;
        let n = dofmap.n_free();
        // translations span the kernel; pinning one node removes them and the
        // zero-mean representative is recovered afterwards
        let pin = mesh.corner_class[0];
        let pinned: Vec<usize> = (0..2).filter_map(|c| dofmap.dof(pin, c)).collect();
        if pinned.len() != 2 {
            return Err(HiconError::Assembly("cell corner carries no free DOFs".into()));
        }
        let kept: Vec<usize> = (0..n).filter(|d| !pinned.contains(d)).collect();
        let solver = SparseSolver::cholesky(&k.submatrix(&kept, &kept))
            .map_err(|e| HiconError::Solve(format!("cell problem: {e}")))?;
        let translations = [dofmap.interpolate(|_| [1.0, 0.0]), dofmap.interpolate(|_| [0.0, 1.0])];
        Ok(Self {
            dofmap,
            a: *a,
            k,
            mean,
            translations,
            kept,
            solver,
            stiff_area: mesh.region_area(RegionSel::Stiff),
            h_min: (0..mesh.n_triangles())
                .map(|t| mesh.area_of(t).sqrt())
                .fold(f64::INFINITY, f64::min),
            mesh_hash: mesh.hash(),
        })
    }

    /// Corrector for a Voigt strain.
    pub fn solve(&self, mesh: &TriMesh, strain: [f64; 3]) -> Result<Corrector> {
        let load = assemble_strain_load(mesh, &self.dofmap, &self.a, &strain)?;
        let n = self.dofmap.n_free();
        let rhs: Vec<f64> = self.kept.iter().map(|&d| -load[d]).collect();
        let sol = self.solver.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(HiconError::Solve("cell problem produced non-finite values".into()));
        }
        let mut u = vec![0.0; n];
        for (&d, &v) in self.kept.iter().zip(&sol) {
            u[d] = v;
        }
        let shift = self.mean_of(&u);
        for c in 0..2 {
            let s = shift[c] / self.stiff_area;
            for (ui, ti) in u.iter_mut().zip(&self.translations[c]) {
                *ui -= s * ti;
            }
        }
        // multipliers of the mean constraints, fixed by testing the
        // saddle system with a translation
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let multipliers = [
            -dot(&self.translations[0], &load) / self.stiff_area,
            -dot(&self.translations[1], &load) / self.stiff_area,
        ];
        let ku = self.k.mul_vec(&u);
        // a vanishing load (homogeneous cell) still needs a reference size
        let ae = self.a.apply(&strain);
        let typical = ae.iter().map(|v| v * v).sum::<f64>().sqrt() * self.h_min;
        let scale = load.iter().fold(typical, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let residual = ku.iter().zip(&load).fold(0.0f64, |m, (a, b)| m.max((a + b).abs())) / scale;
        Ok(Corrector {
            strain,
            u,
            load,
            residual,
            multipliers,
        })
    }

    /// `∫ u` per component.
    pub fn mean_of(&self, u: &[f64]) -> [f64; 2] {
        let f = |r: &Vec<f64>| r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        [f(&self.mean[0]), f(&self.mean[1])]
    }

    /// `∫ A(sym∇u_i + E_i) : (sym∇u_j + E_j)`.
    pub fn energy(&self, ci: &Corrector, cj: &Corrector) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let kui = self.k.mul_vec(&ci.u);
        dot(&cj.u, &kui)
            + dot(&cj.u, &ci.load)
            + dot(&ci.u, &cj.load)
            + self.stiff_area * self.a.energy(&ci.strain, &cj.strain)
    }

    /// `∫ A(sym∇u_i + E_i) : E_j`.
    pub fn flux(&self, ci: &Corrector, cj: &Corrector) -> f64 {
        let d: f64 = ci.u.iter().zip(&cj.load).map(|(x, y)| x * y).sum();
        d + self.stiff_area * self.a.energy(&ci.strain, &cj.strain)
    }
}

/// Corrector for one strain (convenience wrapper around [`CellProblem`]).
pub fn solve_corrector(
    mesh: &TriMesh,
    a_stiff: &ElasticTensor,
    strain: &[[f64; 2]; 2],
    order: ElementOrder,
) -> Result<Corrector> {
    CellProblem::new(mesh, a_stiff, order)?.solve(mesh, to_voigt(strain))
}

/// Assembles the macroscopic tensor from the three basis correctors.
pub fn assemble_macro(mesh: &TriMesh, a_stiff: &ElasticTensor, order: ElementOrder) -> Result<MacroTensor> {
    let cell = CellProblem::new(mesh, a_stiff, order)?;
    let basis = strain_basis();
    let correctors: Vec<Corrector> = basis
        .par_iter()
        .map(|e| cell.solve(mesh, to_voigt(e)))
        .collect::<Result<_>>()?;
    let worst = correctors.iter().map(|c| c.residual).fold(0.0, f64::max);
    if worst > 1e-8 {
        return Err(HiconError::Solve(format!("corrector residual {worst:e} too large")));
    }
    let mut voigt = [[0.0; 3]; 3];
    let mut flux = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            voigt[i][j] = cell.energy(&correctors[i], &correctors[j]);
            flux[i][j] = cell.flux(&correctors[i], &correctors[j]);
        }
    }
    let fmax = flux.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut sym = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            sym = sym.max((flux[i][j] - flux[j][i]).abs() / fmax);
        }
    }
    // the energy form is symmetric up to summation order; remove that noise
    for i in 0..3 {
        for j in (i + 1)..3 {
            let avg = 0.5 * (voigt[i][j] + voigt[j][i]);
            voigt[i][j] = avg;
            voigt[j][i] = avg;
        }
    }
    let margin = sym3_eigenvalues(&voigt)[0];
    if !(margin > 0.0) {
        return Err(HiconError::Solve(format!(
            "macroscopic tensor is not positive definite (min eigenvalue {margin:e})"
        )));
    }
    Ok(MacroTensor {
        voigt,
        margin,
        symmetry_residual: sym,
        stiff_area: cell.stiff_area,
        mesh_hash: cell.mesh_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_cell_mesh, Geometry};

    fn mesh() -> TriMesh {
        build_unit_cell_mesh(&Geometry::worked_example()).unwrap()
    }

    #[test]
    fn no_inclusion_returns_the_stiff_tensor() {
        let m = mesh().without_inclusion();
        let a = ElasticTensor::isotropic(1.0, 0.1);
        for order in [ElementOrder::P1, ElementOrder::P2] {
            let am = assemble_macro(&m, &a, order).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((am.voigt[i][j] - a.voigt[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn example_geometry_tensor_is_symmetric_and_positive() {
        let m = mesh();
        let a = ElasticTensor::isotropic(1.0, 0.1);
        let am = assemble_macro(&m, &a, ElementOrder::P2).unwrap();
        assert!(am.symmetry_residual < 1e-10);
        assert!(am.margin > 0.0);
        assert!(am.shear_coupling() < 1e-6);
        // energy bound by the trivial candidate u = 0
        for e in strain_basis() {
            let v = to_voigt(&e);
            let q: f64 = (0..3)
                .map(|i| (0..3).map(|j| v[i] * am.voigt[i][j] * v[j]).sum::<f64>())
                .sum();
            assert!(q < am.stiff_area * a.energy(&v, &v));
        }
    }

    #[test]
    fn corrector_is_linear_in_the_strain_and_mean_free() {
        let m = mesh();
        let a = ElasticTensor::isotropic(1.0, 0.1);
        let cell = CellProblem::new(&m, &a, ElementOrder::P2).unwrap();
        let e = [0.3, -0.2, 0.5];
        let c1 = cell.solve(&m, e).unwrap();
        let c2 = cell.solve(&m, e.map(|v| 2.5 * v)).unwrap();
        let scale = c1.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in c1.u.iter().zip(&c2.u) {
            assert!((2.5 * x - y).abs() <= 1e-10 * scale.max(1.0));
        }
        let mean = cell.mean_of(&c1.u);
        assert!(mean[0].abs() < 1e-14 && mean[1].abs() < 1e-14);
        assert!(c1.residual < 1e-10);
        assert!(c1.multipliers.iter().all(|l| l.abs() < 1e-10));
    }
}
