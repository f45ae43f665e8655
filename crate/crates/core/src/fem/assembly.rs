//! Global assembly of the shifted elasticity form, the mass matrices and
//! the mean-value constraint rows.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{HiconError, Result};
use crate::fem::dofmap::DofMap;
use crate::fem::element::{shape, ElementOrder, TriGeom};
use crate::mesh::{RegionSel, TriMesh};
use crate::scalar::{Scalar, C64};
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::tensor::{ElasticTensor, Quasimomentum};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const CHUNK: usize = 2048;

/// Voigt image of the vector `v` placed in displacement component `c`:
/// `G₁(v) = (v₁, 0, v₂/√2)`, `G₂(v) = (0, v₂, v₁/√2)`.
fn g(c: usize, v: [f64; 2]) -> [f64; 3] {
    if c == 0 {
        [v[0], 0.0, v[1] * FRAC_1_SQRT_2]
    } else {
        [0.0, v[1], v[0] * FRAC_1_SQRT_2]
    }
}

fn tri_geom(mesh: &TriMesh, t: usize) -> TriGeom {
    let [a, b, c] = mesh.triangles[t];
    TriGeom::new([mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]])
}

/// Element matrix of `∫ A(sym∇ + iX_χ)φ_j : conj((sym∇ + iX_χ)φ_i)`, local
/// DOF `2·node + component`.
pub fn element_stiffness(order: ElementOrder, geom: &TriGeom, a: &ElasticTensor, chi: [f64; 2]) -> Vec<Vec<C64>> {
    let n = 2 * order.nloc();
    let mut k = vec![vec![C64::new(0.0, 0.0); n]; n];
    let mut b = vec![[C64::new(0.0, 0.0); 3]; n];
    let mut db = vec![[C64::new(0.0, 0.0); 3]; n];
    for &(l, w) in order.quadrature() {
        let (nv, dn) = shape(order, geom, l);
        for node in 0..order.nloc() {
            let chin = [chi[0] * nv[node], chi[1] * nv[node]];
            for c in 0..2 {
                let re = g(c, dn[node]);
                let im = g(c, chin);
                let i = 2 * node + c;
                b[i] = [0, 1, 2].map(|p| C64::new(re[p], im[p]));
                db[i] = a.apply(&b[i]);
            }
        }
        let s = w * geom.area;
        for i in 0..n {
            for j in 0..n {
                let v: C64 = (0..3).map(|p| b[i][p].conj() * db[j][p]).sum();
                k[i][j] += v * s;
            }
        }
    }
    k
}

/// Scalar element mass `∫ N_i N_j`.
pub fn element_mass(order: ElementOrder, geom: &TriGeom) -> Vec<Vec<f64>> {
    let n = order.nloc();
    let mut m = vec![vec![0.0; n]; n];
    for &(l, w) in order.quadrature() {
        let (nv, _) = shape(order, geom, l);
        for i in 0..n {
            for j in 0..n {
                m[i][j] += w * geom.area * nv[i] * nv[j];
            }
        }
    }
    m
}

fn check(mesh: &TriMesh, dofmap: &DofMap) -> Result<()> {
    if dofmap.n_nodes() < mesh.n_vertices() || dofmap.elements.iter().any(|&t| t >= mesh.n_triangles()) {
        return Err(HiconError::Assembly("dof map does not belong to this mesh".into()));
    }
    Ok(())
}

/// Stiffness on the region selected by the dof map, with constraints
/// applied by elimination. The real scalar type requires `χ = 0`.
pub fn assemble_stiffness<T: Scalar>(
    mesh: &TriMesh,
    dofmap: &DofMap,
    a: &ElasticTensor,
    chi: Quasimomentum,
) -> Result<CsrMatrix<T>> {
    check(mesh, dofmap)?;
    if !T::IS_COMPLEX && !chi.is_zero() {
        return Err(HiconError::Assembly(
            "a nonzero quasimomentum needs complex assembly".into(),
        ));
    }
    let order = dofmap.order;
    let nl = 2 * order.nloc();
    let n = dofmap.n_free();
    let mut tb = TripletBuilder::with_capacity(n, n, dofmap.elements.len() * nl * nl);
    for chunk in dofmap.elements.chunks(CHUNK) {
        let local: Vec<Vec<Vec<C64>>> = chunk
            .par_iter()
            .map(|&t| element_stiffness(order, &tri_geom(mesh, t), a, chi.0))
            .collect();
        for (&t, ke) in chunk.iter().zip(&local) {
            let dofs = local_dofs(dofmap, t);
            for (i, di) in dofs.iter().enumerate() {
                let Some(di) = di else { continue };
                for (j, dj) in dofs.iter().enumerate() {
                    if let Some(dj) = dj {
                        tb.push(*di, *dj, T::from_c64(ke[i][j]));
                    }
                }
            }
        }
    }
    Ok(tb.build())
}

fn local_dofs(dofmap: &DofMap, t: usize) -> Vec<Option<usize>> {
    dofmap
        .element_nodes(t)
        .iter()
        .flat_map(|&node| [dofmap.dof(node, 0), dofmap.dof(node, 1)])
        .collect()
}

/// Vector mass matrix (identity in the component index).
pub fn assemble_mass(mesh: &TriMesh, dofmap: &DofMap) -> Result<CsrMatrix<f64>> {
    check(mesh, dofmap)?;
    let order = dofmap.order;
    let n = dofmap.n_free();
    let nl = order.nloc();
    let mut tb = TripletBuilder::with_capacity(n, n, dofmap.elements.len() * 2 * nl * nl);
    for &t in &dofmap.elements {
        let me = element_mass(order, &tri_geom(mesh, t));
        let nodes = dofmap.element_nodes(t);
        for c in 0..2 {
            for (i, &ni) in nodes.iter().enumerate() {
                let Some(di) = dofmap.dof(ni, c) else { continue };
                for (j, &nj) in nodes.iter().enumerate() {
                    if let Some(dj) = dofmap.dof(nj, c) {
                        tb.push(di, dj, me[i][j]);
                    }
                }
            }
        }
    }
    Ok(tb.build())
}

/// `∫ N_i` for each free DOF, one row per displacement component.
pub fn mean_rows(mesh: &TriMesh, dofmap: &DofMap) -> Result<[Vec<f64>; 2]> {
    check(mesh, dofmap)?;
    let order = dofmap.order;
    let mut rows = [vec![0.0; dofmap.n_free()], vec![0.0; dofmap.n_free()]];
    for &t in &dofmap.elements {
        let geom = tri_geom(mesh, t);
        let mut integral = vec![0.0; order.nloc()];
        for &(l, w) in order.quadrature() {
            let (nv, _) = shape(order, &geom, l);
            for (acc, v) in integral.iter_mut().zip(&nv) {
                *acc += w * geom.area * v;
            }
        }
        for (&node, v) in dofmap.element_nodes(t).iter().zip(&integral) {
            for (c, row) in rows.iter_mut().enumerate() {
                if let Some(d) = dofmap.dof(node, c) {
                    row[d] += v;
                }
            }
        }
    }
    Ok(rows)
}

/// Load `F_i = ∫ A E : sym∇φ_i` of a constant Voigt strain `E`.
pub fn assemble_strain_load(mesh: &TriMesh, dofmap: &DofMap, a: &ElasticTensor, e: &[f64; 3]) -> Result<Vec<f64>> {
    check(mesh, dofmap)?;
    let order = dofmap.order;
    let ae = a.apply(e);
    let mut f = vec![0.0; dofmap.n_free()];
    for &t in &dofmap.elements {
        let geom = tri_geom(mesh, t);
        let nodes = dofmap.element_nodes(t);
        for &(l, w) in order.quadrature() {
            let (_, dn) = shape(order, &geom, l);
            for (i, &node) in nodes.iter().enumerate() {
                for c in 0..2 {
                    if let Some(d) = dofmap.dof(node, c) {
                        let b = g(c, dn[i]);
                        f[d] += w * geom.area * (ae[0] * b[0] + ae[1] * b[1] + ae[2] * b[2]);
                    }
                }
            }
        }
    }
    Ok(f)
}

/// Interface mass `∫_Γ g·conj(h)` on the free interface DOFs.
#[derive(Debug, Clone)]
pub struct InterfaceMass {
    /// Global free DOFs in the order used by `mass`.
    pub dofs: Vec<usize>,
    pub mass: CsrMatrix<f64>,
}

pub fn assemble_boundary_mass(mesh: &TriMesh, dofmap: &DofMap) -> Result<InterfaceMass> {
    check(mesh, dofmap)?;
    if dofmap.interface_segments.is_empty() {
        return Err(HiconError::Assembly("mesh has no interface edges".into()));
    }
    let dofs = dofmap.interface_dofs();
    if dofs.is_empty() {
        return Err(HiconError::Assembly(
            "interface carries no free degrees of freedom".into(),
        ));
    }
    let pos = |d: usize| dofs.binary_search(&d).ok();
    let n = dofs.len();
    let mut tb = TripletBuilder::new(n, n);
    for seg in &dofmap.interface_segments {
        let (p, q) = (dofmap.nodes[seg[0]], dofmap.nodes[seg[1]]);
        let me = dofmap.order.edge_mass((q[0] - p[0]).hypot(q[1] - p[1]));
        for c in 0..2 {
            for (i, &ni) in seg.iter().enumerate() {
                let Some(di) = dofmap.dof(ni, c).and_then(pos) else {
                    continue;
                };
                for (j, &nj) in seg.iter().enumerate() {
                    if let Some(dj) = dofmap.dof(nj, c).and_then(pos) {
                        tb.push(di, dj, me[i][j]);
                    }
                }
            }
        }
    }
    Ok(InterfaceMass { dofs, mass: tb.build() })
}

/// Stiffness/mass pencil over one dof map.
#[derive(Debug, Clone)]
pub struct HermitianSystem<T: Scalar> {
    pub k: CsrMatrix<T>,
    pub m: CsrMatrix<f64>,
    pub dofmap: Arc<DofMap>,
    pub chi: Quasimomentum,
    pub region: RegionSel,
}

impl<T: Scalar> HermitianSystem<T> {
    pub fn assemble(mesh: &TriMesh, dofmap: Arc<DofMap>, a: &ElasticTensor, chi: Quasimomentum) -> Result<Self> {
        let k = assemble_stiffness(mesh, &dofmap, a, chi)?;
        let m = assemble_mass(mesh, &dofmap)?;
        Ok(Self {
            k,
            m,
            region: dofmap.region,
            dofmap,
            chi,
        })
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// Mass matrix in the stiffness scalar type.
    pub fn mass(&self) -> CsrMatrix<T> {
        self.m.map(T::from_real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::dofmap::Constraints;
    use crate::mesh::{build_unit_cell_mesh, Geometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh() -> TriMesh {
        let mut g = Geometry::worked_example();
        g.target_h = 0.1;
        build_unit_cell_mesh(&g).unwrap()
    }

    /// Degree-5 seven-point rule, independent of the assembly rules.
    fn rule7() -> Vec<([f64; 3], f64)> {
        let (a1, b1) = (0.059_715_871_789_769_820, 0.470_142_064_105_115_090);
        let (a2, b2) = (0.797_426_985_353_087_322, 0.101_286_507_323_456_339);
        let (w0, w1, w2) = (0.225, 0.132_394_152_788_506_181, 0.125_939_180_544_827_153);
        let mut r = vec![([1.0 / 3.0; 3], w0)];
        for (a, b, w) in [(a1, b1, w1), (a2, b2, w2)] {
            r.push(([a, b, b], w));
            r.push(([b, a, b], w));
            r.push(([b, b, a], w));
        }
        r
    }

    /// Hand-coded P2 basis on the reference triangle `(0,0), (1,0), (0,1)`.
    fn ref_p2(x: f64, y: f64) -> ([f64; 6], [[f64; 2]; 6]) {
        let l0 = 1.0 - x - y;
        let n = [
            l0 * (2.0 * l0 - 1.0),
            x * (2.0 * x - 1.0),
            y * (2.0 * y - 1.0),
            4.0 * l0 * x,
            4.0 * x * y,
            4.0 * y * l0,
        ];
        let d = [
            [1.0 - 4.0 * l0, 1.0 - 4.0 * l0],
            [4.0 * x - 1.0, 0.0],
            [0.0, 4.0 * y - 1.0],
            [4.0 * (l0 - x), -4.0 * x],
            [4.0 * y, 4.0 * x],
            [-4.0 * y, 4.0 * (l0 - y)],
        ];
        (n, d)
    }

    /// Index-form oracle: `Σ A_ijkl (∂_l φ_b^k + iχ_l φ_b^k)·conj(∂_j φ_a^i + iχ_j φ_a^i)`
    /// with the symmetrization carried by the tensor's minor symmetry.
    fn oracle(a: &ElasticTensor, chi: [f64; 2]) -> Vec<Vec<C64>> {
        let mut k = vec![vec![C64::new(0.0, 0.0); 12]; 12];
        for (l, w) in rule7() {
            let (n, d) = ref_p2(l[1], l[2]);
            let grad = |node: usize, j: usize| C64::new(d[node][j], chi[j] * n[node]);
            for na in 0..6 {
                for ia in 0..2 {
                    for nb in 0..6 {
                        for kb in 0..2 {
                            let mut s = C64::new(0.0, 0.0);
                            for j in 0..2 {
                                for ll in 0..2 {
                                    s += a.component(ia, j, kb, ll) * grad(nb, ll) * grad(na, j).conj();
                                }
                            }
                            k[2 * na + ia][2 * nb + kb] += s * (0.5 * w);
                        }
                    }
                }
            }
        }
        k
    }

    #[test]
    fn reference_element_matches_index_oracle() {
        let a = ElasticTensor::isotropic(1.0, 0.1);
        let geom = TriGeom::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        for chi in [[0.0, 0.0], [0.7, -1.3]] {
            let k = element_stiffness(ElementOrder::P2, &geom, &a, chi);
            let o = oracle(&a, chi);
            for i in 0..12 {
                for j in 0..12 {
                    assert!((k[i][j] - o[i][j]).norm() < 1e-12, "chi {chi:?} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn p1_element_matches_constant_gradient_formula() {
        let a = ElasticTensor::isotropic(1.0, 0.1);
        let p = [[0.2, 0.1], [0.9, 0.25], [0.3, 0.8]];
        let geom = TriGeom::new(p);
        let k = element_stiffness(ElementOrder::P1, &geom, &a, [0.0, 0.0]);
        for na in 0..3 {
            for ia in 0..2 {
                for nb in 0..3 {
                    for kb in 0..2 {
                        let mut s = 0.0;
                        for j in 0..2 {
                            for l in 0..2 {
                                s += a.component(ia, j, kb, l) * geom.grad_l[nb][l] * geom.grad_l[na][j];
                            }
                        }
                        assert!((k[2 * na + ia][2 * nb + kb].re - s * geom.area).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn stiffness_is_hermitian_and_time_reversal_symmetric() {
        let m = mesh();
        let a = ElasticTensor::isotropic(1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for order in [ElementOrder::P1, ElementOrder::P2] {
            let d = DofMap::new(&m, order, RegionSel::All, Constraints::PERIODIC).unwrap();
            let chi = Quasimomentum::new([rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
            let k: CsrMatrix<C64> = assemble_stiffness(&m, &d, &a, chi).unwrap();
            assert!(k.hermitian_residual() <= 1e-12 * k.max_abs());
            let km: CsrMatrix<C64> = assemble_stiffness(&m, &d, &a, chi.neg()).unwrap();
            let diff = km.add_scaled(C64::new(-1.0, 0.0), &k.conj());
            assert!(diff.max_abs() <= 1e-12 * k.max_abs());
        }
    }

    #[test]
    fn rigid_translations_are_in_the_kernel() {
        let m = mesh();
        let a = ElasticTensor::isotropic(1.0, 0.1);
        for order in [ElementOrder::P1, ElementOrder::P2] {
            let d = DofMap::new(&m, order, RegionSel::Stiff, Constraints::PERIODIC).unwrap();
            let k: CsrMatrix<f64> = assemble_stiffness(&m, &d, &a, Quasimomentum::ZERO).unwrap();
            let u = d.interpolate(|_| [0.3, -1.7]);
            let ku = k.mul_vec(&u);
            assert!(ku.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-10 * k.max_abs());
        }
    }

    #[test]
    fn real_assembly_rejects_nonzero_chi() {
        let m = mesh();
        let d = DofMap::new(&m, ElementOrder::P1, RegionSel::All, Constraints::PERIODIC).unwrap();
        let a = ElasticTensor::isotropic(1.0, 0.1);
        let r = assemble_stiffness::<f64>(&m, &d, &a, Quasimomentum::new([0.1, 0.0]));
        assert!(matches!(r, Err(HiconError::Assembly(_))));
    }

    #[test]
    fn mass_reproduces_region_areas() {
        let m = mesh();
        for order in [ElementOrder::P1, ElementOrder::P2] {
            for sel in [RegionSel::All, RegionSel::Soft, RegionSel::Stiff] {
                let d = DofMap::new(&m, order, sel, Constraints::default()).unwrap();
                let mass = assemble_mass(&m, &d).unwrap();
                let e = d.interpolate(|_| [1.0, 0.0]);
                let area = mass.form(&e, &e);
                assert!((area - m.region_area(sel)).abs() < 1e-12, "{order:?} {sel:?}");
                let rows = mean_rows(&m, &d).unwrap();
                assert!((rows[1].iter().sum::<f64>() - m.region_area(sel)).abs() < 1e-12);
            }
            let d = DofMap::new(&m, order, RegionSel::All, Constraints::PERIODIC).unwrap();
            let mass = assemble_mass(&m, &d).unwrap();
            let e = d.interpolate(|_| [0.0, 1.0]);
            assert!((mass.form(&e, &e) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_mass_totals_interface_length() {
        let m = mesh();
        for order in [ElementOrder::P1, ElementOrder::P2] {
            let d = DofMap::new(&m, order, RegionSel::Stiff, Constraints::PERIODIC).unwrap();
            let im = assemble_boundary_mass(&m, &d).unwrap();
            let c = [2.0, -0.5];
            let g: Vec<f64> = im.dofs.iter().map(|&k| c[k % 2]).collect();
            let expect = m.interface_length() * (c[0] * c[0] + c[1] * c[1]);
            assert!((im.mass.form(&g, &g) - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn interface_length_converges_to_ellipse_perimeter() {
        let m = mesh().refine().unwrap();
        let p = m.ellipse.unwrap().perimeter();
        assert!((m.interface_length() - p).abs() / p < 5e-3);
    }
}
