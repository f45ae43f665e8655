//! Degree-of-freedom numbering with periodic identification and Dirichlet
//! elimination.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{HiconError, Result};
use crate::fem::element::ElementOrder;
use crate::mesh::{RegionSel, TriMesh, COORD_TOL};
use crate::scalar::Scalar;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Constraints {
    /// Identify opposite sides of the cell.
    pub periodic: bool,
    /// Eliminate every node on the interface.
    pub dirichlet_interface: bool,
    /// Two Lagrange rows enforcing zero mean per component.
    pub mean_zero: bool,
}

impl Constraints {
    pub const DIRICHLET: Constraints = Constraints {
        periodic: false,
        dirichlet_interface: true,
        mean_zero: false,
    };
    pub const PERIODIC: Constraints = Constraints {
        periodic: true,
        dirichlet_interface: false,
        mean_zero: false,
    };
    pub const PERIODIC_MEAN_ZERO: Constraints = Constraints {
        periodic: true,
        dirichlet_interface: false,
        mean_zero: true,
    };
}

/// Vector DOFs are numbered `2·slot + component` where `slot` indexes the
/// free master nodes.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub order: ElementOrder,
    pub region: RegionSel,
    pub constraints: Constraints,
    /// Coordinates of all scalar nodes: mesh vertices first, then edge
    /// midpoints for P2.
    pub nodes: Vec<[f64; 2]>,
    /// Triangles taking part in assembly.
    pub elements: Vec<usize>,
    elem_nodes: Vec<usize>,
    /// Scalar nodes of each interface edge, `[start, end, (mid)]`.
    pub interface_segments: Vec<Vec<usize>>,
    slot: Vec<usize>,
    n_slots: usize,
}

impl DofMap {
    pub fn new(mesh: &TriMesh, order: ElementOrder, region: RegionSel, constraints: Constraints) -> Result<Self> {
        let nloc = order.nloc();
        let mut nodes = mesh.vertices.clone();
        let mut elem_nodes = Vec::with_capacity(nloc * mesh.n_triangles());
        let mut edge_node: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &mesh.triangles {
            elem_nodes.extend_from_slice(tri);
            if order == ElementOrder::P2 {
                for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                    let (a, b) = (tri[i].min(tri[j]), tri[i].max(tri[j]));
                    let id = *edge_node.entry((a, b)).or_insert_with(|| {
                        let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
                        nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                        nodes.len() - 1
                    });
                    elem_nodes.push(id);
                }
            }
        }
        let mut interface_segments = Vec::with_capacity(mesh.interface_edges.len());
        for &[a, b] in &mesh.interface_edges {
            let mut seg = vec![a, b];
            if order == ElementOrder::P2 {
                let id = edge_node
                    .get(&(a.min(b), a.max(b)))
                    .ok_or_else(|| HiconError::Assembly(format!("interface edge ({a},{b}) is not a mesh edge")))?;
                seg.push(*id);
            }
            interface_segments.push(seg);
        }

        let elements: Vec<usize> = (0..mesh.n_triangles())
            .filter(|&t| region.contains(mesh.regions[t]))
            .collect();
        if elements.is_empty() {
            return Err(HiconError::Assembly(format!("region {region:?} has no triangles")));
        }

        let nn = nodes.len();
        let mut active = vec![false; nn];
        for &t in &elements {
            for &n in &elem_nodes[t * nloc..(t + 1) * nloc] {
                active[n] = true;
            }
        }
        let mut master: Vec<usize> = (0..nn).collect();
        if constraints.periodic {
            let key = |p: [f64; 2]| {
                let w = |v: f64| if (v - 1.0).abs() <= COORD_TOL { 0.0 } else { v };
                let s = (1u64 << 40) as f64;
                ((w(p[0]) * s).round() as i64, (w(p[1]) * s).round() as i64)
            };
            let on_boundary = |p: [f64; 2]| p.iter().any(|&v| v.abs() <= COORD_TOL || (v - 1.0).abs() <= COORD_TOL);
            let mut first: HashMap<(i64, i64), usize> = HashMap::new();
            for (n, &p) in nodes.iter().enumerate() {
                if on_boundary(p) {
                    master[n] = *first.entry(key(p)).or_insert(n);
                }
            }
        }
        let mut dirichlet = vec![false; nn];
        if constraints.dirichlet_interface {
            for seg in &interface_segments {
                for &n in seg {
                    dirichlet[n] = true;
                }
            }
        }
        let mut class_active = vec![false; nn];
        for n in 0..nn {
            if active[n] {
                class_active[master[n]] = true;
            }
        }
        let mut slot = vec![NONE; nn];
        let mut n_slots = 0;
        for n in 0..nn {
            if master[n] == n && class_active[n] && !dirichlet[n] {
                slot[n] = n_slots;
                n_slots += 1;
            }
        }
        for n in 0..nn {
            if master[n] != n {
                if master[master[n]] != master[n] {
                    return Err(HiconError::Assembly(format!("periodic chain at node {n}")));
                }
                slot[n] = slot[master[n]];
            }
        }
        if n_slots == 0 {
            return Err(HiconError::Assembly("no free degrees of freedom".into()));
        }
        Ok(Self {
            order,
            region,
            constraints,
            nodes,
            elements,
            elem_nodes,
            interface_segments,
            slot,
            n_slots,
        })
    }

    /// Number of free vector DOFs (without Lagrange rows).
    pub fn n_free(&self) -> usize {
        2 * self.n_slots
    }

    /// Free DOFs plus Lagrange rows, if any.
    pub fn n_system(&self) -> usize {
        self.n_free() + if self.constraints.mean_zero { 2 } else { 0 }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_nodes(&self, t: usize) -> &[usize] {
        let nloc = self.order.nloc();
        &self.elem_nodes[t * nloc..(t + 1) * nloc]
    }

    /// Vector DOF of `(node, component)`, or `None` when eliminated.
    pub fn dof(&self, node: usize, comp: usize) -> Option<usize> {
        let s = self.slot[node];
        (s != NONE).then(|| 2 * s + comp)
    }

    /// Scalar nodes on the interface, ascending.
    pub fn interface_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.interface_segments.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Free DOFs living on interface nodes, ascending.
    pub fn interface_dofs(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .interface_nodes()
            .into_iter()
            .flat_map(|n| [self.dof(n, 0), self.dof(n, 1)])
            .flatten()
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Nodal displacement values of a reduced vector; eliminated nodes read
    /// zero and periodic slaves copy their master.
    pub fn expand<T: Scalar>(&self, x: &[T]) -> Vec<[T; 2]> {
        (0..self.n_nodes())
            .map(|n| {
                let get = |c| self.dof(n, c).map_or(T::from_real(0.0), |d| x[d]);
                [get(0), get(1)]
            })
            .collect()
    }

    /// Interpolant of a vector field at the free DOFs.
    pub fn interpolate<T: Scalar>(&self, f: impl Fn([f64; 2]) -> [T; 2]) -> Vec<T> {
        let mut x = vec![T::from_real(0.0); self.n_free()];
        for (n, &p) in self.nodes.iter().enumerate() {
            let v = f(p);
            for (c, &vc) in v.iter().enumerate() {
                if let Some(d) = self.dof(n, c) {
                    x[d] = vc;
                }
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_cell_mesh, Geometry};

    fn mesh() -> TriMesh {
        let mut g = Geometry::worked_example();
        g.target_h = 0.1;
        build_unit_cell_mesh(&g).unwrap()
    }

    #[test]
    fn periodic_slaves_share_master_dofs() {
        let m = mesh();
        for order in [ElementOrder::P1, ElementOrder::P2] {
            let d = DofMap::new(&m, order, RegionSel::Stiff, Constraints::PERIODIC).unwrap();
            for &[v, p] in &m.periodic_pairs {
                assert_eq!(d.dof(v, 0), d.dof(p, 0));
            }
            let c = m.corner_class;
            assert!(c.iter().all(|&k| d.dof(k, 1) == d.dof(c[0], 1)));
            // every free DOF is reached by some node
            let mut hit = vec![false; d.n_free()];
            for n in 0..d.n_nodes() {
                for comp in 0..2 {
                    if let Some(k) = d.dof(n, comp) {
                        hit[k] = true;
                    }
                }
            }
            assert!(hit.iter().all(|&h| h));
        }
    }

    #[test]
    fn dirichlet_soft_space_excludes_interface() {
        let m = mesh();
        let d = DofMap::new(&m, ElementOrder::P2, RegionSel::Soft, Constraints::DIRICHLET).unwrap();
        for n in d.interface_nodes() {
            assert!(d.dof(n, 0).is_none());
        }
        assert!(d.interface_dofs().is_empty());
        // stiff-only vertices are not part of the soft space
        let far = m.corner_class[0];
        assert!(d.dof(far, 0).is_none());
    }

    #[test]
    fn p2_adds_one_node_per_edge() {
        let m = mesh();
        let d = DofMap::new(&m, ElementOrder::P2, RegionSel::All, Constraints::default()).unwrap();
        // Euler: V − E + F = 1 for a disc-like triangulation of the square
        let edges = m.n_vertices() + m.n_triangles() - 1;
        assert_eq!(d.n_nodes(), m.n_vertices() + edges);
    }
}
