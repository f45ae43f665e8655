//! Lagrange triangles (P1, P2) and the quadrature rules used with them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementOrder {
    P1,
    #[default]
    P2,
}

impl ElementOrder {
    /// Scalar nodes per triangle.
    pub fn nloc(self) -> usize {
        match self {
            ElementOrder::P1 => 3,
            ElementOrder::P2 => 6,
        }
    }

    /// Scalar nodes per interface segment.
    pub fn nloc_edge(self) -> usize {
        match self {
            ElementOrder::P1 => 2,
            ElementOrder::P2 => 3,
        }
    }

    pub fn quadrature(self) -> &'static [([f64; 3], f64)] {
        match self {
            ElementOrder::P1 => &TRI3,
            ElementOrder::P2 => &TRI6,
        }
    }

    /// Exact 1D mass matrix of one segment of length `h`, node order
    /// `[start, end, (mid)]`.
    pub fn edge_mass(self, h: f64) -> Vec<Vec<f64>> {
        let (m, s): (Vec<Vec<f64>>, f64) = match self {
            ElementOrder::P1 => (vec![vec![2.0, 1.0], vec![1.0, 2.0]], h / 6.0),
            ElementOrder::P2 => (
                vec![vec![4.0, -1.0, 2.0], vec![-1.0, 4.0, 2.0], vec![2.0, 2.0, 16.0]],
                h / 30.0,
            ),
        };
        m.into_iter().map(|r| r.into_iter().map(|v| v * s).collect()).collect()
    }
}

impl std::str::FromStr for ElementOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p1" | "1" => Ok(ElementOrder::P1),
            "p2" | "2" => Ok(ElementOrder::P2),
            other => Err(format!("unknown element order '{other}', expected p1 or p2")),
        }
    }
}

/// Barycentric points and weights (weights sum to one).
const TRI3: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

const DA: f64 = 0.445_948_490_915_964_886_32;
const DA2: f64 = 1.0 - 2.0 * DA;
const DWA: f64 = 0.223_381_589_678_011_465_70;
const DB: f64 = 0.091_576_213_509_770_743_460;
const DB2: f64 = 1.0 - 2.0 * DB;
const DWB: f64 = 0.109_951_743_655_321_867_64;

/// Dunavant degree-4 rule.
const TRI6: [([f64; 3], f64); 6] = [
    ([DA, DA, DA2], DWA),
    ([DA, DA2, DA], DWA),
    ([DA2, DA, DA], DWA),
    ([DB, DB, DB2], DWB),
    ([DB, DB2, DB], DWB),
    ([DB2, DB, DB], DWB),
];

/// Affine triangle geometry.
#[derive(Debug, Clone, Copy)]
pub struct TriGeom {
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_l: [[f64; 2]; 3],
}

impl TriGeom {
    pub fn new(p: [[f64; 2]; 3]) -> Self {
        let (x1, y1) = (p[1][0] - p[0][0], p[1][1] - p[0][1]);
        let (x2, y2) = (p[2][0] - p[0][0], p[2][1] - p[0][1]);
        let det = x1 * y2 - x2 * y1;
        let g1 = [y2 / det, -x2 / det];
        let g2 = [-y1 / det, x1 / det];
        Self {
            area: 0.5 * det,
            grad_l: [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2],
        }
    }
}

/// Shape values and physical gradients at barycentric point `l`.
pub fn shape(order: ElementOrder, g: &TriGeom, l: [f64; 3]) -> (Vec<f64>, Vec<[f64; 2]>) {
    let gl = &g.grad_l;
    match order {
        ElementOrder::P1 => (l.to_vec(), gl.to_vec()),
        ElementOrder::P2 => {
            let mut n = Vec::with_capacity(6);
            let mut d = Vec::with_capacity(6);
            for i in 0..3 {
                n.push(l[i] * (2.0 * l[i] - 1.0));
                let s = 4.0 * l[i] - 1.0;
                d.push([s * gl[i][0], s * gl[i][1]]);
            }
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                n.push(4.0 * l[i] * l[j]);
                d.push([
                    4.0 * (l[i] * gl[j][0] + l[j] * gl[i][0]),
                    4.0 * (l[i] * gl[j][1] + l[j] * gl[i][1]),
                ]);
            }
            (n, d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials_exactly() {
        // ∫_T L0^a L1^b L2^c = 2|T| a! b! c! / (a+b+c+2)!
        let fact = |n: u32| (1..=n).product::<u32>().max(1) as f64;
        let exact = |a: u32, b: u32, c: u32| 2.0 * fact(a) * fact(b) * fact(c) / fact(a + b + c + 2);
        for (order, deg) in [(ElementOrder::P1, 2), (ElementOrder::P2, 4)] {
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let c = deg - a - b;
                    let q: f64 = order
                        .quadrature()
                        .iter()
                        .map(|(l, w)| w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32))
                        .sum();
                    // reference triangle has area 1/2; weights are normalized
                    assert!((0.5 * q - 0.5 * exact(a, b, c)).abs() < 1e-15, "{order:?} {a}{b}{c}");
                }
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let g = TriGeom::new([[0.1, 0.2], [0.9, 0.3], [0.4, 1.1]]);
        for order in [ElementOrder::P1, ElementOrder::P2] {
            let (n, d) = shape(order, &g, [0.2, 0.3, 0.5]);
            assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let sx: f64 = d.iter().map(|v| v[0]).sum();
            let sy: f64 = d.iter().map(|v| v[1]).sum();
            assert!(sx.abs() < 1e-13 && sy.abs() < 1e-13);
        }
    }

    #[test]
    fn edge_mass_rows_sum_to_length() {
        for order in [ElementOrder::P1, ElementOrder::P2] {
            let m = order.edge_mass(0.3);
            let total: f64 = m.iter().flatten().sum();
            assert!((total - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn order_parses() {
        assert_eq!("P2".parse::<ElementOrder>().unwrap(), ElementOrder::P2);
        assert_eq!("1".parse::<ElementOrder>().unwrap(), ElementOrder::P1);
        assert!("p3".parse::<ElementOrder>().is_err());
    }
}
