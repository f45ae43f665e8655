//! Unit-cell triangulation with an elliptical soft inclusion.
//!
//! The mesh is built from nested star-shaped rings around the ellipse
//! centre: scaled copies of the ellipse inside the inclusion, then curves
//! blending the ellipse into the cell boundary, and finally the boundary of
//! the square itself. Consecutive rings are stitched quadrant by quadrant.
//! When the inclusion sits at the cell centre the first quadrant is
//! triangulated once and mirrored, so the mesh carries the reflection
//! symmetries of the geometry exactly.
//!
//! Boundary vertices use identical coordinate lists on opposite sides of the
//! square, which makes periodic pairing exact.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HiconError, Result};

pub const COORD_TOL: f64 = 1e-12;

fn default_segments() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    #[serde(default = "default_segments")]
    pub boundary_segments: usize,
    pub target_h: f64,
}

impl Geometry {
    pub fn worked_example() -> Self {
        Self {
            center: [0.5, 0.5],
            semi_axes: [0.04, 0.045],
            boundary_segments: 32,
            target_h: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [cx, cy] = self.center;
        let [a, b] = self.semi_axes;
        if !(a > 0.0 && b > 0.0) {
            return Err(HiconError::Geometry(format!(
                "semi-axes must be positive, got ({a}, {b})"
            )));
        }
        if !(self.target_h > 0.0) {
            return Err(HiconError::Geometry(format!(
                "target_h must be positive, got {}",
                self.target_h
            )));
        }
        if self.boundary_segments < 16 {
            return Err(HiconError::Geometry(format!(
                "boundary_segments must be at least 16, got {}",
                self.boundary_segments
            )));
        }
        let inside = |c: f64, r: f64| c - r > 0.0 && c + r < 1.0;
        if !(inside(cx, a) && inside(cy, b)) {
            return Err(HiconError::Geometry(format!(
                "ellipse centred at ({cx}, {cy}) with semi-axes ({a}, {b}) touches the cell boundary"
            )));
        }
        Ok(())
    }

    pub fn ellipse(&self) -> Ellipse {
        Ellipse {
            center: self.center,
            semi_axes: self.semi_axes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
}

impl Ellipse {
    /// `((x−cx)/a)² + ((y−cy)/b)²`
    pub fn level(&self, p: [f64; 2]) -> f64 {
        let u = (p[0] - self.center[0]) / self.semi_axes[0];
        let v = (p[1] - self.center[1]) / self.semi_axes[1];
        u * u + v * v
    }

    /// Radial (centre-based) projection onto the ellipse.
    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.level(p).sqrt();
        [
            self.center[0] + (p[0] - self.center[0]) / s,
            self.center[1] + (p[1] - self.center[1]) / s,
        ]
    }

    pub fn polar_radius(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let [a, b] = self.semi_axes;
        1.0 / ((c / a).powi(2) + (s / b).powi(2)).sqrt()
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_axes[0] * self.semi_axes[1]
    }

    /// Ramanujan's second approximation.
    pub fn perimeter(&self) -> f64 {
        let [a, b] = self.semi_axes;
        let h = ((a - b) / (a + b)).powi(2);
        PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Soft,
    Stiff,
}

/// Region selector for assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSel {
    Soft,
    Stiff,
    All,
}

impl RegionSel {
    pub fn contains(self, r: Region) -> bool {
        match self {
            RegionSel::All => true,
            RegionSel::Soft => r == Region::Soft,
            RegionSel::Stiff => r == Region::Stiff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    /// `None` once the inclusion has been removed (whole cell stiff).
    pub ellipse: Option<Ellipse>,
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<Region>,
    /// Closed loop around the inclusion, soft region on the left.
    pub interface_edges: Vec<[usize; 2]>,
    /// `[v, partner]` for every non-corner boundary vertex, sorted by `v`.
    pub periodic_pairs: Vec<[usize; 2]>,
    /// Corners in the order (0,0), (1,0), (1,1), (0,1).
    pub corner_class: [usize; 4],
    pub level: usize,
}

pub fn triangle_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
}

/// Star-shaped closed curve around the ellipse centre, as a polar radius.
trait RingCurve {
    fn radius(&self, phi: f64) -> f64;
}

struct Blend {
    ellipse: Ellipse,
    scale: f64,
    w: f64,
}

impl RingCurve for Blend {
    fn radius(&self, phi: f64) -> f64 {
        let re = self.scale * self.ellipse.polar_radius(phi);
        if self.w == 0.0 {
            re
        } else {
            (1.0 - self.w) * re + self.w * square_radius(self.ellipse.center, phi)
        }
    }
}

/// Distance from `c` to the unit-square boundary along direction `phi`.
fn square_radius(c: [f64; 2], phi: f64) -> f64 {
    let (s, co) = phi.sin_cos();
    let mut r = f64::INFINITY;
    if co > 1e-300 {
        r = r.min((1.0 - c[0]) / co);
    } else if co < -1e-300 {
        r = r.min(-c[0] / co);
    }
    if s > 1e-300 {
        r = r.min((1.0 - c[1]) / s);
    } else if s < -1e-300 {
        r = r.min(-c[1] / s);
    }
    r
}

const ARC_SAMPLES: usize = 512;

fn quadrant_length(curve: &dyn RingCurve, q: usize) -> f64 {
    let pts = sample_quadrant(curve, q);
    pts.windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

fn sample_quadrant(curve: &dyn RingCurve, q: usize) -> Vec<[f64; 2]> {
    (0..=ARC_SAMPLES)
        .map(|k| {
            let phi = FRAC_PI_2 * (q as f64 + k as f64 / ARC_SAMPLES as f64);
            let r = curve.radius(phi);
            [r * phi.cos(), r * phi.sin()]
        })
        .collect()
}

/// `n + 1` offsets at equal arclength over quadrant `q`, endpoints on the
/// axis directions.
fn quadrant_points(curve: &dyn RingCurve, q: usize, n: usize) -> Vec<[f64; 2]> {
    let phis: Vec<f64> = (0..=ARC_SAMPLES)
        .map(|k| FRAC_PI_2 * (q as f64 + k as f64 / ARC_SAMPLES as f64))
        .collect();
    let pts = sample_quadrant(curve, q);
    let mut cum = vec![0.0; pts.len()];
    for k in 1..pts.len() {
        cum[k] = cum[k - 1] + (pts[k][0] - pts[k - 1][0]).hypot(pts[k][1] - pts[k - 1][1]);
    }
    let total = cum[ARC_SAMPLES];
    let at_phi = |phi: f64| {
        let r = curve.radius(phi);
        [r * phi.cos(), r * phi.sin()]
    };
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i == 0 {
            out.push(axis_point(curve, q));
        } else if i == n {
            out.push(axis_point(curve, (q + 1) % 4));
        } else {
            let target = total * i as f64 / n as f64;
            let k = cum.partition_point(|&c| c < target).clamp(1, ARC_SAMPLES);
            let t = (target - cum[k - 1]) / (cum[k] - cum[k - 1]);
            out.push(at_phi(phis[k - 1] + t * (phis[k] - phis[k - 1])));
        }
    }
    out
}

/// Exact point of the curve on the axis direction `q·π/2`.
fn axis_point(curve: &dyn RingCurve, q: usize) -> [f64; 2] {
    let r = curve.radius(FRAC_PI_2 * q as f64);
    match q {
        0 => [r, 0.0],
        1 => [0.0, r],
        2 => [-r, 0.0],
        _ => [0.0, -r],
    }
}

/// Mirror images of a first-quadrant offset into quadrant `q`, traversed
/// counter-clockwise.
fn mirror_quadrant(first: &[[f64; 2]], q: usize) -> Vec<[f64; 2]> {
    let n = first.len() - 1;
    (0..=n)
        .map(|p| match q {
            0 => first[p],
            1 => {
                let o = first[n - p];
                [-o[0], o[1]]
            }
            2 => {
                let o = first[p];
                [-o[0], -o[1]]
            }
            _ => {
                let o = first[n - p];
                [o[0], -o[1]]
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Ring {
    /// Vertex indices counter-clockwise, starting on the +x axis.
    idx: Vec<usize>,
    /// Position in `idx` where each quadrant starts.
    starts: [usize; 4],
}

impl Ring {
    fn sector(&self, q: usize) -> Vec<usize> {
        let end = if q == 3 { self.idx.len() } else { self.starts[q + 1] };
        let mut s: Vec<usize> = self.idx[self.starts[q]..end].to_vec();
        s.push(self.idx[end % self.idx.len()]);
        s
    }
}

struct Builder {
    center: [f64; 2],
    symmetric: bool,
    vertices: Vec<[f64; 2]>,
}

impl Builder {
    fn push_ring_offsets(&mut self, quadrants: Vec<Vec<[f64; 2]>>) -> Ring {
        let mut idx = Vec::new();
        let mut starts = [0; 4];
        for (q, pts) in quadrants.iter().enumerate() {
            starts[q] = idx.len();
            for o in &pts[..pts.len() - 1] {
                idx.push(self.vertices.len());
                self.vertices.push([self.center[0] + o[0], self.center[1] + o[1]]);
            }
        }
        Ring { idx, starts }
    }

    fn curve_ring(&mut self, curve: &dyn RingCurve, counts: [usize; 4]) -> Ring {
        let quads: Vec<Vec<[f64; 2]>> = if self.symmetric {
            let first = quadrant_points(curve, 0, counts[0]);
            (0..4).map(|q| mirror_quadrant(&first, q)).collect()
        } else {
            (0..4).map(|q| quadrant_points(curve, q, counts[q])).collect()
        };
        self.push_ring_offsets(quads)
    }

    fn square_ring(&mut self, n_side: usize) -> Ring {
        let [cx, cy] = self.center;
        let xs = grid_with(cx, n_side);
        let ys = grid_with(cy, n_side);
        let mut pts: Vec<[f64; 2]> = Vec::new();
        let mut starts = [0; 4];
        // quadrant 0: right side upward from y = cy, then top leftward to x = cx
        starts[0] = pts.len();
        pts.extend(ys.iter().filter(|&&y| y >= cy && y < 1.0).map(|&y| [1.0, y]));
        pts.extend(xs.iter().rev().filter(|&&x| x > cx).map(|&x| [x, 1.0]));
        starts[1] = pts.len();
        pts.extend(xs.iter().rev().filter(|&&x| x <= cx && x > 0.0).map(|&x| [x, 1.0]));
        pts.extend(ys.iter().rev().filter(|&&y| y > cy).map(|&y| [0.0, y]));
        starts[2] = pts.len();
        pts.extend(ys.iter().rev().filter(|&&y| y <= cy && y > 0.0).map(|&y| [0.0, y]));
        pts.extend(xs.iter().filter(|&&x| x < cx).map(|&x| [x, 0.0]));
        starts[3] = pts.len();
        pts.extend(xs.iter().filter(|&&x| x >= cx && x < 1.0).map(|&x| [x, 0.0]));
        pts.extend(ys.iter().filter(|&&y| y < cy).map(|&y| [1.0, y]));
        let base = self.vertices.len();
        self.vertices.extend(pts.iter().copied());
        Ring {
            idx: (base..base + pts.len()).collect(),
            starts,
        }
    }

    fn stitch(&self, inner: &Ring, outer: &Ring, out: &mut Vec<[usize; 3]>) {
        let mirror = self.symmetric
            && (1..4).all(|q| {
                inner.sector(q).len() == inner.sector(0).len() && outer.sector(q).len() == outer.sector(0).len()
            });
        if mirror {
            let a0 = inner.sector(0);
            let b0 = outer.sector(0);
            let local = zip_sector(&a0, &b0, &self.vertices);
            for q in 0..4 {
                let a = inner.sector(q);
                let b = outer.sector(q);
                let (na, nb) = (a.len() - 1, b.len() - 1);
                for t in &local {
                    let map = |(outer_side, p): (bool, usize)| match (q, outer_side) {
                        (0 | 2, false) => a[p],
                        (0 | 2, true) => b[p],
                        (_, false) => a[na - p],
                        (_, true) => b[nb - p],
                    };
                    let v = [map(t[0]), map(t[1]), map(t[2])];
                    if q == 1 || q == 3 {
                        out.push([v[0], v[2], v[1]]);
                    } else {
                        out.push(v);
                    }
                }
            }
        } else {
            for q in 0..4 {
                let a = inner.sector(q);
                let b = outer.sector(q);
                for t in zip_sector(&a, &b, &self.vertices) {
                    let g = |(o, p): (bool, usize)| if o { b[p] } else { a[p] };
                    out.push([g(t[0]), g(t[1]), g(t[2])]);
                }
            }
        }
    }
}

/// Sorted grid `{k/n}` on `[0, 1]` containing `c`; a grid value closer than
/// `0.3/n` to `c` is replaced by `c`.
fn grid_with(c: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let k = (c * n as f64).round() as usize;
    if k > 0 && k < n && (g[k] - c).abs() < 0.3 / n as f64 {
        g[k] = c;
    } else if !g.contains(&c) {
        g.push(c);
        g.sort_by(|a, b| a.total_cmp(b));
    }
    g
}

/// Triangulates the strip between two open polylines sharing radial end
/// edges. Returns triangles as `(is_outer, position)` triples.
fn zip_sector(a: &[usize], b: &[usize], verts: &[[f64; 2]]) -> Vec<[(bool, usize); 3]> {
    let (na, nb) = (a.len() - 1, b.len() - 1);
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(na + nb);
    let p = |o: bool, k: usize| if o { verts[b[k]] } else { verts[a[k]] };
    let dist = |x: [f64; 2], y: [f64; 2]| (x[0] - y[0]).hypot(x[1] - y[1]);
    while i < na || j < nb {
        let advance_outer = if i == na {
            true
        } else if j == nb {
            false
        } else {
            let outer_ok = triangle_area(p(false, i), p(true, j), p(true, j + 1)) > 0.0;
            let inner_ok = triangle_area(p(false, i), p(true, j), p(false, i + 1)) > 0.0;
            let prefer_outer = dist(p(false, i), p(true, j + 1)) <= dist(p(false, i + 1), p(true, j));
            match (outer_ok, inner_ok) {
                (true, false) => true,
                (false, true) => false,
                _ => prefer_outer,
            }
        };
        if advance_outer {
            out.push([(false, i), (true, j), (true, j + 1)]);
            j += 1;
        } else {
            out.push([(false, i), (true, j), (false, i + 1)]);
            i += 1;
        }
    }
    out
}

/// Builds the level-0 unit-cell mesh.
pub fn build_unit_cell_mesh(geom: &Geometry) -> Result<TriMesh> {
    geom.validate()?;
    let ellipse = geom.ellipse();
    let h = geom.target_h;
    let symmetric = geom.center == [0.5, 0.5];
    let mut b = Builder {
        center: geom.center,
        symmetric,
        vertices: Vec::new(),
    };

    // interface resolution: at least boundary_segments, finer if target_h asks
    let segs_from_h = (ellipse.perimeter() / h).ceil() as usize;
    let per_quadrant = geom.boundary_segments.max(segs_from_h).div_ceil(4);
    if 4 * per_quadrant < 8 {
        return Err(HiconError::Mesh(format!(
            "only {} interface edges; target_h {h} is too coarse for the ellipse",
            4 * per_quadrant
        )));
    }
    let interface_spacing = ellipse.perimeter() / (4 * per_quadrant) as f64;
    let mean_radius: f64 = (0..64)
        .map(|k| ellipse.polar_radius(2.0 * PI * k as f64 / 64.0))
        .sum::<f64>()
        / 64.0;

    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut regions: Vec<Region> = Vec::new();

    // soft side: centre, inner rings, interface ring
    let center_idx = b.vertices.len();
    b.vertices.push(geom.center);
    let inner_rings = ((mean_radius / interface_spacing).round() as usize).saturating_sub(1);
    let mut prev: Option<Ring> = None;
    let soft_ring = |scale: f64| Blend { ellipse, scale, w: 0.0 };
    for k in 1..=inner_rings {
        let sigma = k as f64 / (inner_rings + 1) as f64;
        let nq = ((per_quadrant as f64 * sigma).ceil() as usize).max(2);
        let ring = b.curve_ring(&soft_ring(sigma), [nq; 4]);
        push_inner(&b, &mut prev, ring, center_idx, &mut triangles);
    }
    let interface = b.curve_ring(&soft_ring(1.0), [per_quadrant; 4]);
    push_inner(&b, &mut prev, interface.clone(), center_idx, &mut triangles);
    regions.resize(triangles.len(), Region::Soft);

    // stiff side: blended rings out to the square
    let gap_mean: f64 = (0..256)
        .map(|k| {
            let phi = 2.0 * PI * (k as f64 + 0.5) / 256.0;
            square_radius(geom.center, phi) - ellipse.polar_radius(phi)
        })
        .sum::<f64>()
        / 256.0;
    let mut counts = [per_quadrant; 4];
    let mut w = 0.0;
    let mut current = interface.clone();
    let ring_len = |w: f64, counts: &[usize; 4]| {
        let c = Blend { ellipse, scale: 1.0, w };
        let len: f64 = (0..4).map(|q| quadrant_length(&c, q)).sum();
        len / counts.iter().sum::<usize>() as f64
    };
    loop {
        let s = ring_len(w, &counts);
        let w_next = w + s / gap_mean;
        if (1.0 - w_next) * gap_mean < 0.5 * s.min(h) || w_next >= 1.0 {
            break;
        }
        let curve = Blend {
            ellipse,
            scale: 1.0,
            w: w_next,
        };
        let mut next_counts = [0; 4];
        for q in 0..4 {
            let need = (quadrant_length(&curve, q) / h).ceil() as usize;
            next_counts[q] = counts[q].max(need);
        }
        if symmetric {
            let m = *next_counts.iter().max().unwrap();
            next_counts = [m; 4];
        }
        let ring = b.curve_ring(&curve, next_counts);
        b.stitch(&current, &ring, &mut triangles);
        current = ring;
        counts = next_counts;
        w = w_next;
    }
    let mut n_side = (1.0 / h).ceil() as usize;
    if symmetric && n_side % 2 == 1 {
        n_side += 1;
    }
    let square = b.square_ring(n_side);
    b.stitch(&current, &square, &mut triangles);
    regions.resize(triangles.len(), Region::Stiff);

    let interface_edges = (0..interface.idx.len())
        .map(|k| [interface.idx[k], interface.idx[(k + 1) % interface.idx.len()]])
        .collect();
    let (periodic_pairs, corner_class) = periodic_pairing(&b.vertices)?;
    let mesh = TriMesh {
        ellipse: Some(ellipse),
        vertices: b.vertices,
        triangles,
        regions,
        interface_edges,
        periodic_pairs,
        corner_class,
        level: 0,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn push_inner(b: &Builder, prev: &mut Option<Ring>, ring: Ring, center: usize, triangles: &mut Vec<[usize; 3]>) {
    match prev {
        None => {
            let n = ring.idx.len();
            for k in 0..n {
                triangles.push([center, ring.idx[k], ring.idx[(k + 1) % n]]);
            }
        }
        Some(p) => b.stitch(p, &ring, triangles),
    }
    *prev = Some(ring);
}

fn on_side(v: f64, side: f64) -> bool {
    (v - side).abs() <= COORD_TOL
}

/// Pairs boundary vertices across opposite sides of the unit square.
pub fn periodic_pairing(vertices: &[[f64; 2]]) -> Result<(Vec<[usize; 2]>, [usize; 4])> {
    let key = |v: f64| (v * (1u64 << 40) as f64).round() as i64;
    let mut left = HashMap::new();
    let mut right = HashMap::new();
    let mut bottom = HashMap::new();
    let mut top = HashMap::new();
    let mut corners = [usize::MAX; 4];
    for (i, &[x, y]) in vertices.iter().enumerate() {
        let (l, r, bo, t) = (on_side(x, 0.0), on_side(x, 1.0), on_side(y, 0.0), on_side(y, 1.0));
        match (l, r, bo, t) {
            (true, _, true, _) => corners[0] = i,
            (_, true, true, _) => corners[1] = i,
            (_, true, _, true) => corners[2] = i,
            (true, _, _, true) => corners[3] = i,
            (true, ..) => {
                left.insert(key(y), i);
            }
            (_, true, ..) => {
                right.insert(key(y), i);
            }
            (_, _, true, _) => {
                bottom.insert(key(x), i);
            }
            (.., true) => {
                top.insert(key(x), i);
            }
            _ => {}
        }
    }
    if corners.contains(&usize::MAX) {
        return Err(HiconError::Mesh("cell corners missing from mesh".into()));
    }
    let mut pairs = BTreeMap::new();
    for (a, b, name) in [(&left, &right, "left/right"), (&bottom, &top, "bottom/top")] {
        if a.len() != b.len() {
            return Err(HiconError::Mesh(format!(
                "{name} sides carry {} and {} vertices",
                a.len(),
                b.len()
            )));
        }
        for (k, &i) in a {
            let &j = b
                .get(k)
                .ok_or_else(|| HiconError::Mesh(format!("boundary vertex {i} has no periodic partner")))?;
            pairs.insert(i, j);
            pairs.insert(j, i);
        }
    }
    Ok((pairs.into_iter().map(|(a, b)| [a, b]).collect(), corners))
}

impl TriMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn area_of(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        triangle_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area_of(t)).sum()
    }

    pub fn region_area(&self, sel: RegionSel) -> f64 {
        (0..self.n_triangles())
            .filter(|&t| sel.contains(self.regions[t]))
            .map(|t| self.area_of(t))
            .sum()
    }

    pub fn soft_area(&self) -> f64 {
        self.region_area(RegionSel::Soft)
    }

    /// Length of the polygonal interface `Γ`.
    pub fn interface_length(&self) -> f64 {
        self.interface_edges
            .iter()
            .map(|&[a, b]| {
                let (p, q) = (self.vertices[a], self.vertices[b]);
                (q[0] - p[0]).hypot(q[1] - p[1])
            })
            .sum()
    }

    pub fn partner(&self, v: usize) -> Option<usize> {
        self.periodic_pairs
            .binary_search_by_key(&v, |p| p[0])
            .ok()
            .map(|k| self.periodic_pairs[k][1])
    }

    pub fn interface_vertices(&self) -> Vec<usize> {
        let mut set: Vec<usize> = self.interface_edges.iter().flatten().copied().collect();
        set.sort_unstable();
        set.dedup();
        set
    }

    /// Copy of the mesh with every triangle tagged stiff and no interface.
    pub fn without_inclusion(&self) -> TriMesh {
        TriMesh {
            ellipse: None,
            regions: vec![Region::Stiff; self.triangles.len()],
            interface_edges: Vec::new(),
            ..self.clone()
        }
    }

    /// Content hash of the serialized mesh.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("mesh serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TriMesh = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    /// Checks every structural invariant of the mesh.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HiconError::Mesh(m));
        if self.regions.len() != self.triangles.len() {
            return err("region tags and triangles differ in length".into());
        }
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return err(format!("triangle {t} references a missing vertex"));
            }
            let a = self.area_of(t);
            if !(a > 0.0) {
                return err(format!(
                    "triangle {t} {:?} has non-positive area {a:e}",
                    tri.map(|v| self.vertices[v])
                ));
            }
        }
        let total = self.total_area();
        if (total - 1.0).abs() > 1e-12 {
            return err(format!("triangle areas sum to {total}, not 1"));
        }

        // conformity: interior edges shared by two triangles with opposite
        // orientation, boundary edges lie on the square
        let mut edges: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                edges.entry((tri[k], tri[(k + 1) % 3])).or_default().push(t);
            }
        }
        for (&(a, b), ts) in &edges {
            if ts.len() != 1 {
                return err(format!("directed edge ({a},{b}) used {} times", ts.len()));
            }
            if !edges.contains_key(&(b, a)) {
                let (p, q) = (self.vertices[a], self.vertices[b]);
                let on_boundary = [0.0, 1.0]
                    .iter()
                    .any(|&s| (on_side(p[0], s) && on_side(q[0], s)) || (on_side(p[1], s) && on_side(q[1], s)));
                if !on_boundary {
                    return err(format!("edge ({a},{b}) is a hole boundary inside the cell"));
                }
            }
        }

        for &[a, b] in &self.interface_edges {
            let left = edges.get(&(a, b)).map(|t| self.regions[t[0]]);
            let right = edges.get(&(b, a)).map(|t| self.regions[t[0]]);
            if left != Some(Region::Soft) || right != Some(Region::Stiff) {
                return err(format!(
                    "interface edge ({a},{b}) does not separate soft (left) from stiff (right)"
                ));
            }
        }
        // soft/stiff adjacency only across the interface
        let iface: HashSet<(usize, usize)> = self
            .interface_edges
            .iter()
            .flat_map(|&[a, b]| [(a, b), (b, a)])
            .collect();
        for (&(a, b), ts) in &edges {
            if let Some(other) = edges.get(&(b, a)) {
                if self.regions[ts[0]] != self.regions[other[0]] && !iface.contains(&(a, b)) {
                    return err(format!("region change across non-interface edge ({a},{b})"));
                }
            }
        }

        for &[v, p] in &self.periodic_pairs {
            if self.partner(p) != Some(v) {
                return err(format!("periodic pairing is not an involution at vertex {v}"));
            }
            let (x, y) = (self.vertices[v], self.vertices[p]);
            let dx = (x[0] - y[0]).abs();
            let dy = (x[1] - y[1]).abs();
            let ok = ((dx - 1.0).abs() <= COORD_TOL && dy <= COORD_TOL)
                || ((dy - 1.0).abs() <= COORD_TOL && dx <= COORD_TOL);
            if !ok {
                return err(format!("vertices {v} and {p} are not unit translates"));
            }
        }
        let expect = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        for (k, &c) in self.corner_class.iter().enumerate() {
            let p = self.vertices[c];
            if (p[0] - expect[k][0]).abs() > COORD_TOL || (p[1] - expect[k][1]).abs() > COORD_TOL {
                return err(format!("corner {k} is misplaced at {p:?}"));
            }
        }
        Ok(())
    }

    /// Uniform midpoint refinement; new interface vertices are projected
    /// onto the exact ellipse.
    pub fn refine(&self) -> Result<TriMesh> {
        let mut vertices = self.vertices.clone();
        let iface: HashSet<(usize, usize)> = self
            .interface_edges
            .iter()
            .map(|&[a, b]| (a.min(b), a.max(b)))
            .collect();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let (p, q) = (vertices[key.0], vertices[key.1]);
                let mut m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                if iface.contains(&key) {
                    if let Some(e) = &self.ellipse {
                        m = e.project(m);
                    }
                }
                vertices.push(m);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut regions = Vec::with_capacity(4 * self.triangles.len());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            regions.extend([self.regions[t]; 4]);
        }
        let interface_edges = self
            .interface_edges
            .iter()
            .flat_map(|&[a, b]| {
                let m = mid[&(a.min(b), a.max(b))];
                [[a, m], [m, b]]
            })
            .collect();
        let (periodic_pairs, corner_class) = periodic_pairing(&vertices)?;
        let mesh = TriMesh {
            ellipse: self.ellipse,
            vertices,
            triangles,
            regions,
            interface_edges,
            periodic_pairs,
            corner_class,
            level: self.level + 1,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn refined(&self, times: usize) -> Result<TriMesh> {
        let mut m = self.clone();
        for _ in 0..times {
            m = m.refine()?;
        }
        Ok(m)
    }
}
