//! The truncated matrix-valued Zhikov function
//! `B(z) = zI + Σ_k z² ⟨φ_k⟩⊗⟨φ_k⟩ / (η_k − z)` and its band gaps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::BlochData;
use crate::error::{HiconError, Result};
use crate::small::{sym2_eigenvalues, Mat2};

/// Relative distance to a contributing pole below which evaluation fails.
pub const POLE_GUARD: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZhikovOptions {
    /// `δ_pole = delta_pole_rel · η₁`.
    pub delta_pole_rel: f64,
    pub tol_gap: f64,
}

impl Default for ZhikovOptions {
    fn default() -> Self {
        Self {
            delta_pole_rel: 1e-3,
            tol_gap: 1e-10,
        }
    }
}

impl ZhikovOptions {
    pub fn delta_pole(&self, data: &BlochData) -> f64 {
        self.delta_pole_rel * data.etas[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZhikovEval {
    pub z: f64,
    pub b: Mat2,
    /// `β₁ ≤ β₂`.
    pub betas: [f64; 2],
    pub near_pole: bool,
}

/// Evaluates `B(z)` with the truncation order of `data`.
pub fn zhikov_matrix(z: f64, data: &BlochData, opts: &ZhikovOptions) -> Result<ZhikovEval> {
    let mut b = [[z, 0.0], [0.0, z]];
    let mut dist = f64::INFINITY;
    for k in 0..data.n() {
        if !data.contributes(k) {
            continue;
        }
        let eta = data.etas[k];
        let gap = eta - z;
        if gap.abs() < POLE_GUARD * eta.abs() {
            return Err(HiconError::Pole { z, eta });
        }
        dist = dist.min(gap.abs());
        let w = z * z / gap;
        let m = data.means[k];
        b[0][0] += w * m[0] * m[0];
        b[1][1] += w * m[1] * m[1];
        b[0][1] += w * m[0] * m[1];
    }
    b[1][0] = b[0][1];
    Ok(ZhikovEval {
        z,
        b,
        betas: sym2_eigenvalues(&b),
        near_pole: dist < opts.delta_pole(data),
    })
}

/// `B` on a grid, skipping points that coincide with a pole.
pub fn beta_table(z_grid: &[f64], data: &BlochData, opts: &ZhikovOptions) -> Vec<ZhikovEval> {
    z_grid
        .par_iter()
        .filter_map(|&z| zhikov_matrix(z, data, opts).ok())
        .collect()
}

pub fn write_beta_csv<W: Write>(mut w: W, table: &[ZhikovEval], header: &str) -> Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "z,beta1,beta2,near_pole")?;
    for e in table {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{}",
            e.z, e.betas[0], e.betas[1], e.near_pole as u8
        )?;
    }
    Ok(())
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Coarsest admissible spacing for gap detection: a fiftieth of the
/// smallest distance between consecutive distinct poles.
pub fn max_gap_spacing(data: &BlochData) -> f64 {
    let poles = data.poles();
    poles
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min)
        / 50.0
}

/// Uniform grid on `[lo, hi]` fine enough for [`find_band_gaps`].
pub fn gap_grid(lo: f64, hi: f64, data: &BlochData, min_points: usize) -> Vec<f64> {
    let h = max_gap_spacing(data);
    let need = if h.is_finite() {
        ((hi - lo) / h).ceil() as usize + 1
    } else {
        0
    };
    linspace(lo, hi, need.max(min_points).max(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    /// Root of `β₂ = −tol_gap`, refined by bisection.
    Root,
    /// Located at a contributing pole.
    Pole,
    /// The gap reaches the end of the grid.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandGap {
    pub lo: f64,
    pub hi: f64,
    pub lo_edge: Edge,
    pub hi_edge: Edge,
}

impl BandGap {
    pub fn contains(&self, z: f64) -> bool {
        z > self.lo && z < self.hi
    }
}

/// Maximal intervals where `β₂(z) < −tol_gap`.
pub fn find_band_gaps(z_grid: &[f64], data: &BlochData, opts: &ZhikovOptions) -> Result<Vec<BandGap>> {
    if z_grid.len() < 2 || z_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HiconError::Grid(
            "z grid must be strictly increasing with at least two points".into(),
        ));
    }
    let h_max = max_gap_spacing(data);
    let spacing = z_grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if spacing > h_max * (1.0 + 1e-12) {
        return Err(HiconError::Grid(format!(
            "grid spacing {spacing:e} exceeds {h_max:e} (1/50 of the closest pole pair)"
        )));
    }
    let poles = data.poles();
    let beta2 = |z: f64| zhikov_matrix(z, data, opts).map(|e| e.betas[1]);
    let in_gap = |z: f64| beta2(z).map(|b| b < -opts.tol_gap);
    let pole_between = |a: f64, b: f64| poles.iter().copied().find(|&p| p >= a && p <= b);

    let flags: Vec<Option<bool>> = z_grid.iter().map(|&z| in_gap(z).ok()).collect();
    let mut gaps = Vec::new();
    let mut i = 0;
    while i < z_grid.len() {
        if flags[i] != Some(true) {
            i += 1;
            continue;
        }
        let (lo, lo_edge) = if i == 0 {
            (z_grid[0], Edge::Open)
        } else {
            edge(z_grid[i - 1], z_grid[i], true, &pole_between, &in_gap)?
        };
        let mut j = i;
        while j + 1 < z_grid.len() && flags[j + 1] == Some(true) && pole_between(z_grid[j], z_grid[j + 1]).is_none() {
            j += 1;
        }
        let (hi, hi_edge) = if j + 1 == z_grid.len() {
            (z_grid[j], Edge::Open)
        } else {
            edge(z_grid[j], z_grid[j + 1], false, &pole_between, &in_gap)?
        };
        gaps.push(BandGap {
            lo,
            hi,
            lo_edge,
            hi_edge,
        });
        i = j + 1;
    }
    Ok(gaps)
}

/// Locates a gap edge inside `(a, b)`. `entering` means `a` is outside the
/// gap and `b` inside.
fn edge(
    a: f64,
    b: f64,
    entering: bool,
    pole_between: &impl Fn(f64, f64) -> Option<f64>,
    in_gap: &impl Fn(f64) -> Result<bool>,
) -> Result<(f64, Edge)> {
    if let Some(p) = pole_between(a, b) {
        return Ok((p, Edge::Pole));
    }
    let (mut lo, mut hi) = (a, b);
    while hi - lo > 1e-8 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        let g = in_gap(mid)?;
        if g == entering {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((0.5 * (lo + hi), Edge::Root))
}

pub fn write_gaps_csv<W: Write>(mut w: W, gaps: &[BandGap], header: &str) -> Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "lo,hi,lo_edge,hi_edge")?;
    let name = |e: Edge| match e {
        Edge::Root => "root",
        Edge::Pole => "pole",
        Edge::Open => "open",
    };
    for g in gaps {
        writeln!(w, "{:.16e},{:.16e},{},{}", g.lo, g.hi, name(g.lo_edge), name(g.hi_edge))?;
    }
    Ok(())
}
