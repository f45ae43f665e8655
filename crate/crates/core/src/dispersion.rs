//! Effective dispersion relation `det(ε⁻²|χ|² A_θ − B(z)) = 0`.
//!
//! For a direction `θ` the relation is solved through the eigenvalues `μ_j`
//! of `A_θ^{-1/2} B(z) A_θ^{-1/2}`: every `μ_j ≥ 0` gives a solution
//! `|χ| = ε√μ_j`. Branches are labelled by the analyticity interval of `B`
//! (the stretch between consecutive contributing poles) and by the rank `j`
//! of the eigenvalue.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::BlochData;
use crate::error::{HiconError, Result};
use crate::small::{mat2_det, mat2_mul, sym2_apply, sym2_eigenvalues, Mat2};
use crate::tensor::{contract_x_chi, ElasticTensor};
use crate::zhikov::{zhikov_matrix, ZhikovOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionStiffness {
    pub theta: [f64; 2],
    /// `X_θ* A_macro X_θ`.
    pub a_theta: Mat2,
    pub sqrt: Mat2,
    pub inv_sqrt: Mat2,
    pub min_eigenvalue: f64,
}

/// `A_θ` for the normalized direction `θ/|θ|`.
pub fn direction_stiffness(a_macro: &ElasticTensor, theta: [f64; 2]) -> Result<DirectionStiffness> {
    let n = theta[0].hypot(theta[1]);
    if !(n > 0.0) || !n.is_finite() {
        return Err(HiconError::Degenerate(format!("direction {theta:?} has no length")));
    }
    let theta = [theta[0] / n, theta[1] / n];
    let a = contract_x_chi(a_macro, theta);
    let ev = sym2_eigenvalues(&a);
    if !(ev[0] > 0.0) {
        return Err(HiconError::Degenerate(format!(
            "A_theta for theta {theta:?} is not positive definite (eigenvalues {ev:?})"
        )));
    }
    Ok(DirectionStiffness {
        theta,
        a_theta: a,
        sqrt: sym2_apply(&a, f64::sqrt),
        inv_sqrt: sym2_apply(&a, |x| 1.0 / x.sqrt()),
        min_eigenvalue: ev[0],
    })
}

impl DirectionStiffness {
    /// Eigenvalues of `A_θ^{-1/2} B A_θ^{-1/2}`, ascending.
    pub fn reduced_eigenvalues(&self, b: &Mat2) -> [f64; 2] {
        let m = mat2_mul(&mat2_mul(&self.inv_sqrt, b), &self.inv_sqrt);
        sym2_eigenvalues(&[
            [m[0][0], 0.5 * (m[0][1] + m[1][0])],
            [0.5 * (m[0][1] + m[1][0]), m[1][1]],
        ])
    }
}

/// Index of the analyticity interval containing `z`: the number of
/// contributing poles below it.
pub fn interval_id(poles: &[f64], z: f64) -> usize {
    poles.partition_point(|&p| p < z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSample {
    pub z: f64,
    pub chi_norm: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionBranch {
    pub theta: [f64; 2],
    pub epsilon: f64,
    pub interval: usize,
    /// Eigenvalue rank (0 for `μ₁`, 1 for `μ₂`).
    pub rank: usize,
    pub samples: Vec<BranchSample>,
}

impl DispersionBranch {
    /// Stable branch label used in output tables.
    pub fn id(&self) -> usize {
        2 * self.interval + self.rank
    }
}

fn check_grid(z_grid: &[f64]) -> Result<()> {
    if z_grid.is_empty() || z_grid.windows(2).any(|w| w[1] <= w[0]) || z_grid.iter().any(|z| !z.is_finite()) {
        return Err(HiconError::Grid("z grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// All branches for one direction. Grid points that coincide with a pole
/// are skipped.
pub fn dispersion_branches(
    z_grid: &[f64],
    theta: [f64; 2],
    epsilon: f64,
    data: &BlochData,
    a_macro: &ElasticTensor,
    opts: &ZhikovOptions,
) -> Result<Vec<DispersionBranch>> {
    if !(epsilon > 0.0) {
        return Err(HiconError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    check_grid(z_grid)?;
    let dir = direction_stiffness(a_macro, theta)?;
    let poles = data.poles();
    let mut branches: Vec<DispersionBranch> = Vec::new();
    for &z in z_grid {
        let Ok(eval) = zhikov_matrix(z, data, opts) else {
            continue;
        };
        let mu = dir.reduced_eigenvalues(&eval.b);
        let interval = interval_id(&poles, z);
        for (rank, &m) in mu.iter().enumerate() {
            if m < -opts.tol_gap {
                continue;
            }
            let m = m.max(0.0);
            let sample = BranchSample {
                z,
                chi_norm: epsilon * m.sqrt(),
                mu: m,
            };
            match branches.iter_mut().find(|b| b.interval == interval && b.rank == rank) {
                Some(b) => b.samples.push(sample),
                None => branches.push(DispersionBranch {
                    theta: dir.theta,
                    epsilon,
                    interval,
                    rank,
                    samples: vec![sample],
                }),
            }
        }
    }
    branches.sort_by_key(|b| b.id());
    Ok(branches)
}

/// Number of eigenvalues of `B(z)` that are `≥ −tol_gap`.
pub fn nonnegative_count(z: f64, data: &BlochData, opts: &ZhikovOptions) -> Result<usize> {
    let e = zhikov_matrix(z, data, opts)?;
    Ok(e.betas.iter().filter(|&&b| b >= -opts.tol_gap).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub theta: [f64; 2],
    pub branch: usize,
    pub z: f64,
    pub chi_norm: f64,
    pub chi: [f64; 2],
    pub epsilon: f64,
}

/// Branches over a set of directions, rows ordered by (direction, branch, z).
pub fn dispersion_surface(
    z_grid: &[f64],
    theta_grid: &[[f64; 2]],
    epsilon: f64,
    data: &BlochData,
    a_macro: &ElasticTensor,
    opts: &ZhikovOptions,
) -> Result<Vec<SurfaceRow>> {
    let per_dir: Vec<Vec<SurfaceRow>> = theta_grid
        .par_iter()
        .map(|&theta| {
            let branches = dispersion_branches(z_grid, theta, epsilon, data, a_macro, opts)?;
            Ok(branches
                .iter()
                .flat_map(|b| {
                    b.samples.iter().map(move |s| SurfaceRow {
                        theta: b.theta,
                        branch: b.id(),
                        z: s.z,
                        chi_norm: s.chi_norm,
                        chi: [s.chi_norm * b.theta[0], s.chi_norm * b.theta[1]],
                        epsilon,
                    })
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_dir.into_iter().flatten().collect())
}

/// `n` uniform directions on the upper half circle, starting at `(1, 0)`.
pub fn half_circle(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let a = std::f64::consts::PI * k as f64 / n as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

pub fn write_surface_csv<W: Write>(mut w: W, rows: &[SurfaceRow], header: &str) -> Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "theta_x,theta_y,branch,z,chi_norm,chi_x,chi_y,epsilon")?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.theta[0], r.theta[1], r.branch, r.z, r.chi_norm, r.chi[0], r.chi[1], r.epsilon
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityReport {
    /// Interior samples examined.
    pub checked: usize,
    /// Smallest centred difference `Δz/Δ|χ|`.
    pub min_velocity: f64,
    pub all_positive: bool,
}

/// Centred finite differences `dz/d|χ|` at the interior samples of a
/// branch. Non-increasing `|χ|` counts as a failure.
pub fn group_velocity_check(branch: &DispersionBranch) -> VelocityReport {
    let s = &branch.samples;
    let mut min_v = f64::INFINITY;
    let mut ok = true;
    let mut checked = 0;
    for i in 1..s.len().saturating_sub(1) {
        let dz = s[i + 1].z - s[i - 1].z;
        let dchi = s[i + 1].chi_norm - s[i - 1].chi_norm;
        checked += 1;
        if dchi <= 0.0 {
            ok = false;
            min_v = min_v.min(if dchi == 0.0 { 0.0 } else { dz / dchi });
            continue;
        }
        let v = dz / dchi;
        ok &= v > 0.0;
        min_v = min_v.min(v);
    }
    VelocityReport {
        checked,
        min_velocity: min_v,
        all_positive: ok,
    }
}

/// Independent route: roots `t = |χ|²/ε²` of the quadratic
/// `det(tA_θ − B)` located by bisection, returned as `|χ|` for `t ≥ 0`.
pub fn chi_by_bisection(b: &Mat2, a_theta: &Mat2, epsilon: f64, tol_gap: f64) -> Vec<f64> {
    let q = |t: f64| {
        let m = [
            [t * a_theta[0][0] - b[0][0], t * a_theta[0][1] - b[0][1]],
            [t * a_theta[1][0] - b[1][0], t * a_theta[1][1] - b[1][1]],
        ];
        mat2_det(&m)
    };
    // q(t) = det(A) t² − c t + det(B) with c = A00 B11 + A11 B00 − 2 A01 B01
    let da = mat2_det(a_theta);
    let c = a_theta[0][0] * b[1][1] + a_theta[1][1] * b[0][0] - a_theta[0][1] * b[1][0] - a_theta[1][0] * b[0][1];
    let vertex = c / (2.0 * da);
    let bn = b.iter().flatten().map(|v| v.abs()).sum::<f64>();
    let amin = sym2_eigenvalues(a_theta)[0];
    let reach = bn / amin + vertex.abs() + 1.0;
    let bisect = |mut lo: f64, mut hi: f64| {
        let sign_lo = q(lo) > 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (q(mid) > 0.0) == sign_lo {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi.abs().max(lo.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let mut roots = Vec::new();
    if q(vertex) <= 0.0 {
        roots.push(bisect(vertex - reach, vertex));
        roots.push(bisect(vertex, vertex + reach));
    } else {
        // no real crossing: double root at the vertex up to roundoff
        roots.push(vertex);
        roots.push(vertex);
    }
    let scale = reach.max(1.0);
    roots
        .into_iter()
        .filter(|&t| t >= -tol_gap * scale)
        .map(|t| epsilon * t.max(0.0).sqrt())
        .collect()
}

/// `|det(ε⁻²|χ|²A_θ − B)|` relative to `max(‖ε⁻²|χ|²A_θ‖, ‖B‖)²`.
pub fn determinant_residual(b: &Mat2, a_theta: &Mat2, epsilon: f64, chi_norm: f64) -> f64 {
    let t = (chi_norm / epsilon).powi(2);
    let p = [
        [t * a_theta[0][0], t * a_theta[0][1]],
        [t * a_theta[1][0], t * a_theta[1][1]],
    ];
    let m = [
        [p[0][0] - b[0][0], p[0][1] - b[0][1]],
        [p[1][0] - b[1][0], p[1][1] - b[1][1]],
    ];
    let norm = |x: &Mat2| x.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let scale = norm(&p).max(norm(b)).powi(2).max(f64::MIN_POSITIVE);
    mat2_det(&m).abs() / scale
}
