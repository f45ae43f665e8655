//! Invariant checks over a whole configuration, run at a reduced mesh level,
//! and the reusable check routines behind them.

use std::io::Write;
use std::sync::Arc;

use crate::bloch::{bloch_eigs, BlochData};
use crate::config::RunConfig;
use crate::dispersion::{
    determinant_residual, direction_stiffness, dispersion_branches, group_velocity_check, half_circle, interval_id,
    nonnegative_count,
};
use crate::eigen::{dense_spectrum, smallest_eigenpairs, EigenOptions};
use crate::error::Result;
use crate::fem::{Constraints, DofMap, ElementOrder, HermitianSystem};
use crate::macro_tensor::assemble_macro;
use crate::mesh::{build_unit_cell_mesh, RegionSel, TriMesh};
use crate::scalar::{Scalar, C64};
use crate::small::sym2_eigenvalues;
use crate::sparse::CsrMatrix;
use crate::steklov::{dtn_convergence_study, dtn_schur, energy_identity_error, steklov_eigs};
use crate::tensor::{ElasticTensor, Quasimomentum};
use crate::zhikov::{linspace, zhikov_matrix, ZhikovOptions, POLE_GUARD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn push(&mut self, name: &str, ok: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        });
    }

    fn record<T>(&mut self, name: &str, r: Result<T>, judge: impl FnOnce(T) -> (bool, String)) {
        match r {
            Ok(v) => {
                let (ok, detail) = judge(v);
                self.push(name, ok, detail);
            }
            Err(e) => self.push(name, false, format!("error: {e}")),
        }
    }

    pub fn skip(&mut self, name: &str, why: &str) {
        self.checks.push(Check {
            name: name.into(),
            status: Status::Skip,
            detail: why.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status == Status::Pass)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| c.status == Status::Fail).count()
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            writeln!(w, "{tag}  {:width$}  {}", c.name, c.detail)?;
        }
        writeln!(w, "{} checks, {} failed", self.checks.len(), self.failures())
    }
}

/// Largest relative eigenvalue gap between the Lanczos route and the dense
/// oracle for the `nev` smallest eigenvalues.
pub fn oracle_gap<T: Scalar>(k: &CsrMatrix<T>, m: &CsrMatrix<T>, nev: usize, opts: &EigenOptions) -> Result<f64> {
    let it = smallest_eigenpairs(k, m, nev, None, opts)?;
    let dense = dense_spectrum(k, m)?;
    let scale = dense.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(it
        .values
        .iter()
        .zip(&dense.values)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12 * scale))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZhikovChecks {
    /// `max |B(0)|`.
    pub b_at_zero: f64,
    /// Pole-free points where the derivative was sampled.
    pub derivative_points: usize,
    /// Smallest eigenvalue of the centred-difference derivative.
    pub min_derivative_eig: f64,
    /// Consecutive same-interval grid pairs checked for monotonicity.
    pub monotone_pairs: usize,
    pub monotone: bool,
}

/// Herglotz structure of `B` on `[lo, hi]`: `B(0) = 0`, positive-definite
/// derivative at `derivative_points` pole-free points and strictly rising
/// `β₁, β₂` on each analyticity interval of a `grid_points` grid.
pub fn check_zhikov(
    data: &BlochData,
    lo: f64,
    hi: f64,
    derivative_points: usize,
    grid_points: usize,
    opts: &ZhikovOptions,
) -> Result<ZhikovChecks> {
    let b0 = zhikov_matrix(0.0, data, opts)?.b;
    let b_at_zero = b0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));

    let poles = data.poles();
    // twice as many staggered candidates as needed, thinned evenly after
    // dropping those close to a pole
    let m = 2 * derivative_points.max(1);
    let candidates: Vec<f64> = (0..m)
        .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / m as f64)
        .filter(|&z| {
            let h = 1e-6 * z.abs().max(1.0);
            !poles.iter().any(|&p| (p - z).abs() < 100.0 * h + opts.delta_pole(data))
        })
        .collect();
    let take = derivative_points.min(candidates.len());
    let mut min_eig = f64::INFINITY;
    for i in 0..take {
        let z = candidates[i * candidates.len() / take];
        let h = 1e-6 * z.abs().max(1.0);
        let bp = zhikov_matrix(z + h, data, opts)?.b;
        let bm = zhikov_matrix(z - h, data, opts)?.b;
        let d = [
            [(bp[0][0] - bm[0][0]) / (2.0 * h), (bp[0][1] - bm[0][1]) / (2.0 * h)],
            [(bp[1][0] - bm[1][0]) / (2.0 * h), (bp[1][1] - bm[1][1]) / (2.0 * h)],
        ];
        min_eig = min_eig.min(sym2_eigenvalues(&d)[0]);
    }

    let grid = linspace(lo, hi, grid_points);
    let mut prev: Option<(usize, [f64; 2])> = None;
    let mut monotone = true;
    let mut pairs = 0;
    for &z in &grid {
        let Ok(e) = zhikov_matrix(z, data, opts) else {
            prev = None;
            continue;
        };
        let id = interval_id(&poles, z);
        if let Some((pid, pb)) = prev {
            if pid == id {
                pairs += 1;
                monotone &= e.betas[0] > pb[0] && e.betas[1] > pb[1];
            }
        }
        prev = Some((id, e.betas));
    }
    Ok(ZhikovChecks {
        b_at_zero,
        derivative_points: take,
        min_derivative_eig: min_eig,
        monotone_pairs: pairs,
        monotone,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionChecks {
    /// `(direction, z)` pairs compared against the nonnegative count.
    pub count_points: usize,
    pub count_mismatches: usize,
    pub det_samples: usize,
    pub max_det_residual: f64,
    pub velocity_checked: usize,
    pub min_velocity: f64,
    pub velocities_positive: bool,
    /// `max | |χ|(ε)/ε − |χ|(ε₀)/ε₀ |` relative to `|χ|(ε₀)/ε₀`.
    pub eps_scaling_error: f64,
}

/// Branch counting, determinant residuals, group velocities and `ε`
/// scaling over `thetas × z_grid` for each `ε`.
pub fn check_dispersion(
    data: &BlochData,
    a_macro: &ElasticTensor,
    z_grid: &[f64],
    thetas: &[[f64; 2]],
    epsilons: &[f64],
    opts: &ZhikovOptions,
) -> Result<DispersionChecks> {
    let mut c = DispersionChecks {
        count_points: 0,
        count_mismatches: 0,
        det_samples: 0,
        max_det_residual: 0.0,
        velocity_checked: 0,
        min_velocity: f64::INFINITY,
        velocities_positive: true,
        eps_scaling_error: 0.0,
    };
    for &theta in thetas {
        let dir = direction_stiffness(a_macro, theta)?;
        let mut reference: Option<Vec<f64>> = None;
        for (k, &eps) in epsilons.iter().enumerate() {
            let branches = dispersion_branches(z_grid, theta, eps, data, a_macro, opts)?;
            let mut flat = Vec::new();
            for b in &branches {
                let v = group_velocity_check(b);
                c.velocity_checked += v.checked;
                c.min_velocity = c.min_velocity.min(v.min_velocity);
                c.velocities_positive &= v.all_positive;
                for s in &b.samples {
                    let bz = zhikov_matrix(s.z, data, opts)?.b;
                    let r = determinant_residual(&bz, &dir.a_theta, eps, s.chi_norm);
                    c.max_det_residual = c.max_det_residual.max(r);
                    c.det_samples += 1;
                    flat.push(s.chi_norm / eps);
                }
            }
            if k == 0 {
                for &z in z_grid {
                    let Ok(expected) = nonnegative_count(z, data, opts) else {
                        continue;
                    };
                    let got = branches.iter().flat_map(|b| &b.samples).filter(|s| s.z == z).count();
                    c.count_points += 1;
                    if got != expected {
                        c.count_mismatches += 1;
                    }
                }
                reference = Some(flat);
            } else if let Some(r) = &reference {
                if r.len() != flat.len() {
                    c.eps_scaling_error = f64::INFINITY;
                } else {
                    for (a, b) in r.iter().zip(&flat) {
                        let e = (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
                        if a.abs() > 0.0 {
                            c.eps_scaling_error = c.eps_scaling_error.max(e);
                        }
                    }
                }
            }
        }
    }
    Ok(c)
}

/// Runs the invariant suite for a parsed (not yet validated) config at
/// `level` refinement.
pub fn validate_config(cfg: &RunConfig, level: usize) -> Report {
    let mut r = Report::default();
    if let Err(e) = cfg.validate() {
        r.push("config", false, e.to_string());
        r.skip("numerics", "config invalid");
        return r;
    }
    r.push("config", true, format!("hash {}", &cfg.hash()[..16]));
    let mut cfg = cfg.clone();
    cfg.set_refine(level);
    let a = cfg.material.tensor();
    let opts = cfg.eigen_options();
    let zopts = cfg.zhikov.options();

    let mesh = match build_unit_cell_mesh(&cfg.geometry).and_then(|m| m.refined(level)) {
        Ok(m) => m,
        Err(e) => {
            r.push("mesh", false, e.to_string());
            return r;
        }
    };
    let ellipse_area = mesh.ellipse.map_or(0.0, |e| e.area());
    let area_err = (mesh.soft_area() - ellipse_area).abs() / ellipse_area;
    r.push(
        "mesh",
        mesh.validate().is_ok() && area_err < 0.02,
        format!(
            "{} triangles, soft area error {:.2}%",
            mesh.n_triangles(),
            100.0 * area_err
        ),
    );

    stiffness_checks(&mut r, &mesh, &a, cfg.bloch.disc.element_order);

    let order = cfg.bloch.disc.element_order;
    let bloch = bloch_eigs(&mesh, &a, cfg.bloch.n_modes, order, &opts);
    let data = match bloch {
        Ok(d) => {
            r.push(
                "bloch spectrum",
                d.etas[0] > 0.0 && d.etas.windows(2).all(|w| w[0] <= w[1]),
                format!("eta_1 = {:.6e}, {} contributing modes", d.etas[0], d.poles().len()),
            );
            d
        }
        Err(e) => {
            r.push("bloch spectrum", false, e.to_string());
            return r;
        }
    };
    r.record(
        "bloch lanczos vs dense",
        crate::bloch::soft_dofmap(&mesh, order).and_then(|d| {
            let sys = HermitianSystem::<f64>::assemble(&mesh, Arc::new(d), &a, Quasimomentum::ZERO)?;
            oracle_gap(&sys.k, &sys.m, cfg.bloch.n_modes, &opts)
        }),
        |g| (g <= 1e-9, format!("max relative gap {g:.2e}")),
    );

    let am = match assemble_macro(&mesh, &a, cfg.macro_.element_order) {
        Ok(m) => {
            r.push(
                "macro tensor",
                m.symmetry_residual < 1e-10 && m.margin > 0.0,
                format!("symmetry {:.1e}, margin {:.6e}", m.symmetry_residual, m.margin),
            );
            m
        }
        Err(e) => {
            r.push("macro tensor", false, e.to_string());
            return r;
        }
    };
    r.record(
        "macro no-inclusion",
        assemble_macro(&mesh.without_inclusion(), &a, cfg.macro_.element_order),
        |m| {
            let err = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| (m.voigt[i][j] - a.voigt[i][j]).abs())
                .fold(0.0, f64::max);
            (err <= 1e-12, format!("max deviation {err:.1e}"))
        },
    );

    let (lo, hi) = cfg.zhikov.z_grid.resolve(*data.etas.last().unwrap());
    let grid = linspace(lo, hi, cfg.zhikov.z_grid.points);
    let on_pole = grid
        .iter()
        .filter(|&&z| data.poles().iter().any(|&p| (p - z).abs() < POLE_GUARD * p.abs()))
        .count();
    r.push(
        "z grid avoids poles",
        on_pole == 0,
        format!("{on_pole} grid points sit on a pole"),
    );
    r.record(
        "zhikov herglotz",
        check_zhikov(&data, lo, hi, 200, cfg.zhikov.z_grid.points, &zopts),
        |c| {
            (
                c.b_at_zero == 0.0 && c.min_derivative_eig > 0.0 && c.monotone,
                format!(
                    "|B(0)| = {:.1e}, min dB/dz eig {:.3e} over {} points, monotone on {} pairs",
                    c.b_at_zero, c.min_derivative_eig, c.derivative_points, c.monotone_pairs
                ),
            )
        },
    );

    let thetas = half_circle(cfg.dispersion.theta_points.min(8));
    r.record(
        "dispersion",
        check_dispersion(&data, &am.tensor(), &grid, &thetas, &cfg.dispersion.epsilons, &zopts),
        |c| {
            (
                c.count_mismatches == 0
                    && c.max_det_residual <= 1e-8
                    && c.velocities_positive
                    && c.eps_scaling_error <= 1e-10,
                format!(
                    "count mismatches {}/{}, det residual {:.1e}, min velocity {:.3e}, eps scaling {:.1e}",
                    c.count_mismatches, c.count_points, c.max_det_residual, c.min_velocity, c.eps_scaling_error
                ),
            )
        },
    );

    let sorder = cfg.steklov.disc.element_order;
    r.record(
        "steklov kernel at chi = 0",
        dtn_schur(&mesh, &a, Quasimomentum::ZERO, sorder).and_then(|d| {
            let v = steklov_eigs(&d, 3)?.values;
            Ok((v, d.max_abs()))
        }),
        |(v, s)| {
            (
                v[0].abs() <= 1e-8 * s && v[1].abs() <= 1e-8 * s && v[2] > 1e-8 * s,
                format!("{:.2e}, {:.2e}, {:.4e}", v[0], v[1], v[2]),
            )
        },
    );
    r.record(
        "steklov energy identity",
        dtn_schur(&mesh, &a, Quasimomentum::new([0.07, -0.03]), sorder).and_then(|d| energy_identity_error(&d, 20, 7)),
        |e| (e <= 1e-9, format!("max relative gap {e:.1e}")),
    );
    let am_s = assemble_macro(&mesh, &a, sorder);
    r.record(
        "steklov asymptotics",
        am_s.and_then(|am| {
            dtn_convergence_study(
                &mesh,
                &a,
                &am.tensor(),
                &cfg.steklov.chi_norms,
                &cfg.steklov.directions,
                sorder,
            )
        }),
        |rep| {
            (
                rep.worst_small_slope_deviation() <= 0.1
                    && rep.min_error_slope() >= 0.8
                    && rep.min_nu3() > 0.0
                    && rep.error_slope_spread < 0.2,
                format!(
                    "small slopes within {:.3} of 2, error slope {:.3}, min nu3 {:.4}",
                    rep.worst_small_slope_deviation(),
                    rep.min_error_slope(),
                    rep.min_nu3()
                ),
            )
        },
    );
    r
}

fn stiffness_checks(r: &mut Report, mesh: &TriMesh, a: &ElasticTensor, order: ElementOrder) {
    let chi = Quasimomentum::new([0.37, -1.1]);
    let built = DofMap::new(mesh, order, RegionSel::Stiff, Constraints::PERIODIC).and_then(|d| {
        let d = Arc::new(d);
        let p = HermitianSystem::<C64>::assemble(mesh, d.clone(), a, chi)?;
        let q = HermitianSystem::<C64>::assemble(mesh, d, a, chi.neg())?;
        Ok((p, q))
    });
    r.record("stiffness symmetry", built, |(p, q)| {
        let scale = p.k.max_abs();
        let herm = p.k.hermitian_residual() / scale;
        let tr = p.k.add_scaled(C64::new(-1.0, 0.0), &q.k.conj()).max_abs() / scale;
        (
            herm <= 1e-12 && tr <= 1e-12,
            format!("hermitian {herm:.1e}, time reversal {tr:.1e}"),
        )
    });
    let korn = DofMap::new(
        mesh,
        order,
        RegionSel::Stiff,
        Constraints {
            periodic: true,
            dirichlet_interface: true,
            mean_zero: false,
        },
    )
    .and_then(|d| {
        let sys = HermitianSystem::<f64>::assemble(mesh, Arc::new(d), a, Quasimomentum::ZERO)?;
        smallest_eigenpairs(&sys.k, &sys.m, 1, None, &EigenOptions::default())
    });
    r.record("korn (clamped interface)", korn, |s| {
        (s.values[0] > 0.0, format!("lowest eigenvalue {:.4e}", s.values[0]))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> BlochData {
        BlochData::from_parts(vec![1.0, 1.1, 2.5], vec![[0.5, 0.0], [0.0, 0.55], [0.2, 0.1]], 0.5).unwrap()
    }

    #[test]
    fn synthetic_zhikov_passes() {
        let c = check_zhikov(&synthetic(), 0.0, 3.0, 50, 300, &ZhikovOptions::default()).unwrap();
        assert_eq!(c.b_at_zero, 0.0);
        assert!(c.min_derivative_eig > 0.0 && c.derivative_points == 50);
        assert!(c.monotone && c.monotone_pairs > 250);
    }

    #[test]
    fn synthetic_dispersion_passes() {
        let a = ElasticTensor::isotropic(0.8, 0.2);
        let grid = linspace(0.0, 3.0, 200);
        let c = check_dispersion(
            &synthetic(),
            &a,
            &grid,
            &half_circle(5),
            &[1e-3, 1e-4, 1e-5],
            &ZhikovOptions::default(),
        )
        .unwrap();
        assert_eq!(c.count_mismatches, 0);
        assert!(c.max_det_residual <= 1e-8 && c.velocities_positive);
        assert!(c.eps_scaling_error <= 1e-10);
    }

    #[test]
    fn invalid_lambda_is_flagged() {
        let mut c = RunConfig::worked_example();
        c.material.lambda = -1.0;
        let r = validate_config(&c, 0);
        assert_eq!(r.checks[0].status, Status::Fail);
        assert!(!r.all_passed());
    }

    #[test]
    fn table_lists_every_check() {
        let mut r = Report::default();
        r.push("a", true, "fine".into());
        r.push("bb", false, "broken".into());
        r.skip("c", "later");
        let mut buf = Vec::new();
        r.write_table(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("PASS  a   fine") && s.contains("FAIL  bb  broken"));
        assert!(s.ends_with("3 checks, 1 failed\n"));
    }
}
