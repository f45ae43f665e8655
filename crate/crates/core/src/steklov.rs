//! Discrete Dirichlet-to-Neumann map of the stiff region and its Steklov
//! eigenvalues.
//!
//! For a trace `g` on Γ the lift `u` minimizes the `χ`-shifted elastic
//! energy of the stiff cell among periodic fields with `u|_Γ = g`. Its
//! energy `a_χ(u, u) = g* S g` defines the Schur complement
//! `S = K_ΓΓ − K_ΓI K_II⁻¹ K_IΓ`, which stands for the negative of the DtN
//! operator. Eigenvalues of `(S, M_Γ)` are therefore the nonnegative
//! numbers `−ν_n`.

use std::io::Write;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::direction_stiffness;
use crate::eigen::{dense_pencil, EigenSet};
use crate::error::{HiconError, Result};
use crate::fem::{assemble_boundary_mass, assemble_stiffness, Constraints, DofMap, ElementOrder};
use crate::mesh::{RegionSel, TriMesh};
use crate::scalar::{Scalar, C64};
use crate::small::{sym2_eigenvalues, Mat2};
use crate::sparse::{CsrMatrix, SparseSolver, TripletBuilder};
use crate::tensor::{contract_x_chi, ElasticTensor, Quasimomentum};

const SCHUR_BLOCK: usize = 64;

/// Schur-complement DtN matrix on the interface DOFs.
#[derive(Debug, Clone)]
pub struct DtnMatrix {
    pub chi: Quasimomentum,
    /// Global free DOFs of the stiff space lying on Γ, ascending.
    pub gamma: Vec<usize>,
    pub s: Mat<C64>,
    pub m_gamma: Mat<C64>,
    /// Polygonal length of Γ.
    pub gamma_length: f64,
    /// Stiff-space stiffness, kept for lift solves.
    pub k: CsrMatrix<C64>,
    pub dofmap: DofMap,
}

impl DtnMatrix {
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// `max |S_ij − conj(S_ji)| / max |S|`.
    pub fn hermitian_residual(&self) -> f64 {
        let n = self.dim();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                num = num.max((self.s[(i, j)] - self.s[(j, i)].conj()).norm());
                den = den.max(self.s[(i, j)].norm());
            }
        }
        num / den.max(f64::MIN_POSITIVE)
    }

    pub fn max_abs(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .fold(0.0f64, |m, (i, j)| m.max(self.s[(i, j)].norm()))
    }

    /// `g* S g`.
    pub fn energy(&self, g: &[C64]) -> C64 {
        quad(&self.s, g, g)
    }

    /// `g* M_Γ g`.
    pub fn boundary_norm2(&self, g: &[C64]) -> f64 {
        quad(&self.m_gamma, g, g).re
    }

    /// Interface trace of a constant field.
    pub fn constant_trace(&self, c: [f64; 2]) -> Vec<C64> {
        let full = self.dofmap.interpolate(|_| [C64::new(c[0], 0.0), C64::new(c[1], 0.0)]);
        self.gamma.iter().map(|&d| full[d]).collect()
    }

    /// `g* S g / g* M_Γ g` for a constant trace.
    pub fn constant_rayleigh(&self, c: [f64; 2]) -> f64 {
        let g = self.constant_trace(c);
        self.energy(&g).re / self.boundary_norm2(&g)
    }
}

fn quad(a: &Mat<C64>, x: &[C64], y: &[C64]) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..x.len() {
        let mut row = C64::new(0.0, 0.0);
        for j in 0..y.len() {
            row += a[(i, j)] * y[j];
        }
        s += x[i].conj() * row;
    }
    s
}

/// Periodic stiff-region space used for the DtN map.
pub fn stiff_dofmap(mesh: &TriMesh, order: ElementOrder) -> Result<DofMap> {
    DofMap::new(mesh, order, RegionSel::Stiff, Constraints::PERIODIC)
}

/// Builds `S(χ)` and `M_Γ` for the stiff region.
pub fn dtn_schur(
    mesh: &TriMesh,
    a_stiff: &ElasticTensor,
    chi: Quasimomentum,
    order: ElementOrder,
) -> Result<DtnMatrix> {
    a_stiff.validate()?;
    let dofmap = stiff_dofmap(mesh, order)?;
    let k: CsrMatrix<C64> = assemble_stiffness(mesh, &dofmap, a_stiff, chi)?;
    let bm = assemble_boundary_mass(mesh, &dofmap)?;
    let gamma = bm.dofs;
    let n = dofmap.n_free();
    let mut on_gamma = vec![false; n];
    for &d in &gamma {
        on_gamma[d] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&d| !on_gamma[d]).collect();
    let k_ii = k.submatrix(&interior, &interior);
    let k_ig = k.submatrix(&interior, &gamma);
    let k_gi = k.submatrix(&gamma, &interior);
    let k_gg = k.submatrix(&gamma, &gamma);

    // Γ anchors the lift, so K_II is definite for every χ
    let solver = SparseSolver::cholesky(&k_ii)
        .map_err(|e| HiconError::Factorization(format!("interior block of the stiff region is singular: {e}")))?;
    let ng = gamma.len();
    let mut s = k_gg.to_faer_dense();
    // column blocks keep the dense solve memory at n_I × SCHUR_BLOCK
    let mut ig_cols: Vec<Vec<(usize, C64)>> = vec![Vec::new(); ng];
    for (i, j, v) in k_ig.iter() {
        ig_cols[j].push((i, v));
    }
    for start in (0..ng).step_by(SCHUR_BLOCK) {
        let width = SCHUR_BLOCK.min(ng - start);
        let mut x = Mat::<C64>::zeros(interior.len(), width);
        for c in 0..width {
            for &(i, v) in &ig_cols[start + c] {
                x[(i, c)] = v;
            }
        }
        solver.solve_mat_in_place(&mut x);
        for (i, j, v) in k_gi.iter() {
            for c in 0..width {
                s[(i, start + c)] -= v * x[(j, c)];
            }
        }
    }
    let m_gamma = bm.mass.map(C64::from_real).to_faer_dense();
    Ok(DtnMatrix {
        chi,
        gamma,
        s,
        m_gamma,
        gamma_length: mesh.interface_length(),
        k,
        dofmap,
    })
}

/// Energy of the explicit lift of `g`: solves the full periodic system with
/// the trace imposed by Lagrange multipliers and returns `u* K u`.
pub fn lift_energy(dtn: &DtnMatrix, g: &[C64]) -> Result<C64> {
    let n = dtn.k.nrows();
    let ng = dtn.dim();
    let mut tb = TripletBuilder::with_capacity(n + ng, n + ng, dtn.k.nnz() + 2 * ng);
    for (i, j, v) in dtn.k.iter() {
        tb.push(i, j, v);
    }
    let one = C64::new(1.0, 0.0);
    for (r, &d) in dtn.gamma.iter().enumerate() {
        tb.push(n + r, d, one);
        tb.push(d, n + r, one);
    }
    let solver = SparseSolver::lu(&tb.build())?;
    let mut rhs = vec![C64::new(0.0, 0.0); n + ng];
    rhs[n..].copy_from_slice(g);
    let sol = solver.solve(&rhs);
    let u = &sol[..n];
    let ku = dtn.k.mul_vec(u);
    Ok(u.iter().zip(&ku).map(|(a, b)| a.conj() * *b).sum())
}

/// Largest relative gap between `g* S g` and the explicit lift energy over
/// `samples` random complex traces.
pub fn energy_identity_error(dtn: &DtnMatrix, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let g: Vec<C64> = (0..dtn.dim())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let schur = dtn.energy(&g);
        let lift = lift_energy(dtn, &g)?;
        worst = worst.max((schur - lift).norm() / lift.norm());
    }
    Ok(worst)
}

/// The `k` smallest eigenpairs of `(S, M_Γ)`, i.e. `−ν_1 ≤ −ν_2 ≤ …`.
pub fn steklov_eigs(dtn: &DtnMatrix, k: usize) -> Result<EigenSet<C64>> {
    if k == 0 || k > dtn.dim() {
        return Err(HiconError::Config(format!(
            "requested {k} Steklov eigenvalues from {} interface DOFs",
            dtn.dim()
        )));
    }
    let mut set = dense_pencil(&dtn.s, &dtn.m_gamma, None)?;
    set.values.truncate(k);
    set.vectors.truncate(k);
    set.residuals.truncate(k);
    Ok(set)
}

/// `−Λ_χ^hom = |Γ|⁻¹ X_χ* A_macro X_χ` (real symmetric; the factors `i`
/// cancel).
pub fn dtn_hom(a_macro: &ElasticTensor, chi: [f64; 2], gamma_length: f64) -> Mat2 {
    let m = contract_x_chi(a_macro, chi);
    let s = 1.0 / gamma_length;
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// One `(|χ|, θ)` sample of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteklovRow {
    pub chi_norm: f64,
    pub theta: [f64; 2],
    /// `−ν_1 … −ν_4`.
    pub nu: [f64; 4],
    /// Eigenvalues of `−Λ_χ^hom`.
    pub hom: [f64; 2],
    /// `max_n | |χ|⁻²(−ν_n) − |χ|⁻² λ_n(−Λ_χ^hom) |` over `n = 1, 2`.
    pub err: f64,
    /// Rayleigh quotients of the constant traces `e₁`, `e₂`, divided by `|χ|²`.
    pub rayleigh: [f64; 2],
}

/// Fits for one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRate {
    pub theta: [f64; 2],
    /// Log-log slopes of `−ν_1`, `−ν_2` against `|χ|`.
    pub small_slopes: [f64; 2],
    pub nu3_min: f64,
    /// `(max − min) / min` of `−ν_3` over the sweep.
    pub nu3_variation: f64,
    pub error_slope: f64,
    /// The error falls monotonically as `|χ|` decreases.
    pub errors_shrink: bool,
    /// Smallest and largest constant-trace quotient over `|χ|²`.
    pub rayleigh_bounds: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub chi_norms: Vec<f64>,
    pub gamma_length: f64,
    pub gamma_dofs: usize,
    pub directions: Vec<DirectionRate>,
    /// Spread of the error slope across directions.
    pub error_slope_spread: f64,
    pub max_hermitian_residual: f64,
    #[serde(skip)]
    pub rows: Vec<SteklovRow>,
}

impl RateReport {
    pub fn worst_small_slope_deviation(&self) -> f64 {
        self.directions
            .iter()
            .flat_map(|d| d.small_slopes)
            .fold(0.0, |m, s| m.max((s - 2.0).abs()))
    }

    pub fn min_error_slope(&self) -> f64 {
        self.directions
            .iter()
            .map(|d| d.error_slope)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_nu3(&self) -> f64 {
        self.directions.iter().map(|d| d.nu3_min).fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> Result<()> {
        writeln!(w, "# {header}")?;
        writeln!(w, "chi_norm,theta_x,theta_y,nu1,nu2,nu3,nu4,hom_l1,hom_l2,err")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.chi_norm, r.theta[0], r.theta[1], r.nu[0], r.nu[1], r.nu[2], r.nu[3], r.hom[0], r.hom[1], r.err
            )?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W, tool_version: &str, config_hash: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            tool_version: &'a str,
            config_hash: &'a str,
            #[serde(flatten)]
            report: &'a RateReport,
        }
        serde_json::to_writer_pretty(
            w,
            &Out {
                tool_version,
                config_hash,
                report: self,
            },
        )?;
        Ok(())
    }
}

/// One sample of the sweep.
pub fn steklov_sample(
    mesh: &TriMesh,
    a_stiff: &ElasticTensor,
    a_macro: &ElasticTensor,
    chi_norm: f64,
    theta: [f64; 2],
    order: ElementOrder,
) -> Result<(SteklovRow, f64)> {
    let dir = direction_stiffness(a_macro, theta)?;
    let theta = dir.theta;
    let chi = Quasimomentum::from_polar(chi_norm, theta);
    let dtn = dtn_schur(mesh, a_stiff, chi, order)?;
    let set = steklov_eigs(&dtn, 4.min(dtn.dim()))?;
    let mut nu = [f64::NAN; 4];
    for (k, v) in set.values.iter().enumerate() {
        nu[k] = *v;
    }
    let hom = sym2_eigenvalues(&dtn_hom(a_macro, chi.0, dtn.gamma_length));
    let c2 = chi_norm * chi_norm;
    let err = (0..2).map(|n| ((nu[n] - hom[n]) / c2).abs()).fold(0.0, f64::max);
    let rayleigh = [
        dtn.constant_rayleigh([1.0, 0.0]) / c2,
        dtn.constant_rayleigh([0.0, 1.0]) / c2,
    ];
    Ok((
        SteklovRow {
            chi_norm,
            theta,
            nu,
            hom,
            err,
            rayleigh,
        },
        dtn.hermitian_residual(),
    ))
}

/// Sweeps `|χ|` along each direction and fits the rates.
pub fn dtn_convergence_study(
    mesh: &TriMesh,
    a_stiff: &ElasticTensor,
    a_macro: &ElasticTensor,
    chi_norms: &[f64],
    thetas: &[[f64; 2]],
    order: ElementOrder,
) -> Result<RateReport> {
    if chi_norms.len() < 2 || chi_norms.iter().any(|&c| !(c > 0.0 && c <= 0.3)) {
        return Err(HiconError::Config(
            "steklov sweep needs at least two |chi| values in (0, 0.3]".into(),
        ));
    }
    if chi_norms.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HiconError::Config("steklov |chi| values must increase".into()));
    }
    if thetas.is_empty() {
        return Err(HiconError::Config("steklov sweep needs a direction".into()));
    }
    let jobs: Vec<([f64; 2], f64)> = thetas
        .iter()
        .flat_map(|&t| chi_norms.iter().map(move |&c| (t, c)))
        .collect();
    let results: Vec<(SteklovRow, f64)> = jobs
        .par_iter()
        .map(|&(t, c)| steklov_sample(mesh, a_stiff, a_macro, c, t, order))
        .collect::<Result<_>>()?;
    let max_hermitian_residual = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let rows: Vec<SteklovRow> = results.into_iter().map(|r| r.0).collect();

    let directions: Vec<DirectionRate> = rows
        .chunks(chi_norms.len())
        .map(|chunk| {
            let col = |n: usize| chunk.iter().map(|r| r.nu[n]).collect::<Vec<_>>();
            let nu3 = col(2);
            let nu3_min = nu3.iter().copied().fold(f64::INFINITY, f64::min);
            let nu3_max = nu3.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let errs: Vec<f64> = chunk.iter().map(|r| r.err).collect();
            let ray = chunk.iter().flat_map(|r| r.rayleigh);
            let (lo, hi) = ray.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), q| (a.min(q), b.max(q)));
            DirectionRate {
                theta: chunk[0].theta,
                small_slopes: [loglog_slope(chi_norms, &col(0)), loglog_slope(chi_norms, &col(1))],
                nu3_min,
                nu3_variation: (nu3_max - nu3_min) / nu3_min,
                error_slope: loglog_slope(chi_norms, &errs),
                errors_shrink: errs.windows(2).all(|w| w[1] > w[0]),
                rayleigh_bounds: [lo, hi],
            }
        })
        .collect();
    let (smin, smax) = directions.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| {
        (a.min(d.error_slope), b.max(d.error_slope))
    });
    Ok(RateReport {
        chi_norms: chi_norms.to_vec(),
        gamma_length: mesh.interface_length(),
        gamma_dofs: stiff_dofmap(mesh, order)?.interface_dofs().len(),
        directions,
        error_slope_spread: smax - smin,
        max_hermitian_residual,
        rows,
    })
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

    fn a() -> ElasticTensor {
        ElasticTensor::isotropic(1.0, 0.1)
    }

    #[test]
    fn schur_energy_matches_explicit_lift() {
        let m = mesh();
        let dtn = dtn_schur(&m, &a(), Quasimomentum::new([0.07, -0.05]), ElementOrder::P2).unwrap();
        assert!(energy_identity_error(&dtn, 20, 11).unwrap() <= 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<C64> = (0..dtn.dim())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let e = dtn.energy(&g);
        assert!(e.re > 0.0 && e.im.abs() < 1e-9 * e.re);
    }

    #[test]
    fn constants_lie_in_the_kernel_at_zero() {
        let m = mesh();
        let dtn = dtn_schur(&m, &a(), Quasimomentum::ZERO, ElementOrder::P2).unwrap();
        let scale = dtn.max_abs();
        for c in [[1.0, 0.0], [0.0, 1.0]] {
            let g = dtn.constant_trace(c);
            let n = dtn.dim();
            let sg = (0..n)
                .map(|i| (0..n).map(|j| dtn.s[(i, j)] * g[j]).sum::<C64>().norm())
                .fold(0.0, f64::max);
            assert!(sg < 1e-10 * scale, "{sg}");
        }
        let set = steklov_eigs(&dtn, 3).unwrap();
        let s_norm = set.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(set.values[0].abs() < 1e-8 * s_norm.max(dtn.max_abs()));
        assert!(set.values[1].abs() < 1e-8 * s_norm.max(dtn.max_abs()));
        assert!(set.values[2] > 1e-3);
    }

    #[test]
    fn time_reversal_and_hermiticity() {
        let m = mesh();
        let chi = Quasimomentum::new([0.3, 0.11]);
        let p = dtn_schur(&m, &a(), chi, ElementOrder::P1).unwrap();
        let q = dtn_schur(&m, &a(), chi.neg(), ElementOrder::P1).unwrap();
        assert!(p.hermitian_residual() < 1e-10);
        let scale = p.max_abs();
        for i in 0..p.dim() {
            for j in 0..p.dim() {
                assert!((p.s[(i, j)] - q.s[(i, j)].conj()).norm() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn hom_matches_direction_stiffness() {
        let am = ElasticTensor::isotropic(0.7, 0.2);
        let theta = [0.6, 0.8];
        let d = direction_stiffness(&am, theta).unwrap();
        let chi = [0.05 * 0.6, 0.05 * 0.8];
        let h = dtn_hom(&am, chi, 0.3);
        for i in 0..2 {
            for j in 0..2 {
                assert!((0.3 * h[i][j] - 0.0025 * d.a_theta[i][j]).abs() < 1e-12);
            }
        }
        assert_eq!(dtn_hom(&am, [0.0, 0.0], 0.3), [[0.0; 2]; 2]);
    }

    #[test]
    fn slope_fit_recovers_powers() {
        let x = [0.02, 0.04, 0.08, 0.16];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_eigenvalues_scale_quadratically() {
        let m = mesh();
        let am = crate::macro_tensor::assemble_macro(&m, &a(), ElementOrder::P2)
            .unwrap()
            .tensor();
        let r = dtn_convergence_study(
            &m,
            &a(),
            &am,
            &[0.02, 0.04, 0.08, 0.16],
            &[[1.0, 0.0]],
            ElementOrder::P2,
        )
        .unwrap();
        let d = &r.directions[0];
        assert!(r.worst_small_slope_deviation() < 0.1, "{d:?}");
        assert!(d.nu3_variation < 0.2 && d.nu3_min > 0.0);
        assert!(d.error_slope >= 0.8 && d.errors_shrink, "{d:?} {:?}", r.rows);
    }
}
