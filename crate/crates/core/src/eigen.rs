//! Generalized Hermitian eigenproblems `K x = λ M x`.
//!
//! [`smallest_eigenpairs`] runs a thick-restart Lanczos iteration on the
//! shift-inverted operator `(K − σM)⁻¹M`, which is self-adjoint in the
//! `M` inner product. Every new Krylov vector is orthogonalized twice
//! against the whole basis. When `K − σM` admits a Cholesky factorization
//! the shift is certified to lie below the spectrum, so the largest Ritz
//! values of the operator are exactly the smallest eigenvalues of the
//! pencil.
//!
//! A single Krylov sequence cannot see more than one direction of an exactly
//! repeated eigenvalue, so after convergence the solver restarts in the
//! `M`-orthogonal complement of what it found and merges anything smaller.
//!
//! [`dense_spectrum`] is the reference route: Cholesky-reduce `M`, then a
//! dense Hermitian eigensolve.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HiconError, Result};
use crate::scalar::{dot, Scalar};
use crate::sparse::{CsrMatrix, SparseSolver};

pub const DENSE_CAP: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Bound on the normalized residual of every returned pair.
    pub rtol: f64,
    /// Relative Ritz-estimate tolerance inside the Lanczos iteration.
    pub lanczos_tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            lanczos_tol: 1e-12,
            max_restarts: 400,
            seed: 0x5eed_1a2c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSet<T> {
    /// Ascending.
    pub values: Vec<f64>,
    /// `M`-orthonormal eigenvectors, one per value.
    pub vectors: Vec<Vec<T>>,
    /// `‖Kx − λMx‖ / ((‖K‖ + |λ|‖M‖)‖x‖)`, infinity norms for the matrices.
    pub residuals: Vec<f64>,
}

impl<T: Scalar> EigenSet<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest deviation of `XᴴMX` from the identity.
    pub fn orthonormality_error(&self, m: &CsrMatrix<T>) -> f64 {
        let mx: Vec<Vec<T>> = self.vectors.iter().map(|x| m.mul_vec(x)).collect();
        let mut err = 0.0f64;
        for i in 0..self.len() {
            for j in 0..self.len() {
                let g = dot(&self.vectors[i], &mx[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((g - T::from_real(target)).modulus());
            }
        }
        err
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Normalized residual of one pair.
pub fn residual<T: Scalar>(k: &CsrMatrix<T>, m: &CsrMatrix<T>, lambda: f64, x: &[T]) -> f64 {
    let kx = k.mul_vec(x);
    let mx = m.mul_vec(x);
    let r: f64 = kx
        .iter()
        .zip(&mx)
        .map(|(&a, &b)| (a - b.scale(lambda)).abs2())
        .sum::<f64>()
        .sqrt();
    let xn = crate::scalar::norm2(x);
    r / ((k.norm_inf() + lambda.abs() * m.norm_inf()) * xn).max(f64::MIN_POSITIVE)
}

/// Scales `x` so that its largest-modulus entry (first one on ties) is
/// real and positive.
pub fn normalize_phase<T: Scalar>(x: &mut [T]) {
    let mut best = 0;
    let mut best_mod = -1.0;
    for (i, v) in x.iter().enumerate() {
        let m = v.abs2();
        if m > best_mod * (1.0 + 1e-12) {
            best = i;
            best_mod = m;
        }
    }
    if best_mod <= 0.0 {
        return;
    }
    let p = x[best];
    let phase = p.conj().scale(1.0 / p.modulus());
    for v in x.iter_mut() {
        *v *= phase;
    }
}

struct ShiftInvert<'a, T: Scalar> {
    solver: SparseSolver<T>,
    m: &'a CsrMatrix<T>,
    sigma: f64,
}

impl<T: Scalar> ShiftInvert<'_, T> {
    fn apply(&self, x: &[T]) -> Vec<T> {
        self.solver.solve(&self.m.mul_vec(x))
    }

    fn certified(&self) -> bool {
        self.solver.is_cholesky()
    }
}

fn factor_shifted<'a, T: Scalar>(k: &CsrMatrix<T>, m: &'a CsrMatrix<T>, shift: f64) -> Result<ShiftInvert<'a, T>> {
    let scale = k.norm_inf() / m.norm_inf().max(f64::MIN_POSITIVE);
    let mut sigma = shift;
    for attempt in 0..6 {
        let shifted = k.add_scaled(T::from_real(-sigma), m);
        match SparseSolver::cholesky(&shifted) {
            Ok(solver) => return Ok(ShiftInvert { solver, m, sigma }),
            Err(e) => {
                log::debug!("shift {sigma:e} not below the spectrum ({e}), attempt {attempt}");
                sigma -= (10.0 * sigma.abs()).max(1e-8 * scale).max(1e-300);
            }
        }
    }
    log::warn!("no certified shift found; falling back to LU at shift {shift:e}");
    let shifted = k.add_scaled(T::from_real(-shift), m);
    let solver = SparseSolver::lu(&shifted)?;
    Ok(ShiftInvert {
        solver,
        m,
        sigma: shift,
    })
}

fn random_vector<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    (0..n)
        .map(|_| {
            let re = rng.gen_range(-1.0..1.0);
            let im = if T::IS_COMPLEX { rng.gen_range(-1.0..1.0) } else { 0.0 };
            T::from_c64(crate::scalar::C64::new(re, im))
        })
        .collect()
}

/// Removes the `M`-components along `basis` (pairs `(v, Mv)`), twice.
fn m_orthogonalize<T: Scalar>(w: &mut [T], basis: &[(Vec<T>, Vec<T>)], coeffs: Option<&mut [T]>) {
    let mut acc = vec![T::from_real(0.0); basis.len()];
    for _pass in 0..2 {
        for (i, (v, mv)) in basis.iter().enumerate() {
            let h = dot(mv, w);
            acc[i] += h;
            crate::scalar::axpy(-h, v, w);
        }
    }
    if let Some(c) = coeffs {
        c.copy_from_slice(&acc);
    }
}

fn m_norm<T: Scalar>(m: &CsrMatrix<T>, x: &[T]) -> (f64, Vec<T>) {
    let mx = m.mul_vec(x);
    (dot(x, &mx).re().max(0.0).sqrt(), mx)
}

/// `(θ, u, Mu)` Ritz triples of the shift-inverted operator.
type Ritz<T> = Vec<(f64, Vec<T>, Vec<T>)>;

fn lanczos<T: Scalar>(
    op: &ShiftInvert<'_, T>,
    nev: usize,
    locked: &[(Vec<T>, Vec<T>)],
    opts: &EigenOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Ritz<T>> {
    let m = op.m;
    let n = m.nrows();
    let avail = n - locked.len();
    let nev = nev.min(avail);
    if nev == 0 {
        return Ok(Vec::new());
    }
    let ncv = (2 * nev + 10).max(24).min(avail);
    let zero = T::from_real(0.0);

    let fresh = |rng: &mut ChaCha8Rng, basis: &[(Vec<T>, Vec<T>)]| -> Result<(Vec<T>, Vec<T>)> {
        for _ in 0..8 {
            let mut v = random_vector::<T>(n, rng);
            m_orthogonalize(&mut v, locked, None);
            m_orthogonalize(&mut v, basis, None);
            let (nrm, _) = m_norm(m, &v);
            if nrm > 1e-10 {
                v.iter_mut().for_each(|x| *x = x.scale(1.0 / nrm));
                let mv = m.mul_vec(&v);
                return Ok((v, mv));
            }
        }
        Err(HiconError::Convergence("could not extend the Krylov basis".into()))
    };

    let mut basis: Vec<(Vec<T>, Vec<T>)> = vec![fresh(rng, &[])?];
    let mut h = vec![vec![zero; ncv]; ncv];
    let mut start = 0;
    for restart in 0..opts.max_restarts {
        let mut resid: Vec<T> = Vec::new();
        let mut beta = 0.0;
        for j in start..ncv {
            let mut w = op.apply(&basis[j].0);
            m_orthogonalize(&mut w, locked, None);
            let mut c = vec![zero; j + 1];
            m_orthogonalize(&mut w, &basis[..=j], Some(&mut c));
            for (i, &ci) in c.iter().enumerate() {
                h[i][j] = ci;
                h[j][i] = ci.conj();
            }
            h[j][j] = T::from_real(c[j].re());
            let (b, _) = m_norm(m, &w);
            let scale = c[j].modulus().max(f64::MIN_POSITIVE);
            if j + 1 < ncv {
                if b <= 1e-13 * scale {
                    // invariant subspace: continue with a decoupled vector
                    let v = fresh(rng, &basis)?;
                    basis.push(v);
                    h[j + 1][j] = zero;
                    h[j][j + 1] = zero;
                } else {
                    w.iter_mut().for_each(|x| *x = x.scale(1.0 / b));
                    let mw = m.mul_vec(&w);
                    basis.push((w, mw));
                }
            } else {
                beta = b;
                resid = w;
            }
        }

        let mut hm = Mat::<T>::zeros(ncv, ncv);
        for i in 0..ncv {
            for j in 0..ncv {
                hm[(i, j)] = h[i][j];
            }
        }
        let eig = hm
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| HiconError::Convergence(format!("projected eigensolve: {e:?}")))?;
        let s = eig.S();
        let y = eig.U();
        let mut order: Vec<usize> = (0..ncv).collect();
        let theta = |i: usize| s[i].re();
        if op.certified() {
            order.sort_by(|&a, &b| theta(b).total_cmp(&theta(a)));
        } else {
            order.sort_by(|&a, &b| theta(b).abs().total_cmp(&theta(a).abs()));
        }
        let est = |i: usize| beta * y[(ncv - 1, i)].modulus();
        let converged = order[..nev]
            .iter()
            .all(|&i| est(i) <= opts.lanczos_tol * theta(i).abs() || beta == 0.0);
        let keep = if converged {
            nev
        } else {
            (nev + (ncv - nev) / 2).min(ncv - 1)
        };

        let mut next: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(ncv);
        for &i in &order[..keep] {
            let mut u = vec![zero; n];
            let mut mu = vec![zero; n];
            for (l, (v, mv)) in basis.iter().enumerate() {
                let c = y[(l, i)];
                crate::scalar::axpy(c, v, &mut u);
                crate::scalar::axpy(c, mv, &mut mu);
            }
            next.push((u, mu));
        }
        if converged {
            log::debug!("lanczos converged after {restart} restarts (ncv {ncv})");
            return Ok(order[..nev]
                .iter()
                .zip(next)
                .map(|(&i, (u, mu))| (theta(i), u, mu))
                .collect());
        }
        let mut hn = vec![vec![zero; ncv]; ncv];
        for (a, &i) in order[..keep].iter().enumerate() {
            hn[a][a] = T::from_real(theta(i));
        }
        h = hn;
        basis = next;
        if beta > 1e-13 * theta(order[0]).abs() {
            resid.iter_mut().for_each(|x| *x = x.scale(1.0 / beta));
            m_orthogonalize(&mut resid, &basis, None);
            let (nrm, _) = m_norm(m, &resid);
            resid.iter_mut().for_each(|x| *x = x.scale(1.0 / nrm));
            let mr = m.mul_vec(&resid);
            basis.push((resid, mr));
        } else {
            let v = fresh(rng, &basis)?;
            basis.push(v);
        }
        start = keep;
    }
    Err(HiconError::Convergence(format!(
        "{nev} eigenpairs not converged after {} restarts",
        opts.max_restarts
    )))
}

/// The `nev` algebraically smallest eigenpairs of the pencil `(K, M)`.
///
/// `shift` defaults to `−1e-8·‖K‖/‖M‖`; it is lowered until `K − σM` is
/// positive definite, with an LU fallback if that never happens.
pub fn smallest_eigenpairs<T: Scalar>(
    k: &CsrMatrix<T>,
    m: &CsrMatrix<T>,
    nev: usize,
    shift: Option<f64>,
    opts: &EigenOptions,
) -> Result<EigenSet<T>> {
    let n = k.nrows();
    if nev == 0 || nev > n {
        return Err(HiconError::Solve(format!(
            "requested {nev} eigenpairs of a pencil of dimension {n}"
        )));
    }
    if m.nrows() != n || k.ncols() != n || m.ncols() != n {
        return Err(HiconError::Solve("pencil matrices differ in shape".into()));
    }
    let scale = k.norm_inf() / m.norm_inf().max(f64::MIN_POSITIVE);
    let op = factor_shifted(k, m, shift.unwrap_or(-1e-8 * scale))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let to_pair = |(theta, u, mu): (f64, Vec<T>, Vec<T>)| (op.sigma + 1.0 / theta, u, mu);
    let mut found: Vec<(f64, Vec<T>, Vec<T>)> = lanczos(&op, nev, &[], opts, &mut rng)?
        .into_iter()
        .map(to_pair)
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0));

    // look for directions a single Krylov sequence could not reach
    for _round in 0..nev {
        let locked: Vec<(Vec<T>, Vec<T>)> = found.iter().map(|(_, u, mu)| (u.clone(), mu.clone())).collect();
        let probe: Vec<_> = lanczos(&op, 2, &locked, opts, &mut rng)?
            .into_iter()
            .map(to_pair)
            .collect();
        let top = found.last().map_or(f64::INFINITY, |p| p.0);
        let missed: Vec<_> = probe
            .into_iter()
            .filter(|p| p.0 < top - 1e-10 * top.abs().max(1e-300))
            .collect();
        if missed.is_empty() {
            break;
        }
        log::debug!("deflation probe recovered {} missed eigenpairs", missed.len());
        found.extend(missed);
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        found.truncate(nev);
    }

    let mut set = EigenSet {
        values: Vec::with_capacity(nev),
        vectors: Vec::with_capacity(nev),
        residuals: Vec::with_capacity(nev),
    };
    for (lambda, mut u, _) in found {
        let (nrm, _) = m_norm(m, &u);
        u.iter_mut().for_each(|x| *x = x.scale(1.0 / nrm));
        normalize_phase(&mut u);
        let r = residual(k, m, lambda, &u);
        if r > opts.rtol {
            return Err(HiconError::Convergence(format!(
                "eigenpair {lambda:e} has residual {r:e} above {:e}",
                opts.rtol
            )));
        }
        set.values.push(lambda);
        set.vectors.push(u);
        set.residuals.push(r);
    }
    Ok(set)
}

/// Full spectrum by dense Cholesky reduction. Dimension is capped at
/// [`DENSE_CAP`].
pub fn dense_spectrum<T: Scalar>(k: &CsrMatrix<T>, m: &CsrMatrix<T>) -> Result<EigenSet<T>> {
    let kd = k.to_faer_dense();
    let md = m.to_faer_dense();
    dense_pencil(&kd, &md, Some((k, m)))
}

/// Dense pencil solve; `sparse` (if given) is used for the residuals.
pub fn dense_pencil<T: Scalar>(
    kd: &Mat<T>,
    md: &Mat<T>,
    sparse: Option<(&CsrMatrix<T>, &CsrMatrix<T>)>,
) -> Result<EigenSet<T>> {
    let n = kd.nrows();
    if n > DENSE_CAP {
        return Err(HiconError::Size { dim: n, cap: DENSE_CAP });
    }
    let llt = md
        .llt(Side::Lower)
        .map_err(|e| HiconError::Factorization(format!("mass matrix not positive definite: {e:?}")))?;
    let l = llt.L();
    let mut y = kd.clone();
    solve_lower_triangular_in_place(l, y.as_mut(), Par::Seq);
    let mut c: Mat<T> = y.adjoint().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    // symmetrize against roundoff before the Hermitian solve
    let mut cs = Mat::<T>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            cs[(i, j)] = (c[(i, j)] + c[(j, i)].conj()).scale(0.5);
        }
    }
    let eig = cs
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| HiconError::Convergence(format!("dense eigensolve: {e:?}")))?;
    let mut x: Mat<T> = eig.U().to_owned();
    solve_upper_triangular_in_place(l.adjoint(), x.as_mut(), Par::Seq);
    let s = eig.S();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| s[a].re().total_cmp(&s[b].re()));
    let mut set = EigenSet {
        values: Vec::with_capacity(n),
        vectors: Vec::with_capacity(n),
        residuals: Vec::with_capacity(n),
    };
    for i in idx {
        let lambda = s[i].re();
        let mut v: Vec<T> = (0..n).map(|r| x[(r, i)]).collect();
        normalize_phase(&mut v);
        let r = match sparse {
            Some((ks, ms)) => residual(ks, ms, lambda, &v),
            None => dense_residual(kd, md, lambda, &v),
        };
        set.values.push(lambda);
        set.vectors.push(v);
        set.residuals.push(r);
    }
    Ok(set)
}

fn dense_residual<T: Scalar>(kd: &Mat<T>, md: &Mat<T>, lambda: f64, x: &[T]) -> f64 {
    let n = x.len();
    let norm_inf = |a: &Mat<T>| {
        (0..n)
            .map(|i| (0..n).map(|j| a[(i, j)].modulus()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let mut r = 0.0;
    for i in 0..n {
        let mut acc = T::from_real(0.0);
        for j in 0..n {
            acc += (kd[(i, j)] - md[(i, j)].scale(lambda)) * x[j];
        }
        r += acc.abs2();
    }
    r.sqrt() / ((norm_inf(kd) + lambda.abs() * norm_inf(md)) * crate::scalar::norm2(x))
}
