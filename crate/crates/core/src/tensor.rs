//! Elasticity tensors in orthonormal Voigt form and the quasimomentum
//! operator `X_χ`.
//!
//! A symmetric strain `e` is stored as `(e11, e22, √2·e12)`. With this
//! scaling the Frobenius product `e : f` equals the Euclidean product of the
//! Voigt vectors, so a rank-4 tensor with minor and major symmetries becomes a
//! symmetric 3×3 matrix.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{HiconError, Result};
use crate::scalar::Scalar;
use crate::small::{sym3_eigenvalues, Mat2, Mat3};

pub type Voigt = [f64; 3];

/// Symmetric 2×2 matrix `[[m00, m01], [m01, m11]]` as a Voigt vector.
pub fn to_voigt<T: Scalar>(m: &[[T; 2]; 2]) -> [T; 3] {
    [m[0][0], m[1][1], (m[0][1] + m[1][0]).scale(0.5 * SQRT_2)]
}

pub fn from_voigt<T: Scalar>(v: &[T; 3]) -> [[T; 2]; 2] {
    let off = v[2].scale(1.0 / SQRT_2);
    [[v[0], off], [off, v[1]]]
}

/// Orthonormal basis of symmetric 2×2 matrices matching the Voigt axes.
pub fn strain_basis() -> [Mat2; 3] {
    let h = 1.0 / SQRT_2;
    [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]], [[0.0, h], [h, 0.0]]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticTensor {
    pub voigt: Mat3,
}

impl ElasticTensor {
    /// `A_ijkl = λ δ_ij δ_kl + 2μ (δ_ik δ_jl + δ_il δ_kj)`.
    ///
    /// Note the factor two on the shear part: the tensor acts on a
    /// symmetric strain as `λ tr(e) I + 4μ e`.
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        let d = lambda + 4.0 * mu;
        Self {
            voigt: [[d, lambda, 0.0], [lambda, d, 0.0], [0.0, 0.0, 4.0 * mu]],
        }
    }

    pub fn from_voigt(voigt: Mat3) -> Result<Self> {
        let t = Self { voigt };
        t.validate()?;
        Ok(t)
    }

    /// Full index form `A[i][j][k][l]`, for oracles and cross-checks.
    pub fn component(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        // map (i,j) to a Voigt slot and its scaling
        fn slot(i: usize, j: usize) -> (usize, f64) {
            match (i, j) {
                (0, 0) => (0, 1.0),
                (1, 1) => (1, 1.0),
                _ => (2, 1.0 / SQRT_2),
            }
        }
        let (p, sp) = slot(i, j);
        let (q, sq) = slot(k, l);
        self.voigt[p][q] * sp * sq
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut voigt = self.voigt;
        voigt.iter_mut().flatten().for_each(|v| *v *= s);
        Self { voigt }
    }

    pub fn symmetry_residual(&self) -> f64 {
        let v = &self.voigt;
        (v[0][1] - v[1][0])
            .abs()
            .max((v[0][2] - v[2][0]).abs())
            .max((v[1][2] - v[2][1]).abs())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym3_eigenvalues(&self.voigt)[0]
    }

    pub fn validate(&self) -> Result<()> {
        let scale = self.voigt.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if !self.voigt.iter().flatten().all(|v| v.is_finite()) {
            return Err(HiconError::Config("elastic tensor has non-finite entries".into()));
        }
        if self.symmetry_residual() > 1e-14 * scale.max(1.0) {
            return Err(HiconError::Config("elastic tensor lacks major symmetry".into()));
        }
        if self.min_eigenvalue() <= 0.0 {
            return Err(HiconError::Config(
                "elastic tensor is not positive definite on symmetric strains".into(),
            ));
        }
        Ok(())
    }

    /// `A e` for a Voigt strain.
    pub fn apply<T: Scalar>(&self, e: &[T; 3]) -> [T; 3] {
        let mut out = [T::from_real(0.0); 3];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, &ej) in e.iter().enumerate() {
                *o += ej.scale(self.voigt[i][j]);
            }
        }
        out
    }

    /// `A e : conj(f)`
    pub fn energy<T: Scalar>(&self, e: &[T; 3], f: &[T; 3]) -> T {
        let ae = self.apply(e);
        ae.iter().zip(f).map(|(&a, &b)| a * b.conj()).sum()
    }
}

/// Quasimomentum `χ ∈ [−π, π)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quasimomentum(pub [f64; 2]);

impl Quasimomentum {
    pub const ZERO: Quasimomentum = Quasimomentum([0.0, 0.0]);

    /// Wraps components into the Brillouin zone, logging when that happens.
    pub fn new(chi: [f64; 2]) -> Self {
        let wrapped = chi.map(wrap_angle);
        if wrapped != chi {
            log::warn!("quasimomentum {chi:?} outside [-pi, pi)^2, wrapped to {wrapped:?}");
        }
        Quasimomentum(wrapped)
    }

    pub fn from_polar(norm: f64, theta: [f64; 2]) -> Self {
        Self::new([norm * theta[0], norm * theta[1]])
    }

    pub fn norm(&self) -> f64 {
        self.0[0].hypot(self.0[1])
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0.0, 0.0]
    }

    pub fn neg(&self) -> Self {
        Quasimomentum([-self.0[0], -self.0[1]])
    }
}

fn wrap_angle(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        x
    } else {
        (x + PI).rem_euclid(2.0 * PI) - PI
    }
}

/// `X_χ u = sym(u ⊗ χ)`:
/// `[[χ₁u₁, (χ₁u₂+χ₂u₁)/2], [(χ₁u₂+χ₂u₁)/2, χ₂u₂]]`.
pub fn x_chi_apply<T: Scalar>(chi: [f64; 2], u: [T; 2]) -> [[T; 2]; 2] {
    let off = (u[1].scale(chi[0]) + u[0].scale(chi[1])).scale(0.5);
    [[u[0].scale(chi[0]), off], [off, u[1].scale(chi[1])]]
}

/// Voigt matrix of `X_χ`, mapping `u ∈ ℝ²` to a Voigt strain (3×2).
pub fn x_chi_voigt(chi: [f64; 2]) -> [[f64; 2]; 3] {
    let h = 1.0 / SQRT_2;
    [[chi[0], 0.0], [0.0, chi[1]], [h * chi[1], h * chi[0]]]
}

/// `X_χ* A X_χ` as a real symmetric 2×2 matrix.
pub fn contract_x_chi(a: &ElasticTensor, chi: [f64; 2]) -> Mat2 {
    let x = x_chi_voigt(chi);
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for p in 0..3 {
                for q in 0..3 {
                    s += x[p][i] * a.voigt[p][q] * x[q][j];
                }
            }
            out[i][j] = s;
        }
    }
    out
}

/// Frobenius norm of a symmetric 2×2 matrix.
pub fn frobenius<T: Scalar>(m: &[[T; 2]; 2]) -> f64 {
    m.iter().flatten().map(|v| v.abs2()).sum::<f64>().sqrt()
}
