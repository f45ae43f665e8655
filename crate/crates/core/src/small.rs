//! Fixed-size symmetric matrix helpers.

pub type Mat2 = [[f64; 2]; 2];
pub type Mat3 = [[f64; 3]; 3];

/// Eigenvalues of a real symmetric 2×2 matrix, ascending.
pub fn sym2_eigenvalues(m: &Mat2) -> [f64; 2] {
    let a = m[0][0];
    let d = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let r = half.hypot(b);
    [mean - r, mean + r]
}

/// Eigenpairs of a real symmetric 2×2 matrix; columns of the returned matrix
/// are unit eigenvectors ordered like the ascending eigenvalues.
pub fn sym2_eigen(m: &Mat2) -> ([f64; 2], Mat2) {
    let vals = sym2_eigenvalues(m);
    let a = m[0][0];
    let d = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    // rotation angle that diagonalizes the matrix
    let phi = 0.5 * (2.0 * b).atan2(a - d);
    let (s, c) = phi.sin_cos();
    // (c, s) belongs to the larger eigenvalue
    let vecs = [[-s, c], [c, s]];
    (vals, vecs)
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mat2_det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// `f(M) = V f(Λ) Vᵀ` for symmetric `M`.
pub fn sym2_apply(m: &Mat2, f: impl Fn(f64) -> f64) -> Mat2 {
    let (vals, v) = sym2_eigen(m);
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        let fk = f(vals[k]);
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += v[i][k] * fk * v[j][k];
            }
        }
    }
    out
}

/// Cyclic Jacobi eigenvalues of a symmetric 3×3 matrix, ascending.
pub fn sym3_eigenvalues(m: &Mat3) -> [f64; 3] {
    let mut a = *m;
    for _sweep in 0..50 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let diag = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2);
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut next = a;
            for k in 0..3 {
                next[k][p] = c * a[k][p] - s * a[k][q];
                next[k][q] = s * a[k][p] + c * a[k][q];
            }
            let tmp = next;
            for k in 0..3 {
                next[p][k] = c * tmp[p][k] - s * tmp[q][k];
                next[q][k] = s * tmp[p][k] + c * tmp[q][k];
            }
            a = next;
        }
    }
    let mut d = [a[0][0], a[1][1], a[2][2]];
    d.sort_by(|x, y| x.total_cmp(y));
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym2_reconstructs() {
        let m = [[3.0, -1.25], [-1.25, 0.5]];
        let (vals, v) = sym2_eigen(&m);
        assert!(vals[0] <= vals[1]);
        for k in 0..2 {
            let mv = [
                m[0][0] * v[0][k] + m[0][1] * v[1][k],
                m[1][0] * v[0][k] + m[1][1] * v[1][k],
            ];
            for i in 0..2 {
                assert!((mv[i] - vals[k] * v[i][k]).abs() < 1e-14);
            }
        }
        let sq = sym2_apply(&[[2.0, 0.5], [0.5, 1.0]], f64::sqrt);
        let back = mat2_mul(&sq, &sq);
        assert!((back[0][0] - 2.0).abs() < 1e-14 && (back[0][1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sym2_diagonal_input() {
        assert_eq!(sym2_eigenvalues(&[[2.0, 0.0], [0.0, -1.0]]), [-1.0, 2.0]);
        let (_, v) = sym2_eigen(&[[2.0, 0.0], [0.0, -1.0]]);
        assert!((v[1][0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        // tridiagonal (2, -1) matrix: eigenvalues 2 - sqrt2, 2, 2 + sqrt2
        let m = [[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]];
        let e = sym3_eigenvalues(&m);
        let s = 2f64.sqrt();
        assert!((e[0] - (2.0 - s)).abs() < 1e-14);
        assert!((e[1] - 2.0).abs() < 1e-14);
        assert!((e[2] - (2.0 + s)).abs() < 1e-14);
    }
}
