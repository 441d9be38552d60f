//! Small dense complex linear algebra used by the simulators.
//!
//! Everything in this crate works with matrices of dimension ≤ 64 (six spins)
//! outside of the raw state vectors, so a dependency-free cyclic Jacobi
//! eigensolver is plenty. All matrices are `ndarray::Array2<Complex64>` in
//! row-major order.

use ndarray::Array2;
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMat = Array2<Complex64>;

/// Complex conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    let (r, c) = a.dim();
    CMat::from_shape_fn((c, r), |(i, j)| a[(j, i)].conj())
}

/// Identity matrix.
pub fn eye(n: usize) -> CMat {
    CMat::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    CMat::from_shape_fn((ar * br, ac * bc), |(i, j)| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Frobenius norm.
pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Max entry-wise modulus of `a - b`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `true` when `u† u = 1` to within `tol` (max abs deviation).
pub fn is_unitary(u: &CMat, tol: f64) -> bool {
    let n = u.nrows();
    if u.ncols() != n {
        return false;
    }
    let p = dagger(u).dot(u);
    max_abs_diff(&p, &eye(n)) < tol
}

/// Eigendecomposition of a Hermitian matrix via cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, V)` with columns of `V` the orthonormal
/// eigenvectors, `a = V diag(λ) V†`. Eigenvalues are sorted ascending.
pub fn eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim(format!("eigh: non-square {}x{}", n, a.ncols())));
    }
    let herm_defect = max_abs_diff(a, &dagger(a));
    let scale = fro_norm(a).max(1.0);
    if herm_defect > 1e-9 * scale {
        return Err(Error::Numerics(format!(
            "eigh: matrix not Hermitian (defect {herm_defect:.3e})"
        )));
    }
    let mut m = a.clone();
    // Symmetrize to kill representation noise.
    let md = dagger(&m);
    m.zip_mut_with(&md, |x, y| *x = 0.5 * (*x + *y));

    let mut v = eye(n);
    let tol = 1e-30 * scale * scale; // compared against |a_pq|^2
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if off <= tol * (n * n) as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let r = apq.norm();
                if r < 1e-300 {
                    continue;
                }
                let phase = apq / r; // e^{i φ}
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G = [[c, s], [-s e^{-iφ}, c e^{-iφ}]] zeroes m[(p,q)].
                let g00 = Complex64::new(c, 0.0);
                let g01 = Complex64::new(s, 0.0);
                let g10 = -s * phase.conj();
                let g11 = c * phase.conj();
                // m ← G† m G : update columns p,q then rows p,q.
                for i in 0..n {
                    let mip = m[(i, p)];
                    let miq = m[(i, q)];
                    m[(i, p)] = mip * g00 + miq * g10;
                    m[(i, q)] = mip * g01 + miq * g11;
                }
                for j in 0..n {
                    let mpj = m[(p, j)];
                    let mqj = m[(q, j)];
                    m[(p, j)] = g00.conj() * mpj + g10.conj() * mqj;
                    m[(q, j)] = g01.conj() * mpj + g11.conj() * mqj;
                }
                m[(p, q)] = Complex64::new(0.0, 0.0);
                m[(q, p)] = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * g00 + viq * g10;
                    v[(i, q)] = vip * g01 + viq * g11;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let evals: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| evals[i].partial_cmp(&evals[j]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| evals[i]).collect();
    let sorted_vecs = CMat::from_shape_fn((n, n), |(i, j)| v[(i, order[j])]);
    Ok((sorted_vals, sorted_vecs))
}

/// Unitary `exp(-i H t)` for Hermitian `H` (eigendecomposition route).
pub fn expm_minus_i_h_t(h: &CMat, t: f64) -> Result<CMat> {
    let (vals, vecs) = eigh(h)?;
    let n = h.nrows();
    let mut d = CMat::zeros((n, n));
    for (k, &lam) in vals.iter().enumerate() {
        d[(k, k)] = Complex64::from_polar(1.0, -lam * t);
    }
    Ok(vecs.dot(&d).dot(&dagger(&vecs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_hermitian(n: usize, seed: u64) -> CMat {
        // Tiny xorshift so this module stays independent of the rand crate.
        let mut s = seed.wrapping_mul(2685821657736338717).wrapping_add(1);
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let raw = CMat::from_shape_fn((n, n), |_| Complex64::new(next(), next()));
        let rd = dagger(&raw);
        let mut h = raw;
        h.zip_mut_with(&rd, |x, y| *x = 0.5 * (*x + *y));
        h
    }

    #[test]
    fn eigh_reconstructs_matrix() {
        for n in [2usize, 3, 5, 8, 16] {
            let h = rand_hermitian(n, 41 + n as u64);
            let (vals, vecs) = eigh(&h).unwrap();
            let mut d = CMat::zeros((n, n));
            for (k, &l) in vals.iter().enumerate() {
                d[(k, k)] = Complex64::new(l, 0.0);
            }
            let rec = vecs.dot(&d).dot(&dagger(&vecs));
            assert!(max_abs_diff(&rec, &h) < 1e-11, "n={n}");
            assert!(is_unitary(&vecs, 1e-11));
            for k in 1..n {
                assert!(vals[k] >= vals[k - 1]);
            }
        }
    }

    #[test]
    fn expm_pauli_x_half_pi() {
        // exp(-i (π/2) X) = -i X, a frozen closed form.
        let x = CMat::from_shape_vec(
            (2, 2),
            vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        let u = expm_minus_i_h_t(&x, std::f64::consts::FRAC_PI_2).unwrap();
        let expect = CMat::from_shape_vec(
            (2, 2),
            vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        assert!(max_abs_diff(&u, &expect) < 1e-12);
    }

    #[test]
    fn expm_is_unitary_and_group_like() {
        let h = rand_hermitian(6, 7);
        let u1 = expm_minus_i_h_t(&h, 0.3).unwrap();
        let u2 = expm_minus_i_h_t(&h, 0.7).unwrap();
        let u3 = expm_minus_i_h_t(&h, 1.0).unwrap();
        assert!(is_unitary(&u1, 1e-11));
        assert!(max_abs_diff(&u1.dot(&u2), &u3) < 1e-10);
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let mut h = rand_hermitian(3, 3);
        h[(0, 1)] += Complex64::new(0.5, 0.0);
        assert!(eigh(&h).is_err());
    }
}
