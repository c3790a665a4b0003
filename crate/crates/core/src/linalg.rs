//! Small Hermitian-matrix toolkit shared by the rate, duality and solver code.
//!
//! Everything here works on dense `DMatrix<Complex64>`; the matrices involved are
//! at most a few tens of rows, so clarity wins over blocking.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

pub const LN_2: f64 = std::f64::consts::LN_2;

/// Eigenvalue floor used for matrix square roots.
pub const EIG_FLOOR: f64 = 1e-12;

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `(m + m^*) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    (m - m.adjoint()).iter().all(|z| z.norm() <= tol * scale)
}

/// Real part of `tr(a)`.
pub fn re_trace(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// `Re tr(a b)` without forming the product.
pub fn re_trace_prod(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

pub fn frobenius_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `None` unless the Hermitian part is positive definite. nalgebra's complex
/// factorization takes square roots of negative pivots instead of failing,
/// so the pivots are checked here.
pub fn cholesky(m: &CMat) -> Option<Cholesky<Complex64, Dyn>> {
    let chol = Cholesky::new(hermitian_part(m))?;
    chol.l_dirty()
        .diagonal()
        .iter()
        .all(|z| z.re > 0.0 && z.re.is_finite() && z.im.abs() <= 1e-8 * z.re)
        .then_some(chol)
}

/// Natural log-determinant of a Hermitian positive definite matrix.
pub fn logdet_hpd(m: &CMat) -> Result<f64> {
    let chol = cholesky(m)
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    Ok(chol_logdet(&chol))
}

pub(crate) fn chol_logdet(chol: &Cholesky<Complex64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>()
}

/// `log2 |noise + signal| - log2 |noise|`, evaluated by whitening `signal`
/// against the Cholesky factor of `noise`.
pub fn logdet_ratio_bits(noise: &CMat, signal: &CMat) -> Result<f64> {
    let whitened = whiten_congruence(noise, signal)?;
    let n = whitened.nrows();
    let m = identity(n) + whitened;
    Ok(logdet_hpd(&m)? / LN_2)
}

/// `L^{-1} S L^{-*}` where `noise = L L^*`.
pub fn whiten_congruence(noise: &CMat, signal: &CMat) -> Result<CMat> {
    let chol = cholesky(noise)
        .ok_or_else(|| Error::Numeric("noise covariance is singular or indefinite".into()))?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(signal)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let right = l
        .solve_lower_triangular(&left.adjoint())
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    Ok(hermitian_part(&right.adjoint()))
}

/// Lower Cholesky factor inverse `L^{-1}` of a Hermitian positive definite matrix.
pub fn whitening_matrix(noise: &CMat) -> Result<CMat> {
    let chol = cholesky(noise)
        .ok_or_else(|| Error::Numeric("noise covariance is singular or indefinite".into()))?;
    chol.l()
        .solve_lower_triangular(&identity(noise.nrows()))
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))
}

/// Hermitian eigendecomposition, eigenvalues ascending.
pub fn herm_eig(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(m.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

/// `V diag(f(λ)) V^*`.
pub fn herm_map(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (values, vectors) = herm_eig(m);
    let n = m.nrows();
    let mut out = zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        let v = vectors.column(k);
        out += (&v * v.adjoint()).scale(f(lambda));
    }
    hermitian_part(&out)
}

/// Hermitian square root with eigenvalues floored at [`EIG_FLOOR`].
pub fn herm_sqrt(m: &CMat) -> CMat {
    herm_map(m, |l| l.max(EIG_FLOOR).sqrt())
}

/// Hermitian inverse square root with eigenvalues floored at [`EIG_FLOOR`].
pub fn herm_inv_sqrt(m: &CMat) -> CMat {
    herm_map(m, |l| 1.0 / l.max(EIG_FLOOR).sqrt())
}

/// Symmetrize and clip eigenvalues in `[-neg_tol, 0)` to zero. Anything more
/// negative is an error.
pub fn clip_psd(m: &CMat, neg_tol: f64) -> Result<CMat> {
    let (values, _) = herm_eig(m);
    let scale = values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    if let Some(&min) = values.first() {
        if min < -neg_tol * scale {
            return Err(Error::Validation(format!(
                "matrix has eigenvalue {min:.3e} below -{neg_tol:.0e}"
            )));
        }
        if min < 0.0 {
            return Ok(herm_map(m, |l| l.max(0.0)));
        }
    }
    Ok(hermitian_part(m))
}

/// Orthonormal basis of d×d Hermitian matrices under `Re tr(A B)`.
///
/// Ordering: the d diagonal units first, then for each pair `k < l` the real
/// symmetric and the imaginary antisymmetric element. Only the diagonal
/// elements carry trace.
pub fn hermitian_basis(d: usize) -> Vec<CMat> {
    let mut basis = Vec::with_capacity(d * d);
    for k in 0..d {
        let mut e = zeros(d, d);
        e[(k, k)] = c64(1.0, 0.0);
        basis.push(e);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..d {
        for l in (k + 1)..d {
            let mut re = zeros(d, d);
            re[(k, l)] = c64(s, 0.0);
            re[(l, k)] = c64(s, 0.0);
            basis.push(re);
            let mut im = zeros(d, d);
            im[(k, l)] = c64(0.0, -s);
            im[(l, k)] = c64(0.0, s);
            basis.push(im);
        }
    }
    basis
}

/// Coordinates of a Hermitian matrix in [`hermitian_basis`].
pub fn hermitian_coords(m: &CMat) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * d);
    hermitian_coords_into(m, &mut out);
    out
}

/// Appends the [`hermitian_basis`] coordinates of `m` to `out`.
pub fn hermitian_coords_into(m: &CMat, out: &mut Vec<f64>) {
    let d = m.nrows();
    let r2 = std::f64::consts::SQRT_2;
    for k in 0..d {
        out.push(m[(k, k)].re);
    }
    for k in 0..d {
        for l in (k + 1)..d {
            // Average the two triangles so slightly non-Hermitian input
            // maps to its Hermitian part.
            let z = (m[(k, l)] + m[(l, k)].conj()) * 0.5;
            out.push(r2 * z.re);
            out.push(-r2 * z.im);
        }
    }
}

pub fn from_hermitian_coords(d: usize, coords: &[f64]) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = zeros(d, d);
    for k in 0..d {
        out[(k, k)] = c64(coords[k], 0.0);
    }
    let mut i = d;
    for k in 0..d {
        for l in (k + 1)..d {
            let z = c64(s * coords[i], -s * coords[i + 1]);
            out[(k, l)] = z;
            out[(l, k)] = z.conj();
            i += 2;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&CMat::from_element(1, 1, c64(-1.0, 0.0))).is_none());
        let m = CMat::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(0.0, 2.0), c64(0.0, -2.0), c64(1.0, 0.0)]);
        assert!(cholesky(&m).is_none());
        assert!(cholesky(&identity(3)).is_some());
    }

    fn random_hpd(n: usize, seed: u64) -> CMat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(n, n, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        &a * a.adjoint() + identity(n).scale(0.1)
    }

    #[test]
    fn logdet_ratio_matches_direct_determinant() {
        let noise = random_hpd(3, 1);
        let signal = random_hpd(3, 2);
        let direct = ((&noise + &signal).determinant().re / noise.determinant().re).log2();
        let ratio = logdet_ratio_bits(&noise, &signal).unwrap();
        assert!((direct - ratio).abs() < 1e-10);
    }

    #[test]
    fn basis_roundtrip_and_orthonormality() {
        let m = random_hpd(3, 7);
        let coords = hermitian_coords(&m);
        assert_eq!(coords.len(), 9);
        let back = from_hermitian_coords(3, &coords);
        assert!((back - &m).norm() < 1e-12);
        let basis = hermitian_basis(3);
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((re_trace_prod(a, b) - want).abs() < 1e-14);
            }
        }
        for (e, c) in basis.iter().zip(&coords) {
            assert!((re_trace_prod(e, &m) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn sqrt_and_inverse_sqrt_compose() {
        let m = random_hpd(4, 3);
        let s = herm_sqrt(&m);
        assert!((&s * &s - &m).norm() < 1e-10);
        let is = herm_inv_sqrt(&m);
        assert!((&is * &m * &is - identity(4)).norm() < 1e-9);
    }

    #[test]
    fn clip_psd_rejects_clearly_negative() {
        let mut m = identity(2);
        m[(1, 1)] = c64(-1e-12, 0.0);
        let clipped = clip_psd(&m, 1e-9).unwrap();
        assert!(clipped[(1, 1)].re.abs() < 1e-15);
        m[(1, 1)] = c64(-0.5, 0.0);
        assert!(clip_psd(&m, 1e-9).is_err());
    }
}
