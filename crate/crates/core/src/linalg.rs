//! Small dense complex linear algebra on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

pub fn zeros(d: usize) -> CMat {
    CMat::zeros(d, d)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius_distance(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn vec_norm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `‖M + M*‖_F`, zero exactly for skew-Hermitian matrices.
pub fn skew_defect(m: &CMat) -> f64 {
    frobenius(&(m + m.adjoint()))
}

/// `‖U*U − I‖_F`.
pub fn unitarity_defect(u: &CMat) -> f64 {
    frobenius(&(u.adjoint() * u - identity(u.nrows())))
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Ratio of extreme singular values; infinite for singular matrices.
pub fn condition_number(m: &CMat) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `A ⊗ B` with the row-major convention `vec(A X B)` for `vec` stacking rows.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Matrix of `X ↦ ΓX − XΓ` acting on row-major flattened `d × d` matrices.
pub fn adjoint_action(gamma: &CMat) -> CMat {
    let d = gamma.nrows();
    let id = identity(d);
    kron(gamma, &id) - kron(&id, &gamma.transpose())
}

/// Row-major flattening of a square matrix into a vector.
pub fn flatten(m: &CMat) -> CVec {
    let cols = m.ncols();
    CVec::from_fn(m.nrows() * cols, |k, _| m[(k / cols, k % cols)])
}

pub fn unflatten(v: &CVec, d: usize) -> CMat {
    CMat::from_fn(d, d, |i, j| v[i * d + j])
}

/// Frobenius inner product `Tr(A B*)`.
pub fn frobenius_inner(a: &CMat, b: &CMat) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

/// Real basis of the skew-Hermitian `d × d` matrices (dimension `d²`),
/// orthonormal for the real Frobenius pairing up to a factor of 2 on
/// off-diagonal elements.
pub fn skew_hermitian_basis(d: usize) -> Vec<CMat> {
    let mut out = Vec::with_capacity(d * d);
    for k in 0..d {
        let mut m = zeros(d);
        m[(k, k)] = I;
        out.push(m);
    }
    for k in 0..d {
        for l in (k + 1)..d {
            let mut m = zeros(d);
            m[(k, l)] = c(1.0, 0.0);
            m[(l, k)] = c(-1.0, 0.0);
            out.push(m);
            let mut m = zeros(d);
            m[(k, l)] = I;
            m[(l, k)] = I;
            out.push(m);
        }
    }
    out
}

/// Random skew-Hermitian matrix with Gaussian entries, scaled so that its
/// Frobenius norm equals `scale`.
pub fn random_skew_hermitian<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> CMat {
    let mut a = CMat::from_fn(d, d, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    a = &a - a.adjoint();
    let n = frobenius(&a);
    if n > 0.0 {
        a *= Complex64::new(scale / n, 0.0);
    }
    a
}

/// Exponentials `exp(f S)` of a fixed skew-Hermitian `S` for scalar `f`,
/// computed from one Hermitian eigendecomposition of `-iS`. The result is
/// unitary to rounding.
#[derive(Debug, Clone)]
pub struct SkewExp {
    vecs: CMat,
    freqs: Vec<f64>,
}

impl SkewExp {
    pub fn new(s: &CMat) -> Self {
        let h = s * Complex64::new(0.0, -1.0);
        // symmetrize against rounding before the Hermitian solver
        let h = (&h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(h);
        Self {
            vecs: eig.eigenvectors,
            freqs: eig.eigenvalues.iter().cloned().collect(),
        }
    }

    pub fn exp(&self, f: f64) -> CMat {
        let d = self.freqs.len();
        let diag = CMat::from_fn(d, d, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, f * self.freqs[i])
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        &self.vecs * diag * self.vecs.adjoint()
    }
}

/// Dense matrix of complex numbers from row-major `(re, im)` pairs.
pub fn from_pairs(d: usize, pairs: &[[f64; 2]]) -> crate::Result<CMat> {
    if pairs.len() != d * d {
        return Err(crate::Error::Validation(format!(
            "expected {} matrix entries, got {}",
            d * d,
            pairs.len()
        )));
    }
    Ok(CMat::from_fn(d, d, |i, j| {
        let p = pairs[i * d + j];
        c(p[0], p[1])
    }))
}

pub fn to_pairs(m: &CMat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skew_exp_is_unitary_and_matches_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_skew_hermitian(&mut rng, 3, 1.7);
        let e = SkewExp::new(&s).exp(0.8);
        assert!(unitarity_defect(&e) < 1e-13);
        // truncated Taylor series of exp(0.8 S)
        let a = &s * c(0.8, 0.0);
        let mut term = identity(3);
        let mut sum = identity(3);
        for k in 1..40 {
            term = &term * &a * c(1.0 / k as f64, 0.0);
            sum += &term;
        }
        assert!(frobenius_distance(&sum, &e) < 1e-12);
    }

    #[test]
    fn adjoint_action_matches_commutator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_skew_hermitian(&mut rng, 2, 1.0);
        let x = CMat::from_fn(2, 2, |i, j| c(i as f64 + 0.3, j as f64 - 0.7));
        let lhs = unflatten(&(adjoint_action(&g) * flatten(&x)), 2);
        assert!(frobenius_distance(&lhs, &commutator(&g, &x)) < 1e-14);
    }

    #[test]
    fn basis_is_skew_and_spans() {
        let b = skew_hermitian_basis(3);
        assert_eq!(b.len(), 9);
        for m in &b {
            assert!(skew_defect(m) == 0.0);
        }
    }
}
