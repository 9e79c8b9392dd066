//! Small helpers for complex amplitude vectors.

use num_complex::Complex64;

/// Complex amplitude vector over a [`crate::basis::ProductBasis`].
pub type StateVector = Vec<Complex64>;

pub fn norm_sq(psi: &[Complex64]) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum()
}

pub fn norm(psi: &[Complex64]) -> f64 {
    norm_sq(psi).sqrt()
}

pub fn normalize(psi: &mut [Complex64]) {
    let n = norm(psi);
    if n > 0.0 {
        let inv = 1.0 / n;
        for a in psi.iter_mut() {
            *a *= inv;
        }
    }
}

/// ⟨a|b⟩ with the physics convention (conjugate-linear in the first slot).
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// |⟨a|b⟩|² for unit vectors.
pub fn fidelity(a: &[Complex64], b: &[Complex64]) -> f64 {
    inner(a, b).norm_sqr()
}

/// y += c * x
pub fn axpy(c: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * *xi;
    }
}
