//! Dense exact-diagonalization references for small instances.
//!
//! Everything here is deliberately plain: full Hermitian eigendecomposition,
//! eigenbasis propagation, and closed-interval microcanonical averages. These
//! are the correctness anchors for the sparse/iterative code paths, so they
//! favor transparency over speed and refuse dimensions past a hard cap.

use crate::basis::{BasisError, ClusterPopulations, ProductBasis};
use crate::kpm::EnergyShell;
use crate::sparse::SparseOperator;
use crate::state::StateVector;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Default refusal threshold for dense diagonalization.
pub const DEFAULT_DIM_CAP: usize = 6000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dimension {dim} exceeds the exact-diagonalization cap {cap}")]
    DimOverCap { dim: usize, cap: usize },
    #[error("no eigenvalues inside the energy shell [{lo}, {hi}]")]
    EmptyShell { lo: f64, hi: f64 },
    #[error("state length {got} does not match dimension {dim}")]
    DimensionMismatch { got: usize, dim: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Full Hermitian eigendecomposition with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    eigenvalues: Vec<f64>,
    /// Column n is the eigenvector of `eigenvalues[n]`.
    eigenvectors: DMatrix<Complex64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, n: usize) -> Vec<Complex64> {
        self.eigenvectors.column(n).iter().copied().collect()
    }

    /// Eigenbasis coefficients ⟨φ_n|ψ⟩ for every n.
    pub fn coefficients(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let v = DVector::from_column_slice(psi);
        (self.eigenvectors.adjoint() * v).iter().copied().collect()
    }

    fn from_coefficients(&self, coeffs: &[Complex64]) -> StateVector {
        let c = DVector::from_column_slice(coeffs);
        (&self.eigenvectors * c).iter().copied().collect()
    }

    /// Indices of eigenvalues inside the closed shell interval.
    pub fn shell_indices(&self, shell: &EnergyShell) -> Vec<usize> {
        let (lo, hi) = shell.interval();
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|&(_, &e)| e >= lo && e <= hi)
            .map(|(n, _)| n)
            .collect()
    }

    /// Largest orthonormality defect max |⟨φ_m|φ_n⟩ - δ_mn|.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.eigenvectors.adjoint() * &self.eigenvectors;
        let mut worst = 0.0f64;
        for m in 0..self.dim() {
            for n in 0..self.dim() {
                let expected = if m == n { 1.0 } else { 0.0 };
                worst = worst.max((gram[(m, n)] - Complex64::new(expected, 0.0)).norm());
            }
        }
        worst
    }

    /// Largest residual ‖H φ_n - E_n φ_n‖ over all n.
    pub fn max_residual(&self, h: &SparseOperator) -> f64 {
        let dim = self.dim();
        let mut worst = 0.0f64;
        let mut hv = vec![Complex64::new(0.0, 0.0); dim];
        for n in 0..dim {
            let v = self.eigenvector(n);
            h.matvec(&v, &mut hv);
            let r: f64 = hv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - self.eigenvalues[n] * b).norm_sqr())
                .sum();
            worst = worst.max(r.sqrt());
        }
        worst
    }
}

/// Dense eigendecomposition with the default dimension cap.
pub fn exact_diagonalize(h: &SparseOperator) -> Result<EigenDecomposition, OracleError> {
    exact_diagonalize_capped(h, DEFAULT_DIM_CAP)
}

pub fn exact_diagonalize_capped(
    h: &SparseOperator,
    cap: usize,
) -> Result<EigenDecomposition, OracleError> {
    let dim = h.dim();
    if dim > cap {
        return Err(OracleError::DimOverCap { dim, cap });
    }
    let mut dense = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for (i, j, v) in h.entries() {
        dense[(i, j)] = v;
    }
    let eig = dense.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&n| eig.eigenvalues[n]).collect();
    let mut eigenvectors = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Uniform average of the cluster-population observable over eigenstates in
/// the shell (closed interval, boundary eigenstates included).
pub fn microcanonical_average(
    eig: &EigenDecomposition,
    basis: &ProductBasis,
    cluster: i32,
    shell: &EnergyShell,
) -> Result<f64, OracleError> {
    let pops = microcanonical_populations(eig, basis, shell)?;
    Ok(pops.get(cluster))
}

/// All 2k+1 cluster populations in one pass; they sum to one by completeness.
pub fn microcanonical_populations(
    eig: &EigenDecomposition,
    basis: &ProductBasis,
    shell: &EnergyShell,
) -> Result<ClusterPopulations, OracleError> {
    let members = eig.shell_indices(shell);
    if members.is_empty() {
        let (lo, hi) = shell.interval();
        return Err(OracleError::EmptyShell { lo, hi });
    }
    let mut accum = ClusterPopulations::zeros(basis.manifold().half_range());
    for &n in &members {
        let phi = eig.eigenvector(n);
        let pops = basis.measure_populations(&phi)?;
        for (slot, p) in accum.fractions_mut().iter_mut().zip(pops.fractions()) {
            *slot += p;
        }
    }
    accum.scale(1.0 / members.len() as f64);
    Ok(accum)
}

/// ψ(t) = Σ_n e^{-i E_n t} ⟨φ_n|ψ0⟩ |φ_n⟩.
pub fn exact_evolve(
    eig: &EigenDecomposition,
    psi0: &[Complex64],
    t: f64,
) -> Result<StateVector, OracleError> {
    if psi0.len() != eig.dim() {
        return Err(OracleError::DimensionMismatch {
            got: psi0.len(),
            dim: eig.dim(),
        });
    }
    let mut coeffs = eig.coefficients(psi0);
    for (c, &e) in coeffs.iter_mut().zip(eig.eigenvalues()) {
        *c *= Complex64::from_polar(1.0, -e * t);
    }
    Ok(eig.from_coefficients(&coeffs))
}

/// Spectral application of the Gaussian energy filter
/// e^{-(H-E0)²/4ΔE²}, normalized. Reference for the imaginary-time route.
pub fn exact_filter(
    eig: &EigenDecomposition,
    psi: &[Complex64],
    shell: &EnergyShell,
) -> Result<StateVector, OracleError> {
    if psi.len() != eig.dim() {
        return Err(OracleError::DimensionMismatch {
            got: psi.len(),
            dim: eig.dim(),
        });
    }
    let mut coeffs = eig.coefficients(psi);
    let inv = 1.0 / (4.0 * shell.delta_e * shell.delta_e);
    for (c, &e) in coeffs.iter_mut().zip(eig.eigenvalues()) {
        let d = e - shell.e0;
        *c *= (-d * d * inv).exp();
    }
    let mut out = eig.from_coefficients(&coeffs);
    crate::state::normalize(&mut out);
    Ok(out)
}
