//! Assembles the sparse Hermitian Hamiltonian over a product basis.
//!
//! The diagonal carries the gauge-shifted detunings `e_diag - E_ref`. Off the
//! diagonal, two product states differing in exactly two atoms i, j are
//! coupled by the exchange element
//!
//! ```text
//! V = d[a_i → a'_i] · d[a_j → a'_j] / r_ij³
//! ```
//!
//! whenever both states sit inside the basis window. Optionally, states
//! differing in exactly three atoms receive a second-order effective coupling
//! through a single intermediate product state m:
//!
//! ```text
//! Σ_m V_1m · V_m2 · (1/(E_1 - E_m) + 1/(E_2 - E_m)) / 2
//! ```
//!
//! where the intermediate set (inside the window, outside it, or both) is
//! configurable and near-degenerate denominators below a floor are skipped
//! and counted. In-window intermediates reproduce the near-resonant chains
//! that drive population transfer when a small intra-cluster splitting
//! cancels the two-body detuning.

use crate::basis::ProductBasis;
use crate::geometry::AtomGeometry;
use crate::manifold::{DipoleTable, StarkManifold};
use crate::sparse::{SparseError, SparseOperator};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

/// Which intermediate product states the three-body term sums over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IntermediateSet {
    /// Only intermediates inside the basis window.
    Window,
    /// Only intermediates the window truncation removed.
    Complement,
    /// Every reachable intermediate.
    All,
}

#[derive(Clone, Copy, Debug)]
pub struct AssemblyOptions {
    pub three_body: bool,
    pub intermediates: IntermediateSet,
    /// Minimum |E - E_m| (rad/µs) for a three-body denominator.
    pub denominator_floor: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            three_body: true,
            intermediates: IntermediateSet::Window,
            denominator_floor: crate::manifold::mhz_to_rad_per_us(1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct AssemblyReport {
    pub dim: usize,
    pub nnz: usize,
    /// Three-body path contributions accumulated (upper triangle).
    pub three_body_paths: usize,
    /// Paths dropped because a denominator fell below the floor.
    pub skipped_denominators: usize,
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("dipole table covers {table} levels but the manifold has {manifold}")]
    LevelCountMismatch { table: usize, manifold: usize },
    #[error("geometry has {geometry} atoms but the basis was built for {basis}")]
    AtomCountMismatch { geometry: usize, basis: usize },
    #[error("atoms {0} and {1} coincide; pair couplings diverge")]
    CoincidentAtoms(usize, usize),
    #[error("denominator floor must be positive, got {0}")]
    BadFloor(f64),
    #[error("assembled operator failed the Hermiticity check: {0}")]
    NonHermitian(#[from] SparseError),
}

/// Builds the Hamiltonian and an assembly report.
pub fn assemble(
    manifold: &StarkManifold,
    dipoles: &DipoleTable,
    geometry: &AtomGeometry,
    basis: &ProductBasis,
    options: &AssemblyOptions,
) -> Result<(SparseOperator, AssemblyReport), AssemblyError> {
    if dipoles.n_levels() != manifold.n_levels() {
        return Err(AssemblyError::LevelCountMismatch {
            table: dipoles.n_levels(),
            manifold: manifold.n_levels(),
        });
    }
    let n_atoms = basis.n_atoms();
    if geometry.n_atoms() != n_atoms {
        return Err(AssemblyError::AtomCountMismatch {
            geometry: geometry.n_atoms(),
            basis: n_atoms,
        });
    }
    for i in 0..n_atoms {
        for j in (i + 1)..n_atoms {
            if !geometry.inv_r3(i, j).is_finite() {
                return Err(AssemblyError::CoincidentAtoms(i, j));
            }
        }
    }
    if options.three_body && !(options.denominator_floor > 0.0) {
        return Err(AssemblyError::BadFloor(options.denominator_floor));
    }

    let dim = basis.dim();
    let level_energy: Vec<f64> = (0..manifold.n_levels())
        .map(|l| manifold.level_energy(manifold.level_from_index(l)))
        .collect();

    let per_row: Vec<(Vec<(u32, Complex64)>, usize, usize)> = (0..dim)
        .into_par_iter()
        .map(|k| assemble_row(k, basis, dipoles, geometry, &level_energy, options))
        .collect();

    let mut rows = Vec::with_capacity(dim);
    let mut three_body_paths = 0usize;
    let mut skipped = 0usize;
    for (row, paths, skips) in per_row {
        rows.push(row);
        three_body_paths += paths;
        skipped += skips;
    }
    let h = SparseOperator::from_upper_rows(dim, rows);
    h.verify_hermitian()?;
    let report = AssemblyReport {
        dim,
        nnz: h.nnz(),
        three_body_paths,
        skipped_denominators: skipped,
    };
    Ok((h, report))
}

/// Upper-triangle entries of one row, plus three-body path/skip counts.
fn assemble_row(
    k: usize,
    basis: &ProductBasis,
    dipoles: &DipoleTable,
    geometry: &AtomGeometry,
    level_energy: &[f64],
    options: &AssemblyOptions,
) -> (Vec<(u32, Complex64)>, usize, usize) {
    let n_atoms = basis.n_atoms();
    let levels = basis.state_levels(k);
    let e_k = basis.e_diag(k);
    let mut row: Vec<(u32, Complex64)> = Vec::new();

    let detuning = e_k - basis.e_ref();
    if detuning != 0.0 {
        row.push((k as u32, Complex64::new(detuning, 0.0)));
    }

    let mut scratch: Vec<u8> = levels.to_vec();
    // Two-body exchange: flip one pair.
    for i in 0..n_atoms {
        for j in (i + 1)..n_atoms {
            let inv_r3 = geometry.inv_r3(i, j);
            for &(a2, d1) in dipoles.neighbors(levels[i] as usize) {
                for &(b2, d2) in dipoles.neighbors(levels[j] as usize) {
                    scratch[i] = a2 as u8;
                    scratch[j] = b2 as u8;
                    if let Some(idx) = basis.index_of(&scratch) {
                        if idx > k {
                            row.push((idx as u32, Complex64::new(d1 * d2 * inv_r3, 0.0)));
                        }
                    }
                }
            }
            scratch[i] = levels[i];
            scratch[j] = levels[j];
        }
    }

    let mut paths = 0usize;
    let mut skipped = 0usize;
    if options.three_body {
        let (p, s) = three_body_row(
            k,
            basis,
            dipoles,
            geometry,
            level_energy,
            options,
            &mut row,
        );
        paths = p;
        skipped = s;
    }
    (row, paths, skipped)
}

/// Accumulates second-order paths k → m → final where the two hops share one
/// atom and the endpoint differs from k in exactly three atoms.
fn three_body_row(
    k: usize,
    basis: &ProductBasis,
    dipoles: &DipoleTable,
    geometry: &AtomGeometry,
    level_energy: &[f64],
    options: &AssemblyOptions,
    row: &mut Vec<(u32, Complex64)>,
) -> (usize, usize) {
    let n_atoms = basis.n_atoms();
    let levels = basis.state_levels(k);
    let e_k = basis.e_diag(k);
    let e_ref = basis.e_ref();
    let window = basis.window();
    let floor = options.denominator_floor;
    let mut paths = 0usize;
    let mut skipped = 0usize;
    let mut mid: Vec<u8> = levels.to_vec();
    let mut fin: Vec<u8> = levels.to_vec();

    for p in 0..n_atoms {
        for q in (p + 1)..n_atoms {
            let v1_geom = geometry.inv_r3(p, q);
            for &(xp, d1a) in dipoles.neighbors(levels[p] as usize) {
                for &(xq, d1b) in dipoles.neighbors(levels[q] as usize) {
                    let e_m = e_k - level_energy[levels[p] as usize]
                        - level_energy[levels[q] as usize]
                        + level_energy[xp]
                        + level_energy[xq];
                    let in_window = (e_m - e_ref).abs() <= window;
                    let keep = match options.intermediates {
                        IntermediateSet::Window => in_window,
                        IntermediateSet::Complement => !in_window,
                        IntermediateSet::All => true,
                    };
                    if !keep {
                        continue;
                    }
                    let v1 = d1a * d1b * v1_geom;
                    mid[p] = xp as u8;
                    mid[q] = xq as u8;
                    // Second hop shares atom t ∈ {p, q} and touches a third
                    // atom u.
                    for t in [p, q] {
                        let x_t = mid[t] as usize;
                        for u in 0..n_atoms {
                            if u == p || u == q {
                                continue;
                            }
                            let v2_geom = geometry.inv_r3(t, u);
                            for &(yt, d2a) in dipoles.neighbors(x_t) {
                                // Atom t must end away from its start or the
                                // endpoint differs in only two atoms.
                                if yt as u8 == levels[t] {
                                    continue;
                                }
                                for &(yu, d2b) in dipoles.neighbors(levels[u] as usize) {
                                    fin.copy_from_slice(&mid);
                                    fin[t] = yt as u8;
                                    fin[u] = yu as u8;
                                    let Some(idx) = basis.index_of(&fin) else {
                                        continue;
                                    };
                                    if idx <= k {
                                        continue;
                                    }
                                    let e_fin = basis.e_diag(idx);
                                    let den1 = e_k - e_m;
                                    let den2 = e_fin - e_m;
                                    if den1.abs() < floor || den2.abs() < floor {
                                        skipped += 1;
                                        continue;
                                    }
                                    let v2 = d2a * d2b * v2_geom;
                                    let value =
                                        0.5 * v1 * v2 * (1.0 / den1 + 1.0 / den2);
                                    row.push((idx as u32, Complex64::new(value, 0.0)));
                                    paths += 1;
                                }
                            }
                        }
                    }
                    mid[p] = levels[p];
                    mid[q] = levels[q];
                }
            }
        }
    }
    (paths, skipped)
}
