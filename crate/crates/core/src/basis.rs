//! Energy-truncated N-atom product basis with bidirectional index maps.
//!
//! A basis holds every product state whose total unperturbed energy lies
//! within `±window` of a reference energy. Atoms are distinguishable (they
//! sit at fixed positions), so no symmetrization is applied. State order is
//! lexicographic in the per-atom level indices, which makes re-enumeration
//! bit-identical.

use crate::manifold::StarkManifold;
use crate::state::StateVector;
use num_complex::Complex64;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

/// Packing uses 6 bits per atom in a u64 key.
const MAX_ATOMS: usize = 10;
const MAX_LEVELS: usize = 64;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("atom count must be in 1..={MAX_ATOMS}, got {0}")]
    BadAtomCount(usize),
    #[error("manifold has {0} levels; at most {MAX_LEVELS} are supported")]
    TooManyLevels(usize),
    #[error("energy window must be positive, got {0}")]
    BadWindow(f64),
    #[error("reference energy must be finite")]
    NonFiniteReference,
    #[error("basis dimension exceeds the cap of {cap} states; tighten the window")]
    DimensionCap { cap: usize },
    #[error("state vector has length {got}, basis dimension is {dim}")]
    DimensionMismatch { got: usize, dim: usize },
    #[error(
        "basis holds {got} of the {expected} all-atoms-in-cluster-0 states \
         needed for the initial state; widen the window"
    )]
    MissingInitialSupport { got: usize, expected: usize },
}

/// Fractional population per cluster, labeled `-k..=k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterPopulations {
    half_range: i32,
    fractions: Vec<f64>,
}

impl ClusterPopulations {
    pub fn new(half_range: i32, fractions: Vec<f64>) -> Self {
        assert_eq!(fractions.len(), (2 * half_range + 1) as usize);
        Self {
            half_range,
            fractions,
        }
    }

    pub fn zeros(half_range: i32) -> Self {
        Self::new(half_range, vec![0.0; (2 * half_range + 1) as usize])
    }

    pub fn half_range(&self) -> i32 {
        self.half_range
    }

    pub fn n_clusters(&self) -> usize {
        self.fractions.len()
    }

    /// Population of cluster `c`.
    pub fn get(&self, cluster: i32) -> f64 {
        self.fractions[(cluster + self.half_range) as usize]
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn fractions_mut(&mut self) -> &mut [f64] {
        &mut self.fractions
    }

    pub fn total(&self) -> f64 {
        self.fractions.iter().sum()
    }

    /// Cluster labels in storage order.
    pub fn clusters(&self) -> impl Iterator<Item = i32> + '_ {
        -self.half_range..=self.half_range
    }

    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.fractions {
            *p *= factor;
        }
    }
}

/// The truncated product basis.
#[derive(Clone, Debug)]
pub struct ProductBasis {
    manifold: StarkManifold,
    n_atoms: usize,
    /// Flattened per-state level indices: `levels[k*n_atoms..][..n_atoms]`.
    levels: Vec<u8>,
    index_map: HashMap<u64, u32>,
    e_diag: Vec<f64>,
    e_ref: f64,
    window: f64,
}

#[derive(Serialize)]
struct BasisSummary<'a> {
    dim: usize,
    n_atoms: usize,
    n_levels: usize,
    e_ref_rad_per_us: f64,
    window_rad_per_us: f64,
    /// Number of states containing at least one atom in each cluster.
    states_touching_cluster: &'a [usize],
    /// Total atom slots per cluster, summed over states.
    atom_slots_per_cluster: &'a [usize],
}

impl ProductBasis {
    /// Enumerates every product state with `|e_diag - e_ref| <= window`.
    ///
    /// `e_ref` defaults to the mean diagonal energy of the all-atoms-in-
    /// cluster-0 states. `max_dim` caps the enumeration; exceeding it is an
    /// error rather than an allocation failure.
    pub fn enumerate(
        manifold: &StarkManifold,
        n_atoms: usize,
        e_ref: Option<f64>,
        window: f64,
        max_dim: usize,
    ) -> Result<Self, BasisError> {
        if n_atoms == 0 || n_atoms > MAX_ATOMS {
            return Err(BasisError::BadAtomCount(n_atoms));
        }
        let n_levels = manifold.n_levels();
        if n_levels > MAX_LEVELS {
            return Err(BasisError::TooManyLevels(n_levels));
        }
        if !(window > 0.0) {
            return Err(BasisError::BadWindow(window));
        }
        let e_ref = e_ref.unwrap_or_else(|| default_reference_energy(manifold, n_atoms));
        if !e_ref.is_finite() {
            return Err(BasisError::NonFiniteReference);
        }

        let energies: Vec<f64> = (0..n_levels)
            .map(|i| manifold.level_energy(manifold.level_from_index(i)))
            .collect();
        let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let e_max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut levels = Vec::new();
        let mut e_diag = Vec::new();
        let mut stack = vec![0u8; n_atoms];
        enumerate_rec(
            &mut stack,
            0,
            0.0,
            &energies,
            e_min,
            e_max,
            e_ref,
            window,
            max_dim,
            &mut levels,
            &mut e_diag,
        )?;

        let dim = e_diag.len();
        let mut index_map = HashMap::with_capacity(dim);
        for k in 0..dim {
            index_map.insert(pack(&levels[k * n_atoms..(k + 1) * n_atoms]), k as u32);
        }
        Ok(Self {
            manifold: manifold.clone(),
            n_atoms,
            levels,
            index_map,
            e_diag,
            e_ref,
            window,
        })
    }

    pub fn dim(&self) -> usize {
        self.e_diag.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn manifold(&self) -> &StarkManifold {
        &self.manifold
    }

    pub fn e_ref(&self) -> f64 {
        self.e_ref
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Per-atom level indices of state `k`.
    pub fn state_levels(&self, k: usize) -> &[u8] {
        &self.levels[k * self.n_atoms..(k + 1) * self.n_atoms]
    }

    /// Total unperturbed energy of state `k`.
    pub fn e_diag(&self, k: usize) -> f64 {
        self.e_diag[k]
    }

    pub fn e_diag_all(&self) -> &[f64] {
        &self.e_diag
    }

    /// Dense index of a product state given per-atom level indices.
    pub fn index_of(&self, levels: &[u8]) -> Option<usize> {
        debug_assert_eq!(levels.len(), self.n_atoms);
        self.index_map.get(&pack(levels)).map(|&i| i as usize)
    }

    /// Equal-amplitude superposition of every state with all atoms in
    /// cluster 0.
    pub fn initial_state(&self) -> Result<StateVector, BasisError> {
        let support: Vec<usize> = (0..self.dim())
            .filter(|&k| {
                self.state_levels(k)
                    .iter()
                    .all(|&l| self.manifold.level_from_index(l as usize).cluster == 0)
            })
            .collect();
        let expected = self
            .manifold
            .n_sublevels()
            .checked_pow(self.n_atoms as u32)
            .unwrap_or(usize::MAX);
        if support.len() != expected {
            return Err(BasisError::MissingInitialSupport {
                got: support.len(),
                expected,
            });
        }
        let amp = Complex64::new(1.0 / (support.len() as f64).sqrt(), 0.0);
        let mut psi = vec![Complex64::new(0.0, 0.0); self.dim()];
        for k in support {
            psi[k] = amp;
        }
        Ok(psi)
    }

    /// Fractional population per cluster: each atom contributes 1/N to the
    /// cluster it occupies, weighted by |amplitude|².
    pub fn measure_populations(
        &self,
        psi: &[Complex64],
    ) -> Result<ClusterPopulations, BasisError> {
        if psi.len() != self.dim() {
            return Err(BasisError::DimensionMismatch {
                got: psi.len(),
                dim: self.dim(),
            });
        }
        let half_range = self.manifold.half_range();
        let n_sub = self.manifold.n_sublevels();
        let mut pops = ClusterPopulations::zeros(half_range);
        let per_atom = 1.0 / self.n_atoms as f64;
        for (k, a) in psi.iter().enumerate() {
            let w = a.norm_sqr();
            if w == 0.0 {
                continue;
            }
            for &l in self.state_levels(k) {
                let slot = l as usize / n_sub;
                pops.fractions_mut()[slot] += w * per_atom;
            }
        }
        Ok(pops)
    }

    /// Summary (dimension, window, per-cluster tallies) as a JSON string.
    pub fn summary_json(&self) -> String {
        let n_clusters = self.manifold.n_clusters();
        let n_sub = self.manifold.n_sublevels();
        let mut touching = vec![0usize; n_clusters];
        let mut slots = vec![0usize; n_clusters];
        let mut seen = vec![false; n_clusters];
        for k in 0..self.dim() {
            seen.fill(false);
            for &l in self.state_levels(k) {
                let c = l as usize / n_sub;
                slots[c] += 1;
                seen[c] = true;
            }
            for (c, s) in seen.iter().enumerate() {
                if *s {
                    touching[c] += 1;
                }
            }
        }
        serde_json::to_string_pretty(&BasisSummary {
            dim: self.dim(),
            n_atoms: self.n_atoms,
            n_levels: self.manifold.n_levels(),
            e_ref_rad_per_us: self.e_ref,
            window_rad_per_us: self.window,
            states_touching_cluster: &touching,
            atom_slots_per_cluster: &slots,
        })
        .expect("summary serialization")
    }
}

/// Mean diagonal energy of the all-atoms-in-cluster-0 block: cluster 0
/// contributes no ladder energy, so this is N times the mean sublevel offset.
pub fn default_reference_energy(manifold: &StarkManifold, n_atoms: usize) -> f64 {
    let offsets = manifold.intra_offsets();
    let mean: f64 = offsets.iter().sum::<f64>() / offsets.len() as f64;
    n_atoms as f64 * mean
}

fn pack(levels: &[u8]) -> u64 {
    let mut key = 0u64;
    for &l in levels {
        key = (key << 6) | u64::from(l);
    }
    key
}

#[allow(clippy::too_many_arguments)]
fn enumerate_rec(
    stack: &mut Vec<u8>,
    atom: usize,
    partial: f64,
    energies: &[f64],
    e_min: f64,
    e_max: f64,
    e_ref: f64,
    window: f64,
    max_dim: usize,
    levels: &mut Vec<u8>,
    e_diag: &mut Vec<f64>,
) -> Result<(), BasisError> {
    let n_atoms = stack.len();
    if atom == n_atoms {
        if (partial - e_ref).abs() <= window {
            if e_diag.len() == max_dim {
                return Err(BasisError::DimensionCap { cap: max_dim });
            }
            levels.extend_from_slice(stack);
            e_diag.push(partial);
        }
        return Ok(());
    }
    // Even the best completion cannot reach the window: prune.
    let remaining = (n_atoms - atom) as f64;
    if partial + remaining * e_min > e_ref + window || partial + remaining * e_max < e_ref - window
    {
        return Ok(());
    }
    for (l, &e) in energies.iter().enumerate() {
        stack[atom] = l as u8;
        enumerate_rec(
            stack,
            atom + 1,
            partial + e,
            energies,
            e_min,
            e_max,
            e_ref,
            window,
            max_dim,
            levels,
            e_diag,
        )?;
    }
    Ok(())
}
