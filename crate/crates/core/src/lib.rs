//! Energy exchange of cold Rydberg atoms across a Stark ladder.
//!
//! The crate models N frozen atoms, each carrying a manifold of Stark levels
//! grouped into nearly harmonic clusters, coupled by 1/r³ dipole-dipole
//! exchange. It provides:
//!
//! - [`manifold`]: the single-atom level structure and transition dipoles,
//! - [`geometry`]: frozen-gas position sampling at a target density,
//! - [`basis`]: the energy-truncated N-atom product basis and the
//!   cluster-population observable,
//! - [`sparse`] / [`hamiltonian`]: sparse Hermitian operator assembly
//!   (two-body exchange plus optional effective three-body terms),
//! - [`dynamics`]: real-time RK4 propagation with equilibration detection,
//! - [`typicality`]: thermal-state prediction from Gaussian-filtered random
//!   states,
//! - [`kpm`]: Chebyshev-moment density of states and energy-shell selection,
//! - [`oracle`]: dense exact-diagonalization references for small instances,
//! - [`expdata`]: the microwave-spectroscopy data-reduction pipeline.
//!
//! Units: energies are angular frequencies in rad/µs, times in µs, distances
//! in µm, and ħ = 1 throughout.

pub mod basis;
pub mod dynamics;
pub mod expdata;
pub mod geometry;
pub mod hamiltonian;
pub mod kpm;
pub mod manifold;
pub mod oracle;
pub mod sparse;
pub mod state;
pub mod typicality;

pub use basis::{ClusterPopulations, ProductBasis};
pub use geometry::AtomGeometry;
pub use kpm::{DosEstimate, EnergyShell};
pub use manifold::{DipoleTable, LevelId, StarkManifold};
pub use sparse::SparseOperator;
pub use state::StateVector;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded RNG with an independent substream, so that parallel workers drawing
/// from distinct streams never share state.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
