//! Single-atom Stark-ladder level structure and transition dipole table.
//!
//! A manifold is a set of `n_clusters` clusters labeled `-k..=k`, each holding
//! the same stack of sublevels. The energy of level `(c, s)` is
//!
//! ```text
//! E(c, s) = c·ω + α·c² + offset[s]        (rad/µs)
//! ```
//!
//! with cluster spacing ω, anharmonicity α, and intra-cluster offsets. The
//! full physical configuration has 13 clusters of 4 sublevels (52 levels);
//! smaller manifolds are used for exactly solvable instances.

use rand::Rng;
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

/// Converts a plain frequency in MHz to an angular frequency in rad/µs.
pub fn mhz_to_rad_per_us(f_mhz: f64) -> f64 {
    std::f64::consts::TAU * f_mhz
}

/// One Stark level, identified by its cluster and its sublevel within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LevelId {
    /// Cluster index in `-k..=k`; the initially excited cluster is 0.
    pub cluster: i32,
    /// Sublevel index within the cluster, `0..n_sublevels`.
    pub sublevel: u8,
}

impl LevelId {
    pub fn new(cluster: i32, sublevel: u8) -> Self {
        Self { cluster, sublevel }
    }
}

/// Parameters defining a [`StarkManifold`]. All frequencies are angular
/// (rad/µs); use [`mhz_to_rad_per_us`] when starting from MHz.
#[derive(Clone, Debug, Serialize)]
pub struct ManifoldConfig {
    /// Inter-cluster spacing ω.
    pub cluster_spacing: f64,
    /// Anharmonicity α: cluster c is shifted by α·c².
    pub anharmonicity: f64,
    /// Per-sublevel offsets within each cluster, non-decreasing.
    pub intra_offsets: Vec<f64>,
    /// Number of clusters; must be odd so the ladder is centered on 0.
    pub n_clusters: usize,
}

impl Default for ManifoldConfig {
    /// The full 52-level configuration: 13 clusters spaced by 530 MHz with a
    /// 1 MHz anharmonicity and sublevel offsets spanning 40 MHz.
    fn default() -> Self {
        Self {
            cluster_spacing: mhz_to_rad_per_us(530.0),
            anharmonicity: mhz_to_rad_per_us(1.0),
            intra_offsets: vec![
                0.0,
                mhz_to_rad_per_us(13.0),
                mhz_to_rad_per_us(27.0),
                mhz_to_rad_per_us(40.0),
            ],
            n_clusters: 13,
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("non-finite manifold parameter: {0}")]
    NonFinite(&'static str),
    #[error("cluster spacing must be positive, got {0}")]
    NonPositiveSpacing(f64),
    #[error("cluster count must be odd and nonzero, got {0}")]
    BadClusterCount(usize),
    #[error("at least one intra-cluster offset is required")]
    NoOffsets,
    #[error("intra-cluster offsets must be non-decreasing")]
    UnorderedOffsets,
    #[error("intra-cluster offset span {span} must stay below the cluster spacing {spacing}")]
    OffsetSpanTooLarge { span: f64, spacing: f64 },
    #[error("anharmonic shift {shift} at the edge cluster exceeds one cluster spacing {spacing}")]
    AnharmonicityTooLarge { shift: f64, spacing: f64 },
    #[error("clusters {0} and {1} overlap in energy")]
    ClusterOverlap(i32, i32),
}

/// The single-atom Stark ladder: level energies for `n_clusters × n_sublevels`
/// levels. Immutable after construction.
#[derive(Clone, Debug)]
pub struct StarkManifold {
    cluster_spacing: f64,
    anharmonicity: f64,
    intra_offsets: Vec<f64>,
    half_range: i32,
}

impl StarkManifold {
    pub fn new(config: ManifoldConfig) -> Result<Self, ManifoldError> {
        let ManifoldConfig {
            cluster_spacing,
            anharmonicity,
            intra_offsets,
            n_clusters,
        } = config;
        if !cluster_spacing.is_finite() {
            return Err(ManifoldError::NonFinite("cluster_spacing"));
        }
        if !anharmonicity.is_finite() {
            return Err(ManifoldError::NonFinite("anharmonicity"));
        }
        if intra_offsets.iter().any(|o| !o.is_finite()) {
            return Err(ManifoldError::NonFinite("intra_offsets"));
        }
        if cluster_spacing <= 0.0 {
            return Err(ManifoldError::NonPositiveSpacing(cluster_spacing));
        }
        if n_clusters == 0 || n_clusters % 2 == 0 {
            return Err(ManifoldError::BadClusterCount(n_clusters));
        }
        if intra_offsets.is_empty() {
            return Err(ManifoldError::NoOffsets);
        }
        if intra_offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(ManifoldError::UnorderedOffsets);
        }
        let span = intra_offsets[intra_offsets.len() - 1] - intra_offsets[0];
        if span >= cluster_spacing {
            return Err(ManifoldError::OffsetSpanTooLarge {
                span,
                spacing: cluster_spacing,
            });
        }
        let half_range = (n_clusters / 2) as i32;
        let edge_shift = anharmonicity.abs() * f64::from(half_range * half_range);
        if half_range > 0 && edge_shift >= cluster_spacing {
            return Err(ManifoldError::AnharmonicityTooLarge {
                shift: edge_shift,
                spacing: cluster_spacing,
            });
        }
        let manifold = Self {
            cluster_spacing,
            anharmonicity,
            intra_offsets,
            half_range,
        };
        // Adjacent clusters must not interleave once offsets and the
        // anharmonic bend are applied.
        for c in -half_range..half_range {
            let top = manifold.level_energy(LevelId::new(c, manifold.n_sublevels() as u8 - 1));
            let bottom = manifold.level_energy(LevelId::new(c + 1, 0));
            if top >= bottom {
                return Err(ManifoldError::ClusterOverlap(c, c + 1));
            }
        }
        Ok(manifold)
    }

    /// E(c, s) = c·ω + α·c² + offset[s].
    pub fn level_energy(&self, level: LevelId) -> f64 {
        let c = f64::from(level.cluster);
        self.cluster_spacing * c
            + self.anharmonicity * c * c
            + self.intra_offsets[level.sublevel as usize]
    }

    pub fn cluster_spacing(&self) -> f64 {
        self.cluster_spacing
    }

    pub fn anharmonicity(&self) -> f64 {
        self.anharmonicity
    }

    pub fn intra_offsets(&self) -> &[f64] {
        &self.intra_offsets
    }

    /// Largest cluster index k; clusters run `-k..=k`.
    pub fn half_range(&self) -> i32 {
        self.half_range
    }

    pub fn n_clusters(&self) -> usize {
        (2 * self.half_range + 1) as usize
    }

    pub fn n_sublevels(&self) -> usize {
        self.intra_offsets.len()
    }

    pub fn n_levels(&self) -> usize {
        self.n_clusters() * self.n_sublevels()
    }

    /// Dense index of a level: clusters ascending, sublevels ascending within.
    pub fn level_index(&self, level: LevelId) -> usize {
        debug_assert!(self.contains(level));
        (level.cluster + self.half_range) as usize * self.n_sublevels()
            + level.sublevel as usize
    }

    pub fn level_from_index(&self, index: usize) -> LevelId {
        debug_assert!(index < self.n_levels());
        let n_sub = self.n_sublevels();
        LevelId::new(
            (index / n_sub) as i32 - self.half_range,
            (index % n_sub) as u8,
        )
    }

    pub fn contains(&self, level: LevelId) -> bool {
        level.cluster.abs() <= self.half_range && (level.sublevel as usize) < self.n_sublevels()
    }

    /// All levels in dense-index order.
    pub fn levels(&self) -> impl Iterator<Item = LevelId> + '_ {
        (0..self.n_levels()).map(|i| self.level_from_index(i))
    }
}

/// Parameters for synthetic dipole-table generation.
#[derive(Clone, Debug, Serialize)]
pub struct DipoleConfig {
    /// Base magnitude of inter-cluster (|Δcluster| = 1) transition dipoles.
    pub inter_strength: f64,
    /// Intra-cluster dipoles are this factor stronger.
    pub intra_inter_ratio: f64,
    /// Relative magnitude spread in [0, 1): each entry is scaled by a factor
    /// drawn uniformly from [1 - jitter, 1 + jitter].
    pub jitter: f64,
}

impl Default for DipoleConfig {
    fn default() -> Self {
        Self {
            inter_strength: 15.0,
            intra_inter_ratio: 10.0,
            jitter: 0.3,
        }
    }
}

#[derive(Debug, Error)]
pub enum DipoleError {
    #[error("dipole strengths must be positive, got {0}")]
    NonPositiveStrength(f64),
    #[error("intra/inter ratio must be positive, got {0}")]
    BadRatio(f64),
    #[error("jitter must lie in [0, 1), got {0}")]
    BadJitter(f64),
    #[error("dipole matrix must be {expected}×{expected}, got {rows}×{cols}")]
    WrongShape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("dipole matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("dipole matrix has a nonzero diagonal entry at {0}")]
    NonzeroDiagonal(usize),
    #[error("dipole between levels {0:?} and {1:?} spans more than one cluster")]
    ForbiddenCoupling(LevelId, LevelId),
    #[error("negative dipole strength at ({0}, {1})")]
    NegativeStrength(usize, usize),
    #[error("failed to read dipole matrix: {0}")]
    Read(#[from] csv::Error),
}

/// Symmetric table of transition dipole strengths between single-atom levels.
///
/// Entries are nonzero only within a cluster or between adjacent clusters;
/// dividing a product of two entries by r³ (µm³) yields a two-atom coupling
/// in rad/µs.
#[derive(Clone, Debug)]
pub struct DipoleTable {
    n_levels: usize,
    entries: Vec<f64>,
    /// Per-level list of (partner level index, strength) with nonzero strength.
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl DipoleTable {
    /// Generates a table with uniform-magnitude couplings scaled by an
    /// optional random jitter. Deterministic for a fixed seed.
    pub fn generate(
        manifold: &StarkManifold,
        config: &DipoleConfig,
        seed: u64,
    ) -> Result<Self, DipoleError> {
        if config.inter_strength <= 0.0 || !config.inter_strength.is_finite() {
            return Err(DipoleError::NonPositiveStrength(config.inter_strength));
        }
        if config.intra_inter_ratio <= 0.0 || !config.intra_inter_ratio.is_finite() {
            return Err(DipoleError::BadRatio(config.intra_inter_ratio));
        }
        if !(0.0..1.0).contains(&config.jitter) {
            return Err(DipoleError::BadJitter(config.jitter));
        }
        let n = manifold.n_levels();
        let mut rng = crate::seeded_rng(seed, 0);
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            let a = manifold.level_from_index(i);
            for j in (i + 1)..n {
                let b = manifold.level_from_index(j);
                let dc = (a.cluster - b.cluster).abs();
                if dc > 1 {
                    continue;
                }
                let base = if dc == 0 {
                    config.inter_strength * config.intra_inter_ratio
                } else {
                    config.inter_strength
                };
                let scale = if config.jitter > 0.0 {
                    1.0 + config.jitter * rng.gen_range(-1.0..1.0)
                } else {
                    1.0
                };
                let d = base * scale;
                entries[i * n + j] = d;
                entries[j * n + i] = d;
            }
        }
        Ok(Self::from_entries(n, entries))
    }

    /// Validates and adopts an explicit matrix, indexed like
    /// [`StarkManifold::level_index`].
    pub fn from_matrix(
        manifold: &StarkManifold,
        matrix: &[Vec<f64>],
    ) -> Result<Self, DipoleError> {
        let n = manifold.n_levels();
        if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
            return Err(DipoleError::WrongShape {
                expected: n,
                rows: matrix.len(),
                cols: matrix.first().map_or(0, Vec::len),
            });
        }
        for i in 0..n {
            if matrix[i][i] != 0.0 {
                return Err(DipoleError::NonzeroDiagonal(i));
            }
            for j in (i + 1)..n {
                let d = matrix[i][j];
                if d != matrix[j][i] {
                    return Err(DipoleError::Asymmetric(i, j));
                }
                if d == 0.0 {
                    continue;
                }
                if d < 0.0 {
                    return Err(DipoleError::NegativeStrength(i, j));
                }
                let a = manifold.level_from_index(i);
                let b = manifold.level_from_index(j);
                if (a.cluster - b.cluster).abs() > 1 {
                    return Err(DipoleError::ForbiddenCoupling(a, b));
                }
            }
        }
        let mut entries = vec![0.0; n * n];
        for (i, row) in matrix.iter().enumerate() {
            entries[i * n..(i + 1) * n].copy_from_slice(row);
        }
        Ok(Self::from_entries(n, entries))
    }

    /// Reads an `n_levels × n_levels` matrix from headerless CSV.
    pub fn from_csv_path(
        manifold: &StarkManifold,
        path: impl AsRef<Path>,
    ) -> Result<Self, DipoleError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let mut matrix = Vec::new();
        for record in reader.deserialize() {
            let row: Vec<f64> = record?;
            matrix.push(row);
        }
        Self::from_matrix(manifold, &matrix)
    }

    fn from_entries(n_levels: usize, entries: Vec<f64>) -> Self {
        let neighbors = (0..n_levels)
            .map(|i| {
                (0..n_levels)
                    .filter(|&j| entries[i * n_levels + j] != 0.0)
                    .map(|j| (j, entries[i * n_levels + j]))
                    .collect()
            })
            .collect();
        Self {
            n_levels,
            entries,
            neighbors,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    /// Strength between two levels by dense index; zero when uncoupled.
    pub fn strength(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_levels + j]
    }

    /// Nonzero partners of a level, for fast coupling enumeration.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Median intra-cluster magnitude over median inter-cluster magnitude.
    pub fn median_ratio(&self, manifold: &StarkManifold) -> f64 {
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for i in 0..self.n_levels {
            for j in (i + 1)..self.n_levels {
                let d = self.entries[i * self.n_levels + j];
                if d == 0.0 {
                    continue;
                }
                let a = manifold.level_from_index(i);
                let b = manifold.level_from_index(j);
                if a.cluster == b.cluster {
                    intra.push(d.abs());
                } else {
                    inter.push(d.abs());
                }
            }
        }
        median(&mut intra) / median(&mut inter)
    }
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}
