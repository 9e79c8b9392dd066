//! Frozen-gas atom positions sampled at a target number density.
//!
//! Atoms are placed uniformly in a sphere whose volume is fixed by the atom
//! count and the density, with optional pairwise exclusion enforced by
//! rejection resampling. Positions are in µm, densities in cm⁻³.

use rand::Rng;
use std::io::{self, Write};
use thiserror::Error;

/// 1 cm⁻³ expressed in µm⁻³.
const CM3_TO_UM3: f64 = 1e-12;

/// Per-atom cap on rejection attempts before a configuration is declared
/// overdense.
const MAX_ATTEMPTS_PER_ATOM: usize = 10_000;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("at least one atom is required")]
    NoAtoms,
    #[error("density must be positive and finite, got {0} cm^-3")]
    BadDensity(f64),
    #[error("exclusion radius must be non-negative and finite, got {0} um")]
    BadExclusion(f64),
    #[error(
        "could not place atom {atom} after {attempts} attempts; \
         exclusion radius {exclusion_um} um is too large for the sampling sphere"
    )]
    Overdense {
        atom: usize,
        attempts: usize,
        exclusion_um: f64,
    },
}

/// Fixed atom positions and the derived 1/r³ pair couplings.
#[derive(Clone, Debug)]
pub struct AtomGeometry {
    positions: Vec<[f64; 3]>,
    density_cm3: f64,
    radius_um: f64,
    /// Flattened n×n table of 1/r³ in µm⁻³; diagonal entries are zero.
    pair_inv_r3: Vec<f64>,
}

impl AtomGeometry {
    /// Samples `n_atoms` positions uniformly in a sphere of volume
    /// `n_atoms / density`, resampling any atom that lands within
    /// `exclusion_um` of an already placed one. Deterministic per seed.
    pub fn sample(
        n_atoms: usize,
        density_cm3: f64,
        exclusion_um: f64,
        seed: u64,
    ) -> Result<Self, GeometryError> {
        if n_atoms == 0 {
            return Err(GeometryError::NoAtoms);
        }
        if !(density_cm3.is_finite() && density_cm3 > 0.0) {
            return Err(GeometryError::BadDensity(density_cm3));
        }
        if !(exclusion_um.is_finite() && exclusion_um >= 0.0) {
            return Err(GeometryError::BadExclusion(exclusion_um));
        }
        let density_um3 = density_cm3 * CM3_TO_UM3;
        let volume = n_atoms as f64 / density_um3;
        let radius = (3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt();

        let mut rng = crate::seeded_rng(seed, 0);
        let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n_atoms);
        let excl2 = exclusion_um * exclusion_um;
        for atom in 0..n_atoms {
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > MAX_ATTEMPTS_PER_ATOM {
                    return Err(GeometryError::Overdense {
                        atom,
                        attempts: attempts - 1,
                        exclusion_um,
                    });
                }
                let candidate = uniform_in_sphere(&mut rng, radius);
                let ok = positions
                    .iter()
                    .all(|p| dist2(p, &candidate) >= excl2);
                if ok {
                    positions.push(candidate);
                    break;
                }
            }
        }

        let pair_inv_r3 = inv_r3_table(&positions);
        Ok(Self {
            positions,
            density_cm3,
            radius_um: radius,
            pair_inv_r3,
        })
    }

    /// Builds a geometry from explicit positions (µm). The stated density is
    /// kept for bookkeeping only.
    pub fn from_positions(positions: Vec<[f64; 3]>, density_cm3: f64) -> Self {
        let pair_inv_r3 = inv_r3_table(&positions);
        let radius = positions
            .iter()
            .map(|p| dist2(&[0.0; 3], p).sqrt())
            .fold(0.0, f64::max);
        Self {
            positions,
            density_cm3,
            radius_um: radius,
            pair_inv_r3,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn density_cm3(&self) -> f64 {
        self.density_cm3
    }

    /// Radius (µm) of the sampling sphere.
    pub fn radius_um(&self) -> f64 {
        self.radius_um
    }

    /// 1/r³ in µm⁻³ for an atom pair; zero on the diagonal.
    pub fn inv_r3(&self, i: usize, j: usize) -> f64 {
        self.pair_inv_r3[i * self.n_atoms() + j]
    }

    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        dist2(&self.positions[i], &self.positions[j]).sqrt()
    }

    pub fn min_pair_distance(&self) -> f64 {
        let n = self.n_atoms();
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                min = min.min(self.pair_distance(i, j));
            }
        }
        min
    }

    /// Writes positions as CSV with columns `x_um,y_um,z_um`.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "x_um,y_um,z_um")?;
        for p in &self.positions {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", p[0], p[1], p[2])?;
        }
        Ok(())
    }
}

fn uniform_in_sphere(rng: &mut impl Rng, radius: f64) -> [f64; 3] {
    loop {
        let p = [
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
        ];
        if dist2(&[0.0; 3], &p) <= radius * radius {
            return p;
        }
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn inv_r3_table(positions: &[[f64; 3]]) -> Vec<f64> {
    let n = positions.len();
    let mut table = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            // r2·√r2 rather than powf(1.5): doubling every coordinate then
            // scales 1/r³ by exactly 1/8 in floating point.
            let r2 = dist2(&positions[i], &positions[j]);
            let v = 1.0 / (r2 * r2.sqrt());
            table[i * n + j] = v;
            table[j * n + i] = v;
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_stay_inside_the_sphere() {
        // Two atoms at a density chosen so the sphere radius is 10 um.
        let radius: f64 = 10.0;
        let volume = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
        let density_cm3 = 2.0 / volume / CM3_TO_UM3;
        for seed in 0..200 {
            let g = AtomGeometry::sample(2, density_cm3, 0.0, seed).unwrap();
            assert!((g.radius_um() - radius).abs() < 1e-9);
            for p in g.positions() {
                assert!(dist2(&[0.0; 3], p).sqrt() <= radius + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = AtomGeometry::sample(4, 1e10, 1.0, 9).unwrap();
        let b = AtomGeometry::sample(4, 1e10, 1.0, 9).unwrap();
        let c = AtomGeometry::sample(4, 1e10, 1.0, 10).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn inv_r3_matches_positions() {
        let g = AtomGeometry::sample(5, 5e9, 0.0, 3).unwrap();
        for i in 0..5 {
            assert_eq!(g.inv_r3(i, i), 0.0);
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let expected = g.pair_distance(i, j).powi(3).recip();
                assert!((g.inv_r3(i, j) - expected).abs() <= 1e-12 * expected);
                assert_eq!(g.inv_r3(i, j), g.inv_r3(j, i));
            }
        }
    }

    #[test]
    fn exclusion_radius_is_respected() {
        for seed in 0..1000 {
            let g = AtomGeometry::sample(4, 1e10, 2.0, seed).unwrap();
            assert!(g.min_pair_distance() >= 2.0);
        }
    }

    #[test]
    fn overdense_configuration_fails() {
        // Sphere of volume 2/density barely larger than the exclusion ball.
        let err = AtomGeometry::sample(20, 1e10, 50.0, 1).unwrap_err();
        assert!(matches!(err, GeometryError::Overdense { .. }));
    }

    #[test]
    fn pair_spacing_matches_highest_measured_density() {
        // At 2.7e10 cm^-3 the quoted interatomic spacing is 3.3 um; the mean
        // two-atom separation in a sphere sized for that density agrees
        // within 20%.
        let mut sum = 0.0;
        let n_seeds = 10_000;
        for seed in 0..n_seeds {
            let g = AtomGeometry::sample(2, 2.7e10, 0.0, seed).unwrap();
            sum += g.pair_distance(0, 1);
        }
        let mean = sum / n_seeds as f64;
        assert!(
            (mean - 3.3).abs() / 3.3 < 0.2,
            "mean spacing {mean} um vs 3.3 um"
        );
    }

    #[test]
    fn density_times_eight_halves_pair_distances() {
        let n_seeds = 2000;
        let mean_pair = |density: f64, seed0: u64| {
            let mut dists = Vec::new();
            for seed in 0..n_seeds {
                let g = AtomGeometry::sample(4, density, 0.0, seed0 + seed).unwrap();
                for i in 0..4 {
                    for j in (i + 1)..4 {
                        dists.push(g.pair_distance(i, j));
                    }
                }
            }
            let n = dists.len() as f64;
            let mean: f64 = dists.iter().sum::<f64>() / n;
            let var: f64 = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        };
        let (m1, se1) = mean_pair(1e9, 0);
        let (m8, se8) = mean_pair(8e9, 50_000);
        let diff = m1 / 2.0 - m8;
        let se = (se1 * se1 / 4.0 + se8 * se8).sqrt();
        assert!(
            diff.abs() < 3.0 * se,
            "scaling violated: {m1}/2 vs {m8} ({} se)",
            diff.abs() / se
        );
    }
}
