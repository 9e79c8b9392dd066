//! Chebyshev-moment estimation of the density of states and conversion of an
//! eigenstate-count rule into an energy shell.
//!
//! The spectrum is mapped into [-1, 1] using padded spectral bounds, moments
//! µ_m = ⟨r|T_m(H̃)|r⟩ are averaged over random phase vectors, and the
//! Jackson-damped series is evaluated on a Chebyshev-node grid. Cumulative
//! masses on that grid give the interval holding a requested fraction of the
//! eigenstates.

use crate::sparse::{SparseOperator, SpectralBounds};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KpmError {
    #[error("need at least 2 moments, got {0}")]
    BadMomentCount(usize),
    #[error("need at least 1 random vector, got {0}")]
    BadVectorCount(usize),
    #[error("grid must have at least as many points as moments ({moments}), got {grid}")]
    GridTooCoarse { grid: usize, moments: usize },
    #[error(
        "Chebyshev recurrence grew to norm {norm:.3e} at order {order}; \
         spectral bounds do not enclose the spectrum"
    )]
    RecurrenceBlowUp { order: usize, norm: f64 },
    #[error("shell fractions must satisfy 0 < lower < upper < 1, got ({0}, {1})")]
    BadFractions(f64, f64),
    #[error("selected shell is degenerate (zero width)")]
    DegenerateShell,
    #[error("density of states carries no mass")]
    EmptyDos,
}

/// The interval [E0 - ΔE, E0 + ΔE] used for microcanonical averages and the
/// Gaussian energy filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyShell {
    /// Shell center (rad/µs).
    pub e0: f64,
    /// Half-width ΔE (rad/µs).
    pub delta_e: f64,
}

impl EnergyShell {
    pub fn interval(&self) -> (f64, f64) {
        (self.e0 - self.delta_e, self.e0 + self.delta_e)
    }

    /// Same width, new center; used to re-center the shell on the physical
    /// initial-state energy.
    pub fn recentered(&self, e0: f64) -> Self {
        Self {
            e0,
            delta_e: self.delta_e,
        }
    }
}

/// Raw stochastic Chebyshev moments plus the rescaling that produced them.
#[derive(Clone, Debug)]
pub struct ChebyshevMoments {
    /// Scale: H̃ = (H - b) / a.
    pub a: f64,
    pub b: f64,
    /// Vector-averaged moments; µ[0] is normalized to exactly 1.
    pub mu: Vec<f64>,
    /// Sample variance of each moment across random vectors (zero when only
    /// one vector was used).
    pub mu_variance: Vec<f64>,
    pub n_vectors: usize,
}

/// Stochastic trace estimate of µ_m = (1/dim) Tr T_m(H̃) using `r_vectors`
/// random-phase vectors. Deterministic per seed.
pub fn chebyshev_moments(
    h: &SparseOperator,
    bounds: &SpectralBounds,
    n_moments: usize,
    r_vectors: usize,
    seed: u64,
) -> Result<ChebyshevMoments, KpmError> {
    if n_moments < 1 {
        return Err(KpmError::BadMomentCount(n_moments));
    }
    if r_vectors < 1 {
        return Err(KpmError::BadVectorCount(r_vectors));
    }
    let a = 0.5 * bounds.span();
    let b = bounds.center();
    let dim = h.dim();

    let per_vector: Vec<Result<Vec<f64>, KpmError>> = (0..r_vectors as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = crate::seeded_rng(seed, stream);
            let amp = 1.0 / (dim as f64).sqrt();
            let r: Vec<Complex64> = (0..dim)
                .map(|_| {
                    use rand::Rng;
                    Complex64::from_polar(amp, rng.gen_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            vector_moments(h, a, b, n_moments, &r)
        })
        .collect();

    let mut mu = vec![0.0; n_moments];
    let mut sq = vec![0.0; n_moments];
    for res in per_vector {
        let m = res?;
        for (i, v) in m.iter().enumerate() {
            mu[i] += v;
            sq[i] += v * v;
        }
    }
    let n = r_vectors as f64;
    let mut mu_variance = vec![0.0; n_moments];
    for i in 0..n_moments {
        mu[i] /= n;
        if r_vectors > 1 {
            mu_variance[i] = (sq[i] / n - mu[i] * mu[i]).max(0.0) * n / (n - 1.0);
        }
    }
    mu[0] = 1.0;
    Ok(ChebyshevMoments {
        a,
        b,
        mu,
        mu_variance,
        n_vectors: r_vectors,
    })
}

/// Three-term recurrence ⟨r|T_m(H̃)|r⟩ for one unit vector.
fn vector_moments(
    h: &SparseOperator,
    a: f64,
    b: f64,
    n_moments: usize,
    r: &[Complex64],
) -> Result<Vec<f64>, KpmError> {
    let dim = h.dim();
    let inv_a = 1.0 / a;
    let mut mu = Vec::with_capacity(n_moments);
    let mut prev = r.to_vec(); // T_0 |r⟩
    mu.push(1.0);
    if n_moments == 1 {
        return Ok(mu);
    }
    let mut cur = vec![Complex64::new(0.0, 0.0); dim]; // T_1 |r⟩
    h.matvec_shifted(r, b, &mut cur);
    for x in cur.iter_mut() {
        *x *= inv_a;
    }
    mu.push(crate::state::inner(r, &cur).re);
    let mut scratch = vec![Complex64::new(0.0, 0.0); dim];
    for order in 2..n_moments {
        // next = 2 H̃ cur - prev
        h.matvec_shifted(&cur, b, &mut scratch);
        for (s, p) in scratch.iter_mut().zip(&prev) {
            *s = 2.0 * inv_a * *s - p;
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut scratch);
        let norm = crate::state::norm(&cur);
        if norm > 10.0 {
            return Err(KpmError::RecurrenceBlowUp { order, norm });
        }
        mu.push(crate::state::inner(r, &cur).re);
    }
    Ok(mu)
}

/// Density of states on a Chebyshev-node grid, with per-node integration
/// masses for cumulative queries.
#[derive(Clone, Debug)]
pub struct DosEstimate {
    pub a: f64,
    pub b: f64,
    /// Jackson-damped moments the grid was evaluated from (empty for
    /// synthetic grids).
    pub damped_moments: Vec<f64>,
    /// Grid energies, ascending (rad/µs).
    pub energies: Vec<f64>,
    /// Density per rad/µs at each grid energy; integrates to ~1.
    pub densities: Vec<f64>,
    /// Non-negative probability mass attributed to each node cell.
    cell_masses: Vec<f64>,
    /// Number of cells whose raw mass was negative and clamped to zero.
    pub corrected_cells: usize,
}

/// Evaluates the Jackson-damped Chebyshev series on `grid` nodes.
pub fn dos_estimate(moments: &ChebyshevMoments, grid: usize) -> Result<DosEstimate, KpmError> {
    let m_count = moments.mu.len();
    if grid < m_count {
        return Err(KpmError::GridTooCoarse {
            grid,
            moments: m_count,
        });
    }
    let damped: Vec<f64> = moments
        .mu
        .iter()
        .enumerate()
        .map(|(m, mu)| jackson_factor(m, m_count) * mu)
        .collect();

    let k_total = grid;
    let mut energies = Vec::with_capacity(k_total);
    let mut densities = Vec::with_capacity(k_total);
    let mut cell_masses = Vec::with_capacity(k_total);
    let mut corrected = 0usize;
    // Nodes descend in x as k grows; iterate in reverse for ascending energy.
    for k in (0..k_total).rev() {
        let x = (std::f64::consts::PI * (k as f64 + 0.5) / k_total as f64).cos();
        // Series value via Chebyshev recurrence.
        let mut series = damped[0];
        let mut t_prev = 1.0;
        let mut t_cur = x;
        for dm in &damped[1..] {
            series += 2.0 * dm * t_cur;
            let t_next = 2.0 * x * t_cur - t_prev;
            t_prev = t_cur;
            t_cur = t_next;
        }
        let weight = std::f64::consts::PI * (1.0 - x * x).sqrt();
        energies.push(moments.a * x + moments.b);
        densities.push(series / (weight * moments.a));
        // Chebyshev-Gauss cell mass: density × (π√(1-x²)/K) × a = series / K.
        let mass = series / k_total as f64;
        if mass < 0.0 {
            corrected += 1;
            cell_masses.push(0.0);
        } else {
            cell_masses.push(mass);
        }
    }
    Ok(DosEstimate {
        a: moments.a,
        b: moments.b,
        damped_moments: damped,
        energies,
        densities,
        cell_masses,
        corrected_cells: corrected,
    })
}

fn jackson_factor(m: usize, m_count: usize) -> f64 {
    let big_m = m_count as f64;
    let q = std::f64::consts::PI / (big_m + 1.0);
    let mf = m as f64;
    ((big_m - mf + 1.0) * (mf * q).cos() + (mf * q).sin() / q.tan()) / (big_m + 1.0)
}

impl DosEstimate {
    /// Builds a synthetic estimate from an explicit (energy, density) grid,
    /// using trapezoid cell masses. Energies must be ascending.
    pub fn from_grid(energies: Vec<f64>, densities: Vec<f64>) -> Self {
        assert_eq!(energies.len(), densities.len());
        assert!(energies.len() >= 2);
        let n = energies.len();
        let mut cell_masses = Vec::with_capacity(n);
        let mut corrected = 0usize;
        for k in 0..n {
            let left = if k == 0 { energies[0] } else { energies[k - 1] };
            let right = if k == n - 1 { energies[n - 1] } else { energies[k + 1] };
            let w = 0.5 * (right - left);
            let mass = densities[k] * w;
            if mass < 0.0 {
                corrected += 1;
                cell_masses.push(0.0);
            } else {
                cell_masses.push(mass);
            }
        }
        let a = 0.5 * (energies[n - 1] - energies[0]);
        let b = 0.5 * (energies[n - 1] + energies[0]);
        Self {
            a,
            b,
            damped_moments: Vec::new(),
            energies,
            densities,
            cell_masses,
            corrected_cells: corrected,
        }
    }

    /// Signed grid integral of the density; ≈ 1 by moment normalization.
    pub fn integral(&self) -> f64 {
        // cell_masses are clamped; undo the clamp by re-deriving the signed
        // sum from densities where cells were corrected.
        if self.corrected_cells == 0 {
            self.cell_masses.iter().sum()
        } else {
            let n = self.energies.len();
            (0..n)
                .map(|k| {
                    let left = if k == 0 { self.energies[0] } else { self.energies[k - 1] };
                    let right = if k == n - 1 {
                        self.energies[n - 1]
                    } else {
                        self.energies[k + 1]
                    };
                    self.densities[k] * 0.5 * (right - left)
                })
                .sum()
        }
    }

    /// Energy below which the given fraction of the total mass lies, by
    /// monotone linear interpolation of the cumulative masses.
    ///
    /// Each cell's mass is split around its node so the interpolated CDF
    /// passes through the exact cumulative value at every node energy.
    pub fn quantile(&self, fraction: f64) -> Result<f64, KpmError> {
        let total: f64 = self.cell_masses.iter().sum();
        if total <= 0.0 {
            return Err(KpmError::EmptyDos);
        }
        let target = fraction * total;
        // CDF anchors: (lower edge, 0), (node_k, below_k + mass_k/2)…,
        // (upper edge, total).
        let mut below = 0.0;
        let mut prev_e = self.b - self.a;
        let mut prev_c = 0.0;
        for (e, mass) in self.energies.iter().zip(&self.cell_masses) {
            let here = below + 0.5 * mass;
            if here >= target {
                let span = here - prev_c;
                let t = if span > 0.0 { (target - prev_c) / span } else { 1.0 };
                return Ok(prev_e + t * (e - prev_e));
            }
            below += mass;
            prev_e = *e;
            prev_c = here;
        }
        let span = total - prev_c;
        let upper = self.b + self.a;
        if span > 0.0 {
            Ok(prev_e + (target - prev_c) / span * (upper - prev_e))
        } else {
            Ok(upper)
        }
    }

    /// Writes `e_rad_per_us,density` rows.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "e_rad_per_us,density_per_rad_per_us")?;
        for (e, d) in self.energies.iter().zip(&self.densities) {
            writeln!(w, "{:.16e},{:.16e}", e, d)?;
        }
        Ok(())
    }
}

/// Shell whose boundaries are the lower/upper eigenstate-count quantiles of
/// the estimated DOS; the default thirds keep the central third.
pub fn select_shell(
    dos: &DosEstimate,
    lower_fraction: f64,
    upper_fraction: f64,
) -> Result<EnergyShell, KpmError> {
    if !(lower_fraction > 0.0 && upper_fraction < 1.0 && lower_fraction < upper_fraction) {
        return Err(KpmError::BadFractions(lower_fraction, upper_fraction));
    }
    let e_lo = dos.quantile(lower_fraction)?;
    let e_hi = dos.quantile(upper_fraction)?;
    let delta_e = 0.5 * (e_hi - e_lo);
    if !(delta_e > 0.0) {
        return Err(KpmError::DegenerateShell);
    }
    Ok(EnergyShell {
        e0: 0.5 * (e_lo + e_hi),
        delta_e,
    })
}
