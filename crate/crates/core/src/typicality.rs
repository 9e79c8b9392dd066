//! Thermal-state prediction from Gaussian-filtered random states.
//!
//! A random state drawn over the full basis is squeezed onto the energy shell
//! by integrating dψ/ds = -(H - E0)² ψ in imaginary time up to s = 1/4ΔE²,
//! which applies the filter e^{-(H-E0)²/4ΔE²}. Averaging the cluster
//! populations of a few dozen filtered states estimates the microcanonical
//! expectation values without diagonalizing anything.

use crate::basis::{BasisError, ClusterPopulations, ProductBasis};
use crate::kpm::EnergyShell;
use crate::sparse::{spectral_bounds, SparseError, SparseOperator, SpectralBounds};
use crate::state::StateVector;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Default imaginary-time step: ds = 0.05 / λ_max².
pub const DS_FACTOR: f64 = 0.05;

/// Stability bound for the explicit scheme: ds ≤ 0.1 / λ_max².
pub const DS_LIMIT_FACTOR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum TypicalityError {
    #[error("state has length {got}, operator dimension is {dim}")]
    DimensionMismatch { got: usize, dim: usize },
    #[error("shell half-width must be positive, got {0}")]
    BadShellWidth(f64),
    #[error("shell center {e0} lies outside the spectral bounds [{lo}, {hi}]")]
    ShellOutOfBounds { e0: f64, lo: f64, hi: f64 },
    #[error("imaginary-time step {ds:.3e} exceeds the stability bound {limit:.3e}")]
    StepTooLarge { ds: f64, limit: f64 },
    #[error("state norm underflowed during filtering; the shell is too narrow for f64")]
    NormUnderflow,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{failed} of {attempted} filter samples failed")]
    TooManyFailures { failed: usize, attempted: usize },
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Amplitudes u·e^{iθ} with u ~ U[0,1) and θ ~ U[0,2π), then normalized.
/// Deterministic per (seed, stream); an all-zero draw retries on the next
/// stream.
pub fn random_state_stream(dim: usize, seed: u64, stream: u64) -> StateVector {
    assert!(dim >= 1);
    let mut attempt = stream;
    loop {
        let mut psi = raw_random_state(dim, seed, attempt);
        if crate::state::norm_sq(&psi) > 0.0 {
            crate::state::normalize(&mut psi);
            return psi;
        }
        attempt = attempt.wrapping_add(1);
    }
}

/// Stream-0 variant of [`random_state_stream`].
pub fn random_state(dim: usize, seed: u64) -> StateVector {
    random_state_stream(dim, seed, 0)
}

fn raw_random_state(dim: usize, seed: u64, stream: u64) -> StateVector {
    let mut rng = crate::seeded_rng(seed, stream);
    (0..dim)
        .map(|_| {
            let modulus: f64 = rng.gen_range(0.0..1.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Complex64::from_polar(modulus, phase)
        })
        .collect()
}

/// Diagnostics of one imaginary-time filtering run.
#[derive(Clone, Copy, Debug, Default)]
pub struct FilterStats {
    pub steps: usize,
    /// Accumulated log of the per-step norms removed by renormalization.
    pub log_norm: f64,
}

/// Applies e^{-(H-E0)²/4ΔE²} by RK4 in imaginary time, renormalizing every
/// step. Spectral bounds are computed internally; use
/// [`apply_energy_filter_with_bounds`] when they are already known.
pub fn apply_energy_filter(
    h: &SparseOperator,
    psi: &[Complex64],
    shell: &EnergyShell,
    ds: f64,
) -> Result<(StateVector, FilterStats), TypicalityError> {
    let bounds = spectral_bounds(h)?;
    apply_energy_filter_with_bounds(h, &bounds, psi, shell, ds)
}

/// Largest |E - E0| over the spectral bounds; sets the stiffness of the
/// imaginary-time integration.
pub fn filter_lambda_max(bounds: &SpectralBounds, e0: f64) -> f64 {
    (bounds.e_min - e0).abs().max((bounds.e_max - e0).abs())
}

/// Default stable imaginary-time step for a shell center.
pub fn default_filter_step(bounds: &SpectralBounds, e0: f64) -> f64 {
    let lambda = filter_lambda_max(bounds, e0);
    DS_FACTOR / (lambda * lambda).max(f64::MIN_POSITIVE)
}

pub fn apply_energy_filter_with_bounds(
    h: &SparseOperator,
    bounds: &SpectralBounds,
    psi: &[Complex64],
    shell: &EnergyShell,
    ds: f64,
) -> Result<(StateVector, FilterStats), TypicalityError> {
    let dim = h.dim();
    if psi.len() != dim {
        return Err(TypicalityError::DimensionMismatch {
            got: psi.len(),
            dim,
        });
    }
    if !(shell.delta_e > 0.0) {
        return Err(TypicalityError::BadShellWidth(shell.delta_e));
    }
    // ΔE = ∞ means s_final = 0: the filter is the identity.
    if shell.delta_e.is_infinite() {
        let mut out = psi.to_vec();
        crate::state::normalize(&mut out);
        return Ok((out, FilterStats::default()));
    }
    if shell.e0 < bounds.e_min || shell.e0 > bounds.e_max {
        return Err(TypicalityError::ShellOutOfBounds {
            e0: shell.e0,
            lo: bounds.e_min,
            hi: bounds.e_max,
        });
    }
    let lambda = filter_lambda_max(bounds, shell.e0);
    let limit = DS_LIMIT_FACTOR / (lambda * lambda).max(f64::MIN_POSITIVE);
    if !(ds > 0.0) || ds > limit {
        return Err(TypicalityError::StepTooLarge { ds, limit });
    }

    let s_final = 1.0 / (4.0 * shell.delta_e * shell.delta_e);
    let n_steps = (s_final / ds).ceil().max(1.0) as usize;
    let step = s_final / n_steps as f64;

    let mut state = psi.to_vec();
    crate::state::normalize(&mut state);
    let mut k1 = vec![Complex64::new(0.0, 0.0); dim];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut stage = k1.clone();
    let mut scratch = k1.clone();
    let mut log_norm = 0.0;

    for _ in 0..n_steps {
        apply_neg_shifted_sq(h, shell.e0, &state, &mut k1, &mut scratch);
        stage_sum(&state, &k1, 0.5 * step, &mut stage);
        apply_neg_shifted_sq(h, shell.e0, &stage, &mut k2, &mut scratch);
        stage_sum(&state, &k2, 0.5 * step, &mut stage);
        apply_neg_shifted_sq(h, shell.e0, &stage, &mut k3, &mut scratch);
        stage_sum(&state, &k3, step, &mut stage);
        apply_neg_shifted_sq(h, shell.e0, &stage, &mut k4, &mut scratch);
        let w = step / 6.0;
        for i in 0..dim {
            state[i] += w * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
        let norm = crate::state::norm(&state);
        if !(norm > f64::MIN_POSITIVE) {
            return Err(TypicalityError::NormUnderflow);
        }
        log_norm += norm.ln();
        let inv = 1.0 / norm;
        for a in state.iter_mut() {
            *a *= inv;
        }
    }
    Ok((
        state,
        FilterStats {
            steps: n_steps,
            log_norm,
        },
    ))
}

/// out = -(H - e0)² x, using two shifted matvecs.
fn apply_neg_shifted_sq(
    h: &SparseOperator,
    e0: f64,
    x: &[Complex64],
    out: &mut [Complex64],
    scratch: &mut [Complex64],
) {
    h.matvec_shifted(x, e0, scratch);
    h.matvec_shifted(scratch, e0, out);
    for o in out.iter_mut() {
        *o = -*o;
    }
}

fn stage_sum(base: &[Complex64], k: &[Complex64], c: f64, out: &mut [Complex64]) {
    for ((o, b), ki) in out.iter_mut().zip(base).zip(k) {
        *o = b + c * ki;
    }
}

/// Ensemble mean and standard error of the filtered-state populations.
#[derive(Clone, Debug, Serialize)]
pub struct ThermalEstimate {
    pub mean: ClusterPopulations,
    /// Standard error of the mean, per cluster.
    pub stderr: Vec<f64>,
    pub n_samples: usize,
    pub n_failed: usize,
}

impl ThermalEstimate {
    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().cloned().fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("thermal estimate serialization")
    }

    /// One CSV row matching the population-trace column layout, with the
    /// stated time column carrying a placeholder.
    pub fn write_csv_row(&self, w: &mut impl std::io::Write, label: f64) -> std::io::Result<()> {
        write!(w, "{:.16e}", label)?;
        for p in self.mean.fractions() {
            write!(w, ",{:.16e}", p)?;
        }
        writeln!(w, ",0")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ThermalOptions {
    /// Sample cap; also the exact count when `stderr_target` is None.
    pub n_samples: usize,
    pub seed: u64,
    /// Stop early once every cluster's standard error falls below this.
    pub stderr_target: Option<f64>,
    /// Imaginary-time step; defaults to [`default_filter_step`].
    pub ds: Option<f64>,
}

impl Default for ThermalOptions {
    fn default() -> Self {
        Self {
            n_samples: 48,
            seed: 1,
            stderr_target: Some(1e-3),
            ds: None,
        }
    }
}

const THERMAL_BATCH: usize = 8;

/// Draws random states, filters each onto the shell, and averages their
/// cluster populations. Samples run in parallel on independent RNG streams;
/// the reduction order is fixed, so results are deterministic per seed.
pub fn thermal_populations(
    h: &SparseOperator,
    basis: &ProductBasis,
    shell: &EnergyShell,
    options: &ThermalOptions,
) -> Result<ThermalEstimate, TypicalityError> {
    if options.n_samples < 2 {
        return Err(TypicalityError::TooFewSamples(options.n_samples));
    }
    let bounds = spectral_bounds(h)?;
    let ds = options
        .ds
        .unwrap_or_else(|| default_filter_step(&bounds, shell.e0));
    let dim = h.dim();
    let n_clusters = basis.manifold().n_clusters();

    let mut per_sample: Vec<ClusterPopulations> = Vec::with_capacity(options.n_samples);
    let mut failed = 0usize;
    let mut attempted = 0usize;
    while attempted < options.n_samples {
        let batch = THERMAL_BATCH.min(options.n_samples - attempted);
        let results: Vec<Result<ClusterPopulations, TypicalityError>> = (0..batch)
            .into_par_iter()
            .map(|k| {
                let stream = (attempted + k) as u64;
                let psi = random_state_stream(dim, options.seed, stream);
                let (filtered, _) =
                    apply_energy_filter_with_bounds(h, &bounds, &psi, shell, ds)?;
                Ok(basis.measure_populations(&filtered)?)
            })
            .collect();
        attempted += batch;
        for r in results {
            match r {
                Ok(p) => per_sample.push(p),
                Err(_) => failed += 1,
            }
        }
        if 2 * failed > attempted {
            return Err(TypicalityError::TooManyFailures { failed, attempted });
        }
        if per_sample.len() >= 2 {
            if let Some(target) = options.stderr_target {
                let (_, stderr) = mean_and_stderr(&per_sample, n_clusters);
                if stderr.iter().all(|s| *s < target) {
                    break;
                }
            }
        }
    }
    if per_sample.len() < 2 {
        return Err(TypicalityError::TooManyFailures {
            failed,
            attempted,
        });
    }

    let (mut mean, stderr) = mean_and_stderr(&per_sample, n_clusters);
    // Renormalize the mean onto the simplex.
    let total = mean.iter().sum::<f64>();
    for m in mean.iter_mut() {
        *m /= total;
    }
    Ok(ThermalEstimate {
        mean: ClusterPopulations::new(basis.manifold().half_range(), mean),
        stderr,
        n_samples: per_sample.len(),
        n_failed: failed,
    })
}

fn mean_and_stderr(samples: &[ClusterPopulations], n_clusters: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; n_clusters];
    for s in samples {
        for (m, p) in mean.iter_mut().zip(s.fractions()) {
            *m += p;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut stderr = vec![0.0; n_clusters];
    if samples.len() > 1 {
        for s in samples {
            for (e, (m, p)) in stderr.iter_mut().zip(mean.iter().zip(s.fractions())) {
                *e += (p - m) * (p - m);
            }
        }
        for e in stderr.iter_mut() {
            *e = (*e / (n - 1.0)).sqrt() / n.sqrt();
        }
    }
    (mean, stderr)
}
