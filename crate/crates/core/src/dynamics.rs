//! Real-time Schrödinger propagation with fixed-step RK4, plus equilibration
//! detection on the recorded population traces.
//!
//! The integrator never renormalizes: norm drift is the step-size diagnostic,
//! and exceeding the abort threshold is an error rather than something to
//! paper over.

use crate::basis::{BasisError, ClusterPopulations, ProductBasis};
use crate::sparse::{SparseOperator, SpectralBounds};
use crate::state::StateVector;
use num_complex::Complex64;
use std::io::{self, Write};
use thiserror::Error;

/// Default dt = DT_FACTOR / ρ(H). The accumulated RK4 phase error scales as
/// t·ρ·(ρ dt)⁴, so 0.025 holds a few-µs propagation at the 1e-9 infidelity
/// level even on stiff instances.
pub const DT_FACTOR: f64 = 0.025;

/// RK4 is stable on the imaginary axis up to |λ| dt = 2√2 ≈ 2.8.
pub const STABILITY_FACTOR: f64 = 2.8;

/// Norm drift beyond this aborts a propagation.
pub const NORM_DRIFT_ABORT: f64 = 1e-6;

pub fn default_dt(bounds: &SpectralBounds) -> f64 {
    DT_FACTOR / bounds.radius().max(f64::MIN_POSITIVE)
}

pub fn stability_limit(bounds: &SpectralBounds) -> f64 {
    STABILITY_FACTOR / bounds.radius().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("state has length {got}, operator dimension is {dim}")]
    DimensionMismatch { got: usize, dim: usize },
    #[error("total time and dt must be positive, got t_total={t_total}, dt={dt}")]
    BadTimes { t_total: f64, dt: f64 },
    #[error(
        "norm drift {drift:.3e} exceeded {limit:.1e} at t = {t_us} µs; \
         the step is too large for the spectral radius — reduce dt"
    )]
    NormDrift { t_us: f64, drift: f64, limit: f64 },
    #[error("trace spans {spanned:.3} µs, need at least two windows of {window} µs")]
    TraceTooShort { spanned: f64, window: f64 },
    #[error("equilibration window and tolerance must be positive")]
    BadEquilibriumParams,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Cluster populations and norm drift sampled along a propagation.
#[derive(Clone, Debug)]
pub struct PopulationTrace {
    pub times: Vec<f64>,
    pub populations: Vec<ClusterPopulations>,
    pub norm_drift: Vec<f64>,
}

impl PopulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV rows `t_us,p_m<k>..p_p<k>,norm_drift`, clusters ascending.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        let half_range = self.populations.first().map_or(0, |p| p.half_range());
        write!(w, "t_us")?;
        for c in -half_range..=half_range {
            if c < 0 {
                write!(w, ",p_m{}", -c)?;
            } else {
                write!(w, ",p_p{c}")?;
            }
        }
        writeln!(w, ",norm_drift")?;
        for ((t, pops), drift) in self.times.iter().zip(&self.populations).zip(&self.norm_drift)
        {
            write!(w, "{:.16e}", t)?;
            for p in pops.fractions() {
                write!(w, ",{:.16e}", p)?;
            }
            writeln!(w, ",{:.16e}", drift)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    pub t_total: f64,
    pub dt: f64,
    /// Populations are recorded every this many steps (and at the endpoint).
    pub sample_every: usize,
    pub norm_drift_abort: f64,
}

impl EvolveOptions {
    /// Default step from the spectral bounds, sampling roughly 200 points.
    pub fn from_bounds(bounds: &SpectralBounds, t_total: f64) -> Self {
        let dt = default_dt(bounds);
        let steps = (t_total / dt).ceil().max(1.0);
        Self {
            t_total,
            dt,
            sample_every: (steps / 200.0).ceil().max(1.0) as usize,
            norm_drift_abort: NORM_DRIFT_ABORT,
        }
    }
}

/// Classic RK4 on dψ/dt = -i H ψ. Returns the sampled trace and the final
/// state (unnormalized; its drift has been checked every step).
pub fn evolve(
    h: &SparseOperator,
    basis: &ProductBasis,
    psi0: &[Complex64],
    options: &EvolveOptions,
) -> Result<(PopulationTrace, StateVector), EvolveError> {
    let dim = h.dim();
    if psi0.len() != dim {
        return Err(EvolveError::DimensionMismatch {
            got: psi0.len(),
            dim,
        });
    }
    if !(options.t_total > 0.0 && options.dt > 0.0) {
        return Err(EvolveError::BadTimes {
            t_total: options.t_total,
            dt: options.dt,
        });
    }
    let n_steps = (options.t_total / options.dt).ceil() as usize;
    let dt = options.t_total / n_steps as f64;
    let sample_every = options.sample_every.max(1);

    let mut psi = psi0.to_vec();
    let mut k1 = vec![Complex64::new(0.0, 0.0); dim];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut stage = k1.clone();

    let mut trace = PopulationTrace {
        times: Vec::new(),
        populations: Vec::new(),
        norm_drift: Vec::new(),
    };
    record(basis, &psi, 0.0, &mut trace)?;

    let minus_i = Complex64::new(0.0, -1.0);
    for step in 0..n_steps {
        // k1 = -iH ψ
        h.matvec(&psi, &mut k1);
        scale_in_place(&mut k1, minus_i);
        // k2 = -iH (ψ + dt/2 k1)
        stage_sum(&psi, &k1, 0.5 * dt, &mut stage);
        h.matvec(&stage, &mut k2);
        scale_in_place(&mut k2, minus_i);
        // k3 = -iH (ψ + dt/2 k2)
        stage_sum(&psi, &k2, 0.5 * dt, &mut stage);
        h.matvec(&stage, &mut k3);
        scale_in_place(&mut k3, minus_i);
        // k4 = -iH (ψ + dt k3)
        stage_sum(&psi, &k3, dt, &mut stage);
        h.matvec(&stage, &mut k4);
        scale_in_place(&mut k4, minus_i);

        let w = dt / 6.0;
        for i in 0..dim {
            psi[i] += w * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }

        let t = (step + 1) as f64 * dt;
        let drift = (1.0 - crate::state::norm_sq(&psi)).abs();
        if drift > options.norm_drift_abort {
            return Err(EvolveError::NormDrift {
                t_us: t,
                drift,
                limit: options.norm_drift_abort,
            });
        }
        if (step + 1) % sample_every == 0 || step + 1 == n_steps {
            record(basis, &psi, t, &mut trace)?;
        }
    }
    Ok((trace, psi))
}

fn record(
    basis: &ProductBasis,
    psi: &[Complex64],
    t: f64,
    trace: &mut PopulationTrace,
) -> Result<(), BasisError> {
    let mut pops = basis.measure_populations(psi)?;
    // The raw tally sums to ‖ψ‖²; record normalized fractions and keep the
    // drift as its own diagnostic column (the state itself is never touched).
    let total = pops.total();
    trace.times.push(t);
    trace.norm_drift.push((1.0 - total).abs());
    if total > 0.0 {
        pops.scale(1.0 / total);
    }
    trace.populations.push(pops);
    Ok(())
}

fn scale_in_place(v: &mut [Complex64], c: Complex64) {
    for x in v.iter_mut() {
        *x *= c;
    }
}

/// out = base + c * k
fn stage_sum(base: &[Complex64], k: &[Complex64], c: f64, out: &mut [Complex64]) {
    for ((o, b), ki) in out.iter_mut().zip(base).zip(k) {
        *o = b + c * ki;
    }
}

/// Result of scanning a trace for a steady state.
#[derive(Clone, Debug)]
pub struct EquilibriumReport {
    pub equilibrated: bool,
    /// End of the first window after which consecutive window averages stay
    /// within tolerance; None when the criterion is never met.
    pub t_eq_us: Option<f64>,
    /// Average populations over the final window.
    pub p_eq: ClusterPopulations,
}

/// Splits the trace into consecutive windows of `window_us`, averages each,
/// and finds the earliest window after which every cluster's windowed mean
/// moves by less than `tol` between neighbors.
pub fn detect_equilibrium(
    trace: &PopulationTrace,
    window_us: f64,
    tol: f64,
) -> Result<EquilibriumReport, EvolveError> {
    if !(window_us > 0.0 && tol > 0.0) {
        return Err(EvolveError::BadEquilibriumParams);
    }
    let spanned = *trace.times.last().unwrap_or(&0.0);
    if spanned < 2.0 * window_us {
        return Err(EvolveError::TraceTooShort {
            spanned,
            window: window_us,
        });
    }
    let n_windows = (spanned / window_us).floor() as usize;
    let half_range = trace.populations[0].half_range();
    let n_clusters = trace.populations[0].n_clusters();
    let mut means = vec![vec![0.0; n_clusters]; n_windows];
    let mut counts = vec![0usize; n_windows];
    for (t, pops) in trace.times.iter().zip(&trace.populations) {
        let w = ((t / window_us) as usize).min(n_windows - 1);
        // Points past the last full window belong to it.
        for (m, p) in means[w].iter_mut().zip(pops.fractions()) {
            *m += p;
        }
        counts[w] += 1;
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        if c > 0 {
            for v in m.iter_mut() {
                *v /= c as f64;
            }
        }
    }

    let step_change = |w: usize| -> f64 {
        means[w]
            .iter()
            .zip(&means[w + 1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let mut first_stable = None;
    for start in 0..n_windows - 1 {
        if (start..n_windows - 1).all(|w| step_change(w) < tol) {
            first_stable = Some(start);
            break;
        }
    }
    let p_eq = ClusterPopulations::new(half_range, means[n_windows - 1].clone());
    Ok(EquilibriumReport {
        equilibrated: first_stable.is_some(),
        t_eq_us: first_stable.map(|w| (w + 1) as f64 * window_us),
        p_eq,
    })
}
