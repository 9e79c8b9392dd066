//! Reduction of microwave-spectroscopy shots to cluster populations.
//!
//! Each shot is a scanned spectrum (frequency in GHz, signal in arbitrary
//! units). Shots are binned by total signal (a density proxy), the signal is
//! integrated over 13 contiguous frequency regions — one per Stark cluster —
//! rescaled by the measured cluster→d-state coupling strengths, normalized,
//! and compared against simulated or thermal population distributions.

use crate::basis::ClusterPopulations;
use serde::Serialize;
use std::fmt;
use std::io::Read;
use thiserror::Error;

/// The experiment resolves 13 clusters, labeled -6..=6.
pub const N_REGIONS: usize = 13;
const HALF_RANGE: i32 = 6;

/// Measured coupling strengths between each cluster and the probe d states,
/// for clusters -6..=6.
pub const REFERENCE_COUPLINGS: [f64; N_REGIONS] = [
    0.005, 0.014, 0.014, 0.023, 0.060, 0.098, 0.125, 0.132, 0.159, 0.103, 0.080, 0.087, 0.087,
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("shot needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("frequencies must increase strictly; violation near sample {0}")]
    UnsortedFrequencies(usize),
    #[error("no shots supplied")]
    EmptyShots,
    #[error("need at least one bin")]
    NoBins,
    #[error("{shots} shots cannot fill {bins} bins")]
    FewerShotsThanBins { shots: usize, bins: usize },
    #[error("expected {N_REGIONS} regions, got {0}")]
    BadRegionCount(usize),
    #[error("region {0} has inverted bounds")]
    RegionInverted(usize),
    #[error("regions {0} and {1} overlap or are out of order")]
    RegionsOverlap(usize, usize),
    #[error("expected {N_REGIONS} couplings, got {0}")]
    BadCouplingCount(usize),
    #[error("coupling {index} must be positive, got {value}")]
    NonPositiveCoupling { index: usize, value: f64 },
    #[error("integrals are all zero after coupling rescaling")]
    AllZeroIntegrals,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bin has a single shot; the standard error is undefined")]
    SingleShotBin,
    #[error("distributions have different cluster ranges")]
    RangeMismatch,
    #[error("missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("could not parse {field} from {value:?}")]
    Parse {
        field: &'static str,
        value: String,
    },
}

/// One microwave scan: samples ordered by frequency plus the total signal
/// used as the density proxy.
#[derive(Clone, Debug)]
pub struct SpectrumShot {
    samples: Vec<(f64, f64)>,
    total_signal: f64,
}

impl SpectrumShot {
    /// Validates ordering and derives the total signal as the full-scan
    /// integral.
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, DataError> {
        if samples.len() < 2 {
            return Err(DataError::TooFewSamples(samples.len()));
        }
        for (k, pair) in samples.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(DataError::UnsortedFrequencies(k + 1));
            }
        }
        let total_signal = trapezoid(&samples, samples[0].0, samples[samples.len() - 1].0);
        Ok(Self {
            samples,
            total_signal,
        })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn total_signal(&self) -> f64 {
        self.total_signal
    }

    pub fn freq_range(&self) -> (f64, f64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }
}

/// 13 contiguous frequency intervals (GHz), ascending, labeled -6..=6 in
/// storage order.
#[derive(Clone, Debug)]
pub struct RegionBoundaries {
    regions: Vec<(f64, f64)>,
}

impl RegionBoundaries {
    pub fn new(regions: Vec<(f64, f64)>) -> Result<Self, DataError> {
        if regions.len() != N_REGIONS {
            return Err(DataError::BadRegionCount(regions.len()));
        }
        for (k, &(lo, hi)) in regions.iter().enumerate() {
            if !(lo < hi) {
                return Err(DataError::RegionInverted(k));
            }
        }
        for k in 0..N_REGIONS - 1 {
            if regions[k].1 > regions[k + 1].0 {
                return Err(DataError::RegionsOverlap(k, k + 1));
            }
        }
        Ok(Self { regions })
    }

    /// Equal-width regions tiling `[center - 13w/2, center + 13w/2]`.
    pub fn uniform(center_ghz: f64, region_width_ghz: f64) -> Result<Self, DataError> {
        let w = region_width_ghz;
        let start = center_ghz - 0.5 * N_REGIONS as f64 * w;
        Self::new(
            (0..N_REGIONS)
                .map(|k| (start + k as f64 * w, start + (k + 1) as f64 * w))
                .collect(),
        )
    }

    pub fn regions(&self) -> &[(f64, f64)] {
        &self.regions
    }

    /// Reads rows `cluster,lo_ghz,hi_ghz` ordered by cluster -6..=6.
    pub fn from_csv(reader: impl Read) -> Result<Self, DataError> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut regions = vec![(0.0, 0.0); N_REGIONS];
        let mut seen = 0usize;
        for record in csv_reader.records() {
            let record = record?;
            let cluster: i32 = parse_field(&record, 0, "cluster")?;
            let lo: f64 = parse_field(&record, 1, "lo_ghz")?;
            let hi: f64 = parse_field(&record, 2, "hi_ghz")?;
            let idx = (cluster + HALF_RANGE) as usize;
            if idx >= N_REGIONS {
                return Err(DataError::BadRegionCount(seen + 1));
            }
            regions[idx] = (lo, hi);
            seen += 1;
        }
        if seen != N_REGIONS {
            return Err(DataError::BadRegionCount(seen));
        }
        Self::new(regions)
    }
}

/// Positive coupling strengths to divide the integrated signals by.
#[derive(Clone, Debug)]
pub struct CouplingTable {
    values: Vec<f64>,
}

impl CouplingTable {
    pub fn new(values: Vec<f64>) -> Result<Self, DataError> {
        if values.len() != N_REGIONS {
            return Err(DataError::BadCouplingCount(values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(DataError::NonPositiveCoupling { index, value });
            }
        }
        Ok(Self { values })
    }

    /// The measured reference couplings.
    pub fn reference() -> Self {
        Self::new(REFERENCE_COUPLINGS.to_vec()).expect("reference couplings are valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Sorts shots by total signal and splits them into quantile bins of equal
/// count (the first bins absorb any remainder). Ties keep input order.
pub fn bin_by_total_signal(
    shots: &[SpectrumShot],
    n_bins: usize,
) -> Result<Vec<Vec<usize>>, DataError> {
    if shots.is_empty() {
        return Err(DataError::EmptyShots);
    }
    if n_bins == 0 {
        return Err(DataError::NoBins);
    }
    if shots.len() < n_bins {
        return Err(DataError::FewerShotsThanBins {
            shots: shots.len(),
            bins: n_bins,
        });
    }
    let mut order: Vec<usize> = (0..shots.len()).collect();
    order.sort_by(|&a, &b| {
        shots[a]
            .total_signal
            .partial_cmp(&shots[b].total_signal)
            .unwrap()
            .then(a.cmp(&b))
    });
    let base = shots.len() / n_bins;
    let remainder = shots.len() % n_bins;
    let mut bins = Vec::with_capacity(n_bins);
    let mut cursor = 0usize;
    for b in 0..n_bins {
        let count = base + usize::from(b < remainder);
        bins.push(order[cursor..cursor + count].to_vec());
        cursor += count;
    }
    Ok(bins)
}

/// Integrals of one spectrum over the 13 regions, with empty regions noted.
#[derive(Clone, Debug)]
pub struct RegionIntegrals {
    pub values: Vec<f64>,
    /// Region indices (0..13) with no overlap with the sampled scan.
    pub empty_regions: Vec<usize>,
}

/// Trapezoidal integral of the piecewise-linear spectrum over each region,
/// interpolating at region edges. Negative signal is preserved.
pub fn integrate_regions(
    samples: &[(f64, f64)],
    boundaries: &RegionBoundaries,
) -> Result<RegionIntegrals, DataError> {
    if samples.len() < 2 {
        return Err(DataError::TooFewSamples(samples.len()));
    }
    let f_lo = samples[0].0;
    let f_hi = samples[samples.len() - 1].0;
    let mut values = Vec::with_capacity(N_REGIONS);
    let mut empty_regions = Vec::new();
    for (k, &(lo, hi)) in boundaries.regions().iter().enumerate() {
        let a = lo.max(f_lo);
        let b = hi.min(f_hi);
        if a >= b {
            empty_regions.push(k);
            values.push(0.0);
            continue;
        }
        values.push(trapezoid(samples, a, b));
    }
    Ok(RegionIntegrals {
        values,
        empty_regions,
    })
}

/// ∫ signal df over [a, b] for a piecewise-linear spectrum, a ≤ b inside the
/// sampled range.
fn trapezoid(samples: &[(f64, f64)], a: f64, b: f64) -> f64 {
    let value_at = |f: f64, k: usize| -> f64 {
        // Interpolate on segment k..k+1.
        let (f0, s0) = samples[k];
        let (f1, s1) = samples[k + 1];
        s0 + (s1 - s0) * (f - f0) / (f1 - f0)
    };
    // First segment whose right endpoint passes a.
    let start = samples.partition_point(|&(f, _)| f <= a).saturating_sub(1);
    let mut total = 0.0;
    let mut k = start;
    while k + 1 < samples.len() {
        let seg_lo = samples[k].0;
        let seg_hi = samples[k + 1].0;
        if seg_lo >= b {
            break;
        }
        let lo = seg_lo.max(a);
        let hi = seg_hi.min(b);
        if hi > lo {
            let v_lo = value_at(lo, k);
            let v_hi = value_at(hi, k);
            total += 0.5 * (v_lo + v_hi) * (hi - lo);
        }
        k += 1;
    }
    total
}

/// Divides the region integrals by the couplings and normalizes to a
/// probability distribution. Negative rescaled entries are clamped to zero;
/// the clamp count is returned alongside.
pub fn scale_and_normalize(
    integrals: &[f64],
    couplings: &CouplingTable,
) -> Result<(ClusterPopulations, usize), DataError> {
    if integrals.len() != N_REGIONS {
        return Err(DataError::LengthMismatch {
            expected: N_REGIONS,
            got: integrals.len(),
        });
    }
    let mut clamped = 0usize;
    let mut scaled: Vec<f64> = integrals
        .iter()
        .zip(couplings.values())
        .map(|(i, g)| i / g)
        .collect();
    for v in scaled.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    let total: f64 = scaled.iter().sum();
    if !(total > 0.0) {
        return Err(DataError::AllZeroIntegrals);
    }
    for v in scaled.iter_mut() {
        *v /= total;
    }
    Ok((ClusterPopulations::new(HALF_RANGE, scaled), clamped))
}

/// Standard error of the mean per cluster across the shots of one bin.
pub fn stderr_per_cluster(per_shot: &[ClusterPopulations]) -> Result<Vec<f64>, DataError> {
    match per_shot.len() {
        0 => return Err(DataError::EmptyShots),
        1 => return Err(DataError::SingleShotBin),
        _ => {}
    }
    let n = per_shot.len() as f64;
    let n_clusters = per_shot[0].n_clusters();
    let mut mean = vec![0.0; n_clusters];
    for shot in per_shot {
        for (m, p) in mean.iter_mut().zip(shot.fractions()) {
            *m += p;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut err = vec![0.0; n_clusters];
    for shot in per_shot {
        for (e, (m, p)) in err.iter_mut().zip(mean.iter().zip(shot.fractions())) {
            *e += (p - m) * (p - m);
        }
    }
    for e in err.iter_mut() {
        *e = (*e / (n - 1.0)).sqrt() / n.sqrt();
    }
    Ok(err)
}

/// Distances between an experimental distribution (with error bars) and a
/// prediction.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    /// Half the L1 distance.
    pub total_variation: f64,
    /// (experimental - predicted) / stderr per cluster; infinite where the
    /// error bar is zero but the residual is not.
    pub residuals_sigma: Vec<f64>,
    /// p_exp[0] - p_pred[0]: excess population left in the initial cluster.
    pub initial_cluster_excess: f64,
}

pub fn compare(
    experimental: &ClusterPopulations,
    stderr: &[f64],
    predicted: &ClusterPopulations,
) -> Result<ComparisonReport, DataError> {
    if experimental.half_range() != predicted.half_range()
        || stderr.len() != experimental.n_clusters()
    {
        return Err(DataError::RangeMismatch);
    }
    let total_variation = 0.5
        * experimental
            .fractions()
            .iter()
            .zip(predicted.fractions())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    let residuals_sigma = experimental
        .fractions()
        .iter()
        .zip(predicted.fractions())
        .zip(stderr)
        .map(|((a, b), e)| {
            let diff = a - b;
            if *e > 0.0 {
                diff / e
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY * diff.signum()
            }
        })
        .collect();
    let initial_cluster_excess = experimental.get(0) - predicted.get(0);
    Ok(ComparisonReport {
        total_variation,
        residuals_sigma,
        initial_cluster_excess,
    })
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total variation distance: {:.6}", self.total_variation)?;
        writeln!(
            f,
            "initial-cluster excess:   {:+.6}",
            self.initial_cluster_excess
        )?;
        writeln!(f, "cluster  residual/sigma")?;
        for (k, r) in self.residuals_sigma.iter().enumerate() {
            writeln!(f, "{:>7}  {:+.3}", k as i32 - HALF_RANGE, r)?;
        }
        Ok(())
    }
}

/// How per-shot spectra are combined within a density bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationOrder {
    /// Normalize each shot's populations, then average (default).
    PerShot,
    /// Average the rescaled integrals across shots, then normalize once.
    AfterAverage,
}

/// Fully reduced populations for one density bin.
#[derive(Clone, Debug, Serialize)]
pub struct BinReduction {
    pub bin_index: usize,
    pub n_shots: usize,
    pub populations: ClusterPopulations,
    pub stderr: Vec<f64>,
    /// Total negative-value clamps across the shots of this bin.
    pub clamped: usize,
    /// Regions that had no samples in at least one shot.
    pub empty_regions: Vec<usize>,
}

/// The full chain: bin shots by total signal, integrate regions, rescale by
/// couplings, normalize, and attach per-cluster standard errors.
pub fn reduce_bins(
    shots: &[SpectrumShot],
    boundaries: &RegionBoundaries,
    couplings: &CouplingTable,
    n_bins: usize,
    order: NormalizationOrder,
) -> Result<Vec<BinReduction>, DataError> {
    let bins = bin_by_total_signal(shots, n_bins)?;
    let mut reductions = Vec::with_capacity(bins.len());
    for (bin_index, members) in bins.iter().enumerate() {
        let mut per_shot = Vec::with_capacity(members.len());
        let mut scaled_sums = vec![0.0; N_REGIONS];
        let mut clamped = 0usize;
        let mut empty = Vec::new();
        for &s in members {
            let integrals = integrate_regions(shots[s].samples(), boundaries)?;
            for &e in &integrals.empty_regions {
                if !empty.contains(&e) {
                    empty.push(e);
                }
            }
            let (pops, n_clamped) = scale_and_normalize(&integrals.values, couplings)?;
            clamped += n_clamped;
            for (acc, (i, g)) in scaled_sums
                .iter_mut()
                .zip(integrals.values.iter().zip(couplings.values()))
            {
                *acc += i / g;
            }
            per_shot.push(pops);
        }
        let stderr = stderr_per_cluster(&per_shot)?;
        let populations = match order {
            NormalizationOrder::PerShot => {
                let n = per_shot.len() as f64;
                let mut mean = vec![0.0; per_shot[0].n_clusters()];
                for shot in &per_shot {
                    for (m, p) in mean.iter_mut().zip(shot.fractions()) {
                        *m += p / n;
                    }
                }
                ClusterPopulations::new(HALF_RANGE, mean)
            }
            NormalizationOrder::AfterAverage => {
                let mut avg = scaled_sums;
                for v in avg.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                        clamped += 1;
                    }
                }
                let total: f64 = avg.iter().sum();
                if !(total > 0.0) {
                    return Err(DataError::AllZeroIntegrals);
                }
                for v in avg.iter_mut() {
                    *v /= total;
                }
                ClusterPopulations::new(HALF_RANGE, avg)
            }
        };
        reductions.push(BinReduction {
            bin_index,
            n_shots: members.len(),
            populations,
            stderr,
            clamped,
            empty_regions: empty,
        });
    }
    Ok(reductions)
}

/// Reads one shot from CSV rows `freq_ghz,signal`.
pub fn load_shot_csv(reader: impl Read) -> Result<SpectrumShot, DataError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut samples = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        let f: f64 = parse_field(&record, 0, "freq_ghz")?;
        let s: f64 = parse_field(&record, 1, "signal")?;
        samples.push((f, s));
    }
    SpectrumShot::new(samples)
}

/// Reads many shots from long-format CSV rows `shot,freq_ghz,signal`; rows
/// are grouped by the shot column and sorted by frequency within each shot.
pub fn load_shots_long_csv(reader: impl Read) -> Result<Vec<SpectrumShot>, DataError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        let id = record
            .get(0)
            .ok_or(DataError::MissingColumn("shot"))?
            .to_string();
        let f: f64 = parse_field(&record, 1, "freq_ghz")?;
        let s: f64 = parse_field(&record, 2, "signal")?;
        match groups.last_mut() {
            Some((last_id, samples)) if *last_id == id => samples.push((f, s)),
            _ => groups.push((id, vec![(f, s)])),
        }
    }
    groups
        .into_iter()
        .map(|(_, mut samples)| {
            samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            SpectrumShot::new(samples)
        })
        .collect()
}

/// Suggests 13 equal-width regions by sliding a comb of `spacing_ghz`-wide
/// teeth across the averaged spectrum and keeping the offset that captures
/// the most signal near the teeth centers. A diagnostic aid; reductions
/// always take explicit boundaries.
pub fn suggest_boundaries(
    samples: &[(f64, f64)],
    spacing_ghz: f64,
) -> Result<RegionBoundaries, DataError> {
    if samples.len() < 2 {
        return Err(DataError::TooFewSamples(samples.len()));
    }
    let f_lo = samples[0].0;
    let f_hi = samples[samples.len() - 1].0;
    let span = N_REGIONS as f64 * spacing_ghz;
    let lo = f_lo + 0.5 * span;
    let hi = f_hi - 0.5 * span;
    if lo >= hi {
        return Err(DataError::RegionInverted(0));
    }
    let steps = 400;
    let mut best = (f64::NEG_INFINITY, lo);
    for s in 0..=steps {
        let center = lo + (hi - lo) * s as f64 / steps as f64;
        // Sum the signal inside the central 60% of every tooth.
        let mut score = 0.0;
        for k in 0..N_REGIONS {
            let tooth = center + (k as f64 - (N_REGIONS as f64 - 1.0) / 2.0) * spacing_ghz;
            score += trapezoid(
                samples,
                (tooth - 0.3 * spacing_ghz).max(f_lo),
                (tooth + 0.3 * spacing_ghz).min(f_hi),
            );
        }
        if score > best.0 {
            best = (score, center);
        }
    }
    RegionBoundaries::uniform(best.1, spacing_ghz)
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    index: usize,
    field: &'static str,
) -> Result<T, DataError> {
    let raw = record.get(index).ok_or(DataError::MissingColumn(field))?;
    raw.parse().map_err(|_| DataError::Parse {
        field,
        value: raw.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_shot(level: f64, scale: f64) -> SpectrumShot {
        let samples: Vec<(f64, f64)> = (0..=800)
            .map(|k| (104.0 + 8.0 * k as f64 / 800.0, level * scale))
            .collect();
        SpectrumShot::new(samples).unwrap()
    }

    fn default_boundaries() -> RegionBoundaries {
        RegionBoundaries::uniform(108.0, 0.53).unwrap()
    }

    #[test]
    fn shot_requires_sorted_frequencies() {
        assert!(SpectrumShot::new(vec![(1.0, 0.0), (0.5, 0.0)]).is_err());
        assert!(SpectrumShot::new(vec![(1.0, 0.0), (1.0, 0.0)]).is_err());
        assert!(SpectrumShot::new(vec![(1.0, 0.0)]).is_err());
    }

    #[test]
    fn ten_shots_ten_bins_sort_individually() {
        let shots: Vec<SpectrumShot> = [5.0, 2.0, 9.0, 1.0, 7.0, 3.0, 8.0, 0.5, 6.0, 4.0]
            .iter()
            .map(|&lvl| flat_shot(lvl, 1.0))
            .collect();
        let bins = bin_by_total_signal(&shots, 10).unwrap();
        let order: Vec<usize> = bins.iter().map(|b| b[0]).collect();
        assert_eq!(order, vec![7, 3, 1, 5, 9, 0, 8, 4, 6, 2]);
    }

    #[test]
    fn ties_keep_input_order() {
        let shots: Vec<SpectrumShot> = (0..6).map(|_| flat_shot(1.0, 1.0)).collect();
        let bins = bin_by_total_signal(&shots, 3).unwrap();
        assert_eq!(bins, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
    }

    #[test]
    fn bins_form_a_partition_matching_deciles() {
        let mut shots = Vec::new();
        let mut rng = crate::seeded_rng(100, 0);
        use rand::Rng;
        for _ in 0..10_000 {
            shots.push(flat_shot(rng.gen_range(0.1..10.0), 1.0));
        }
        let bins = bin_by_total_signal(&shots, 10).unwrap();
        // Partition: every shot exactly once.
        let mut seen = vec![false; shots.len()];
        for b in &bins {
            assert_eq!(b.len(), 1000);
            for &s in b {
                assert!(!seen[s]);
                seen[s] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // Sort-based oracle: bin edges are the empirical deciles.
        let mut totals: Vec<f64> = shots.iter().map(|s| s.total_signal()).collect();
        totals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, b) in bins.iter().enumerate().skip(1) {
            let bin_min = b
                .iter()
                .map(|&s| shots[s].total_signal())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(bin_min, totals[k * 1000]);
        }
    }

    #[test]
    fn constant_signal_integrates_to_width() {
        let samples: Vec<(f64, f64)> = (0..=1000)
            .map(|k| (104.0 + 8.0 * k as f64 / 1000.0, 1.0))
            .collect();
        let boundaries = RegionBoundaries::uniform(108.0, 0.5).unwrap();
        let integrals = integrate_regions(&samples, &boundaries).unwrap();
        for v in &integrals.values {
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert!(integrals.empty_regions.is_empty());
    }

    #[test]
    fn signal_in_one_region_leaves_the_rest_zero() {
        let boundaries = default_boundaries();
        let (lo, hi) = boundaries.regions()[(1 + HALF_RANGE) as usize];
        let mid = 0.5 * (lo + hi);
        let samples: Vec<(f64, f64)> = (0..=4000)
            .map(|k| {
                let f = 104.0 + 8.0 * k as f64 / 4000.0;
                let s = if (f - mid).abs() < 0.1 { 1.0 } else { 0.0 };
                (f, s)
            })
            .collect();
        let integrals = integrate_regions(&samples, &boundaries).unwrap();
        for (k, v) in integrals.values.iter().enumerate() {
            if k == (1 + HALF_RANGE) as usize {
                assert!(*v > 0.15);
            } else {
                assert!((*v).abs() < 1e-9, "region {k} got {v}");
            }
        }
    }

    #[test]
    fn five_peak_spectrum_matches_refined_quadrature() {
        let boundaries = default_boundaries();
        let spectrum = |f: f64| -> f64 {
            let mut s = 0.0;
            for (k, &(lo, hi)) in boundaries.regions().iter().enumerate() {
                let center = 0.5 * (lo + hi);
                for p in 0..5 {
                    let peak = center + (p as f64 - 2.0) * 0.082;
                    let width = 0.012;
                    let amp = 1.0 + 0.3 * k as f64;
                    s += amp * (-(f - peak) * (f - peak) / (2.0 * width * width)).exp();
                }
            }
            s
        };
        let sample_grid = |n: usize| -> Vec<(f64, f64)> {
            (0..=n)
                .map(|k| {
                    let f = 104.0 + 8.0 * k as f64 / n as f64;
                    (f, spectrum(f))
                })
                .collect()
        };
        let coarse = integrate_regions(&sample_grid(8000), &boundaries).unwrap();
        let fine = integrate_regions(&sample_grid(800_000), &boundaries).unwrap();
        for (c, f) in coarse.values.iter().zip(&fine.values) {
            assert!((c - f).abs() / f.abs() < 1e-3, "{c} vs {f}");
        }
    }

    #[test]
    fn integration_is_linear() {
        let boundaries = default_boundaries();
        let mut rng = crate::seeded_rng(8, 0);
        use rand::Rng;
        let grid: Vec<f64> = (0..=500).map(|k| 104.0 + 8.0 * k as f64 / 500.0).collect();
        let f_sig: Vec<f64> = grid.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g_sig: Vec<f64> = grid.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let make = |w: &[f64]| -> Vec<(f64, f64)> {
            grid.iter().cloned().zip(w.iter().cloned()).collect()
        };
        let (a, b) = (2.5, -1.25);
        let combo: Vec<f64> = f_sig
            .iter()
            .zip(&g_sig)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let int_f = integrate_regions(&make(&f_sig), &boundaries).unwrap();
        let int_g = integrate_regions(&make(&g_sig), &boundaries).unwrap();
        let int_c = integrate_regions(&make(&combo), &boundaries).unwrap();
        for k in 0..N_REGIONS {
            let expected = a * int_f.values[k] + b * int_g.values[k];
            assert!((int_c.values[k] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_couplings_reduce_to_plain_normalization() {
        let couplings = CouplingTable::new(vec![2.0; N_REGIONS]).unwrap();
        let integrals: Vec<f64> = (0..N_REGIONS).map(|k| k as f64 + 1.0).collect();
        let (pops, clamped) = scale_and_normalize(&integrals, &couplings).unwrap();
        let total: f64 = integrals.iter().sum();
        assert_eq!(clamped, 0);
        for (p, i) in pops.fractions().iter().zip(&integrals) {
            assert!((p - i / total).abs() < 1e-12);
        }
    }

    #[test]
    fn integrals_proportional_to_couplings_give_uniform_populations() {
        let couplings = CouplingTable::reference();
        let integrals: Vec<f64> = couplings.values().iter().map(|g| 3.7 * g).collect();
        let (pops, _) = scale_and_normalize(&integrals, &couplings).unwrap();
        for p in pops.fractions() {
            assert!((p - 1.0 / N_REGIONS as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn known_populations_roundtrip_through_the_reference_couplings() {
        let couplings = CouplingTable::reference();
        let mut q: Vec<f64> = (0..N_REGIONS).map(|k| (k as f64 + 0.5).powi(2)).collect();
        let total: f64 = q.iter().sum();
        for v in q.iter_mut() {
            *v /= total;
        }
        let integrals: Vec<f64> = q
            .iter()
            .zip(couplings.values())
            .map(|(q, g)| q * g)
            .collect();
        let (pops, clamped) = scale_and_normalize(&integrals, &couplings).unwrap();
        assert_eq!(clamped, 0);
        for (p, expected) in pops.fractions().iter().zip(&q) {
            assert!((p - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn negative_integrals_are_clamped_and_counted() {
        let couplings = CouplingTable::new(vec![1.0; N_REGIONS]).unwrap();
        let mut integrals = vec![1.0; N_REGIONS];
        integrals[0] = -0.5;
        integrals[4] = -0.1;
        let (pops, clamped) = scale_and_normalize(&integrals, &couplings).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(pops.get(-6), 0.0);
        assert!((pops.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_shots_have_zero_stderr() {
        let p = ClusterPopulations::new(HALF_RANGE, vec![1.0 / 13.0; N_REGIONS]);
        let err = stderr_per_cluster(&[p.clone(), p.clone(), p]).unwrap();
        assert!(err.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn two_point_stderr_matches_the_formula() {
        let mut a = vec![0.0; N_REGIONS];
        let mut b = vec![0.0; N_REGIONS];
        a[6] = 0.4;
        a[7] = 0.6;
        b[6] = 0.6;
        b[7] = 0.4;
        let pa = ClusterPopulations::new(HALF_RANGE, a);
        let pb = ClusterPopulations::new(HALF_RANGE, b);
        let err = stderr_per_cluster(&[pa, pb]).unwrap();
        // Sample sd of {0.4, 0.6} is 0.1414..; divided by √2 gives 0.1.
        assert!((err[6] - 0.1).abs() < 1e-12);
        assert!((err[7] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_shot_bin_is_flagged() {
        let p = ClusterPopulations::new(HALF_RANGE, vec![1.0 / 13.0; N_REGIONS]);
        assert!(matches!(
            stderr_per_cluster(&[p]),
            Err(DataError::SingleShotBin)
        ));
    }

    #[test]
    fn gaussian_noise_stderr_tracks_sigma() {
        use rand::Rng;
        let sigma = 0.02;
        let n_shots = 25;
        let mut ratio_sum = 0.0;
        let trials = 100;
        for trial in 0..trials {
            let mut rng = crate::seeded_rng(1000 + trial, 0);
            let shots: Vec<ClusterPopulations> = (0..n_shots)
                .map(|_| {
                    let v: Vec<f64> = (0..N_REGIONS)
                        .map(|_| {
                            // Box-Muller normal around 1/13.
                            let u1: f64 = rng.gen_range(1e-12..1.0);
                            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                            1.0 / 13.0 + sigma * (-2.0 * u1.ln()).sqrt() * u2.cos()
                        })
                        .collect();
                    ClusterPopulations::new(HALF_RANGE, v)
                })
                .collect();
            let err = stderr_per_cluster(&shots).unwrap();
            let mean_err: f64 = err.iter().sum::<f64>() / err.len() as f64;
            ratio_sum += mean_err / (sigma / (n_shots as f64).sqrt());
        }
        let ratio = ratio_sum / trials as f64;
        assert!((ratio - 1.0).abs() < 0.2, "stderr/expected ratio {ratio}");
    }

    #[test]
    fn identical_distributions_compare_to_zero() {
        let p = ClusterPopulations::new(HALF_RANGE, vec![1.0 / 13.0; N_REGIONS]);
        let report = compare(&p, &vec![0.01; N_REGIONS], &p).unwrap();
        assert_eq!(report.total_variation, 0.0);
        assert_eq!(report.initial_cluster_excess, 0.0);
        assert!(report.residuals_sigma.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn delta_versus_uniform_distance() {
        let mut delta = vec![0.0; N_REGIONS];
        delta[6] = 1.0;
        let p = ClusterPopulations::new(HALF_RANGE, delta);
        let q = ClusterPopulations::new(HALF_RANGE, vec![1.0 / 13.0; N_REGIONS]);
        let report = compare(&p, &vec![0.01; N_REGIONS], &q).unwrap();
        assert!((report.total_variation - 12.0 / 13.0).abs() < 1e-12);
        assert!((report.initial_cluster_excess - 12.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn reduce_bins_runs_the_full_chain() {
        // Synthesize shots whose signal encodes known populations, scaled by
        // a per-shot density proxy.
        let couplings = CouplingTable::reference();
        let boundaries = default_boundaries();
        let mut q: Vec<f64> = (1..=N_REGIONS).map(|k| k as f64).collect();
        let total: f64 = q.iter().sum();
        for v in q.iter_mut() {
            *v /= total;
        }
        let shot_with_scale = |scale: f64| -> SpectrumShot {
            let samples: Vec<(f64, f64)> = (0..=8000)
                .map(|k| {
                    let f = 104.0 + 8.0 * k as f64 / 8000.0;
                    let mut s = 0.0;
                    for (r, &(lo, hi)) in boundaries.regions().iter().enumerate() {
                        if f >= lo && f < hi {
                            // Flat top per region: integral = q_r·g_r·scale.
                            s = scale * q[r] * couplings.values()[r] / (hi - lo);
                        }
                    }
                    (f, s)
                })
                .collect();
            SpectrumShot::new(samples).unwrap()
        };
        let shots: Vec<SpectrumShot> = (0..12)
            .map(|k| shot_with_scale(1.0 + 0.1 * k as f64))
            .collect();
        let bins = reduce_bins(
            &shots,
            &boundaries,
            &couplings,
            3,
            NormalizationOrder::PerShot,
        )
        .unwrap();
        assert_eq!(bins.len(), 3);
        for bin in &bins {
            assert_eq!(bin.n_shots, 4);
            for (p, expected) in bin.populations.fractions().iter().zip(&q) {
                assert!(
                    (p - expected).abs() < 5e-4,
                    "recovered {p} vs {expected}"
                );
            }
        }
        // The alternative order recovers the same populations here (shots
        // share one shape).
        let bins2 = reduce_bins(
            &shots,
            &boundaries,
            &couplings,
            3,
            NormalizationOrder::AfterAverage,
        )
        .unwrap();
        for (a, b) in bins.iter().zip(&bins2) {
            for (x, y) in a
                .populations
                .fractions()
                .iter()
                .zip(b.populations.fractions())
            {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn long_format_loader_groups_shots() {
        let csv_text = "shot,freq_ghz,signal\n1,104.0,0.5\n1,105.0,0.6\n1,106.0,0.4\n2,104.0,1.5\n2,105.0,1.6\n2,106.0,1.4\n";
        let shots = load_shots_long_csv(csv_text.as_bytes()).unwrap();
        assert_eq!(shots.len(), 2);
        assert_eq!(shots[0].samples().len(), 3);
        assert!(shots[1].total_signal() > shots[0].total_signal());
    }

    #[test]
    fn boundary_suggestion_finds_a_shifted_comb() {
        let spacing = 0.53;
        let true_center = 108.1;
        let boundaries = RegionBoundaries::uniform(true_center, spacing).unwrap();
        let samples: Vec<(f64, f64)> = (0..=16_000)
            .map(|k| {
                let f = 103.0 + 10.0 * k as f64 / 16_000.0;
                let mut s = 0.01;
                for &(lo, hi) in boundaries.regions() {
                    let c = 0.5 * (lo + hi);
                    s += (-(f - c) * (f - c) / (2.0 * 0.06 * 0.06)).exp();
                }
                (f, s)
            })
            .collect();
        let suggested = suggest_boundaries(&samples, spacing).unwrap();
        let got_center = 0.5
            * (suggested.regions()[0].0 + suggested.regions()[N_REGIONS - 1].1);
        assert!(
            (got_center - true_center).abs() < 0.1,
            "center {got_center} vs {true_center}"
        );
    }

    #[test]
    fn region_csv_roundtrip() {
        let mut text = String::from("cluster,lo_ghz,hi_ghz\n");
        for k in 0..N_REGIONS {
            let c = k as i32 - HALF_RANGE;
            let lo = 104.0 + 0.6 * k as f64;
            text.push_str(&format!("{c},{lo},{}\n", lo + 0.55));
        }
        let b = RegionBoundaries::from_csv(text.as_bytes()).unwrap();
        assert_eq!(b.regions().len(), N_REGIONS);
        assert!((b.regions()[0].0 - 104.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_regions_are_rejected() {
        assert!(matches!(
            RegionBoundaries::new(vec![(0.0, 1.0); 5]),
            Err(DataError::BadRegionCount(5))
        ));
        let mut regions: Vec<(f64, f64)> = (0..N_REGIONS)
            .map(|k| (k as f64, k as f64 + 1.0))
            .collect();
        regions[4] = (4.0, 5.5); // overlaps region 5
        assert!(matches!(
            RegionBoundaries::new(regions),
            Err(DataError::RegionsOverlap(4, 5))
        ));
    }
}
