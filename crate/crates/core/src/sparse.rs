//! Row-compressed Hermitian sparse operator with a parallel matvec.
//!
//! Both triangles are stored so that `y = H x` is a plain row-partitioned
//! dot-product sweep with no write contention. Values are complex; operators
//! assembled from real dipole tables set a flag that switches the inner loop
//! to real arithmetic.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use std::io::{self, Write};
use thiserror::Error;

/// Entries below this magnitude (rad/µs) are dropped during construction.
pub const DROP_TOLERANCE: f64 = 1e-12;

const MATVEC_CHUNK: usize = 512;
const POWER_MAX_ITERS: usize = 50_000;
const POWER_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("entry ({0}, {1}) is outside a {2}-dimensional operator")]
    OutOfBounds(usize, usize, usize),
    #[error("operator is not Hermitian at ({0}, {1})")]
    NotHermitian(usize, usize),
    #[error("power iteration did not converge after {0} iterations")]
    NonConvergence(usize),
}

/// Hermitian sparse matrix in CSR form.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex64>,
    all_real: bool,
}

impl SparseOperator {
    /// Builds from per-row upper-triangle entries: `rows[i]` lists `(j, v)`
    /// with `j >= i`. The lower triangle is mirrored with conjugation, so the
    /// result is Hermitian by construction. Duplicate columns are summed and
    /// entries below [`DROP_TOLERANCE`] dropped.
    pub fn from_upper_rows(dim: usize, mut rows: Vec<Vec<(u32, Complex64)>>) -> Self {
        assert_eq!(rows.len(), dim);
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(j, _)| j);
            let mut merged: Vec<(u32, Complex64)> = Vec::with_capacity(row.len());
            for &(j, v) in row.iter() {
                debug_assert!(j as usize >= i && (j as usize) < dim);
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            merged.retain(|&(_, v)| v.norm() >= DROP_TOLERANCE);
            *row = merged;
        }

        // Count entries per full row: own upper entries plus mirrored ones.
        let mut counts = vec![0usize; dim];
        for (i, row) in rows.iter().enumerate() {
            for &(j, _) in row {
                counts[i] += 1;
                if j as usize != i {
                    counts[j as usize] += 1;
                }
            }
        }
        let mut row_ptr = vec![0usize; dim + 1];
        for i in 0..dim {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[dim];
        let mut cols = vec![0u32; nnz];
        let mut vals = vec![Complex64::new(0.0, 0.0); nnz];
        let mut fill = row_ptr.clone();
        // Scatter mirrored entries first: for row k they have column j < k,
        // and they arrive ordered by j, keeping every row sorted.
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                if j as usize != i {
                    let p = fill[j as usize];
                    cols[p] = i as u32;
                    vals[p] = v.conj();
                    fill[j as usize] += 1;
                }
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                let p = fill[i];
                cols[p] = j;
                vals[p] = v;
                fill[i] += 1;
            }
        }
        let all_real = vals.iter().all(|v| v.im == 0.0);
        Self {
            dim,
            row_ptr,
            cols,
            vals,
            all_real,
        }
    }

    /// Builds from arbitrary full-matrix triplets (both triangles given).
    /// Duplicates are summed; Hermiticity is NOT checked here — call
    /// [`SparseOperator::verify_hermitian`].
    pub fn from_full_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, Complex64)>,
    ) -> Result<Self, SparseError> {
        let mut entries: Vec<(u32, u32, Complex64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= dim || j >= dim {
                return Err(SparseError::OutOfBounds(i, j, dim));
            }
            entries.push((i as u32, j as u32, v));
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(u32, u32, Complex64)> = Vec::with_capacity(entries.len());
        for &(i, j, v) in &entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|&(_, _, v)| v.norm() >= DROP_TOLERANCE);

        let mut row_ptr = vec![0usize; dim + 1];
        for &(i, _, _) in &merged {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = merged.iter().map(|&(_, j, _)| j).collect();
        let vals: Vec<Complex64> = merged.iter().map(|&(_, _, v)| v).collect();
        let all_real = vals.iter().all(|v| v.im == 0.0);
        Ok(Self {
            dim,
            row_ptr,
            cols,
            vals,
            all_real,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// True when every stored value is real.
    pub fn is_real(&self) -> bool {
        self.all_real
    }

    /// Stored value at (i, j), or zero.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&(j as u32)) {
            Ok(p) => self.vals[self.row_ptr[i] + p],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Iterates over stored entries as (row, col, value).
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |p| (i, self.cols[p] as usize, self.vals[p]))
        })
    }

    /// Checks `value(i, j) == conj(value(j, i))` for every stored entry.
    pub fn verify_hermitian(&self) -> Result<(), SparseError> {
        for (i, j, v) in self.entries() {
            if self.get(j, i) != v.conj() {
                return Err(SparseError::NotHermitian(i, j));
            }
        }
        Ok(())
    }

    /// y = H x, row-parallel.
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        let row_ptr = &self.row_ptr;
        let cols = &self.cols;
        let vals = &self.vals;
        let all_real = self.all_real;
        y.par_chunks_mut(MATVEC_CHUNK)
            .enumerate()
            .for_each(|(chunk, ys)| {
                let base = chunk * MATVEC_CHUNK;
                for (k, yk) in ys.iter_mut().enumerate() {
                    let i = base + k;
                    let lo = row_ptr[i];
                    let hi = row_ptr[i + 1];
                    let mut acc = Complex64::new(0.0, 0.0);
                    if all_real {
                        for p in lo..hi {
                            let xv = x[cols[p] as usize];
                            let re = vals[p].re;
                            acc.re += re * xv.re;
                            acc.im += re * xv.im;
                        }
                    } else {
                        for p in lo..hi {
                            acc += vals[p] * x[cols[p] as usize];
                        }
                    }
                    *yk = acc;
                }
            });
    }

    /// y = (H - shift) x in one sweep.
    pub fn matvec_shifted(&self, x: &[Complex64], shift: f64, y: &mut [Complex64]) {
        self.matvec(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi -= shift * xi;
        }
    }

    /// Real part of ⟨ψ|H|ψ⟩ (exact for Hermitian H and any ψ).
    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut h_psi = vec![Complex64::new(0.0, 0.0); self.dim];
        self.matvec(psi, &mut h_psi);
        crate::state::inner(psi, &h_psi).re
    }

    /// Writes `dim nnz` then one `row col re im` line per stored entry.
    pub fn write_text(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "{} {}", self.dim, self.nnz())?;
        for (i, j, v) in self.entries() {
            writeln!(w, "{} {} {:.16e} {:.16e}", i, j, v.re, v.im)?;
        }
        Ok(())
    }
}

/// Lower/upper bounds on the spectrum of a Hermitian operator, padded by a
/// 1% safety margin.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SpectralBounds {
    pub e_min: f64,
    pub e_max: f64,
}

impl SpectralBounds {
    /// Largest eigenvalue magnitude consistent with the bounds.
    pub fn radius(&self) -> f64 {
        self.e_min.abs().max(self.e_max.abs())
    }

    pub fn span(&self) -> f64 {
        self.e_max - self.e_min
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.e_max + self.e_min)
    }
}

/// Estimates spectral bounds by power iteration: first the spectral radius ρ
/// from norm growth, then the extreme eigenvalues of the shifted operators
/// ρI + H and ρI - H, whose spectra are non-negative.
pub fn spectral_bounds(h: &SparseOperator) -> Result<SpectralBounds, SparseError> {
    let dim = h.dim();
    if dim == 0 {
        return Ok(SpectralBounds {
            e_min: 0.0,
            e_max: 0.0,
        });
    }
    let mut rng = crate::seeded_rng(0x5eed_b0bd, 0);
    let start: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();

    let rho = power_radius(h, &start)?;
    if rho == 0.0 {
        // Zero operator: eigenvalues are all exactly zero.
        return Ok(SpectralBounds {
            e_min: -DROP_TOLERANCE,
            e_max: DROP_TOLERANCE,
        });
    }
    // Extreme Rayleigh quotients of ±H + ρI.
    let top = power_extreme(h, &start, rho, 1.0)?;
    let bottom = power_extreme(h, &start, rho, -1.0)?;
    let (mut e_min, mut e_max) = (-bottom, top);
    if e_min > e_max {
        std::mem::swap(&mut e_min, &mut e_max);
    }
    let margin = 0.01 * (e_max - e_min).max(0.01 * rho);
    Ok(SpectralBounds {
        e_min: e_min - margin,
        e_max: e_max + margin,
    })
}

/// Spectral radius from matvec norm growth; insensitive to ± degenerate
/// extreme pairs, unlike a Rayleigh-quotient iteration.
fn power_radius(h: &SparseOperator, start: &[Complex64]) -> Result<f64, SparseError> {
    let mut v = start.to_vec();
    crate::state::normalize(&mut v);
    let mut w = vec![Complex64::new(0.0, 0.0); h.dim()];
    let mut previous = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        h.matvec(&v, &mut w);
        let growth = crate::state::norm(&w);
        if growth == 0.0 {
            return Ok(0.0);
        }
        if (growth - previous).abs() <= POWER_TOL * growth.max(1.0) {
            return Ok(growth);
        }
        previous = growth;
        let inv = 1.0 / growth;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = *wi * inv;
        }
    }
    Err(SparseError::NonConvergence(POWER_MAX_ITERS))
}

/// Dominant eigenvalue of (sign·H + ρI) minus ρ: the top of the spectrum for
/// sign = +1, minus the bottom for sign = -1.
fn power_extreme(
    h: &SparseOperator,
    start: &[Complex64],
    rho: f64,
    sign: f64,
) -> Result<f64, SparseError> {
    let mut v = start.to_vec();
    crate::state::normalize(&mut v);
    let mut w = vec![Complex64::new(0.0, 0.0); h.dim()];
    let mut previous = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        h.matvec(&v, &mut w);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi = sign * *wi + rho * *vi;
        }
        // Rayleigh quotient of the shifted PSD operator.
        let r = crate::state::inner(&v, &w).re;
        let growth = crate::state::norm(&w);
        if growth == 0.0 {
            // sign·H = -ρI exactly.
            return Ok(-rho);
        }
        if (r - previous).abs() <= POWER_TOL * growth.max(1.0) {
            return Ok(r - rho);
        }
        previous = r;
        let inv = 1.0 / growth;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = *wi * inv;
        }
    }
    Err(SparseError::NonConvergence(POWER_MAX_ITERS))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diagonal(values: &[f64]) -> SparseOperator {
        let rows = values
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![(i as u32, c(v, 0.0))])
            .collect();
        SparseOperator::from_upper_rows(values.len(), rows)
    }

    #[test]
    fn matvec_matches_dense_reference() {
        let mut rng = crate::seeded_rng(5, 0);
        let dim = 37;
        let mut rows: Vec<Vec<(u32, Complex64)>> = vec![Vec::new(); dim];
        let mut dense = vec![vec![c(0.0, 0.0); dim]; dim];
        for i in 0..dim {
            let d = rng.gen_range(-2.0..2.0);
            rows[i].push((i as u32, c(d, 0.0)));
            dense[i][i] = c(d, 0.0);
            for j in (i + 1)..dim {
                if rng.gen_range(0.0..1.0) < 0.15 {
                    let v = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    rows[i].push((j as u32, v));
                    dense[i][j] = v;
                    dense[j][i] = v.conj();
                }
            }
        }
        let h = SparseOperator::from_upper_rows(dim, rows);
        h.verify_hermitian().unwrap();

        let x: Vec<Complex64> = (0..dim)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut y = vec![c(0.0, 0.0); dim];
        h.matvec(&x, &mut y);
        for i in 0..dim {
            let expected: Complex64 = (0..dim).map(|j| dense[i][j] * x[j]).sum();
            assert!((y[i] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn duplicate_entries_are_summed_and_zeros_dropped() {
        let rows = vec![
            vec![(0, c(1.0, 0.0)), (1, c(0.5, 0.0)), (1, c(-0.5, 0.0))],
            vec![(1, c(2.0, 0.0))],
        ];
        let h = SparseOperator::from_upper_rows(2, rows);
        assert_eq!(h.nnz(), 2);
        assert_eq!(h.get(0, 1), c(0.0, 0.0));
        assert_eq!(h.get(0, 0), c(1.0, 0.0));
    }

    #[test]
    fn hermitian_violation_is_detected() {
        let h = SparseOperator::from_full_triplets(
            2,
            vec![(0, 1, c(1.0, 0.0)), (1, 0, c(0.5, 0.0))],
        )
        .unwrap();
        assert!(matches!(
            h.verify_hermitian(),
            Err(SparseError::NotHermitian(..))
        ));
    }

    #[test]
    fn bounds_for_known_diagonal() {
        let h = diagonal(&[-1.0, 0.0, 2.0]);
        let b = spectral_bounds(&h).unwrap();
        assert!(b.e_min <= -1.0 && b.e_min >= -1.05);
        assert!(b.e_max >= 2.0 && b.e_max <= 2.05);
    }

    #[test]
    fn bounds_for_exchange_pair() {
        // Zero detuning, coupling v: eigenvalues ±v.
        let v = 3.7;
        let rows = vec![vec![(1, c(v, 0.0))], vec![]];
        let h = SparseOperator::from_upper_rows(2, rows);
        let b = spectral_bounds(&h).unwrap();
        assert!(b.e_min <= -v && b.e_max >= v);
        assert!(b.e_min >= -1.1 * v && b.e_max <= 1.1 * v);
        assert!((b.radius() - 1.01 * v).abs() < 0.05 * v);
    }

    #[test]
    fn bounds_for_zero_operator() {
        let h = diagonal(&[0.0, 0.0]);
        let b = spectral_bounds(&h).unwrap();
        assert!(b.e_min <= 0.0 && b.e_max >= 0.0);
        assert!(b.span() < 1e-9);
    }

    #[test]
    fn expectation_matches_direct_sum() {
        let h = diagonal(&[1.0, -2.0, 0.5]);
        let mut psi = vec![c(0.5, 0.0), c(0.0, 0.5), c(0.0, 0.0)];
        crate::state::normalize(&mut psi);
        let expected = 0.5 * 1.0 + 0.5 * (-2.0);
        assert!((h.expectation(&psi) - expected).abs() < 1e-12);
    }

    #[test]
    fn text_export_roundtrips_via_parse() {
        let rows = vec![vec![(0, c(1.5, 0.0)), (1, c(0.25, -0.5))], vec![]];
        let h = SparseOperator::from_upper_rows(2, rows);
        let mut buf = Vec::new();
        h.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()
            .unwrap()
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(header, vec![2, h.nnz()]);
        let mut parsed = Vec::new();
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            parsed.push((
                toks[0].parse::<usize>().unwrap(),
                toks[1].parse::<usize>().unwrap(),
                c(toks[2].parse().unwrap(), toks[3].parse().unwrap()),
            ));
        }
        let rebuilt = SparseOperator::from_full_triplets(2, parsed).unwrap();
        rebuilt.verify_hermitian().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(rebuilt.get(i, j), h.get(i, j));
            }
        }
    }
}
