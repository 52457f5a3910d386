//! Symmetric eigendecomposition, polynomial and heat-kernel graph filters,
//! and frequency-response diagnostics.
//!
//! Filters come in two parameterizations sharing one coefficient container:
//! polynomial filters apply `Σ h_k S^k x` by iterated shifting, heat filters
//! apply `Σ h_k e^(−kL) x` spectrally through an eigendecomposition. Both
//! reduce to the same scalar frequency response, which the low-pass check
//! probes on a logarithmic grid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::{GraphSignal, Gso};

/// Largest matrix size the dense eigensolver accepts by default.
pub const DEFAULT_EIG_CAP: usize = 2048;

/// An eigendecomposition of a symmetric matrix: ascending eigenvalues paired
/// with orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    lambdas: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl EigenSystem {
    /// Validates and assembles an eigensystem: `lambdas` must be
    /// nondecreasing and `vectors` orthonormal (`‖VᵀV − I‖_max ≤ 1e−8`).
    pub fn new(lambdas: DVector<f64>, vectors: DMatrix<f64>) -> Result<EigenSystem> {
        let n = lambdas.len();
        if vectors.nrows() != n || vectors.ncols() != n || n == 0 {
            return Err(Error::InvalidInput(format!(
                "need {n} eigenvectors of length {n}, got a {}×{} matrix",
                vectors.nrows(),
                vectors.ncols()
            )));
        }
        if lambdas.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite eigenvalue".into()));
        }
        for i in 1..n {
            if lambdas[i] < lambdas[i - 1] {
                return Err(Error::InvalidInput(format!(
                    "eigenvalues must be nondecreasing, but λ[{i}] = {} < λ[{}] = {}",
                    lambdas[i],
                    i - 1,
                    lambdas[i - 1]
                )));
            }
        }
        let gram = vectors.transpose() * &vectors;
        let mut max_dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((gram[(i, j)] - target).abs());
            }
        }
        if max_dev > 1e-8 {
            return Err(Error::Accuracy(format!(
                "eigenvectors are not orthonormal: ‖VᵀV − I‖_max = {max_dev:.3e}"
            )));
        }
        Ok(EigenSystem { lambdas, vectors })
    }

    /// Ascending eigenvalues.
    pub fn lambdas(&self) -> &DVector<f64> {
        &self.lambdas
    }

    /// Orthonormal eigenvector columns; column `i` pairs with `lambdas[i]`.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Dimension of the decomposed matrix.
    pub fn n(&self) -> usize {
        self.lambdas.len()
    }
}

/// Decomposes a shift operator with the default size cap.
pub fn eig_sym(shift: &Gso) -> Result<EigenSystem> {
    eig_sym_capped(shift.matrix(), DEFAULT_EIG_CAP)
}

/// Decomposes an explicit symmetric matrix with a caller-chosen size cap.
///
/// The result is deterministic: eigenvalues ascend, ties keep the solver's
/// order, and each eigenvector's largest-magnitude entry (first such entry on
/// ties) is made positive. Output is checked against the orthonormality and
/// reconstruction invariants before being returned.
pub fn eig_sym_capped(matrix: &DMatrix<f64>, cap: usize) -> Result<EigenSystem> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "matrix must be square and nonempty, got {n}×{}",
            matrix.ncols()
        )));
    }
    if n > cap {
        return Err(Error::Capacity(format!(
            "matrix size {n} exceeds the dense eigensolver cap {cap}"
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix contains a non-finite value".into()));
    }
    let mut max_asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if max_asym > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "matrix is asymmetric: max |S_ij − S_ji| = {max_asym:.3e}"
        )));
    }

    let decomp = SymmetricEigen::new(matrix.clone());

    // Ascending order (stable for ties), then a deterministic sign: the
    // first entry of largest magnitude in each column is made positive.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| decomp.eigenvalues[a].partial_cmp(&decomp.eigenvalues[b]).unwrap());
    let lambdas = DVector::from_fn(n, |i, _| decomp.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = decomp.eigenvectors.column(src);
        let mut lead = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[lead].abs() {
                lead = i;
            }
        }
        let flip = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = flip * col[i];
        }
    }

    let system = EigenSystem::new(lambdas, vectors)?;

    // Reconstruction residual: ‖S V − V diag(λ)‖_max against the scale of S.
    let sv = matrix * system.vectors();
    let mut resid: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            resid = resid.max((sv[(i, j)] - system.lambdas()[j] * system.vectors()[(i, j)]).abs());
        }
    }
    let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if resid > 1e-7 * scale {
        return Err(Error::Accuracy(format!(
            "eigendecomposition residual ‖SV − Vλ‖_max = {resid:.3e} exceeds {:.3e}",
            1e-7 * scale
        )));
    }
    Ok(system)
}

/// Which spectral shape a coefficient vector parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    /// `Σ h_k S^k` — polynomial in the shift operator.
    Poly,
    /// `Σ h_k e^(−kL)` — powers of the heat semigroup.
    Heat,
}

/// Filter coefficients `h_0..h_{K−1}` tagged with their parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoeffs {
    h: Vec<f64>,
    kind: FilterKind,
}

impl FilterCoeffs {
    /// Validates a coefficient vector: at least one tap, all finite.
    pub fn new(h: Vec<f64>, kind: FilterKind) -> Result<FilterCoeffs> {
        if h.is_empty() {
            return Err(Error::InvalidInput("filter needs at least one coefficient".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("filter coefficients must be finite".into()));
        }
        Ok(FilterCoeffs { h, kind })
    }

    /// The coefficients.
    pub fn taps(&self) -> &[f64] {
        &self.h
    }

    /// Number of taps.
    pub fn order(&self) -> usize {
        self.h.len()
    }

    /// The parameterization.
    pub fn kind(&self) -> FilterKind {
        self.kind
    }
}

/// Applies a polynomial filter by iterated shifting:
/// `y = Σ_k h_k S^k x`, accumulating `S^k x` one multiplication at a time
/// (no matrix powers are ever formed).
pub fn graph_filter_poly(shift: &Gso, x: &GraphSignal, h: &FilterCoeffs) -> Result<GraphSignal> {
    if h.kind() != FilterKind::Poly {
        return Err(Error::InvalidInput("polynomial filtering needs poly-kind coefficients".into()));
    }
    if x.n() != shift.n() {
        return Err(Error::InvalidInput(format!(
            "signal has {} rows but the shift operator is {}×{}",
            x.n(),
            shift.n(),
            shift.n()
        )));
    }
    let taps = h.taps();
    let mut acc = x.values() * taps[0];
    let mut shifted = x.values().clone();
    for &tap in &taps[1..] {
        shifted = shift.matrix() * shifted;
        acc += &shifted * tap;
    }
    GraphSignal::new(acc)
}

/// Applies a heat-kernel filter spectrally:
/// `y = V diag(Σ_k h_k e^(−k λ)) Vᵀ x`.
///
/// The eigensystem must come from a positive-semidefinite Laplacian;
/// eigenvalues in `[−1e−6, 0)` are clamped to zero (floating-point slack) and
/// anything below that range is rejected.
pub fn graph_filter_heat(
    eig: &EigenSystem,
    x: &GraphSignal,
    h: &FilterCoeffs,
) -> Result<GraphSignal> {
    if h.kind() != FilterKind::Heat {
        return Err(Error::InvalidInput("heat filtering needs heat-kind coefficients".into()));
    }
    if x.n() != eig.n() {
        return Err(Error::InvalidInput(format!(
            "signal has {} rows but the eigensystem is over {} nodes",
            x.n(),
            eig.n()
        )));
    }
    let response = heat_response_on_spectrum(eig, h)?;
    let projected = eig.vectors().transpose() * x.values();
    let mut scaled = projected;
    for i in 0..eig.n() {
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= response[i];
        }
    }
    GraphSignal::new(eig.vectors() * scaled)
}

/// Evaluates `Σ h_k e^(−kλ_i)` for every eigenvalue, with the PSD clamp.
pub(crate) fn heat_response_on_spectrum(eig: &EigenSystem, h: &FilterCoeffs) -> Result<Vec<f64>> {
    let mut response = Vec::with_capacity(eig.n());
    for &lambda in eig.lambdas().iter() {
        if lambda < -1e-6 {
            return Err(Error::InvalidInput(format!(
                "eigenvalue {lambda} is negative beyond the PSD tolerance; \
                 heat filtering needs a positive-semidefinite Laplacian"
            )));
        }
        response.push(frequency_response(h, lambda.max(0.0)));
    }
    Ok(response)
}

/// The scalar frequency response: `Σ h_k a^k` for polynomial filters,
/// `Σ h_k e^(−ka)` for heat filters. `a` is a nonnegative frequency;
/// non-finite inputs propagate as NaN.
pub fn frequency_response(h: &FilterCoeffs, a: f64) -> f64 {
    match h.kind() {
        FilterKind::Poly => {
            // Horner evaluation, highest tap first.
            h.taps().iter().rev().fold(0.0, |acc, &tap| acc * a + tap)
        }
        FilterKind::Heat => {
            let decay = (-a).exp();
            // Σ h_k e^(−ka) = Σ h_k (e^(−a))^k, again by Horner.
            h.taps().iter().rev().fold(0.0, |acc, &tap| acc * decay + tap)
        }
    }
}

/// Outcome of [`low_pass_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPassReport {
    /// Whether the fitted tail decay is at least as fast as `a^(−d)`
    /// (quarter-slope slack).
    pub is_low_pass: bool,
    /// Fitted slope of `log |ĥ(a)|` against `log a` on the tail of the grid;
    /// `−∞` marks a response that vanishes there.
    pub fitted_exponent: f64,
}

/// Builds the default evaluation grid: 64 log-spaced frequencies spanning
/// `[0.1, 100]`.
pub fn default_response_grid() -> Vec<f64> {
    let (lo, hi, n) = (0.1f64, 100.0f64, 64);
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Tests whether a heat filter's response decays like `a^(−d)` or faster.
///
/// Fits `log |ĥ(a)|` against `log a` by least squares on the upper half of
/// the grid (log scale) and passes when the slope is at most `−d + 0.25`.
/// The grid must be positive and span at least two decades. Grid points
/// where the response has underflowed to zero are dropped; if the whole tail
/// has vanished the filter is reported low-pass with exponent `−∞`.
pub fn low_pass_check(h: &FilterCoeffs, d: f64, grid: &[f64]) -> Result<LowPassReport> {
    if h.kind() != FilterKind::Heat {
        return Err(Error::InvalidInput("low-pass check applies to heat-kind filters".into()));
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidInput(format!(
            "decay order must be finite and positive, got {d}"
        )));
    }
    if grid.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "grid needs at least 4 points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
        return Err(Error::InvalidInput("grid frequencies must be positive and finite".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let span = sorted[sorted.len() - 1] / sorted[0];
    if span < 100.0 {
        return Err(Error::InvalidInput(format!(
            "grid must span at least two decades, got a factor of {span:.3}"
        )));
    }

    let tail = &sorted[sorted.len() / 2..];
    let points: Vec<(f64, f64)> = tail
        .iter()
        .filter_map(|&a| {
            let mag = frequency_response(h, a).abs();
            (mag > 0.0).then(|| (a.ln(), mag.ln()))
        })
        .collect();
    if points.len() < 2 {
        // The response has vanished on the tail: decays faster than any
        // polynomial the fit could measure.
        return Ok(LowPassReport { is_low_pass: true, fitted_exponent: f64::NEG_INFINITY });
    }

    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let var: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let slope = cov / var;
    Ok(LowPassReport { is_low_pass: slope <= -d + 0.25, fitted_exponent: slope })
}

/// Minimum consecutive spacing among the first `m + 1` eigenvalues:
/// `min_{i=1..m} |λ_i − λ_{i+1}|` (1-based).
pub fn eigengap(eig: &EigenSystem, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidInput("eigengap needs m ≥ 1".into()));
    }
    if m + 1 > eig.n() {
        return Err(Error::InvalidInput(format!(
            "eigengap over the first {} eigenvalues needs at least that many, found {}",
            m + 1,
            eig.n()
        )));
    }
    Ok((0..m)
        .map(|i| (eig.lambdas()[i + 1] - eig.lambdas()[i]).abs())
        .fold(f64::INFINITY, f64::min))
}
