//! Analytically known manifolds — the unit circle, the unit sphere, and the
//! flat torus — with closed-form Laplace–Beltrami eigenpairs, uniform
//! sampling, bandlimited signals, quadrature reference grids, and spectral
//! evaluation of manifold neural networks.
//!
//! Everything is expressed under the *normalized* uniform measure, so the
//! constant eigenfunction is exactly 1 and quadrature weights sum to 1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::GnnParams;
use crate::spectral::FilterKind;

/// Relative quadrature re-projection residual allowed inside
/// [`mnn_forward`] before it refuses to continue.
pub const DEFAULT_REPROJECTION_TOL: f64 = 1e-3;

/// Minimum ratio of grid size to retained modes for MNN evaluation.
pub const MIN_GRID_FACTOR: usize = 50;

/// A manifold whose Laplace–Beltrami eigenpairs are known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticManifold {
    /// The unit circle, intrinsic dimension 1.
    Circle,
    /// The unit sphere, intrinsic dimension 2.
    Sphere,
    /// The flat torus `[0, 2π)²`, intrinsic dimension 2.
    FlatTorus,
}

impl AnalyticManifold {
    /// Intrinsic dimension `m`.
    pub fn intrinsic_dim(self) -> usize {
        match self {
            AnalyticManifold::Circle => 1,
            AnalyticManifold::Sphere | AnalyticManifold::FlatTorus => 2,
        }
    }

    /// Riemannian volume: `2π`, `4π`, and `4π²` respectively.
    pub fn volume(self) -> f64 {
        match self {
            AnalyticManifold::Circle => 2.0 * std::f64::consts::PI,
            AnalyticManifold::Sphere => 4.0 * std::f64::consts::PI,
            AnalyticManifold::FlatTorus => 4.0 * std::f64::consts::PI * std::f64::consts::PI,
        }
    }

    /// Width of the intrinsic coordinate rows this module uses:
    /// `θ` for the circle, a unit vector for the sphere, `(θ₁, θ₂)` for the
    /// torus.
    pub fn coord_dim(self) -> usize {
        match self {
            AnalyticManifold::Circle => 1,
            AnalyticManifold::Sphere => 3,
            AnalyticManifold::FlatTorus => 2,
        }
    }

    /// Dimension of the isometric ambient embedding produced by
    /// [`SamplingOperator::embed`]: `R²`, `R³`, `R⁴`.
    pub fn ambient_dim(self) -> usize {
        match self {
            AnalyticManifold::Circle => 2,
            AnalyticManifold::Sphere => 3,
            AnalyticManifold::FlatTorus => 4,
        }
    }

    /// Stable name used in CLI flags and reports.
    pub fn name(self) -> &'static str {
        match self {
            AnalyticManifold::Circle => "circle",
            AnalyticManifold::Sphere => "sphere",
            AnalyticManifold::FlatTorus => "flat-torus",
        }
    }

    /// Parses [`name`](Self::name) back.
    pub fn from_name(name: &str) -> Option<AnalyticManifold> {
        match name {
            "circle" => Some(AnalyticManifold::Circle),
            "sphere" => Some(AnalyticManifold::Sphere),
            "flat-torus" => Some(AnalyticManifold::FlatTorus),
            _ => None,
        }
    }
}

/// One factor of a torus product mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TorusFactor {
    Const,
    Cos(u32),
    Sin(u32),
}

impl TorusFactor {
    fn evaluate(self, theta: f64) -> f64 {
        match self {
            TorusFactor::Const => 1.0,
            TorusFactor::Cos(k) => std::f64::consts::SQRT_2 * (k as f64 * theta).cos(),
            TorusFactor::Sin(k) => std::f64::consts::SQRT_2 * (k as f64 * theta).sin(),
        }
    }

    fn order(self) -> u32 {
        match self {
            TorusFactor::Const => 0,
            TorusFactor::Cos(_) => 1,
            TorusFactor::Sin(_) => 2,
        }
    }
}

/// Which closed-form eigenfunction a pair refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    CircleConst,
    CircleCos(u32),
    CircleSin(u32),
    SphereHarmonic { l: u32, m: i32 },
    TorusProduct { f1: TorusFactor, f2: TorusFactor },
}

/// An eigenvalue with its evaluable eigenfunction, orthonormal under the
/// manifold's normalized uniform measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    lambda: f64,
    mode: Mode,
}

impl EigenPair {
    /// The Laplace–Beltrami eigenvalue.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Evaluates the eigenfunction at one intrinsic coordinate row
    /// (see [`AnalyticManifold::coord_dim`] for the layout).
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        match self.mode {
            Mode::CircleConst => 1.0,
            Mode::CircleCos(k) => std::f64::consts::SQRT_2 * (k as f64 * point[0]).cos(),
            Mode::CircleSin(k) => std::f64::consts::SQRT_2 * (k as f64 * point[0]).sin(),
            Mode::SphereHarmonic { l, m } => real_spherical_harmonic(l, m, point),
            Mode::TorusProduct { f1, f2 } => f1.evaluate(point[0]) * f2.evaluate(point[1]),
        }
    }

    /// A short human-readable label, e.g. `cos(2θ)` or `Y[l=3,m=-1]`.
    pub fn describe(&self) -> String {
        match self.mode {
            Mode::CircleConst => "1".into(),
            Mode::CircleCos(k) => format!("√2·cos({k}θ)"),
            Mode::CircleSin(k) => format!("√2·sin({k}θ)"),
            Mode::SphereHarmonic { l, m } => format!("Y[l={l},m={m}]"),
            Mode::TorusProduct { f1, f2 } => format!("{f1:?}⊗{f2:?}"),
        }
    }
}

/// Associated Legendre `P_l^m(x)` with the Condon–Shortley phase.
fn associated_legendre(l: u32, m: u32, x: f64) -> f64 {
    // P_m^m = (−1)^m (2m−1)!! (1−x²)^{m/2}, then two-term upward recurrence.
    let mut pmm = 1.0;
    if m > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2.0 * m as f64 + 1.0) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        let llf = ll as f64;
        let mf = m as f64;
        pll = ((2.0 * llf - 1.0) * x * pmmp1 - (llf + mf - 1.0) * pmm) / (llf - mf);
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Real spherical harmonic scaled to unit norm under the *normalized*
/// sphere measure (i.e. `√(4π)` times the usual real `Y_lm`), evaluated at
/// a unit vector `(x, y, z)`.
fn real_spherical_harmonic(l: u32, m: i32, point: &[f64]) -> f64 {
    let (x, y, z) = (point[0], point[1], point[2]);
    let azimuth = y.atan2(x);
    let m_abs = m.unsigned_abs();
    // (l−|m|)! / (l+|m|)! as a running product to stay in range.
    let mut ratio = 1.0;
    for i in (l - m_abs + 1)..=(l + m_abs) {
        ratio /= i as f64;
    }
    let norm = ((2 * l + 1) as f64 * ratio).sqrt();
    let legendre = associated_legendre(l, m_abs, z);
    if m == 0 {
        norm * legendre
    } else if m > 0 {
        std::f64::consts::SQRT_2 * norm * legendre * (m as f64 * azimuth).cos()
    } else {
        std::f64::consts::SQRT_2 * norm * legendre * (m_abs as f64 * azimuth).sin()
    }
}

/// All eigenpairs with `λ ≤ lambda_max`, ascending, in the catalogue's
/// deterministic within-multiplet order.
pub fn pairs_up_to(manifold: AnalyticManifold, lambda_max: f64) -> Vec<EigenPair> {
    let mut pairs = Vec::new();
    match manifold {
        AnalyticManifold::Circle => {
            pairs.push(EigenPair { lambda: 0.0, mode: Mode::CircleConst });
            let mut k = 1u32;
            while (k as f64) * (k as f64) <= lambda_max {
                let lambda = (k as f64) * (k as f64);
                pairs.push(EigenPair { lambda, mode: Mode::CircleCos(k) });
                pairs.push(EigenPair { lambda, mode: Mode::CircleSin(k) });
                k += 1;
            }
        }
        AnalyticManifold::Sphere => {
            let mut l = 0u32;
            while (l as f64) * (l as f64 + 1.0) <= lambda_max {
                let lambda = (l as f64) * (l as f64 + 1.0);
                for m in -(l as i32)..=(l as i32) {
                    pairs.push(EigenPair { lambda, mode: Mode::SphereHarmonic { l, m } });
                }
                l += 1;
            }
        }
        AnalyticManifold::FlatTorus => {
            let factors = |k: u32| -> Vec<TorusFactor> {
                if k == 0 {
                    vec![TorusFactor::Const]
                } else {
                    vec![TorusFactor::Cos(k), TorusFactor::Sin(k)]
                }
            };
            let k_max = lambda_max.sqrt().floor() as u32;
            for k1 in 0..=k_max {
                for k2 in 0..=k_max {
                    let lambda = (k1 * k1 + k2 * k2) as f64;
                    if lambda > lambda_max {
                        continue;
                    }
                    for f1 in factors(k1) {
                        for f2 in factors(k2) {
                            pairs.push(EigenPair { lambda, mode: Mode::TorusProduct { f1, f2 } });
                        }
                    }
                }
            }
            pairs.sort_by(|a, b| {
                let key = |p: &EigenPair| match p.mode {
                    Mode::TorusProduct { f1, f2 } => {
                        let (k1, k2) = match (f1, f2) {
                            (TorusFactor::Const, TorusFactor::Const) => (0, 0),
                            _ => (torus_freq(f1), torus_freq(f2)),
                        };
                        (p.lambda, k1, k2, f1.order(), f2.order())
                    }
                    _ => unreachable!("torus catalogue holds torus modes only"),
                };
                key(a).partial_cmp(&key(b)).unwrap()
            });
        }
    }
    pairs
}

fn torus_freq(f: TorusFactor) -> u32 {
    match f {
        TorusFactor::Const => 0,
        TorusFactor::Cos(k) | TorusFactor::Sin(k) => k,
    }
}

/// The first `m` Laplace–Beltrami eigenpairs, ascending: `λ₁ = 0` with the
/// constant eigenfunction, repeated eigenvalues listed once per
/// eigenfunction in a fixed catalogue order.
pub fn lb_eigenpairs(manifold: AnalyticManifold, m: usize) -> Result<Vec<EigenPair>> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one eigenpair".into()));
    }
    let mut bound = 4.0;
    loop {
        let pairs = pairs_up_to(manifold, bound);
        if pairs.len() >= m {
            return Ok(pairs.into_iter().take(m).collect());
        }
        bound *= 2.0;
    }
}

/// Evaluation of manifold signals at a fixed point set — the sampling
/// operator `P_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOperator {
    manifold: AnalyticManifold,
    /// One intrinsic coordinate row per point.
    points: DMatrix<f64>,
}

impl SamplingOperator {
    /// Wraps an explicit point set. Rows must match the manifold's
    /// coordinate layout; sphere points must be unit vectors.
    pub fn new(manifold: AnalyticManifold, points: DMatrix<f64>) -> Result<SamplingOperator> {
        if points.nrows() == 0 {
            return Err(Error::InvalidInput("need at least one sample point".into()));
        }
        if points.ncols() != manifold.coord_dim() {
            return Err(Error::InvalidInput(format!(
                "{} points need {} coordinates, got {}",
                manifold.name(),
                manifold.coord_dim(),
                points.ncols()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("points contain a non-finite value".into()));
        }
        if manifold == AnalyticManifold::Sphere {
            for i in 0..points.nrows() {
                let norm = points.row(i).norm();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "sphere point {i} has norm {norm}, expected a unit vector"
                    )));
                }
            }
        }
        Ok(SamplingOperator { manifold, points })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn manifold(&self) -> AnalyticManifold {
        self.manifold
    }

    /// The intrinsic coordinate rows.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// Ambient coordinates of the points: `(cos θ, sin θ)` on the circle,
    /// the unit vector itself on the sphere, and the flat `R⁴` embedding
    /// `(cos θ₁, sin θ₁, cos θ₂, sin θ₂)` on the torus.
    pub fn embed(&self) -> DMatrix<f64> {
        let n = self.n();
        match self.manifold {
            AnalyticManifold::Circle => DMatrix::from_fn(n, 2, |i, j| {
                let theta = self.points[(i, 0)];
                if j == 0 {
                    theta.cos()
                } else {
                    theta.sin()
                }
            }),
            AnalyticManifold::Sphere => self.points.clone(),
            AnalyticManifold::FlatTorus => DMatrix::from_fn(n, 4, |i, j| {
                let theta = self.points[(i, j / 2)];
                if j % 2 == 0 {
                    theta.cos()
                } else {
                    theta.sin()
                }
            }),
        }
    }

    /// Eigenfunction values at the points: one column per pair.
    pub fn mode_matrix(&self, pairs: &[EigenPair]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), pairs.len(), |i, j| {
            let row: Vec<f64> = self.points.row(i).iter().copied().collect();
            pairs[j].evaluate(&row)
        })
    }

    /// `P_N f`: the signal's values at the points.
    pub fn evaluate(&self, f: &BandlimitedSignal) -> Result<DVector<f64>> {
        if f.manifold() != self.manifold {
            return Err(Error::InvalidInput(format!(
                "signal lives on the {} but the points are on the {}",
                f.manifold().name(),
                self.manifold.name()
            )));
        }
        let modes = self.mode_matrix(f.pairs());
        Ok(modes * DVector::from_column_slice(f.coefficients()))
    }
}

/// Draws `n` points i.i.d. from the manifold's uniform measure: `θ ~
/// U[0, 2π)` on the circle, normalized Gaussian triples on the sphere,
/// independent `U[0, 2π)²` on the torus.
pub fn sample_uniform<R: Rng + ?Sized>(
    manifold: AnalyticManifold,
    n: usize,
    rng: &mut R,
) -> Result<SamplingOperator> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample point".into()));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let points = match manifold {
        AnalyticManifold::Circle => DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.0..two_pi)),
        AnalyticManifold::Sphere => {
            let mut points = DMatrix::zeros(n, 3);
            for i in 0..n {
                loop {
                    let g: [f64; 3] = [
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    ];
                    let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                    if norm > 1e-12 {
                        for j in 0..3 {
                            points[(i, j)] = g[j] / norm;
                        }
                        break;
                    }
                }
            }
            points
        }
        AnalyticManifold::FlatTorus => {
            DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..two_pi))
        }
    };
    SamplingOperator::new(manifold, points)
}

/// A signal with no spectral content above its cutoff: finitely many
/// coefficients against the eigenpairs with `λ ≤ λ_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandlimitedSignal {
    manifold: AnalyticManifold,
    cutoff: f64,
    pairs: Vec<EigenPair>,
    coefficients: Vec<f64>,
}

impl BandlimitedSignal {
    fn assemble(
        manifold: AnalyticManifold,
        cutoff: f64,
        coefficients: Vec<f64>,
    ) -> Result<BandlimitedSignal> {
        if !(cutoff.is_finite() && cutoff >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "bandlimit cutoff must be finite and nonnegative, got {cutoff}"
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("coefficients must be finite".into()));
        }
        let pairs = pairs_up_to(manifold, cutoff);
        if pairs.len() != coefficients.len() {
            return Err(Error::InvalidInput(format!(
                "cutoff {cutoff} on the {} retains {} modes, got {} coefficients",
                manifold.name(),
                pairs.len(),
                coefficients.len()
            )));
        }
        Ok(BandlimitedSignal { manifold, cutoff, pairs, coefficients })
    }

    /// A constant signal (the `λ = 0` mode alone scaled by `value`).
    pub fn constant(manifold: AnalyticManifold, value: f64) -> Result<BandlimitedSignal> {
        BandlimitedSignal::assemble(manifold, 0.0, vec![value])
    }

    pub fn manifold(&self) -> AnalyticManifold {
        self.manifold
    }

    /// The bandlimit `λ_M`.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// The retained eigenpairs, ascending by eigenvalue.
    pub fn pairs(&self) -> &[EigenPair] {
        &self.pairs
    }

    /// Spectral coefficients `⟨f, φ_i⟩`, aligned with [`pairs`](Self::pairs).
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn n_modes(&self) -> usize {
        self.pairs.len()
    }

    /// `Σ_i c_i φ_i(u)` at one intrinsic coordinate row.
    pub fn evaluate_at(&self, point: &[f64]) -> f64 {
        self.pairs
            .iter()
            .zip(&self.coefficients)
            .map(|(pair, c)| c * pair.evaluate(point))
            .sum()
    }

    /// The norm `‖f‖₂ = √(Σ c_i²)` (Parseval under the orthonormal basis).
    pub fn norm(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Builds a bandlimited signal by asking `coeff` for the coefficient of
/// every eigenpair with `λ ≤ lambda_max`, in catalogue order.
pub fn bandlimited_project<F>(
    mut coeff: F,
    manifold: AnalyticManifold,
    lambda_max: f64,
) -> Result<BandlimitedSignal>
where
    F: FnMut(&EigenPair) -> f64,
{
    if !(lambda_max.is_finite() && lambda_max >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "bandlimit cutoff must be finite and nonnegative, got {lambda_max}"
        )));
    }
    let pairs = pairs_up_to(manifold, lambda_max);
    let coefficients: Vec<f64> = pairs.iter().map(&mut coeff).collect();
    BandlimitedSignal::assemble(manifold, lambda_max, coefficients)
}

/// Draws a bandlimited signal with independent `N(0, std²)` coefficients.
pub fn random_bandlimited<R: Rng + ?Sized>(
    manifold: AnalyticManifold,
    lambda_max: f64,
    std: f64,
    rng: &mut R,
) -> Result<BandlimitedSignal> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "coefficient scale must be finite and nonnegative, got {std}"
        )));
    }
    bandlimited_project(
        |_| {
            let g: f64 = StandardNormal.sample(rng);
            std * g
        },
        manifold,
        lambda_max,
    )
}

/// A dense quadrature grid: points plus weights summing to 1, under which
/// smooth-signal inner products are spectrally accurate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGrid {
    sampling: SamplingOperator,
    weights: DVector<f64>,
}

impl ReferenceGrid {
    /// Builds the manifold's default grid at a resolution: `q` uniform
    /// angles on the circle, a `q`-point Fibonacci lattice on the sphere
    /// (equal weights), and a `⌈√q⌉ × ⌈√q⌉` uniform product grid on the
    /// torus.
    pub fn new(manifold: AnalyticManifold, resolution: usize) -> Result<ReferenceGrid> {
        if resolution < 2 {
            return Err(Error::InvalidInput(format!(
                "grid resolution must be at least 2, got {resolution}"
            )));
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let points = match manifold {
            AnalyticManifold::Circle => {
                DMatrix::from_fn(resolution, 1, |i, _| two_pi * i as f64 / resolution as f64)
            }
            AnalyticManifold::Sphere => {
                // Fibonacci lattice: near-uniform area coverage, equal
                // weights.
                let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
                DMatrix::from_fn(resolution, 3, |i, j| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / resolution as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let azimuth = two_pi * (i as f64 / golden).fract();
                    match j {
                        0 => r * azimuth.cos(),
                        1 => r * azimuth.sin(),
                        _ => z,
                    }
                })
            }
            AnalyticManifold::FlatTorus => {
                let side = (resolution as f64).sqrt().ceil() as usize;
                DMatrix::from_fn(side * side, 2, |i, j| {
                    let idx = if j == 0 { i / side } else { i % side };
                    two_pi * idx as f64 / side as f64
                })
            }
        };
        let n = points.nrows();
        let sampling = SamplingOperator::new(manifold, points)?;
        Ok(ReferenceGrid { sampling, weights: DVector::from_element(n, 1.0 / n as f64) })
    }

    pub fn sampling(&self) -> &SamplingOperator {
        &self.sampling
    }

    /// Normalized quadrature weights (they sum to 1).
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.sampling.n()
    }

    /// Quadrature inner products `⟨columns of values, φ_i⟩` against a mode
    /// matrix evaluated on this grid.
    fn project(&self, mode_matrix: &DMatrix<f64>, values: &DMatrix<f64>) -> DMatrix<f64> {
        let mut weighted = values.clone();
        for i in 0..weighted.nrows() {
            for j in 0..weighted.ncols() {
                weighted[(i, j)] *= self.weights[i];
            }
        }
        mode_matrix.transpose() * weighted
    }
}

/// Shared layer loop for MNN evaluation: runs every layer spectrally and
/// returns the final layer's coefficient matrix (modes × features) along
/// with the mode matrix on the grid.
fn mnn_layers(
    f: &BandlimitedSignal,
    params: &GnnParams,
    grid: &ReferenceGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if params.filter_kind() != FilterKind::Heat {
        return Err(Error::InvalidInput(
            "manifold networks diffuse with the heat semigroup; use heat-kind parameters".into(),
        ));
    }
    if params.input_dim() != 1 {
        return Err(Error::InvalidInput(format!(
            "manifold signals are scalar; the network expects {} input features",
            params.input_dim()
        )));
    }
    if grid.sampling().manifold() != f.manifold() {
        return Err(Error::InvalidInput(format!(
            "signal lives on the {} but the grid is on the {}",
            f.manifold().name(),
            grid.sampling().manifold().name()
        )));
    }
    let n_modes = f.n_modes();
    if grid.n() < MIN_GRID_FACTOR * n_modes {
        return Err(Error::InvalidInput(format!(
            "grid of {} points is too coarse for {n_modes} modes; need at least {}",
            grid.n(),
            MIN_GRID_FACTOR * n_modes
        )));
    }

    let modes_on_grid = grid.sampling().mode_matrix(f.pairs());
    let lambdas: Vec<f64> = f.pairs().iter().map(EigenPair::lambda).collect();
    let decay: Vec<f64> = lambdas.iter().map(|&l| (-l).exp()).collect();

    // Coefficients, one column per feature.
    let mut coeffs = DMatrix::from_fn(n_modes, 1, |i, _| f.coefficients()[i]);
    let n_layers = params.n_layers();
    for (l, layer) in params.layers().iter().enumerate() {
        // Z = Σ_k diag(e^(−kλ)) C H_k, all in coefficient space.
        let mut z = DMatrix::zeros(n_modes, layer.output_dim());
        let mut weight = vec![1.0; n_modes];
        for (k, tap) in layer.taps().iter().enumerate() {
            if k > 0 {
                for (w, d) in weight.iter_mut().zip(&decay) {
                    *w *= d;
                }
            }
            let mut scaled = coeffs.clone();
            for i in 0..n_modes {
                for j in 0..scaled.ncols() {
                    scaled[(i, j)] *= weight[i];
                }
            }
            z += scaled * tap;
        }

        if l + 1 == n_layers {
            // The final layer is linear, so its coefficients describe the
            // output everywhere; no grid round trip is needed.
            return Ok((z, modes_on_grid));
        }

        // Hidden layer: evaluate on the grid, apply the nonlinearity
        // pointwise, and re-project onto the eigenbasis by quadrature.
        let sigma = params.nonlinearities()[l];
        let grid_values = (&modes_on_grid * &z).map(|v| sigma.apply(v));
        let projected = grid.project(&modes_on_grid, &grid_values);
        let reconstruction = &modes_on_grid * &projected;
        let scale = grid_values.norm();
        let residual = (&reconstruction - &grid_values).norm();
        if residual > DEFAULT_REPROJECTION_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Accuracy(format!(
                "layer {l} re-projection residual {:.3e} exceeds {:.1e} of the signal; \
                 use a denser grid or a smaller bandlimit",
                residual / scale.max(f64::MIN_POSITIVE),
                DEFAULT_REPROJECTION_TOL
            )));
        }
        coeffs = projected;
    }
    unreachable!("the final layer returns inside the loop");
}

/// Evaluates a heat-kind network on a bandlimited signal, spectrally:
/// each hidden layer diffuses coefficients by `e^(−kλ)`, mixes features,
/// applies its nonlinearity on the grid, and re-projects by quadrature;
/// the linear final layer's values are returned on the grid points
/// (rows follow the grid, one column per output feature).
pub fn mnn_forward(
    f: &BandlimitedSignal,
    params: &GnnParams,
    grid: &ReferenceGrid,
) -> Result<DMatrix<f64>> {
    let (final_coeffs, modes_on_grid) = mnn_layers(f, params, grid)?;
    Ok(modes_on_grid * final_coeffs)
}

/// Like [`mnn_forward`], but evaluates the network's output at an arbitrary
/// point set instead of the grid — possible because the final layer is
/// linear, so its spectral coefficients determine it everywhere.
pub fn mnn_forward_at(
    f: &BandlimitedSignal,
    params: &GnnParams,
    grid: &ReferenceGrid,
    at: &SamplingOperator,
) -> Result<DMatrix<f64>> {
    if at.manifold() != f.manifold() {
        return Err(Error::InvalidInput(format!(
            "signal lives on the {} but the evaluation points are on the {}",
            f.manifold().name(),
            at.manifold().name()
        )));
    }
    let (final_coeffs, _) = mnn_layers(f, params, grid)?;
    Ok(at.mode_matrix(f.pairs()) * final_coeffs)
}
