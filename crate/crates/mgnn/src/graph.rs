//! Graphs, graph signals, Gaussian-kernel geometric graph construction, and
//! graph shift operators.
//!
//! A geometric graph connects every pair of embedding vectors with weight
//! `exp(−‖z_i − z_j‖² / σ²)`, optionally pruned. Shift operators derived from
//! the weight matrix (adjacency, two Laplacian normalizations, and a scaled
//! point-cloud Laplacian) drive all spectral machinery downstream.

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::EmbeddingDataset;
use crate::error::{Error, Result};

/// How edges of a geometric graph were pruned after kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparsifyPolicy {
    /// Keep the complete kernel graph.
    None,
    /// Drop edges whose weight falls below the threshold.
    Epsilon(f64),
    /// Keep each node's k heaviest edges, symmetrized by union (an edge
    /// survives if either endpoint keeps it).
    Knn(usize),
}

/// Node count above which the default policy switches from the complete
/// graph to k-NN pruning with `k = ⌈log₂ N⌉ + 1`.
pub const DEFAULT_COMPLETE_GRAPH_LIMIT: usize = 64;

/// The pruning applied when the caller does not choose one: complete up to
/// [`DEFAULT_COMPLETE_GRAPH_LIMIT`] nodes, k-NN above it.
pub fn default_sparsify_policy(n_nodes: usize) -> SparsifyPolicy {
    if n_nodes <= DEFAULT_COMPLETE_GRAPH_LIMIT {
        SparsifyPolicy::None
    } else {
        let k = (n_nodes as f64).log2().ceil() as usize + 1;
        SparsifyPolicy::Knn(k)
    }
}

/// An undirected weighted graph with nonnegative weights and zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    weights: DMatrix<f64>,
    kernel_sigma: Option<f64>,
    policy: SparsifyPolicy,
}

impl Graph {
    /// Wraps an explicit weight matrix. It must be square, exactly symmetric,
    /// nonnegative, finite, and zero on the diagonal.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Graph> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "weight matrix must be square and nonempty, got {n}×{}",
                weights.ncols()
            )));
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "diagonal entry ({i},{i}) must be zero, got {}",
                    weights[(i, i)]
                )));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "weight ({i},{j}) must be finite and nonnegative, got {w}"
                    )));
                }
                if weights[(j, i)] != w {
                    return Err(Error::InvalidInput(format!(
                        "weights must be symmetric: ({i},{j})={w} vs ({j},{i})={}",
                        weights[(j, i)]
                    )));
                }
            }
        }
        Ok(Graph { weights, kernel_sigma: None, policy: SparsifyPolicy::None })
    }

    /// Number of nodes.
    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    /// The symmetric weight matrix.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// The kernel width the graph was built with, if it came from
    /// [`build_geometric_graph`].
    pub fn kernel_sigma(&self) -> Option<f64> {
        self.kernel_sigma
    }

    /// How edges were pruned.
    pub fn sparsify_policy(&self) -> SparsifyPolicy {
        self.policy
    }

    /// Per-node degree (row sums of the weight matrix).
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.weights.row(i).sum()).collect()
    }
}

/// Per-node feature matrix (rows are nodes) attached to a graph of matching
/// size.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal {
    values: DMatrix<f64>,
}

impl GraphSignal {
    /// Validates that every entry is finite.
    pub fn new(values: DMatrix<f64>) -> Result<GraphSignal> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "signal must be nonempty, got {}×{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("signal contains a non-finite value".into()));
        }
        Ok(GraphSignal { values })
    }

    /// Number of nodes (rows).
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Feature dimension (columns).
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// The underlying matrix.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Consumes the signal, returning the matrix.
    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

/// Which matrix is used to shift signals over the graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GsoKind {
    /// The weight matrix itself.
    Adjacency,
    /// `D − W` with `D = diag(row sums)`.
    CombinatorialLaplacian,
    /// `D^(−1/2) (D − W) D^(−1/2)`, with zero-degree rows mapped to zero.
    NormalizedLaplacian,
    /// `c · (D − W)` scaled so that, for a Gaussian-kernel graph over points
    /// sampled uniformly from a manifold, the spectrum approximates the
    /// manifold's Laplacian. Needs the manifold's intrinsic dimension and
    /// volume, and the kernel width (taken from the graph when `sigma` is
    /// `None`).
    PointcloudLaplacian {
        intrinsic_dim: usize,
        volume: f64,
        sigma: Option<f64>,
    },
}

/// A concrete shift operator: the kind it was derived as plus its matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Gso {
    kind: GsoKind,
    matrix: DMatrix<f64>,
}

impl Gso {
    /// The kind this operator was built as. For point-cloud Laplacians the
    /// kernel width is resolved (never `None`).
    pub fn kind(&self) -> GsoKind {
        self.kind
    }

    /// The symmetric operator matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Whether the operator is one of the Laplacian kinds (positive
    /// semidefinite by construction).
    pub fn is_laplacian(&self) -> bool {
        !matches!(self.kind, GsoKind::Adjacency)
    }
}

/// Builds the Gaussian-kernel geometric graph of an embedding matrix
/// (rows are points): `w_ij = exp(−‖z_i − z_j‖² / σ²)` for `i ≠ j`.
///
/// `sigma = None` selects the median heuristic: σ² is the median of the
/// pairwise squared distances. `policy = None` selects
/// [`default_sparsify_policy`]. The realized σ is recorded on the graph.
pub fn build_geometric_graph(
    embeddings: &DMatrix<f64>,
    sigma: Option<f64>,
    policy: Option<SparsifyPolicy>,
) -> Result<Graph> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 points, got {n}")));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("embeddings contain a non-finite value".into()));
    }
    if let Some(s) = sigma {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "kernel width must be finite and positive, got {s}"
            )));
        }
    }

    // Pairwise squared distances (upper triangle).
    let mut sq_dists = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = (embeddings.row(i) - embeddings.row(j)).norm_squared();
            sq_dists[(i, j)] = d2;
            sq_dists[(j, i)] = d2;
        }
    }

    let sigma = match sigma {
        Some(s) => s,
        None => {
            // Median of the n(n−1)/2 pairwise squared distances; for even
            // counts, the mean of the two middle values.
            let mut d2s: Vec<f64> = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| sq_dists[(i, j)])
                .collect();
            d2s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mid = d2s.len() / 2;
            let median = if d2s.len() % 2 == 1 {
                d2s[mid]
            } else {
                0.5 * (d2s[mid - 1] + d2s[mid])
            };
            if median <= 0.0 {
                return Err(Error::DegenerateData(
                    "all embeddings are identical; the median-heuristic kernel width is zero"
                        .into(),
                ));
            }
            median.sqrt()
        }
    };

    let inv_s2 = 1.0 / (sigma * sigma);
    let mut weights = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = (-sq_dists[(i, j)] * inv_s2).exp();
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
    }

    let policy = policy.unwrap_or_else(|| default_sparsify_policy(n));
    match policy {
        SparsifyPolicy::None => {}
        SparsifyPolicy::Epsilon(threshold) => {
            if !(threshold.is_finite() && threshold >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "epsilon threshold must be finite and nonnegative, got {threshold}"
                )));
            }
            weights.apply(|w| {
                if *w < threshold {
                    *w = 0.0;
                }
            });
        }
        SparsifyPolicy::Knn(k) => {
            if k == 0 {
                return Err(Error::InvalidInput("k-NN pruning needs k ≥ 1".into()));
            }
            // Edge (i,j) survives if j is among i's k heaviest neighbors or
            // vice versa. Ties resolve toward the lower node index, so the
            // result is deterministic.
            let mut keep = vec![false; n * n];
            for i in 0..n {
                let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                order.sort_by(|&a, &b| {
                    weights[(i, b)].partial_cmp(&weights[(i, a)]).unwrap().then(a.cmp(&b))
                });
                for &j in order.iter().take(k) {
                    keep[i * n + j] = true;
                    keep[j * n + i] = true;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    if !keep[i * n + j] {
                        weights[(i, j)] = 0.0;
                    }
                }
            }
        }
    }

    Ok(Graph { weights, kernel_sigma: Some(sigma), policy })
}

/// Derives a shift operator from a graph.
pub fn shift_operator(graph: &Graph, kind: GsoKind) -> Result<Gso> {
    let n = graph.n_nodes();
    let w = graph.weights();
    let degrees = graph.degrees();

    let laplacian = || {
        let mut l = -w.clone();
        for i in 0..n {
            l[(i, i)] = degrees[i];
        }
        l
    };

    match kind {
        GsoKind::Adjacency => Ok(Gso { kind, matrix: w.clone() }),
        GsoKind::CombinatorialLaplacian => Ok(Gso { kind, matrix: laplacian() }),
        GsoKind::NormalizedLaplacian => {
            // Zero-degree nodes get zero rows/columns instead of a division
            // blowup; they are isolated and contribute nothing.
            let inv_sqrt: Vec<f64> =
                degrees.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
            let l = laplacian();
            let mut matrix = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    matrix[(i, j)] = inv_sqrt[i] * l[(i, j)] * inv_sqrt[j];
                }
            }
            Ok(Gso { kind, matrix })
        }
        GsoKind::PointcloudLaplacian { intrinsic_dim, volume, sigma } => {
            let sigma = sigma.or(graph.kernel_sigma()).ok_or_else(|| {
                Error::InvalidInput(
                    "point-cloud Laplacian needs a kernel width: the graph records none and \
                     no explicit sigma was given"
                        .into(),
                )
            })?;
            if intrinsic_dim == 0 {
                return Err(Error::InvalidInput("intrinsic dimension must be positive".into()));
            }
            if !(volume.is_finite() && volume > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "manifold volume must be finite and positive, got {volume}"
                )));
            }
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "kernel width must be finite and positive, got {sigma}"
                )));
            }
            // Scaling chosen so the spectrum of c·(D − W) approximates the
            // Laplacian of the underlying manifold when the points are
            // uniform samples: the Gaussian kernel with width σ is the heat
            // kernel at time t = σ²/4 up to the mass (πσ²)^(m/2), and the
            // empirical mean over N uniform samples carries density
            // N / volume.
            let t = sigma * sigma / 4.0;
            let mass = (std::f64::consts::PI * sigma * sigma).powf(intrinsic_dim as f64 / 2.0);
            let c = volume / (n as f64 * t * mass);
            let matrix = laplacian() * c;
            let resolved = GsoKind::PointcloudLaplacian { intrinsic_dim, volume, sigma: Some(sigma) };
            Ok(Gso { kind: resolved, matrix })
        }
    }
}

/// Draws an anchored neighborhood graph: node 0 is the item at
/// `anchor`, the other `n_nodes − 1` nodes are drawn uniformly without
/// replacement from the remaining items of the anchor's split. The graph is
/// the Gaussian kernel over the selected embeddings (median-heuristic width
/// unless `sigma` overrides it, default pruning policy), the signal rows are
/// the embeddings, and the labels align with the nodes.
///
/// Returns `(graph, signal, labels, anchor_node)` with `anchor_node = 0`.
pub fn sample_neighborhood_graph<R: Rng + ?Sized>(
    dataset: &EmbeddingDataset,
    anchor: usize,
    n_nodes: usize,
    sigma: Option<f64>,
    rng: &mut R,
) -> Result<(Graph, GraphSignal, Vec<u32>, usize)> {
    if anchor >= dataset.n_total() {
        return Err(Error::InvalidInput(format!(
            "anchor index {anchor} out of range for {} items",
            dataset.n_total()
        )));
    }
    if n_nodes < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 nodes, got {n_nodes}")));
    }
    let split = dataset.splits()[anchor];
    let mut pool: Vec<usize> =
        dataset.split_indices(split).into_iter().filter(|&i| i != anchor).collect();
    if n_nodes - 1 > pool.len() {
        return Err(Error::InvalidInput(format!(
            "{n_nodes} nodes requested but the anchor's split has only {} items",
            pool.len() + 1
        )));
    }

    // Partial Fisher–Yates: after i swaps, pool[..i] is a uniform draw
    // without replacement.
    for i in 0..(n_nodes - 1) {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut items = Vec::with_capacity(n_nodes);
    items.push(anchor);
    items.extend_from_slice(&pool[..n_nodes - 1]);

    let dim = dataset.dim();
    let embeddings = DMatrix::from_fn(n_nodes, dim, |r, c| dataset.embeddings()[(items[r], c)]);
    let labels: Vec<u32> = items.iter().map(|&i| dataset.labels()[i]).collect();
    let graph = build_geometric_graph(&embeddings, sigma, None)?;
    let signal = GraphSignal::new(embeddings)?;
    Ok((graph, signal, labels, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian_mixture, Split};
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn points(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn kernel_weight_examples() {
        // Coincident points get weight 1 regardless of width.
        let g = build_geometric_graph(&points(&[&[1.5, 2.0], &[1.5, 2.0]]), Some(0.3), None)
            .unwrap();
        assert_eq!(g.weights()[(0, 1)], 1.0);

        // Squared distance equal to σ² gives e⁻¹.
        let g = build_geometric_graph(&points(&[&[0.0], &[2.0]]), Some(2.0), None).unwrap();
        assert!((g.weights()[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);

        // Scalar embeddings 0, 1, 2 with σ = 1.
        let g = build_geometric_graph(&points(&[&[0.0], &[1.0], &[2.0]]), Some(1.0), None)
            .unwrap();
        let e1 = (-1.0f64).exp();
        let e4 = (-4.0f64).exp();
        assert!((g.weights()[(0, 1)] - e1).abs() < 1e-15);
        assert!((g.weights()[(1, 2)] - e1).abs() < 1e-15);
        assert!((g.weights()[(0, 2)] - e4).abs() < 1e-15);
        assert!((e4 - 0.018316).abs() < 1e-6);
    }

    #[test]
    fn builder_rejects_invalid_inputs() {
        assert!(matches!(
            build_geometric_graph(&points(&[&[0.0]]), Some(1.0), None),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_geometric_graph(&points(&[&[0.0], &[f64::INFINITY]]), Some(1.0), None),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_geometric_graph(&points(&[&[0.0], &[1.0]]), Some(0.0), None),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_geometric_graph(&points(&[&[3.0], &[3.0], &[3.0]]), None, None),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn median_heuristic_matches_hand_computation() {
        // Squared distances: 1, 4, 9, 1, 4, 1 → sorted 1,1,1,4,4,9 → median 2.5.
        let g =
            build_geometric_graph(&points(&[&[0.0], &[1.0], &[2.0], &[3.0]]), None, None).unwrap();
        assert!((g.kernel_sigma().unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn epsilon_policy_prunes_light_edges() {
        let g = build_geometric_graph(
            &points(&[&[0.0], &[1.0], &[2.0]]),
            Some(1.0),
            Some(SparsifyPolicy::Epsilon(0.1)),
        )
        .unwrap();
        assert!(g.weights()[(0, 1)] > 0.0);
        assert_eq!(g.weights()[(0, 2)], 0.0, "e⁻⁴ < 0.1 must be pruned");
        assert_eq!(g.sparsify_policy(), SparsifyPolicy::Epsilon(0.1));
    }

    #[test]
    fn knn_policy_keeps_union_of_neighborhoods() {
        // Line of 4 points: with k=1 each interior point keeps its nearest,
        // and the union keeps the chain's middle edge from either side.
        let g = build_geometric_graph(
            &points(&[&[0.0], &[1.0], &[2.1], &[3.0]]),
            Some(1.0),
            Some(SparsifyPolicy::Knn(1)),
        )
        .unwrap();
        // Node 0 keeps 1, node 3 keeps 2; nodes 1 and 2 keep their nearest.
        assert!(g.weights()[(0, 1)] > 0.0);
        assert!(g.weights()[(2, 3)] > 0.0);
        assert_eq!(g.weights()[(0, 3)], 0.0);
        // Symmetry must survive pruning.
        assert_eq!(g.weights(), &g.weights().transpose());
    }

    #[test]
    fn default_policy_depends_on_size() {
        assert_eq!(default_sparsify_policy(64), SparsifyPolicy::None);
        assert_eq!(default_sparsify_policy(65), SparsifyPolicy::Knn(8));
        assert_eq!(default_sparsify_policy(512), SparsifyPolicy::Knn(10));
    }

    #[test]
    fn combinatorial_laplacian_of_unit_edge_is_path_laplacian() {
        let g = Graph::from_weights(points(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        let l = shift_operator(&g, GsoKind::CombinatorialLaplacian).unwrap();
        let expected = points(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert_eq!(l.matrix(), &expected);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let mut r = rng(3);
        let z = DMatrix::from_fn(20, 3, |_, _| r.random_range(-1.0..1.0));
        let g = build_geometric_graph(&z, None, None).unwrap();
        for kind in [
            GsoKind::CombinatorialLaplacian,
            GsoKind::PointcloudLaplacian { intrinsic_dim: 2, volume: 1.0, sigma: None },
        ] {
            let l = shift_operator(&g, kind).unwrap();
            for i in 0..g.n_nodes() {
                assert!(l.matrix().row(i).sum().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn laplacians_are_positive_semidefinite() {
        for seed in 0..3u64 {
            let mut r = rng(seed);
            let n = 64 * (seed as usize + 1); // up to 192 nodes
            let z = DMatrix::from_fn(n.min(256), 4, |_, _| r.random_range(-2.0..2.0));
            let g = build_geometric_graph(&z, None, Some(SparsifyPolicy::None)).unwrap();
            for kind in [
                GsoKind::CombinatorialLaplacian,
                GsoKind::NormalizedLaplacian,
                GsoKind::PointcloudLaplacian { intrinsic_dim: 1, volume: 2.0, sigma: None },
            ] {
                let l = shift_operator(&g, kind).unwrap();
                let min = SymmetricEigen::new(l.matrix().clone())
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                assert!(min >= -1e-9, "{kind:?} has eigenvalue {min}");
            }
        }
    }

    #[test]
    fn connected_graph_laplacian_has_one_null_direction() {
        let mut r = rng(5);
        let z = DMatrix::from_fn(24, 2, |_, _| r.random_range(-1.0..1.0));
        let g = build_geometric_graph(&z, None, Some(SparsifyPolicy::None)).unwrap();
        let l = shift_operator(&g, GsoKind::CombinatorialLaplacian).unwrap();
        let nullity = SymmetricEigen::new(l.matrix().clone())
            .eigenvalues
            .iter()
            .filter(|&&v| v.abs() < 1e-9)
            .count();
        assert_eq!(nullity, 1);
    }

    #[test]
    fn normalized_laplacian_zeroes_isolated_nodes() {
        // Prune everything: all rows become zero-degree.
        let g = build_geometric_graph(
            &points(&[&[0.0], &[10.0], &[20.0]]),
            Some(1.0),
            Some(SparsifyPolicy::Epsilon(0.5)),
        )
        .unwrap();
        let l = shift_operator(&g, GsoKind::NormalizedLaplacian).unwrap();
        assert!(l.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointcloud_kind_requires_width_metadata() {
        let g = Graph::from_weights(points(&[&[0.0, 0.5], &[0.5, 0.0]])).unwrap();
        let err = shift_operator(
            &g,
            GsoKind::PointcloudLaplacian { intrinsic_dim: 1, volume: 1.0, sigma: None },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        // Explicit width fixes it.
        assert!(shift_operator(
            &g,
            GsoKind::PointcloudLaplacian { intrinsic_dim: 1, volume: 1.0, sigma: Some(0.5) },
        )
        .is_ok());
    }

    #[test]
    fn pointcloud_spectrum_approximates_circle_frequencies() {
        // 256 evenly spaced points on the unit circle: the first nonzero
        // eigenvalue pair of the scaled Laplacian sits near 1 (squared
        // frequency of the slowest nonconstant mode).
        let n = 256;
        let z = DMatrix::from_fn(n, 2, |i, j| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            if j == 0 { theta.cos() } else { theta.sin() }
        });
        let g = build_geometric_graph(&z, Some(0.2), Some(SparsifyPolicy::None)).unwrap();
        let l = shift_operator(
            &g,
            GsoKind::PointcloudLaplacian {
                intrinsic_dim: 1,
                volume: 2.0 * std::f64::consts::PI,
                sigma: None,
            },
        )
        .unwrap();
        let mut eigs: Vec<f64> =
            SymmetricEigen::new(l.matrix().clone()).eigenvalues.iter().cloned().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(eigs[0].abs() < 1e-8, "constant mode must be null, got {}", eigs[0]);
        for &v in &eigs[1..3] {
            assert!((v - 1.0).abs() < 0.1, "first frequency pair off: {v}");
        }
    }

    #[test]
    fn neighborhood_sampling_is_deterministic_and_anchored() {
        let ds = synth_gaussian_mixture(3, 4, 20, 5, 6.0, &mut rng(1)).unwrap();
        let (g1, s1, l1, a1) = sample_neighborhood_graph(&ds, 7, 5, None, &mut rng(9)).unwrap();
        let (g2, s2, l2, a2) = sample_neighborhood_graph(&ds, 7, 5, None, &mut rng(9)).unwrap();
        assert_eq!(a1, 0);
        assert_eq!(a2, 0);
        assert_eq!(g1.weights(), g2.weights());
        assert_eq!(s1, s2);
        assert_eq!(l1, l2);
        // Node 0 carries the anchor's embedding and label.
        assert_eq!(l1[0], ds.labels()[7]);
        for j in 0..ds.dim() {
            assert_eq!(s1.values()[(0, j)], ds.embeddings()[(7, j)]);
        }
    }

    #[test]
    fn exhaustive_neighborhood_uses_every_split_item_once() {
        let ds = synth_gaussian_mixture(2, 3, 10, 4, 5.0, &mut rng(2)).unwrap();
        let train = ds.split_indices(Split::Train);
        let anchor = train[0];
        let (_, _, labels, _) =
            sample_neighborhood_graph(&ds, anchor, train.len(), None, &mut rng(4)).unwrap();
        assert_eq!(labels.len(), train.len());
        let mut expected: Vec<u32> = train.iter().map(|&i| ds.labels()[i]).collect();
        let mut got = labels.clone();
        expected.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, expected);
        // One more node than the split holds is an error.
        assert!(matches!(
            sample_neighborhood_graph(&ds, anchor, train.len() + 1, None, &mut rng(4)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn neighborhood_sampling_is_uniform_over_peers() {
        // One split of 100 items; peers of a fixed anchor should each appear
        // with frequency 4/99 over many draws (checked at three standard
        // errors for this fixed seed).
        let embeddings = DMatrix::from_fn(100, 2, |i, j| ((i * 2 + j) as f64).sin());
        let ds = EmbeddingDataset::new(
            embeddings,
            vec![0; 100],
            vec![Split::Train; 100],
            2,
            "uniformity",
        )
        .unwrap();
        let mut r = rng(12);
        let draws = 10_000;
        let mut counts = vec![0usize; 100];
        for _ in 0..draws {
            let (_, signal, _, _) = sample_neighborhood_graph(&ds, 0, 5, None, &mut r).unwrap();
            for node in 1..5 {
                let v = signal.values()[(node, 0)];
                let idx = (0..100)
                    .find(|&i| ds.embeddings()[(i, 0)] == v)
                    .expect("row must match a dataset item");
                counts[idx] += 1;
            }
        }
        assert_eq!(counts[0], 0, "anchor must never be drawn as a peer");
        let p = 4.0 / 99.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for (i, &c) in counts.iter().enumerate().skip(1) {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "item {i} drawn with frequency {freq}, expected {p} ± {}",
                3.0 * se
            );
        }
    }

    proptest! {
        #[test]
        fn kernel_is_monotone_in_distance(seed in 0u64..500) {
            let mut r = rng(seed);
            let z = DMatrix::from_fn(8, 2, |_, _| r.random_range(-3.0..3.0));
            let g = build_geometric_graph(&z, Some(1.3), Some(SparsifyPolicy::None)).unwrap();
            for i in 0..8 {
                for j in (i + 1)..8 {
                    for k in 0..8 {
                        for l in (k + 1)..8 {
                            let dij = (z.row(i) - z.row(j)).norm_squared();
                            let dkl = (z.row(k) - z.row(l)).norm_squared();
                            if dij > dkl {
                                prop_assert!(g.weights()[(i, j)] <= g.weights()[(k, l)]);
                            }
                        }
                    }
                }
            }
        }

        #[test]
        fn kernel_is_scale_covariant(seed in 0u64..500, alpha in 0.1f64..10.0) {
            let mut r = rng(seed);
            let z = DMatrix::from_fn(10, 3, |_, _| r.random_range(-2.0..2.0));
            let sigma = 0.8;
            let base = build_geometric_graph(&z, Some(sigma), Some(SparsifyPolicy::None)).unwrap();
            let scaled = build_geometric_graph(
                &(&z * alpha),
                Some(sigma * alpha),
                Some(SparsifyPolicy::None),
            )
            .unwrap();
            for i in 0..10 {
                for j in 0..10 {
                    prop_assert!(
                        (base.weights()[(i, j)] - scaled.weights()[(i, j)]).abs() <= 1e-12
                    );
                }
            }
        }
    }
}
