//! `mgnn` — command-line harness for the spectral graph-learning lab.
//!
//! Subcommands cover the full experiment loop:
//!
//! - `gen-data` synthesizes a labeled Gaussian-mixture embedding dataset;
//! - `train` / `predict` fit a classifier on anchored neighborhood graphs
//!   and read predictions back out of a checkpoint;
//! - `gen-gap` sweeps the train/test generalization gap over graph sizes;
//! - `converge` measures how a diffusion network on sampled graphs tracks
//!   its manifold counterpart as the sample count grows;
//! - `inspect-filter` tabulates a filter's frequency response and runs the
//!   low-pass decay test.
//!
//! Every subcommand is deterministic under fixed flags: reruns produce
//! byte-identical CSV and SVG output. The `MGNN_THREADS` environment
//! variable caps the worker threads of the sweep subcommands; all file I/O
//! happens on the coordinating thread.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, malformed files, diverged
//! training), 2 usage error.

mod chart;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chart::{Chart, Series};
use mgnn::data::{
    read_checkpoint, read_embeddings, synth_gaussian_mixture, write_checkpoint,
    write_convergence_report_csv, write_embeddings_binary, write_embeddings_csv,
    write_gap_report_csv, EmbeddingDataset, EmbeddingFormat, Split,
};
use mgnn::graph::{sample_neighborhood_graph, shift_operator, GsoKind};
use mgnn::manifold::AnalyticManifold;
use mgnn::nn::{
    argmax_classes, gcn_preset, mlp_forward, mlp_preset, mlp_train, predict, replication_preset,
    train, GnnParams, GnnPreset, Shift, ShiftData, TrainGraph, TrainTarget,
};
use mgnn::risk::{
    convergence_experiment, convergence_network, gen_gap_sweep, identity_network, thread_budget,
    ConvergenceConfig, ConvergenceReport, GapSweepConfig, GenGapReport,
};
use mgnn::spectral::{
    default_response_grid, eig_sym, frequency_response, low_pass_check, FilterCoeffs, FilterKind,
};

/// Train fraction assumed for CSV datasets, which carry no split tags:
/// six train items for every test item.
const DEFAULT_TRAIN_FRACTION: f64 = 6.0 / 7.0;

const SERIES_BLUE: &str = "#1f6feb";
const SERIES_ORANGE: &str = "#d29922";

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "mgnn",
    version,
    about = "Geometric-graph learning lab: dataset synthesis, GNN training, \
             generalization-gap sweeps, and graph-to-manifold convergence experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a balanced Gaussian-mixture embedding dataset
    GenData(GenDataArgs),
    /// Train a classifier and write its checkpoint
    Train(TrainArgs),
    /// Predict classes from a checkpoint via anchored neighborhood graphs
    Predict(PredictArgs),
    /// Sweep the train/test generalization gap over graph sizes
    GenGap(GenGapArgs),
    /// Measure graph-to-manifold network convergence over sample sizes
    Converge(ConvergeArgs),
    /// Tabulate a filter's frequency response and test its low-pass decay
    InspectFilter(InspectFilterArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of classes (at least 2)
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    classes: u64,

    /// Embedding dimension
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    dim: u64,

    /// Train items per class; each class also gets ceil(per-class / 5) test
    /// items, so the default 10 classes at 200 per class give a 2000-train /
    /// 400-test dataset
    #[arg(long = "per-class", default_value_t = 200,
          value_parser = clap::value_parser!(u64).range(1..))]
    per_class: u64,

    /// Distance of every class center from the origin
    #[arg(long = "sep", default_value_t = 6.0)]
    separation: f64,

    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output path; `.csv` writes the text format (split tags are then
    /// reassigned on load), anything else the binary format
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

/// Flags shared by every subcommand that loads a dataset.
#[derive(Args)]
struct DataArgs {
    /// Input dataset (binary, or CSV when the path ends in .csv)
    #[arg(long)]
    data: PathBuf,

    /// Fraction of CSV items assigned to the train split (CSV inputs only;
    /// binary files carry their own split tags). Defaults to 6/7
    #[arg(long = "train-fraction")]
    train_fraction: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    /// Two polynomial graph-filter layers, 16 hidden features, tanh
    Gcn,
    /// The matched graph-free pointwise baseline
    Mlp,
    /// The wide two-layer graph recipe (384 hidden features)
    Replication,
}

#[derive(Clone, Copy, ValueEnum)]
enum GsoArg {
    Adjacency,
    CombinatorialLaplacian,
    NormalizedLaplacian,
}

impl From<GsoArg> for GsoKind {
    fn from(arg: GsoArg) -> GsoKind {
        match arg {
            GsoArg::Adjacency => GsoKind::Adjacency,
            GsoArg::CombinatorialLaplacian => GsoKind::CombinatorialLaplacian,
            GsoArg::NormalizedLaplacian => GsoKind::NormalizedLaplacian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(arg: SplitArg) -> Split {
        match arg {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ManifoldArg {
    Circle,
    Sphere,
    FlatTorus,
}

impl From<ManifoldArg> for AnalyticManifold {
    fn from(arg: ManifoldArg) -> AnalyticManifold {
        match arg {
            ManifoldArg::Circle => AnalyticManifold::Circle,
            ManifoldArg::Sphere => AnalyticManifold::Sphere,
            ManifoldArg::FlatTorus => AnalyticManifold::FlatTorus,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterKindArg {
    /// Polynomial in the shift operator
    Poly,
    /// Powers of the heat semigroup
    Heat,
}

impl From<FilterKindArg> for FilterKind {
    fn from(arg: FilterKindArg) -> FilterKind {
        match arg {
            FilterKindArg::Poly => FilterKind::Poly,
            FilterKindArg::Heat => FilterKind::Heat,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Model recipe
    #[arg(long, value_enum, default_value_t = ModelArg::Gcn)]
    model: ModelArg,

    /// Nodes per anchored neighborhood graph (graph models)
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    nodes: u64,

    /// Anchored graphs drawn from the train split (graph models)
    #[arg(long = "train-graphs", default_value_t = 256,
          value_parser = clap::value_parser!(u64).range(1..))]
    train_graphs: u64,

    /// Override the recipe's epoch count
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,

    /// Override the recipe's learning rate
    #[arg(long = "learning-rate")]
    learning_rate: Option<f64>,

    /// Kernel width override; the median heuristic is used per graph otherwise
    #[arg(long)]
    sigma: Option<f64>,

    /// Seed for initialization, graph sampling, and batch shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Checkpoint output path
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,

    /// Item index to predict; when omitted, anchored accuracy is estimated
    /// over --draws random anchors instead
    #[arg(long)]
    anchor: Option<u64>,

    /// Anchored evaluation graphs drawn when no --anchor is given
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    draws: u64,

    /// Split evaluated when no --anchor is given
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,

    /// Nodes per anchored neighborhood graph (graph checkpoints)
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    nodes: u64,

    /// Operator derived from each sampled graph (graph checkpoints)
    #[arg(long, value_enum, default_value_t = GsoArg::NormalizedLaplacian)]
    gso: GsoArg,

    /// Kernel width override; the median heuristic is used per graph otherwise
    #[arg(long)]
    sigma: Option<f64>,

    /// Seed for graph sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenGapArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Neighborhood-graph sizes to sweep, comma-separated
    #[arg(long = "Ns", value_delimiter = ',', default_values_t = [5u64, 10, 20, 25, 50],
          value_parser = clap::value_parser!(u64).range(2..))]
    ns: Vec<u64>,

    /// Independent training runs per size
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,

    /// Training epochs per run
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,

    /// Optimizer step size
    #[arg(long = "learning-rate", default_value_t = 1e-3)]
    learning_rate: f64,

    /// Hidden width of the two-layer classifier
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    hidden: u64,

    /// Filter taps per layer of the graph model
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    taps: u64,

    /// Anchored graphs drawn from the train split as each run's training set
    #[arg(long = "train-graphs", default_value_t = 256,
          value_parser = clap::value_parser!(u64).range(1..))]
    train_graphs: u64,

    /// Fresh anchored test graphs for the out-of-sample accuracy estimate
    #[arg(long = "eval-graphs", default_value_t = 1600,
          value_parser = clap::value_parser!(u64).range(1..))]
    eval_graphs: u64,

    /// Resamples behind each out-of-sample risk estimate
    #[arg(long = "mc-trials", default_value_t = 200,
          value_parser = clap::value_parser!(u64).range(2..))]
    mc_trials: u64,

    /// Kernel width override; the median heuristic is used per graph otherwise
    #[arg(long)]
    sigma: Option<f64>,

    /// Operator derived from each sampled graph
    #[arg(long, value_enum, default_value_t = GsoArg::NormalizedLaplacian)]
    gso: GsoArg,

    /// Base seed; every (size, run) cell derives its own stream from it
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Report CSV path
    #[arg(short = 'o', long = "out")]
    out: PathBuf,

    /// Optional chart path (accuracy gap vs graph size, one series per model)
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetworkArg {
    /// The frozen random two-layer tanh diffusion network
    Standard,
    /// A single pass-through layer: the pipeline's exact null test, whose
    /// discrepancy column is all zeros
    Identity,
}

#[derive(Args)]
struct ConvergeArgs {
    /// Manifold the signals and sample points live on
    #[arg(long, value_enum, default_value_t = ManifoldArg::Circle)]
    manifold: ManifoldArg,

    /// Bandlimit of the random test signals
    #[arg(long = "lambda-max", default_value_t = 9.0)]
    lambda_max: f64,

    /// Sample sizes to sweep, comma-separated
    #[arg(long = "Ns", value_delimiter = ',', default_values_t = [64u64, 128, 256, 512],
          value_parser = clap::value_parser!(u64).range(2..))]
    ns: Vec<u64>,

    /// Independent (signal, point cloud) draws per size
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,

    /// Resolution of the manifold-side quadrature grid
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    grid: u64,

    /// Standard deviation of the random signal coefficients
    #[arg(long = "coeff-std", default_value_t = 0.3)]
    coeff_std: f64,

    /// Network under test
    #[arg(long, value_enum, default_value_t = NetworkArg::Standard)]
    network: NetworkArg,

    /// Base seed; draws the network and every trial's stream
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Report CSV path
    #[arg(short = 'o', long = "out")]
    out: PathBuf,

    /// Optional chart path (log-log discrepancy vs sample size)
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["coeffs", "checkpoint"])))]
struct InspectFilterArgs {
    /// Literal filter taps h_0,h_1,..., comma-separated
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, requires = "kind")]
    coeffs: Option<Vec<f64>>,

    /// Parameterization of --coeffs
    #[arg(long, value_enum, conflicts_with = "checkpoint")]
    kind: Option<FilterKindArg>,

    /// Read the filter from a checkpoint instead; the checkpoint must hold a
    /// single scalar layer (1×1 taps)
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Decay order d the low-pass test compares against (heat filters)
    #[arg(long = "dim", default_value_t = 1.0)]
    dim: f64,

    /// Extra frequencies appended to the response table, comma-separated
    #[arg(long = "at", value_delimiter = ',', allow_negative_numbers = true)]
    at: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Failure plumbing
// ---------------------------------------------------------------------------

/// A failed subcommand, split by whose fault it is: `Usage` maps to exit
/// code 2 (bad flag combinations clap cannot see), `Runtime` to exit code 1.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(err: E) -> Failure {
        Failure::Runtime(err.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    // Clap itself exits with code 2 on unparseable flags; what reaches
    // `run` is syntactically valid.
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::GenGap(args) => cmd_gen_gap(args),
        Command::Converge(args) => cmd_converge(args),
        Command::InspectFilter(args) => cmd_inspect_filter(args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a dataset, picking the format from the file extension. The split
/// fraction applies only to CSV inputs, which carry no split tags.
fn load_dataset(args: &DataArgs, seed: u64) -> Result<EmbeddingDataset, Failure> {
    let csv = is_csv(&args.data);
    if let Some(f) = args.train_fraction {
        if !csv {
            return Err(Failure::Usage(
                "--train-fraction applies only to CSV datasets; \
                 binary files carry their own split tags"
                    .into(),
            ));
        }
        if !(f.is_finite() && 0.0 < f && f < 1.0) {
            return Err(Failure::Usage(format!(
                "--train-fraction must lie strictly between 0 and 1, got {f}"
            )));
        }
    }
    let format = if csv {
        EmbeddingFormat::Csv {
            train_fraction: args.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION),
            seed,
        }
    } else {
        EmbeddingFormat::Binary
    };
    let dataset = read_embeddings(&args.data, format)
        .with_context(|| format!("reading dataset {}", args.data.display()))?;
    Ok(dataset)
}

fn build_preset(model: ModelArg, input_dim: usize, n_classes: usize, seed: u64) -> GnnPreset {
    match model {
        ModelArg::Gcn => gcn_preset(input_dim, n_classes, seed),
        ModelArg::Mlp => mlp_preset(input_dim, n_classes, seed),
        ModelArg::Replication => replication_preset(input_dim, n_classes, seed),
    }
}

/// Classifies the nodes of one anchored neighborhood graph under whichever
/// shift the checkpoint's filter kind calls for.
fn classify_neighborhood<R: Rng + ?Sized>(
    params: &GnnParams,
    dataset: &EmbeddingDataset,
    anchor: usize,
    nodes: usize,
    sigma: Option<f64>,
    gso_kind: GsoKind,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<u32>, usize), mgnn::Error> {
    let (graph, signal, labels, anchor_node) =
        sample_neighborhood_graph(dataset, anchor, nodes, sigma, rng)?;
    let gso = shift_operator(&graph, gso_kind)?;
    let classes = match params.filter_kind() {
        FilterKind::Poly => predict(params, Shift::Operator(&gso), &signal)?,
        FilterKind::Heat => {
            let eig = eig_sym(&gso)?;
            predict(params, Shift::Spectrum(&eig), &signal)?
        }
    };
    Ok((classes, labels, anchor_node))
}

fn write_text(path: &Path, text: &str, what: &str) -> Result<(), Failure> {
    fs::write(path, text).with_context(|| format!("writing {what} {}", path.display()))?;
    Ok(())
}

fn to_usize(values: &[u64]) -> Vec<usize> {
    values.iter().map(|&v| v as usize).collect()
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn cmd_gen_data(args: GenDataArgs) -> CmdResult {
    let per_class_test = args.per_class.div_ceil(5);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let dataset = synth_gaussian_mixture(
        args.classes as usize,
        args.dim as usize,
        args.per_class as usize,
        per_class_test as usize,
        args.separation,
        &mut rng,
    )?;
    if is_csv(&args.out) {
        write_embeddings_csv(&dataset, &args.out)
    } else {
        write_embeddings_binary(&dataset, &args.out)
    }
    .with_context(|| format!("writing dataset {}", args.out.display()))?;

    println!(
        "wrote {} items ({} train / {} test, {} classes, dimension {}) to {}",
        dataset.n_total(),
        dataset.split_indices(Split::Train).len(),
        dataset.split_indices(Split::Test).len(),
        dataset.n_classes(),
        dataset.dim(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(args: TrainArgs) -> CmdResult {
    let dataset = load_dataset(&args.data, args.seed)?;
    let mut preset = build_preset(args.model, dataset.dim(), dataset.n_classes(), args.seed);
    if let Some(epochs) = args.epochs {
        preset.train.epochs = epochs as usize;
    }
    if let Some(lr) = args.learning_rate {
        preset.train.learning_rate = lr;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let init = preset.init_params(&mut rng)?;

    let (trained, history) = if preset.taps_per_layer == 1 {
        let (samples, labels) = dataset.split_table(Split::Train);
        mlp_train(&samples, &labels, init, &preset.train)?
    } else {
        let train_pool = dataset.split_indices(Split::Train);
        if train_pool.is_empty() {
            return Err(Failure::Runtime(anyhow::anyhow!("the dataset has no train items")));
        }
        let mut instances = Vec::with_capacity(args.train_graphs as usize);
        for _ in 0..args.train_graphs {
            let anchor = train_pool[rng.random_range(0..train_pool.len())];
            let (graph, signal, labels, _) = sample_neighborhood_graph(
                &dataset,
                anchor,
                args.nodes as usize,
                args.sigma,
                &mut rng,
            )?;
            let gso = shift_operator(&graph, preset.gso_kind)?;
            instances.push(TrainGraph::new(
                ShiftData::Operator(gso),
                signal,
                TrainTarget::Labels(labels),
            )?);
        }
        train(init, &instances, &preset.train)?
    };

    write_checkpoint(&trained, &args.out)
        .with_context(|| format!("writing checkpoint {}", args.out.display()))?;

    let last = history.last().expect("at least one epoch ran");
    let acc = last.accuracy.map_or(String::new(), |a| format!(", final train accuracy {a:.4}"));
    println!(
        "trained {} for {} epochs: final loss {:.6}{acc}",
        args.model.label(),
        history.len(),
        last.loss,
    );
    println!(
        "wrote checkpoint to {} ({} coefficients)",
        args.out.display(),
        trained.param_count()
    );
    Ok(())
}

impl ModelArg {
    fn label(self) -> &'static str {
        match self {
            ModelArg::Gcn => "gcn",
            ModelArg::Mlp => "mlp",
            ModelArg::Replication => "replication",
        }
    }
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

fn cmd_predict(args: PredictArgs) -> CmdResult {
    let dataset = load_dataset(&args.data, args.seed)?;
    let params = read_checkpoint(&args.checkpoint)
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    if params.input_dim() != dataset.dim() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "the checkpoint expects {} input features but the dataset has dimension {}",
            params.input_dim(),
            dataset.dim()
        )));
    }

    if params.is_pointwise() {
        // Pointwise models ignore graphs entirely: every item is classified
        // from its own embedding.
        let logits = mlp_forward(dataset.embeddings(), &params)?;
        let classes = argmax_classes(&logits);
        match args.anchor {
            Some(anchor) => {
                let i = check_anchor(&dataset, anchor)?;
                println!("item {i}: predicted class {}, label {}", classes[i], dataset.labels()[i]);
            }
            None => {
                let split: Split = args.split.into();
                let idx = dataset.split_indices(split);
                if idx.is_empty() {
                    return Err(Failure::Runtime(anyhow::anyhow!(
                        "the {} split is empty",
                        split_name(split)
                    )));
                }
                let hits = idx.iter().filter(|&&i| classes[i] == dataset.labels()[i]).count();
                println!(
                    "accuracy over {} {} items: {:.4}",
                    idx.len(),
                    split_name(split),
                    hits as f64 / idx.len() as f64
                );
            }
        }
        return Ok(());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let nodes = args.nodes as usize;
    match args.anchor {
        Some(anchor) => {
            let i = check_anchor(&dataset, anchor)?;
            let (classes, labels, node) = classify_neighborhood(
                &params,
                &dataset,
                i,
                nodes,
                args.sigma,
                args.gso.into(),
                &mut rng,
            )?;
            println!(
                "item {i}: predicted class {}, label {} ({nodes}-node neighborhood)",
                classes[node], labels[node]
            );
        }
        None => {
            let split: Split = args.split.into();
            let pool = dataset.split_indices(split);
            if pool.len() < nodes {
                return Err(Failure::Runtime(anyhow::anyhow!(
                    "the {} split holds {} items but each graph needs {nodes}",
                    split_name(split),
                    pool.len()
                )));
            }
            let mut hits = 0usize;
            for _ in 0..args.draws {
                let anchor = pool[rng.random_range(0..pool.len())];
                let (classes, labels, node) = classify_neighborhood(
                    &params,
                    &dataset,
                    anchor,
                    nodes,
                    args.sigma,
                    args.gso.into(),
                    &mut rng,
                )?;
                if classes[node] == labels[node] {
                    hits += 1;
                }
            }
            println!(
                "anchored accuracy over {} draws from the {} split ({nodes}-node graphs): {:.4}",
                args.draws,
                split_name(split),
                hits as f64 / args.draws as f64
            );
        }
    }
    Ok(())
}

fn check_anchor(dataset: &EmbeddingDataset, anchor: u64) -> Result<usize, Failure> {
    if anchor as usize >= dataset.n_total() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "item index {anchor} out of range for {} items",
            dataset.n_total()
        )));
    }
    Ok(anchor as usize)
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

// ---------------------------------------------------------------------------
// gen-gap
// ---------------------------------------------------------------------------

fn cmd_gen_gap(args: GenGapArgs) -> CmdResult {
    let dataset = load_dataset(&args.data, args.seed)?;
    let cfg = GapSweepConfig {
        n_values: to_usize(&args.ns),
        n_seeds: args.seeds as usize,
        base_seed: args.seed,
        epochs: args.epochs as usize,
        learning_rate: args.learning_rate,
        hidden_dim: args.hidden as usize,
        taps: args.taps as usize,
        train_graphs: args.train_graphs as usize,
        eval_graphs: args.eval_graphs as usize,
        mc_trials: args.mc_trials as usize,
        sigma: args.sigma,
        gso_kind: args.gso.into(),
        threads: thread_budget(),
    };
    let report = gen_gap_sweep(&dataset, &cfg).context("running the generalization-gap sweep")?;

    write_gap_report_csv(&report, &args.out)
        .with_context(|| format!("writing report {}", args.out.display()))?;
    print_gap_summary(&report);
    println!("wrote report to {}", args.out.display());

    if let Some(path) = &args.svg {
        write_text(path, &gap_chart(&report).render(), "chart")?;
        println!("wrote chart to {}", path.display());
    }
    Ok(())
}

fn print_gap_summary(report: &GenGapReport) {
    println!(
        "{:>7} {:>11} {:>10} {:>9} {:>10} {:>9}",
        "n_nodes", "train_acc", "test_acc", "acc_gap", "risk_gap", "mlp_gap"
    );
    for row in &report.rows {
        println!(
            "{:>7} {:>11.4} {:>10.4} {:>9.4} {:>10.4} {:>9.4}",
            row.n_nodes,
            row.mean_train_acc,
            row.mean_test_acc,
            row.acc_gap,
            row.risk_gap,
            row.mlp_acc_gap
        );
    }
    match report.slope {
        Some(slope) => println!("fitted log-log slope of the risk gap: {slope:.4}"),
        None => println!(
            "slope not fitted: needs at least three sizes with positive risk gaps \
             ({} excluded as nonpositive)",
            report.excluded_nonpositive
        ),
    }
}

fn gap_chart(report: &GenGapReport) -> Chart {
    let gcn: Vec<(f64, f64)> =
        report.rows.iter().map(|r| (r.n_nodes as f64, r.acc_gap)).collect();
    let mlp: Vec<(f64, f64)> =
        report.rows.iter().map(|r| (r.n_nodes as f64, r.mlp_acc_gap)).collect();
    Chart {
        title: "Train-test accuracy gap vs neighborhood size".into(),
        x_label: "nodes per graph (N)".into(),
        y_label: "accuracy gap".into(),
        log_x: false,
        log_y: false,
        series: vec![
            Series { label: "GCN".into(), color: SERIES_BLUE, points: gcn },
            Series { label: "MLP".into(), color: SERIES_ORANGE, points: mlp },
        ],
    }
}

// ---------------------------------------------------------------------------
// converge
// ---------------------------------------------------------------------------

fn cmd_converge(args: ConvergeArgs) -> CmdResult {
    let manifold: AnalyticManifold = args.manifold.into();
    let cfg = ConvergenceConfig {
        manifold,
        lambda_max: args.lambda_max,
        n_values: to_usize(&args.ns),
        trials: args.trials as usize,
        grid_resolution: args.grid as usize,
        coeff_std: args.coeff_std,
        base_seed: args.seed,
        threads: thread_budget(),
    };
    let params = match args.network {
        NetworkArg::Standard => {
            convergence_network(&mut ChaCha8Rng::seed_from_u64(args.seed))
        }
        NetworkArg::Identity => identity_network(),
    };
    let report =
        convergence_experiment(&params, &cfg).context("running the convergence experiment")?;

    write_convergence_report_csv(&report, &args.out)
        .with_context(|| format!("writing report {}", args.out.display()))?;
    print_convergence_summary(&report);
    println!("wrote report to {}", args.out.display());

    if let Some(path) = &args.svg {
        write_text(path, &convergence_chart(&report).render(), "chart")?;
        println!("wrote chart to {}", path.display());
    }
    Ok(())
}

fn print_convergence_summary(report: &ConvergenceReport) {
    println!(
        "{:>7} {:>14} {:>13} {:>12} {:>12}",
        "n_nodes", "discrepancy", "std", "eigengap", "bound"
    );
    for row in &report.rows {
        println!(
            "{:>7} {:>14.6e} {:>13.6e} {:>12.6} {:>12.6}",
            row.n_nodes, row.mean_discrepancy, row.std_discrepancy, row.eigengap, row.signal_bound
        );
    }
    match report.slope {
        Some(slope) => println!("fitted log-log slope of the discrepancy: {slope:.4}"),
        None => println!(
            "slope not fitted: needs at least three sizes with positive discrepancies \
             ({} excluded as nonpositive)",
            report.excluded_nonpositive
        ),
    }
    // The theory's decay exponent for this manifold, for eyeballing the fit.
    let m = report.manifold.intrinsic_dim();
    println!("reference decay exponent: -1/{} (intrinsic dimension {m})", m + 4);
}

fn convergence_chart(report: &ConvergenceReport) -> Chart {
    let measured: Vec<(f64, f64)> =
        report.rows.iter().map(|r| (r.n_nodes as f64, r.mean_discrepancy)).collect();
    let mut series = vec![Series {
        label: "discrepancy".into(),
        color: SERIES_BLUE,
        points: measured.clone(),
    }];

    // Reference decay curve anchored at the first measured point, when a
    // positive anchor exists to scale it from.
    let m = report.manifold.intrinsic_dim();
    let exponent = -1.0 / (m as f64 + 4.0);
    if let Some(&(n0, d0)) = measured.first() {
        if d0 > 0.0 {
            let reference: Vec<(f64, f64)> = measured
                .iter()
                .map(|&(n, _)| (n, d0 * (n / n0).powf(exponent)))
                .collect();
            series.push(Series {
                label: format!("N^(-1/{}) reference", m + 4),
                color: SERIES_ORANGE,
                points: reference,
            });
        }
    }

    Chart {
        title: format!("Graph-to-manifold discrepancy on the {}", report.manifold.name()),
        x_label: "sample size (N)".into(),
        y_label: "normalized discrepancy".into(),
        log_x: true,
        log_y: true,
        series,
    }
}

// ---------------------------------------------------------------------------
// inspect-filter
// ---------------------------------------------------------------------------

fn cmd_inspect_filter(args: InspectFilterArgs) -> CmdResult {
    let filter = match (&args.coeffs, &args.checkpoint) {
        (Some(coeffs), None) => {
            let kind = args.kind.expect("clap enforces --kind with --coeffs");
            FilterCoeffs::new(coeffs.clone(), kind.into())?
        }
        (None, Some(path)) => {
            let params = read_checkpoint(path)
                .with_context(|| format!("reading checkpoint {}", path.display()))?;
            scalar_filter(&params)?
        }
        _ => unreachable!("clap enforces exactly one filter source"),
    };
    if let Some(a) = args.at.iter().find(|a| !a.is_finite()) {
        return Err(Failure::Usage(format!("--at frequencies must be finite, got {a}")));
    }
    if !(args.dim.is_finite() && args.dim > 0.0) {
        return Err(Failure::Usage(format!(
            "--dim must be a positive decay order, got {}",
            args.dim
        )));
    }

    println!("kind: {}", kind_name(filter.kind()));
    println!(
        "taps: [{}]",
        filter.taps().iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
    );
    println!();

    // Response table over the standard log grid plus any requested extras.
    let mut grid = default_response_grid();
    grid.extend_from_slice(&args.at);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    println!("{:>16} {:>24}", "a", "h(a)");
    for &a in &grid {
        println!("{:>16} {:>24}", trim6(a), frequency_response(&filter, a));
    }
    println!();

    // Decay verdict: only the diffusion parameterization has a tail to test.
    match filter.kind() {
        FilterKind::Heat => {
            let report = low_pass_check(&filter, args.dim, &default_response_grid())?;
            println!(
                "low-pass (d = {}): {} (fitted tail exponent {:.4})",
                args.dim, report.is_low_pass, report.fitted_exponent
            );
        }
        FilterKind::Poly => {
            println!("low-pass check: not applicable (heat-kind filters only)");
        }
    }
    Ok(())
}

/// Extracts the tap vector of a single-scalar-layer checkpoint.
fn scalar_filter(params: &GnnParams) -> Result<FilterCoeffs, Failure> {
    if params.n_layers() != 1 || params.input_dim() != 1 || params.output_dim() != 1 {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "filter inspection needs a single scalar layer (1×1 taps), but the checkpoint \
             holds a {}-layer {}-to-{} network",
            params.n_layers(),
            params.input_dim(),
            params.output_dim()
        )));
    }
    let taps = params.layers()[0].taps().iter().map(|t| t[(0, 0)]).collect();
    Ok(FilterCoeffs::new(taps, params.filter_kind())?)
}

fn kind_name(kind: FilterKind) -> &'static str {
    match kind {
        FilterKind::Poly => "poly",
        FilterKind::Heat => "heat",
    }
}

/// Frequency column format: six decimals, trailing zeros trimmed.
fn trim6(v: f64) -> String {
    let s = format!("{v:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
