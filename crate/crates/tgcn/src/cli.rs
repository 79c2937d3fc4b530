//! The `tgcn` command-line front end: reproducible experiments over the
//! library, driven by config files and explicit seeds. Exit codes: 0
//! success, 1 usage, 2 data error, 3 numerical error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graph::{
    load_edge_list, normalize_adjacency, split, synth_generate, synth_generate_temporal,
    DynamicGraph, ObservedEntry, SplitTag,
};
use crate::model::{forward, predict_edge, Activation, ModelConfig, ModelParameters};
use crate::train::{
    finite_difference_check, load_checkpoint, save_checkpoint, train, Checkpoint, OptimizerKind,
    TrainConfig,
};

const SPLIT_RATIO: (usize, usize, usize) = (6, 1, 3);

#[derive(Parser)]
#[command(name = "tgcn", version, about = "Link-weight estimation on dynamic graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score the test split of a dataset with a trained checkpoint.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split seed used when the checkpoint was trained.
        #[arg(long)]
        seed: u64,
    },
    /// Predict one edge weight: `--edge i,j,t` in dense indices.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        edge: String,
    },
    /// Generate a synthetic edge list.
    Synth {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        slices: usize,
        #[arg(long)]
        density: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        weight_lo: f64,
        #[arg(long, default_value_t = 3.0)]
        weight_hi: f64,
        /// Make weights depend on the previous slice's structure.
        #[arg(long, default_value_t = false)]
        temporal: bool,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
    },
}

/// Parse and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 1;
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train { config } => cmd_train(&config, out),
        Command::Evaluate { ckpt, data, seed } => cmd_evaluate(&ckpt, &data, seed, out),
        Command::Predict { ckpt, data, edge } => cmd_predict(&ckpt, &data, &edge, out),
        Command::Synth {
            nodes,
            slices,
            density,
            seed,
            out: out_path,
            weight_lo,
            weight_hi,
            temporal,
        } => cmd_synth(
            nodes,
            slices,
            density,
            seed,
            (weight_lo, weight_hi),
            temporal,
            &out_path,
            out,
        ),
        Command::Gradcheck { config, epsilon } => cmd_gradcheck(config.as_deref(), epsilon, out),
    }
}

fn load_data_file(path: &Path) -> Result<DynamicGraph> {
    let file = File::open(path).map_err(|e| {
        Error::Data(format!("cannot open data file `{}`: {e}", path.display()))
    })?;
    load_edge_list(BufReader::new(file))
}

fn check_compatibility(ckpt: &Checkpoint, graph: &DynamicGraph) -> Result<()> {
    if ckpt.nodes != graph.node_count() || ckpt.snapshots != graph.snapshot_count() {
        return Err(Error::Data(format!(
            "checkpoint was trained on {} nodes x {} slices but the data has {} x {}",
            ckpt.nodes,
            ckpt.snapshots,
            graph.node_count(),
            graph.snapshot_count()
        )));
    }
    Ok(())
}

/// Load, split, train; write `model.ckpt`, `metrics.csv`, and
/// `manifest.txt` into the configured output directory.
pub fn cmd_train(config_path: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = ExperimentConfig::from_path(config_path)?;
    let graph = cfg.load_graph()?;
    let splits = split(&graph, SPLIT_RATIO, cfg.split_seed)?;
    let (params, log) = train(&graph, &splits, &cfg.train)?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    let ckpt_path = cfg.output_dir.join("model.ckpt");
    save_checkpoint(&params, cfg.train.model.activation, &ckpt_path)?;
    let csv_path = cfg.output_dir.join("metrics.csv");
    std::fs::write(&csv_path, log.to_csv())?;
    let manifest_path = cfg.output_dir.join("manifest.txt");
    std::fs::write(&manifest_path, cfg.echo())?;

    writeln!(out, "checkpoint: {}", ckpt_path.display())?;
    writeln!(out, "metrics: {}", csv_path.display())?;
    writeln!(out, "manifest: {}", manifest_path.display())?;
    if let Some(last) = log.epochs.last() {
        writeln!(
            out,
            "final epoch {}: train_mae={} val_mae={}",
            last.epoch, last.train_mae, last.val_mae
        )?;
    }
    Ok(())
}

/// Print the test-split metrics row `split,count,mae,rmse`.
pub fn cmd_evaluate(ckpt_path: &Path, data: &Path, seed: u64, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let graph = load_data_file(data)?;
    check_compatibility(&ckpt, &graph)?;
    let splits = split(&graph, SPLIT_RATIO, seed)?;
    let report = evaluate(&ckpt.params, &ckpt.config, &graph, &splits, SplitTag::Test)?;
    writeln!(out, "{}", report.csv_row())?;
    Ok(())
}

/// Print the estimated weight of one `(i, j, t)` edge.
pub fn cmd_predict(ckpt_path: &Path, data: &Path, edge: &str, out: &mut dyn Write) -> Result<()> {
    let parts: Vec<&str> = edge.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "--edge expects `i,j,t`, got `{edge}`"
        )));
    }
    let parse_idx = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("`{s}` is not a valid index")))
    };
    let (i, j, t) = (parse_idx(parts[0])?, parse_idx(parts[1])?, parse_idx(parts[2])?);

    let ckpt = load_checkpoint(ckpt_path)?;
    let graph = load_data_file(data)?;
    check_compatibility(&ckpt, &graph)?;
    let adj = normalize_adjacency(graph.adjacency());
    let f = forward(&ckpt.params, &adj, &ckpt.config)?;
    let estimate = predict_edge(
        &f,
        i,
        j,
        t,
        &ckpt.params.head_concat,
        &ckpt.params.head_bias,
        &ckpt.params.head_regressor,
    )?;
    writeln!(out, "{estimate}")?;
    Ok(())
}

/// Write a synthetic edge list loadable by the other commands.
#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    nodes: usize,
    slices: usize,
    density: f64,
    seed: u64,
    weight_range: (f64, f64),
    temporal: bool,
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let graph = if temporal {
        synth_generate_temporal(nodes, slices, density, weight_range, seed)?
    } else {
        synth_generate(nodes, slices, density, weight_range, seed)?
    };
    let file = File::create(out_path)?;
    let mut writer = io::BufWriter::new(file);
    graph.to_edge_list(&mut writer)?;
    writer.flush()?;
    writeln!(
        out,
        "wrote {} ({} entries, {} nodes, {} slices)",
        out_path.display(),
        graph.observed().len(),
        graph.node_count(),
        graph.snapshot_count()
    )?;
    Ok(())
}

fn gradcheck_default_instance() -> Result<(DynamicGraph, TrainConfig)> {
    let graph = synth_generate(6, 4, 0.3, (0.5, 1.5), 42)?;
    let config = TrainConfig {
        epochs: 0,
        learning_rate: 0.01,
        optimizer: OptimizerKind::Adam,
        delta: 1.0,
        seed: 0,
        patience: None,
        weight_decay: 0.0,
        batch_size: None,
        model: ModelConfig {
            layers: 2,
            widths: vec![3, 3, 2],
            window: 2,
            activation: Activation::Tanh,
            tied_weights: false,
            init_seed: 1,
        },
    };
    Ok((graph, config))
}

/// Check gradients on a small instance; exit 0 only when the worst relative
/// error stays below 1e-4.
pub fn cmd_gradcheck(config_path: Option<&Path>, epsilon: f64, out: &mut dyn Write) -> Result<()> {
    let (graph, train_cfg, batch) = match config_path {
        Some(path) => {
            let cfg = ExperimentConfig::from_path(path)?;
            let graph = cfg.load_graph()?;
            let splits = split(&graph, SPLIT_RATIO, cfg.split_seed)?;
            let entries: Vec<ObservedEntry> = splits
                .entries(&graph, SplitTag::Train)
                .into_iter()
                .take(10)
                .collect();
            (graph, cfg.train, entries)
        }
        None => {
            let (graph, cfg) = gradcheck_default_instance()?;
            let batch: Vec<ObservedEntry> = graph.observed().iter().take(10).copied().collect();
            (graph, cfg, batch)
        }
    };
    let adj = normalize_adjacency(graph.adjacency());
    let params = ModelParameters::init(
        &train_cfg.model,
        graph.node_count(),
        graph.snapshot_count(),
    )?;
    let report = finite_difference_check(&params, &adj, &batch, &train_cfg, epsilon)?;
    writeln!(
        out,
        "max relative error {:e} at {}[{}] over {} parameters",
        report.max_relative_error,
        report.worst_block,
        report.worst_index,
        params.parameter_count()
    )?;
    if report.max_relative_error >= 1e-4 {
        return Err(Error::Numerical(format!(
            "gradient check failed: {:e} at {}[{}]",
            report.max_relative_error, report.worst_block, report.worst_index
        )));
    }
    Ok(())
}
