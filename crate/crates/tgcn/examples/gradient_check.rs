//! Verify the hand-written reverse-mode gradients against central finite
//! differences, coordinate by coordinate, on a small instance.
//!
//! Run with: cargo run --release -p tgcn --example gradient_check

use tgcn::graph::{normalize_adjacency, synth_generate};
use tgcn::model::{Activation, ModelConfig, ModelParameters};
use tgcn::train::{compute_gradients, finite_difference_check, OptimizerKind, TrainConfig};

fn main() -> tgcn::Result<()> {
    let graph = synth_generate(6, 4, 0.3, (0.5, 1.5), 11)?;
    let adj = normalize_adjacency(graph.adjacency());
    let batch: Vec<_> = graph.observed().iter().take(10).copied().collect();
    let config = TrainConfig {
        epochs: 0,
        learning_rate: 1e-2,
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
            init_seed: 11,
        },
    };
    let params = ModelParameters::init(&config.model, graph.node_count(), graph.snapshot_count())?;
    println!(
        "instance: {} nodes, {} slices, {} batch entries, {} parameters",
        graph.node_count(),
        graph.snapshot_count(),
        batch.len(),
        params.parameter_count()
    );

    let (loss, grads) = compute_gradients(&params, &adj, &batch, &config)?;
    println!("batch loss {loss:.6}");
    for (name, block) in grads.blocks() {
        let norm: f64 = block.iter().map(|g| g * g).sum::<f64>().sqrt();
        println!("  grad {name:<8} {} values, l2 norm {norm:.5}", block.len());
    }

    let report = finite_difference_check(&params, &adj, &batch, &config, 1e-5)?;
    println!(
        "finite-difference check: max relative error {:e} at {}[{}]",
        report.max_relative_error, report.worst_block, report.worst_index
    );
    Ok(())
}
