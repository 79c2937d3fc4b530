//! Train briefly, save a checkpoint, load it back, and query individual
//! edge-weight estimates against the observed values.
//!
//! Run with: cargo run --release -p tgcn --example checkpoint_predict

use tgcn::graph::{normalize_adjacency, split, synth_generate};
use tgcn::model::{forward, predict_edge, Activation, ModelConfig};
use tgcn::train::{load_checkpoint, save_checkpoint, train, OptimizerKind, TrainConfig};

fn main() -> tgcn::Result<()> {
    let graph = synth_generate(12, 4, 0.3, (1.0, 3.0), 5)?;
    let splits = split(&graph, (6, 1, 3), 17)?;
    let config = TrainConfig {
        epochs: 500,
        learning_rate: 1e-2,
        optimizer: OptimizerKind::Adam,
        delta: 1.0,
        seed: 0,
        patience: None,
        weight_decay: 0.0,
        batch_size: None,
        model: ModelConfig {
            layers: 2,
            widths: vec![8, 8, 8],
            window: 2,
            activation: Activation::Tanh,
            tied_weights: false,
            init_seed: 2,
        },
    };
    let (params, log) = train(&graph, &splits, &config)?;
    println!(
        "trained {} epochs, final train MAE {:.4}",
        log.epochs.len(),
        log.epochs.last().map(|r| r.train_mae).unwrap_or(f64::NAN)
    );

    let dir = std::env::temp_dir().join("tgcn_checkpoint_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&params, config.model.activation, &path)?;
    println!("saved {}", path.display());

    let ckpt = load_checkpoint(&path)?;
    assert_eq!(ckpt.params, params, "round trip must be element-exact");
    println!(
        "reloaded: {} layers, widths {:?}, window {}",
        ckpt.config.layers, ckpt.config.widths, ckpt.config.window
    );

    let adj = normalize_adjacency(graph.adjacency());
    let f = forward(&ckpt.params, &adj, &ckpt.config)?;
    println!("edge        observed  estimated");
    for e in graph.observed().iter().step_by(17).take(8) {
        let estimate = predict_edge(
            &f,
            e.i,
            e.j,
            e.t,
            &ckpt.params.head_concat,
            &ckpt.params.head_bias,
            &ckpt.params.head_regressor,
        )?;
        println!(
            "({:2},{:2},{:1})  {:8.4}  {:9.4}",
            e.i, e.j, e.t, e.weight, estimate
        );
    }
    Ok(())
}
