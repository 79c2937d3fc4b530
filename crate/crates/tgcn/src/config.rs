//! Experiment configuration: a flat `key = value` text format with
//! `[data]`, `[model]`, `[train]`, and `[output]` sections. Every seed must
//! be stated explicitly; nothing falls back to wall-clock entropy.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{load_edge_list, synth_generate, synth_generate_temporal, DynamicGraph};
use crate::model::{Activation, ModelConfig};
use crate::train::{OptimizerKind, TrainConfig};

/// Where the dynamic graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File {
        path: PathBuf,
    },
    Synth {
        nodes: usize,
        slices: usize,
        density: f64,
        weight_lo: f64,
        weight_hi: f64,
        temporal: bool,
        seed: u64,
    },
}

/// A full, reproducible experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

struct RawConfig {
    // (section, key) -> (value, line number)
    values: BTreeMap<(String, String), (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let content = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            };
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            if content.starts_with('[') {
                if !content.ends_with(']') {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "unterminated section header".into(),
                    });
                }
                section = content[1..content.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "empty key".into(),
                });
            }
            if values
                .insert((section.clone(), key.clone()), (value, lineno))
                .is_some()
            {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("duplicate key `{key}` in section [{section}]"),
                });
            }
        }
        Ok(RawConfig { values })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.values
            .remove(&(section.to_string(), key.to_string()))
            .map(|(v, _)| v)
    }

    fn require(&mut self, section: &str, key: &str) -> Result<String> {
        self.take(section, key).ok_or_else(|| {
            Error::Data(format!("config is missing `{key}` in section [{section}]"))
        })
    }

    fn finish(self) -> Result<()> {
        if let Some(((section, key), (_, line))) = self.values.into_iter().next() {
            return Err(Error::Parse {
                line,
                message: format!("unknown key `{key}` in section [{section}]"),
            });
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Data(format!(
            "config value `{value}` for `{key}` in [{section}] is invalid"
        ))
    })
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Data(format!(
            "config value `{value}` for `{key}` in [{section}] must be true or false"
        ))),
    }
}

impl std::str::FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;

        let source = raw.require("data", "source")?;
        let data = match source.as_str() {
            "file" => {
                let path = raw.require("data", "path")?;
                DataSource::File { path: path.into() }
            }
            "synth" => DataSource::Synth {
                nodes: parse_value("data", "nodes", &raw.require("data", "nodes")?)?,
                slices: parse_value("data", "slices", &raw.require("data", "slices")?)?,
                density: parse_value("data", "density", &raw.require("data", "density")?)?,
                weight_lo: match raw.take("data", "weight_lo") {
                    Some(v) => parse_value("data", "weight_lo", &v)?,
                    None => 1.0,
                },
                weight_hi: match raw.take("data", "weight_hi") {
                    Some(v) => parse_value("data", "weight_hi", &v)?,
                    None => 3.0,
                },
                temporal: match raw.take("data", "temporal") {
                    Some(v) => parse_bool("data", "temporal", &v)?,
                    None => false,
                },
                seed: parse_value("data", "synth_seed", &raw.require("data", "synth_seed")?)?,
            },
            other => {
                return Err(Error::Data(format!(
                    "config data source must be `file` or `synth`, got `{other}`"
                )))
            }
        };
        let split_seed = parse_value("data", "split_seed", &raw.require("data", "split_seed")?)?;

        let layers: usize = parse_value("model", "layers", &raw.require("model", "layers")?)?;
        let widths: Vec<usize> = raw
            .require("model", "widths")?
            .split(',')
            .map(|tok| parse_value("model", "widths", tok.trim()))
            .collect::<Result<_>>()?;
        let model = ModelConfig {
            layers,
            widths,
            window: parse_value("model", "window", &raw.require("model", "window")?)?,
            activation: match raw.take("model", "activation") {
                Some(v) => Activation::parse(&v)?,
                None => Activation::Tanh,
            },
            tied_weights: match raw.take("model", "tied") {
                Some(v) => parse_bool("model", "tied", &v)?,
                None => false,
            },
            init_seed: parse_value("model", "init_seed", &raw.require("model", "init_seed")?)?,
        };

        let patience: usize = match raw.take("train", "patience") {
            Some(v) => parse_value("train", "patience", &v)?,
            None => 0,
        };
        let batch_size: usize = match raw.take("train", "batch_size") {
            Some(v) => parse_value("train", "batch_size", &v)?,
            None => 0,
        };
        let train = TrainConfig {
            epochs: parse_value("train", "epochs", &raw.require("train", "epochs")?)?,
            learning_rate: parse_value(
                "train",
                "learning_rate",
                &raw.require("train", "learning_rate")?,
            )?,
            optimizer: match raw.take("train", "optimizer") {
                Some(v) => OptimizerKind::parse(&v)?,
                None => OptimizerKind::Adam,
            },
            delta: match raw.take("train", "delta") {
                Some(v) => parse_value("train", "delta", &v)?,
                None => 1.0,
            },
            seed: parse_value("train", "train_seed", &raw.require("train", "train_seed")?)?,
            patience: if patience == 0 { None } else { Some(patience) },
            weight_decay: match raw.take("train", "weight_decay") {
                Some(v) => parse_value("train", "weight_decay", &v)?,
                None => 0.0,
            },
            batch_size: if batch_size == 0 {
                None
            } else {
                Some(batch_size)
            },
            model,
        };
        train.validate()?;

        let output_dir: PathBuf = raw.require("output", "dir")?.into();
        raw.finish()?;
        Ok(ExperimentConfig {
            data,
            split_seed,
            train,
            output_dir,
        })
    }
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Data(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        text.parse()
    }

    /// Materialize the dynamic graph this experiment runs on.
    pub fn load_graph(&self) -> Result<DynamicGraph> {
        match &self.data {
            DataSource::File { path } => {
                let file = File::open(path).map_err(|e| {
                    Error::Data(format!("cannot open data file `{}`: {e}", path.display()))
                })?;
                load_edge_list(BufReader::new(file))
            }
            DataSource::Synth {
                nodes,
                slices,
                density,
                weight_lo,
                weight_hi,
                temporal,
                seed,
            } => {
                if *temporal {
                    synth_generate_temporal(*nodes, *slices, *density, (*weight_lo, *weight_hi), *seed)
                } else {
                    synth_generate(*nodes, *slices, *density, (*weight_lo, *weight_hi), *seed)
                }
            }
        }
    }

    /// Canonical rendering for the run manifest: every effective value,
    /// seeds included, in config syntax.
    pub fn echo(&self) -> String {
        let mut out = String::from("[data]\n");
        match &self.data {
            DataSource::File { path } => {
                out.push_str("source = file\n");
                out.push_str(&format!("path = {}\n", path.display()));
            }
            DataSource::Synth {
                nodes,
                slices,
                density,
                weight_lo,
                weight_hi,
                temporal,
                seed,
            } => {
                out.push_str("source = synth\n");
                out.push_str(&format!("nodes = {nodes}\n"));
                out.push_str(&format!("slices = {slices}\n"));
                out.push_str(&format!("density = {density}\n"));
                out.push_str(&format!("weight_lo = {weight_lo}\n"));
                out.push_str(&format!("weight_hi = {weight_hi}\n"));
                out.push_str(&format!("temporal = {temporal}\n"));
                out.push_str(&format!("synth_seed = {seed}\n"));
            }
        }
        out.push_str(&format!("split_seed = {}\n", self.split_seed));
        let m = &self.train.model;
        out.push_str("\n[model]\n");
        out.push_str(&format!("layers = {}\n", m.layers));
        let widths: Vec<String> = m.widths.iter().map(|w| w.to_string()).collect();
        out.push_str(&format!("widths = {}\n", widths.join(",")));
        out.push_str(&format!("window = {}\n", m.window));
        out.push_str(&format!("activation = {}\n", m.activation.name()));
        out.push_str(&format!("tied = {}\n", m.tied_weights));
        out.push_str(&format!("init_seed = {}\n", m.init_seed));
        let t = &self.train;
        out.push_str("\n[train]\n");
        out.push_str(&format!("epochs = {}\n", t.epochs));
        out.push_str(&format!("learning_rate = {}\n", t.learning_rate));
        out.push_str(&format!("optimizer = {}\n", t.optimizer.name()));
        out.push_str(&format!("delta = {}\n", t.delta));
        out.push_str(&format!("train_seed = {}\n", t.seed));
        out.push_str(&format!("patience = {}\n", t.patience.unwrap_or(0)));
        out.push_str(&format!("weight_decay = {}\n", t.weight_decay));
        out.push_str(&format!("batch_size = {}\n", t.batch_size.unwrap_or(0)));
        out.push_str("\n[output]\n");
        out.push_str(&format!("dir = {}\n", self.output_dir.display()));
        out
    }
}
