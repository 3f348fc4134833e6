//! Directly trained spiking video transformer.
//!
//! The crate is organised bottom-up: a dense tensor/autograd substrate
//! ([`tensor`], [`kernels`], [`autograd`]), spiking neurons ([`neuron`]),
//! composite layers ([`layers`]), transformer blocks ([`blocks`]), the full
//! network ([`model`], [`checkpoint`]), training ([`train`]), synthetic data
//! and noise ([`data`]) and the synaptic-operation energy profiler
//! ([`energy`], fed by [`probe`]).

pub mod autograd;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod energy;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod neuron;
pub mod params;
pub mod probe;
pub mod tensor;
pub mod train;

pub use autograd::{Graph, Var};
pub use data::{ClipDataset, NoiseSpec, PatternConfig};
pub use energy::{EnergyModel, EnergyReport, LayerCost};
pub use error::{Error, Result};
pub use layers::NormMode;
pub use model::{Mode, Model, ModelConfig, NamedVariant};
pub use neuron::{NeuronConfig, NeuronKind};
pub use probe::Probe;
pub use tensor::{Scalar, Tensor};
pub use train::{Metrics, TrainConfig};
