//! Controllable image editing network with structure generation blocks on
//! every skip connection, built on a small reverse-mode autodiff engine.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod injection;
pub mod layers;
pub mod losses;
pub mod network;
pub mod ops;
pub mod optim;
pub mod ppm;
pub mod rng;
pub mod sgb;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::TrainConfig;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, ParamId, ParamStore, ParamView, Var};
pub use losses::{LossReport, LossWeights};
pub use network::{BackboneConfig, EditInput, Generator};
pub use ppm::{read_image, write_image};
pub use tensor::Tensor;
pub use trainer::{compose, Trainer};
