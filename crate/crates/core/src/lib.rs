//! Dynamic Boltzmann machine (DyBM) for multi-dimensional binary time series.
//!
//! Every unit is connected to every unit (itself included) through a FIFO
//! conduction-delay queue, and the history is summarized by exponentially
//! decaying eligibility traces. The next pattern's units are conditionally
//! independent given the history, so likelihoods and their gradients are
//! exact and can be computed online.
//!
//! - [`model`]: parameters, queues, traces, conditional probabilities, gradients
//! - [`regularizers`]: delay pruning, dropout and dropconnect masks
//! - [`trainer`]: Adam-based online training, validation and checkpointing
//! - [`checkpoint`]: best-model snapshots and their binary format
//! - [`datagen`]: Markov-chain data, bouncing-sprite videos, frame files
//! - [`eval`]: correlation, bit accuracy, rollouts and sweep tables
//! - [`experiments`]: end-to-end Markov, video and sweep runs
//!
//! With the default `parallel` feature the per-unit and per-edge loops and the
//! experiment jobs run on rayon; without it the same code runs sequentially
//! and produces bit-identical results.

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod fifo;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod regularizers;
pub mod sequence;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use error::{DybmError, Result};
pub use fifo::FifoQueue;
pub use model::{DybmModel, ModelConfig, Parameters, TraceState};
pub use optimizer::{AdamConfig, OptimizerState};
pub use regularizers::{DropMask, Method, PruneMask, RegularizerConfig};
pub use sequence::BinarySequence;
pub use trainer::{run_training, TrainConfig, Trainer};
