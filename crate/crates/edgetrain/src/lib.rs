//! From-scratch continual-learning training engine with latent-replay
//! rehearsal and AR1 Fisher-scaled updates over GEMM-lowered convolutional
//! layers, paired with analytical planners that map a network and an LR cut
//! onto memory footprint, learning latency and energy on a multi-core
//! extreme-edge target.
//!
//! The engine side ([`tensor`], [`layers`], [`trainer`], [`replay`]) runs
//! real desk-scale experiments; the planner side ([`memory`], [`perf`],
//! [`report`]) is closed-form and driven by a calibration profile. The
//! `examples/` directory has one runnable program per capability; the thin
//! `edgetrain` binary exposes the same operations as subcommands
//! (`plan`, `train`, `bench`, `footprint`, `energy`).

pub mod bench;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod layers;
pub mod memory;
pub mod net;
pub mod perf;
pub mod replay;
pub mod report;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use layers::{Layer, LayerKind, LayerSpec};
pub use net::{Network, NetworkDescriptor};
pub use tensor::{ConvGeometry, Tensor};
