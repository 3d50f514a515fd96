//! Functional simulator for a binary neural network accelerator built on a
//! content-addressable memory with a tunable Hamming-distance tolerance.
//!
//! A row of the CAM matches a query when at most `T` of its cells disagree
//! with it. With weights stored in rows and the binarized layer input as the
//! query, `T = floor((n - 1) / 2)` turns each row into a majority gate, which
//! is exactly a binary neuron. Batch-norm constants become extra always-match
//! or always-mismatch cells. The output layer is searched repeatedly under a
//! swept tolerance and classes vote by how often they match.
//!
//! Modules:
//! - [`cam`]: bit-packed CAM banks and arrays.
//! - [`analog`]: matchline discharge model and the knob-to-threshold map.
//! - [`bnn`]: binary models, batch-norm folding and training.
//! - [`mapper`]: placement of a model onto CAM pages.
//! - [`inference`]: the multi-pass sweep and accuracy reports.
//! - [`data_io`]: datasets and file formats.
//! - [`perf`]: cycle, throughput and efficiency model.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod analog;
pub mod bits;
pub mod bnn;
pub mod cam;
pub mod data_io;
pub mod error;
pub mod inference;
pub mod mapper;
pub mod perf;
pub mod scalar;

pub use analog::{AnalogKnobs, AnalogMode, AnalogModel, DischargeParams, HdProfile};
pub use bits::BitRow;
pub use bnn::{BinaryLayer, BinaryModel, BinaryVector, TrainConfig};
pub use cam::{CamArray, CamBank, CamGeometry, RowMatch};
pub use error::{Error, Result};
pub use inference::{AccuracyReport, KnobSource, SweepConfig, VoteRule};
pub use mapper::{map_model, MapConfig, MappedModel};
pub use scalar::Real;

pub type AnalogModelF32 = AnalogModel<f32>;
pub type AnalogModelF64 = AnalogModel<f64>;
pub type AnalogKnobsF64 = AnalogKnobs<f64>;
pub type TrainerF32 = bnn::Trainer<f32>;
pub type TrainerF64 = bnn::Trainer<f64>;
pub type InferenceF64<'m> = inference::Inference<'m, f64>;
pub type TimingConfigF64 = perf::TimingConfig<f64>;
pub type PowerConfigF64 = perf::PowerConfig<f64>;
