//! Object-oriented spatio-temporal reasoning for video question answering.
//!
//! Videos are sets of tracked object sequences. An [`ostr::OstrUnit`]
//! summarizes each sequence with query-driven temporal attention, links the
//! summaries through a query-induced adjacency and refines them with a
//! skip-connected GCN. [`model::HostrModel`] stacks units over clips and the
//! whole video and decodes an answer.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the harness and the CLI.

pub mod encoders;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod ostr;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type HostrModel64 = model::HostrModel<f64>;
pub type HostrModel32 = model::HostrModel<f32>;
