//! Semantic multiverse simulation: dense networks, channels, signaling games,
//! agent-level semantic multiverses, background synchronization, emergent
//! communication, symbolic extraction and the experiment harness.

pub mod channel;
pub mod data;
pub mod error;
pub mod harness;
pub mod lewis;
pub mod marl;
pub mod nn;
pub mod rng;
pub mod sm;
pub mod symbolic;
pub mod sync;

pub use channel::{DiscreteChannel, UniformQuantizer, VectorChannel};
pub use data::Dataset;
pub use error::{Error, Result};
pub use nn::{Activation, DenseNet};
pub use rng::{seeded, RngSeed, SimRng};
pub use sm::{AgentId, SemanticMultiverse, SemanticRepresentation};
pub use symbolic::SymbolicGraph;
