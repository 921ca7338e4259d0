//! A foveated retina agent that discovers its own sensor structure.
//!
//! The agent moves a 7×7 grid of receptive fields over a 2D world with
//! eight one-field saccades. Each field sees its patch through a scrambled
//! encoder and a learned prototype codebook. Random exploration fills a
//! block-structured table of transition counts, from which the agent
//! derives conditional predictions, normalized mutual information between
//! fields, and finally a saccade policy for visual search.

pub mod codebook;
pub mod encoding;
pub mod environment;
pub mod error;
pub mod explorer;
pub mod geometry;
pub mod information;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod search;
pub mod seeds;

pub use codebook::PrototypeCodebook;
pub use encoding::{EncoderBank, SensoryVector};
pub use environment::{AgentPose, EnvKind, Environment, SquaresParams};
pub use error::{Error, Result};
pub use explorer::{CountingSink, TransitionRecord, TransitionSink};
pub use geometry::{GeometryConfig, MotorCommand, ReceptiveField, RetinaGeometry};
pub use information::MiTensor;
pub use model::{CountStore, PredictiveModel};
pub use pipeline::ExperimentConfig;
