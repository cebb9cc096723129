//! Neural cellular automata at desk scale, plus the analysis stack used to
//! reconstruct their behavioural manifolds: trajectory recording, PCA,
//! dense and sparse autoencoders, Vietoris-Rips persistent homology and
//! latent-space vector fields.
//!
//! Everything is deterministic given the seeds that appear in the public
//! APIs: the engine draws its stochastic update masks from a counter-based
//! generator keyed on `(seed, step, row, col)`, so identical inputs produce
//! bit-identical outputs regardless of thread count.

pub mod autoencoder;
mod binio;
pub mod cloud;
pub mod engine;
pub mod error;
pub mod events;
pub mod field;
pub mod grid;
pub mod homology;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pca;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod sae;
pub mod synthetic;
pub mod trainer;
pub mod trajectory;

pub use binio::fnv1a64;
pub use cloud::{PointCloud, Provenance};
pub use error::{Error, Result};
pub use events::{Event, EventKind, EventScript};
pub use field::VectorField;
pub use grid::{ChannelMode, GridState};
pub use homology::{BettiReport, DistanceMatrix, PersistenceDiagram};
pub use model::{NcaModel, Padding};
pub use pca::PcaBasis;
pub use pipeline::{ExperimentConfig, Manifest};
pub use trajectory::Trajectory;
