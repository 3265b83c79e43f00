//! Continuous-time bipartite interaction embeddings trained with t-batching.
//!
//! The crate covers the whole pipeline: interaction logs ([`graphdata`]),
//! conflict-free batch plans ([`tbatcher`]), a small reverse-mode engine
//! ([`numgrad`]), the coupled recurrent embedding model ([`model`]), the three
//! batch losses ([`losses`]), the training loop ([`trainer`]), synthetic
//! network generators ([`synthgen`]) and ranking metrics plus experiment
//! runners ([`evaluation`]).

pub mod error;
pub mod evaluation;
pub mod graphdata;
pub mod losses;
pub mod model;
pub mod numgrad;
pub mod seed;
pub mod synthgen;
pub mod tbatcher;
pub mod trainer;

#[doc(hidden)]
pub mod cli;

pub use error::{Error, Result};
pub use graphdata::{DatasetStats, Interaction, InteractionLog};
pub use losses::{LossBreakdown, LossConfig, LossKind};
pub use model::Checkpoint;
pub use model::{EmbeddingStore, ModelParams};
pub use tbatcher::BatchPlan;
pub use trainer::{TrainConfig, TrainReport};
