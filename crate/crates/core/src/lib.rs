//! Target speaker extraction with a dual-path transformer separator conditioned
//! on a pretrained BLSTM speaker embedder.
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

pub mod autodiff;
pub mod checkpoint;
pub mod embedder;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod signal;
pub mod tensor;
pub mod training;

pub use embedder::{Embedder, EmbedderConfig, SpeakerEmbedding};
pub use error::{Error, Result};
pub use model::{Exformer, ExformerConfig, FusionMode};
pub use signal::{Corpus, TrainItem, Waveform};
pub use training::{Stage, TrainConfig, Trainer};

pub type Exformer32 = model::Exformer<f32>;
pub type Exformer64 = model::Exformer<f64>;
pub type Embedder32 = embedder::Embedder<f32>;
pub type Embedder64 = embedder::Embedder<f64>;
pub type Trainer32 = training::Trainer<f32>;
pub type Trainer64 = training::Trainer<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
