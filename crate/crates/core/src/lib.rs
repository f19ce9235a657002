//! Cycle-consistent adversarial video summarization.
//!
//! A small reverse-mode autodiff engine carries the recurrent networks
//! (selector, VAE-LSTM generators, LSTM critics), the training objectives
//! and the alternating optimizer. Keyshot evaluation, dataset handling and
//! numeric checks of the information-theoretic identities sit alongside.

pub mod autodiff;
pub mod benchmark;
pub mod data;
pub mod error;
pub mod eval;
pub mod info_math;
pub mod losses;
pub mod model;
pub mod seq_models;
pub mod trainer;

pub use autodiff::{ParamStore, Precision, RmsProp, Tensor};
pub use data::{SynthSpec, VideoRecord};
pub use error::{Error, Result};
pub use eval::{Aggregation, EvalResult, ShotSegmentation, Split};
pub use losses::{LossBreakdown, LossWeights, Term, Variant};
pub use model::{CyclePass, CycleSumNets, Dims};
pub use trainer::{TrainConfig, TrainOutcome};
