//! Multivariate recurrent forecasting of epidemic growth curves.
//!
//! Daily counts (confirmed, deaths, recovered) plus coordinates are min-max scaled,
//! fed through a stacked LSTM or vanilla RNN, and mapped by a sigmoid linear head to a
//! 100-day daily prediction that is accumulated into a cumulative curve.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod linalg;
pub mod nn;
pub mod plot;
pub mod synthetic;
pub mod train;

pub use dataio::{FeatureScaler, RegionSeries, WindowPair};
pub use error::{Error, Result};
pub use eval::TrialSet;
pub use forecast::Continuation;
pub use linalg::Matrix;
pub use nn::{CellKind, ModelConfig, NetworkParams};
pub use train::{AdamState, TrainReport};
