//! Convolutional, attentional and message-passing graph neural network layers
//! inside a Graph WaveNet forecasting backbone, plus the RMSG synthetic
//! node-interaction benchmark and a traffic forecasting pipeline.

pub mod backbone;
pub mod checks;
pub mod cli;
pub mod error;
pub mod tensorgrad;

pub use error::{Error, Result};
pub mod graphs;
pub mod layers;
pub mod rmsg;
pub mod rng;
pub mod traffic;
