//! Anchored LSTM ensembles with Student-t likelihood heads for EV power
//! estimation.
//!
//! The crate trains ensembles of small LSTM regressors whose members are
//! regularized toward independent Gaussian anchor draws (MAP training),
//! producing point predictions with separated aleatoric/epistemic
//! uncertainty and calibrated prediction intervals. Quantile-loss and
//! MC-dropout baselines share the same network and training machinery so the
//! four method variants can be compared under one calibration protocol.

pub mod adam;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod lstm;
pub mod objectives;
pub mod synth;
pub mod tdist;
pub mod tensor;
pub mod train;
pub mod uq;

pub use error::{Error, Result};
pub use tensor::Tensor;
