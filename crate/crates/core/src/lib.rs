//! Gaussian-process compensated computed-torque control.
//!
//! The crate learns the torque discrepancy between an estimated and a true
//! manipulator model with exact GP regression, feeds the posterior mean (and
//! optionally its standard deviation as a diffusion term) forward in a
//! computed-torque law, and simulates the closed loop.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod gp;
pub mod sim;
pub mod training;

pub use dynamics::{JointState, ManipulatorModel, TwoLinkArm, WingModel};
pub use error::{Error, Result};
pub use gp::{Hyperparameters, MultiGp, Prediction, TrainingSet};
