//! Graybox emulation and optimal control of a single qubit under classical
//! dephasing noise.
//!
//! The crate is organized bottom-up:
//!
//! * [`noise`] samples random telegraph and Ornstein-Uhlenbeck trajectories.
//! * [`pulses`] describes the Gaussian x/y control trains.
//! * [`simulator`] is the Monte-Carlo ground truth and dataset generator.
//! * [`whitebox`] holds the fixed, differentiable physics layers.
//! * [`blackbox`] is the transformer front-end and the composed graybox model.
//! * [`training`] fits the model to simulator datasets.
//! * [`control`] uses the trained model as an emulator for pulse optimization.

pub mod blackbox;
pub mod control;
pub mod error;
pub mod linalg;
pub mod noise;
pub mod pulses;
pub mod simulator;
pub mod training;
pub mod whitebox;

pub use blackbox::{ForwardOutput, ForwardTrace, Mode, ModelConfig, ModelParameters};
pub use error::{Error, Result};
pub use linalg::{Mat2, Mat4, Unitary2};
pub use noise::{NoiseKind, NoiseModel, RngSeed, TimeGrid, Trajectory};
pub use pulses::{NormalizedInput, PulseTrain, Waveforms};
pub use simulator::{DatasetRecord, SimConfig};
pub use whitebox::{ExpectationSet, Gate, ProcessMatrix, VOParams};
