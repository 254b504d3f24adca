//! Gait-phase classification and step detection for a crutch-mounted IMU.
//!
//! The pipeline runs raw samples through [`preprocess`] (gravity removal,
//! gyro low-pass, Euler angles), classifies sliding windows with a small
//! temporal convolutional network ([`tcn`]) and folds the per-frame phases
//! into scored step attempts with a debounced state machine ([`fsm`]).
//! [`synth`] generates labeled sessions, [`eval`] scores models, [`stream`]
//! replays sessions over TCP and runs the same pipeline online, and [`cli`]
//! drives it all from the `gaitctl` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod fsm;
pub mod preprocess;
pub mod quat;
pub mod stream;
pub mod synth;
pub mod tcn;
pub mod types;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use fsm::{decode_sequence, fsm_step, ground_truth_steps, FsmConfig, FsmState, StepEvent};
pub use preprocess::{preprocess_session, PreprocessConfig, Preprocessor};
pub use quat::Quaternion;
pub use tcn::{load_model, predict_session, save_model, train, TcnConfig, TcnModel, TrainConfig};
pub use types::{GaitPhase, MeasurementVector, RawImuSample, SessionRecording, StepInterval, WindowConfig};
