//! Numerical laboratory for one-hidden-layer ReLU networks trained by
//! gradient descent from small balanced initialisations on data labelled by
//! a single correlated teacher neuron.
//!
//! The crate is organised by subsystem:
//!
//! * [`dataset`]: generation, text I/O and eigen-analysis of training sets.
//! * [`yardstick`]: closed-form idealised neuron trajectories, an Euler
//!   oracle, and the δ/Δ measurements derived from them.
//! * [`trainer`]: balanced initialisation, loss, gradient and instrumented
//!   gradient descent.
//! * [`phases`]: checks of the alignment phase, the bundle region `S`,
//!   the saddle departure time and the PL inequality against a training log.
//! * [`interpolator`]: the dual-cone quantity `M`, rank-1 interpolators and
//!   the smaller-norm counterexample networks.
//! * [`sweep`]: seeded experiment sweeps with median/std aggregation.
//! * [`checks`]: the acceptance suite shared by the test target and the CLI.

pub mod checks;
pub mod dataset;
pub mod error;
pub mod interpolator;
pub mod linalg;
pub mod phases;
pub mod rng;
pub mod sweep;
pub mod textio;
pub mod trainer;
pub mod yardstick;

pub use dataset::{CorrelationMode, Dataset, EigenAnalysis, IndexSets, InitConfig, Scheme};
pub use error::{Error, Result};
pub use interpolator::{DualBasis, InterpolatorReport, MWitness};
pub use phases::{PhaseReport, SSetReport};
pub use sweep::{SweepConfig, SweepRow};
pub use trainer::{MetricsRecord, NetworkParams, StopReason, TrainLog, TrainOptions};
pub use yardstick::{Measurements, YardstickStage, YardstickTrace};
