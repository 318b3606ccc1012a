//! Pseudo-spectral simulation and verification toolkit for the stochastic
//! tamed chemotaxis-Navier-Stokes system on a periodic box.

pub mod spectral;
pub mod model;
pub mod noise;
pub mod diagnostics;
pub mod integrator;
pub mod initial;
pub mod config;
pub mod harness;
pub mod output;
pub mod verify;

pub use config::{parse_config, ConfigError, Experiment, GridSpec, SimConfig, VariantKind};
pub use diagnostics::{DiagnosticsContext, DiagnosticsRecord, FloorPolicy};
pub use harness::{Axis, Checkpoint, EnsembleReport, HarnessError, Perturbation, RefinementReport, TwinRunReport};
pub use initial::InitialCondition;
pub use integrator::{RunOptions, SchemeConfig, StepError, Stepper, TerminalStatus, Trajectory, Variant};
pub use model::{ModelParams, SystemState};
pub use noise::{BrownianPath, NoiseKind, NoiseSpec};
pub use spectral::{DealiasRule, ScalarField, SobolevIndex, TorusGrid, VelocityField};
