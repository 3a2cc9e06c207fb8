//! Learning sparse correlated dephasing noise from random GHZ-state Ramsey
//! experiments.
//!
//! The crate is organized around the measurement pipeline:
//!
//! * [`noise_model`] holds the correlation matrix `C = V + iT`, the Lamb-shift
//!   matrix `R`, and the closed-form coherence dynamics they induce.
//! * [`spectroscopy`] simulates shot-by-shot Ramsey experiments and turns the
//!   counts back into decay rates, including the adaptive evolution-time
//!   chooser.
//! * [`sensing`] draws random probes, realizes the sensing operator and runs
//!   whole measurement campaigns.
//! * [`optim`] is the numerical kernel: proximal maps, LASSO, constrained
//!   ℓ1 minimization and a Jacobi eigensolver.
//! * [`recovery`] turns campaigns into correlation-matrix estimates.
//! * [`spam`] simulates state-preparation and measurement errors on small
//!   registers with exact density matrices.
//! * [`experiments`] drives the sweeps that the command-line tool exposes.

// `!(x > 0.0)` is used on purpose so NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod noise_model;
pub mod optim;
pub mod recovery;
pub mod rng;
pub mod sensing;
pub mod spam;
pub mod spectroscopy;
pub mod stats;

pub use error::{Error, Result};
pub use noise_model::{NoiseModel, SparsityProfile, ValidationReport};
pub use optim::{LinearOperatorMatrix, SolverDiagnostics, SolverOptions};
pub use recovery::{NoiseBudget, RecoveryMode, RecoveryResult};
pub use sensing::{Campaign, NoiseSpec, Probe, SensingEnsemble};
pub use spectroscopy::{DecayEstimate, ShotCounts};
