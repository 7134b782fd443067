//! Quadrotor safety filtering with a non-cascaded exponential control
//! barrier function.
//!
//! Given any nominal thrust/torque command — from a cascaded tracking
//! controller, a constant aggressive-maneuver input, or anything else — a
//! small dense QP minimally modifies it so the vehicle's position provably
//! stays inside an axis-aligned box, including through inverted attitudes.
//! The crate bundles the rigid-body model, the barrier machinery, the QP
//! solver, a scenario simulator and a CLI for batch runs.

pub mod cbf;
pub mod config;
pub mod controllers;
pub mod dynamics;
pub mod qp;
pub mod report;
pub mod safety_filter;
pub mod sim;
pub mod svg;

pub use cbf::{CbfParams, ConstraintSet, VChain};
pub use controllers::{NominalController, PdGains, PdTrackingController, TrajectoryRef};
pub use dynamics::{ControlInput, QuadParams, QuadState, RotorSpeeds};
pub use qp::{QpProblem, QpSolution, SolveStatus};
pub use report::SafetyReport;
pub use safety_filter::{FilterDiagnostics, SafetyFilter};
pub use sim::{LogRecord, Scenario, SimConfig};
