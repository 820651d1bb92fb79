//! Multi-arm torque control over a simulated rigid-body plant.
//!
//! The crate is organised bottom-up: [`model`], [`kinematics`] and
//! [`dynamics`] describe the arm; [`controllet`] holds the torque laws;
//! [`manager`] schedules controllets at 1 kHz; [`plant`] integrates the arms
//! and their contacts; [`metrics`] and [`sysid`] analyse recorded traces;
//! [`scenario`] wires everything into runnable tasks and benchmarks.

// `!(x >= lo)` is the NaN-rejecting form used by every range check, and
// index loops walk several per-joint arrays in step.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bus;
pub mod controllet;
pub mod dynamics;
pub mod error;
pub mod kinematics;
pub mod manager;
pub mod math;
pub mod metrics;
pub mod model;
pub mod plant;
pub mod scenario;
pub mod state;
pub mod sysid;
pub mod trace;

pub use dynamics::{dynamics, manipulability, DynamicsTerms, Manipulability};
pub use error::{Error, Result};
pub use kinematics::{forward_kinematics, jacobian, CartesianState, ChainFrames};
pub use math::{JointVector, Pose, Wrench, MAX_DOF};
pub use model::RobotModel;
pub use state::JointState;
