//! Robust nonlinear MPC path tracking for a dynamic single-track vehicle model.
//!
//! The crate is organized around an offline/online split:
//!
//! * offline: [`contraction`] searches for a control contraction metric of the
//!   reduced uncertain vehicle model and derives the constants that
//!   parameterize a homothetic tube ([`tube`]),
//! * online: [`mpc`] runs a real-time-iteration SQP tracking controller whose
//!   prediction model optionally carries the scalar tube size as one extra
//!   state and tightens lateral-deviation and acceleration constraints by it,
//! * [`sim`] closes the loop against a perturbed plant to compare the nominal
//!   and robustified controllers.

pub mod config;
pub mod contraction;
pub mod mpc;
pub mod qp;
pub mod sim;
pub mod track;
pub mod tube;
pub mod uncertainty;
pub mod vehicle;

pub use config::AppConfig;
pub use track::{CurvilinearPose, TrackPath};
pub use vehicle::{ControlRates, VehicleParams, VehicleState};
