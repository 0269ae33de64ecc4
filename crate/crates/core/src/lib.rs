//! Optimal consumption, investment and healthcare under Epstein-Zin
//! preferences with controllable Gompertz mortality: closed forms, the
//! reduced consumption-rate ODE, endogenous mortality, Monte-Carlo checks of
//! the utility recursion and cohort calibration.

pub mod calibrate;
pub mod cli;
pub mod closed_form;
pub mod data_io;
pub mod error;
pub mod interp;
pub mod mortality;
pub mod ode;
pub mod params;
pub mod plot;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, Result};
