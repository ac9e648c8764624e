//! Spin Calogero-Moser poles of rational KP solutions: phase space, Lax
//! pair, hierarchy flows and Baker-Akhiezer checks.

pub mod error;
pub mod flows;
pub mod io;
pub mod kp;
pub mod lax;
pub mod oracle;
pub mod phase;
pub mod verify;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
pub use phase::{random_state, PhaseState, TimeVector, Tolerances};
