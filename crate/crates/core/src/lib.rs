//! Kinematics, Lagrangian dynamics and LQR control for a four-axis arm, with
//! precomputed gain tables that replace online Riccati solves by lookup.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod gain_table;
pub mod kinematics;
pub mod linearization;
pub mod riccati;
pub mod simulator;

mod jet;

pub use error::{Error, Result};
