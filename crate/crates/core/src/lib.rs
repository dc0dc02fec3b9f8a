//! Quasi-periodic invariant tori of the 1D nonlinear wave equation computed with a
//! renormalization-group iteration on truncated Fourier/mode space.

pub mod birkhoff;
pub mod cli;
pub mod config;
pub mod diophantine;
pub mod error;
pub mod grid;
pub mod jet;
pub mod mode_space;
pub mod nlw_model;
pub mod rg_core;
pub mod tangential_kam;
pub mod verification;

pub use error::{Error, Result};
