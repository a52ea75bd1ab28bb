//! Weakly asymmetric Kawasaki lattice gases: microscopic dynamics, hydrodynamic
//! limits and dynamical large deviations.

pub mod check;
pub mod coarse;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod field;
pub mod gibbs;
pub mod io;
pub mod lattice;
pub mod ldp;
pub mod pde;
pub mod transport;

pub use error::{Error, Result};
