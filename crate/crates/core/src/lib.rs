//! Controller design directly from experiment data.
//!
//! Input/state (or input/output) samples from one experiment are arranged in
//! Hankel matrices, which stand in for a plant model inside linear matrix
//! inequalities. Designs are then checked against model-based oracles
//! that never feed back into the design itself.
//!
//! ```no_run
//! use ddctl::{design, hankel::HankelBlock, lti_sim, Config};
//!
//! let sys = lti_sim::batch_reactor();
//! let u = lti_sim::generate_pe_input(2, 15, 5, 1.0, 7)?;
//! let traj = lti_sim::simulate_lti(&sys, &nalgebra::DVector::zeros(4), &u)?;
//! let data = HankelBlock::from_trajectory(&traj)?;
//! let report = design::stabilize_dt(&data, &Config::default())?;
//! println!("{}", report.status);
//! # Ok::<(), ddctl::Error>(())
//! ```

pub mod bench;
pub mod config;
pub mod data_repr;
pub mod design;
mod error;
pub mod hankel;
pub mod io;
pub mod linalg;
pub mod lmi;
pub mod lti_sim;
pub mod oracles;
pub mod output_feedback;

pub use config::Config;
pub use error::{Error, Result};
