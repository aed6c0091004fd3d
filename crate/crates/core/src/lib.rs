//! Weighted max-min fair multigroup multicast beamforming under per-antenna
//! power constraints.
//!
//! The solver stack: [`fair`] bisects a semidefinite relaxation of the
//! per-antenna power minimization problem, [`randomization`] turns relaxed
//! covariances into feasible precoders, and [`robust`] does the same under
//! ellipsoidal channel uncertainty. [`experiment`] drives the numerical
//! studies and the command-line tool.

// Links the system OpenBLAS used by the conic backend.
use openblas_src as _;

pub mod conic;
pub mod error;
pub mod experiment;
pub mod fair;
pub mod gp;
pub mod linalg;
pub mod model;
pub mod randomization;
pub mod robust;

pub use error::{Error, Result};
