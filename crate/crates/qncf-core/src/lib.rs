//! Desk-scale simulator and verification harness for a quantum pipeline that
//! finds negative-curvature directions of a low-rank symmetric Hessian.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! * [`hessian`] — problem instances (dense symmetric `d×d`, rank `r`),
//!   spectral ground truth and the classical reference decision procedure.
//! * [`statevector`] — a small real-amplitude register machine with the
//!   specific gates the circuits need (Hadamard, controlled-SWAP,
//!   reflections, measurement, post-selection).
//! * [`oracle`] — the KP-tree column-access data structure and the two
//!   state-preparation oracles built from it, plus the P/Q factor pair.
//! * [`sve`] — the singular-value-estimation channel model: eigenblock
//!   sampling with grid-snapped bounded noise and a configurable failure
//!   mode, plus estimate binning.
//! * [`ncf`] — the interference test for eigenvalue signs, proper-eigenvalue
//!   labelling, target-state generation, and the top-level decision routine.
//! * [`basis`] — reflection-based column-basis selection and the
//!   Gram–Schmidt row solves backing it.
//! * [`estimation`] — overlap estimators (Hadamard test, SWAP test) and the
//!   signed-overlap machinery for readout.
//! * [`readout`] — assembling and solving the Gram system that turns
//!   estimated overlaps into classical coordinates, with verification.
//! * [`backend`] — the two interchangeable execution strategies
//!   (`statevector`, `analytic`) behind one trait, selected by name.
//!
//! Everything stochastic draws from [`rng::RandomStream`], so a `(config,
//! seed)` pair reproduces a run bit-for-bit.

pub mod accept;
pub mod backend;
pub mod basis;
pub mod error;
pub mod estimation;
pub mod hessian;
pub mod linalg;
pub mod ncf;
pub mod oracle;
pub mod readout;
pub mod report;
pub mod rng;
pub mod statevector;
pub mod sve;

pub use error::{Error, Result};
