//! Simulation and analysis toolkit for entanglement swapping between two
//! independent sequential time-bin photon-pair sources over deployed fiber.
//!
//! The crate is organised bottom-up:
//!
//! * [`timebin`] exact amplitude algebra for pair and four-photon states,
//!   Franson interference and the Bell-basis decomposition.
//! * [`optics`] beam-splitter interference, unbalanced MZI analyzers and the
//!   click-pattern herald rule under detector dead time.
//! * [`channel`] fiber loss budgets, weather-driven delay drift and
//!   polarization wander.
//! * [`stabilization`] delay and polarization feedback loops.
//! * [`detection`] SNSPD click generation, TDC quantization and coincidence
//!   counting.
//! * [`mc`] the end-to-end Monte Carlo experiment and the analytic rate budget.
//! * [`analysis`] fringe fitting, entanglement verdicts and drift statistics.
//! * [`scenario`] the scenario file schema shared by the engine and the CLI.
//! * [`selftest`] reduced-statistics invariant checks.

pub mod analysis;
pub mod channel;
pub mod detection;
pub mod error;
pub mod io;
pub mod mc;
pub mod optics;
pub mod rng;
pub mod scenario;
pub mod selftest;
pub mod stabilization;
pub mod timebin;

pub use error::{Error, Result};

/// Version string embedded in output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
