//! Uplink rate analysis and antenna-position optimization for fluid-antenna
//! multiuser MIMO receivers.
//!
//! The base station carries `M` antennas that can be placed anywhere inside a
//! square region. Users transmit over Rician channels, the receiver estimates
//! the channels from orthogonal pilots with a scalar LMMSE estimator and
//! detects with maximal-ratio combining. [`rate`] evaluates the resulting
//! use-and-then-forget rate bound in closed form (and by Monte Carlo), while
//! [`opt_ga`] and [`opt_grad`] move the antennas to maximize the worst user's
//! rate subject to a minimum spacing constraint.
//!
//! ```
//! use fas_optim::{rate, scenario::{upa_layout, Scenario}};
//!
//! let scenario = Scenario::reference(9, 3, 7).unwrap();
//! let layout = upa_layout(9, scenario.wavelength / 2.0, scenario.region_size).unwrap();
//! let report = rate::rate_report(&layout, &scenario);
//! assert!(report.min_rate > 0.0);
//! ```

pub mod channel;
pub mod error;
pub mod estimation;
#[cfg(feature = "harness")]
pub mod harness;
pub mod opt_ga;
pub mod opt_grad;
pub mod rate;
pub mod scenario;
pub mod stats;

pub use channel::AntennaLayout;
pub use error::{Error, Result};
pub use scenario::{HyperParams, Scenario, UserStats};
