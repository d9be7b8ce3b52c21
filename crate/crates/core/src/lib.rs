//! Online selective offloading of analytics tasks from resource-constrained
//! devices to a shared cloudlet.
//!
//! Devices classify every task locally and forward it to the cloudlet only
//! when the predicted accuracy improvement beats the current resource prices.
//! Prices are Lagrange multipliers for the per-device average power budgets
//! and the cloudlet's average processing capacity, updated once per slot by a
//! projected dual subgradient step over the running empirical state
//! distribution.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. It provides:
//!
//! * [`model`]: state grids, budgets, policies, multipliers and the exact
//!   objective/constraint functions of the offloading program.
//! * [`process`]: seeded generators for costs, gains and task arrivals,
//!   the transmit-power curve and the delay model.
//! * [`onalgo`]: the per-slot threshold rule, dual updates and step schedules.
//! * [`baselines`]: accuracy-threshold, resource-consumption and greedy
//!   always-offload comparison policies.
//! * [`oracle`]: the offline benchmark solver, a brute-force cross-check, and
//!   the evaluator that checks the regret/violation guarantees on a run.
//! * [`sim`]: the slotted simulation engine shared by the in-process and the
//!   distributed execution modes.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod baselines;
pub mod error;
pub mod model;
pub mod onalgo;
pub mod oracle;
pub mod process;
pub mod sim;

pub use error::{Error, Result};
