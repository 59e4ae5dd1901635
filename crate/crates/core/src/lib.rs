//! Two-phase online EV charging scheduler.
//!
//! Each slot, a cost-optimal load profile is planned over the look-ahead
//! window ([`qpsolver`]), then the slot's planned energy is distributed among
//! plugged-in EVs in earliest-deadline order ([`scheduler`]). Base load ahead
//! of the current slot comes from a [`forecast`]er; [`eval`] compares the
//! scheduler with cost-only and convenience-only baselines.

pub mod cli;
pub mod convenience;
pub mod domain;
pub mod eval;
pub mod forecast;
pub mod pricing;
pub mod qpsolver;
pub mod rng;
pub mod scheduler;
