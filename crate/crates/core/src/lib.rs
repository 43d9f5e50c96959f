//! Socially optimal mobility toolkit.
//!
//! The crate has two halves. The market half ([`network`], [`market`],
//! [`solver`], [`mechanism`]) assigns travelers to mobility services per
//! origin-destination subclass, prices the assignment with Clarke payments and
//! checks the resulting mechanism empirically. The [`coordination`] half
//! plans and simulates a finite decentralized team of vehicles sharing
//! observations with an n-step delay.

pub mod coordination;
pub mod market;
pub mod mechanism;
pub mod network;
pub mod solver;

#[cfg(test)]
mod testutil;

pub use market::{Assignment, MarketOutcome, PlannerConfig};
pub use mechanism::{PaymentMode, PaymentRule, PropertyReport};
pub use network::{load_scenario, Scenario, ServiceId, TravelerId};
pub use solver::{solve_all, solve_subclass, SolveResult, SolveStatus};
