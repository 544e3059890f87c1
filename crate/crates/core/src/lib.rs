//! Day-ahead strategic bidding and real-time incentive balancing for a DER aggregator.
//!
//! The crate is organised bottom-up: [`solver`] supplies LP and MILP solves, [`market`]
//! and [`clearing`] model the wholesale auction, [`bilevel`] and [`dro`] compute the
//! aggregator's day-ahead position, and [`grid`] with [`rtmarket`] run the real-time
//! voltage-aware balancing loop. [`scenario`] handles sampling and trace input.

pub mod bilevel;
pub mod clearing;
pub mod dro;
pub mod exec;
pub mod grid;
pub mod market;
pub mod rtmarket;
pub mod scenario;
pub mod solver;
pub mod seed;

pub use exec::Execution;
