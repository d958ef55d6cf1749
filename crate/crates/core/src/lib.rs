//! A deterministic tournament-verified blockchain for coordinating
//! competing local-search nodes, with a discrete-event network simulator.
//!
//! The crate is layered bottom-up:
//!
//! - [`types`], [`encoding`], [`crypto`]: identifiers, canonical byte
//!   encoding, signatures and deterministic seed streams.
//! - [`config`]: domain parameters and the tournament timetable.
//! - [`ledger`]: fixed-supply token accounting and coin-age power.
//! - [`commit_reveal`], [`scoring`], [`tournament`]: the tournament
//!   mechanics.
//! - [`transactions`], [`state`]: the replicated state machine and blocks.
//! - [`searcher`], [`sim`], [`scenario`]: node logic, the simulator, and
//!   scenario files plus command front ends.

pub mod cli;
pub mod commit_reveal;
pub mod config;
pub mod crypto;
pub mod encoding;
pub mod ledger;
pub mod scenario;
pub mod scoring;
pub mod searcher;
pub mod sim;
pub mod state;
pub mod tournament;
pub mod transactions;
pub mod types;
