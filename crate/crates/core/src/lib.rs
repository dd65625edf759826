//! Impression allocation between guaranteed contracts and real-time bidding.
//!
//! Every guaranteed contract is treated as a virtual bidder whose bid for an
//! impression is `lambda_j * q_ij + alpha_j`. An impression goes to the highest
//! contract bidder when that bid strictly beats the RTB second price, and to
//! RTB otherwise. With the right bid shifts `alpha_j` this rule is optimal for
//! the publisher's yield (contract revenue net of penalties, plus RTB revenue,
//! plus quality-weighted contract value).
//!
//! The crate is `no_std` (it needs `alloc`). It contains:
//!
//! - [`scenario`]: data model and seeded synthetic generator with drift.
//! - [`allocator`]: the bid-based allocation rule and the yield ledger.
//! - [`oracle`]: dual solver for the optimal bid shifts, a brute-force
//!   enumerator and a complementary-slackness certifier.
//! - [`baselines`]: contract-first and PID pacing controllers.
//! - [`marlenv`]: the allocation day as an episodic multi-agent game.
//! - [`learner`]: MAPOLO (local critics on an episodic-max shaped reward) and
//!   a MADDPG baseline, over a small dense-network substrate.
//! - [`report`]: yield reports, multi-scenario summaries and curve rows.
//!
//! File formats, CSV output and the command-line driver live in the
//! companion `impalloc` crate.

#![no_std]

extern crate alloc;

pub mod allocator;
pub mod baselines;
pub mod learner;
pub mod marlenv;
pub mod oracle;
pub mod report;
pub mod scenario;

pub use allocator::{allocate, contract_bid, AllocationDecision, Ledger, Winner};
pub use oracle::{brute_force_optimal, solve_dual, DualSolution};
pub use report::YieldReport;
pub use scenario::{Contract, DriftSpec, GenSpec, Impression, Scenario};
