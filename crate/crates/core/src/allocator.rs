//! Bid-based allocation and the yield ledger.
//!
//! Contract `j` bids `lambda_j * q_ij + alpha_j` for impression `i`. The
//! impression goes to the highest contract bid if it strictly beats the RTB
//! second price `b_i2`, otherwise to RTB. Contract-vs-contract ties go to the
//! lowest contract id; a tie with `b_i2` goes to RTB.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::report::YieldReport;
use crate::scenario::{Contract, Impression, Scenario};

/// `alpha` clamped into `[0, p_j]`.
#[inline]
pub fn clamp_alpha(c: &Contract, alpha: f64) -> f64 {
    if alpha.is_nan() {
        0.0
    } else {
        alpha.clamp(0.0, c.penalty)
    }
}

/// `lambda_j * q_ij + alpha_j`, with `alpha_j` clamped into `[0, p_j]`.
#[inline]
pub fn contract_bid(c: &Contract, imp: &Impression, alpha: f64) -> f64 {
    c.quality_weight * imp.quality[c.id as usize - 1] + clamp_alpha(c, alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Winner {
    /// Index into the scenario's contract list (contract id minus one).
    Contract(usize),
    Rtb,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocationDecision {
    pub impression_id: u64,
    pub winner: Winner,
    /// Highest contract bid; `-inf` when there are no contracts.
    pub winning_bid: f64,
    pub rtb_second: f64,
}

/// Highest contract bid and its index, lowest index on ties.
#[inline]
pub(crate) fn best_bid(contracts: &[Contract], imp: &Impression, alphas: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in contracts.iter().enumerate() {
        let b = contract_bid(c, imp, alphas[j]);
        match best {
            Some((_, top)) if b <= top => {}
            _ => best = Some((j, b)),
        }
    }
    best
}

/// Applies the allocation rule to one impression.
///
/// # Panics
///
/// If `alphas` is shorter than `contracts`.
pub fn allocate(imp: &Impression, alphas: &[f64], contracts: &[Contract]) -> AllocationDecision {
    assert!(alphas.len() >= contracts.len(), "one alpha per contract");
    let (winner, winning_bid) = match best_bid(contracts, imp, alphas) {
        Some((j, b)) if b > imp.rtb_second => (Winner::Contract(j), b),
        Some((_, b)) => (Winner::Rtb, b),
        None => (Winner::Rtb, f64::NEG_INFINITY),
    };
    AllocationDecision {
        impression_id: imp.id,
        winner,
        winning_bid,
        rtb_second: imp.rtb_second,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("ledger already finalized")]
    Finalized,
}

/// Running totals for one allocation day.
#[derive(Clone, Debug, PartialEq)]
pub struct Ledger {
    pub delivered: Vec<u64>,
    pub quality_sum: Vec<f64>,
    pub rtb_revenue: f64,
    finalized: bool,
}

impl Ledger {
    pub fn new(contracts: usize) -> Self {
        Ledger {
            delivered: vec![0; contracts],
            quality_sum: vec![0.0; contracts],
            rtb_revenue: 0.0,
            finalized: false,
        }
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Books one impression to its winner.
    pub fn settle(&mut self, d: &AllocationDecision, imp: &Impression) -> Result<(), LedgerError> {
        self.settle_winner(d.winner, imp)
    }

    pub(crate) fn settle_winner(&mut self, winner: Winner, imp: &Impression) -> Result<(), LedgerError> {
        if self.finalized {
            return Err(LedgerError::Finalized);
        }
        match winner {
            Winner::Rtb => self.rtb_revenue += imp.rtb_second,
            Winner::Contract(j) => {
                self.delivered[j] += 1;
                self.quality_sum[j] += imp.quality[j];
            }
        }
        Ok(())
    }

    /// Closes the day. Settling afterwards is an error.
    pub fn finalize(&mut self, contracts: &[Contract]) -> YieldReport {
        self.finalized = true;
        self.report(contracts)
    }

    /// The report the ledger would produce if the day ended now.
    pub fn report(&self, contracts: &[Contract]) -> YieldReport {
        let shortfall: Vec<u64> = contracts
            .iter()
            .zip(&self.delivered)
            .map(|(c, &d)| c.demand.saturating_sub(d))
            .collect();
        let r_gc = contracts
            .iter()
            .zip(&shortfall)
            .map(|(c, &y)| c.value() - c.penalty * y as f64)
            .sum();
        let q_gc = contracts
            .iter()
            .zip(&self.quality_sum)
            .map(|(c, q)| c.quality_weight * q)
            .sum();
        YieldReport::new(r_gc, self.rtb_revenue, q_gc, self.delivered.clone(), shortfall)
    }
}

/// Runs a whole scenario with fixed bid shifts. Returns the report and the
/// winner of every impression.
pub fn run_fixed(s: &Scenario, alphas: &[f64]) -> (YieldReport, Vec<Winner>) {
    let mut ledger = Ledger::new(s.contracts.len());
    let mut winners = Vec::with_capacity(s.impressions.len());
    for imp in &s.impressions {
        let d = allocate(imp, alphas, &s.contracts);
        ledger.settle(&d, imp).expect("ledger is open");
        winners.push(d.winner);
    }
    (ledger.finalize(&s.contracts), winners)
}
