//! The optimal allocation and its certificate.
//!
//! Dropping the constants `sum_i b_i2 + sum_j c_j d_j`, the allocation LP has
//! the dual
//!
//! ```text
//! minimize   D(alpha) = sum_i beta_i(alpha) - sum_j alpha_j d_j,   0 <= alpha_j <= p_j
//! beta_i(alpha) = max(0, max_j (lambda_j q_ij + alpha_j - b_i2))
//! ```
//!
//! `D` is convex and piecewise linear; `count_j(alpha) - d_j` is a
//! subgradient, where `count_j` is the number of impressions whose positive
//! maximum is attained by `j`. For any `alpha` the allocation rule induced by
//! `alpha` is primal feasible and `D(alpha) + constants` is an upper bound, so
//! every iterate carries its own optimality gap:
//!
//! ```text
//! gap(alpha) = sum_j alpha_j (count_j - d_j)^+ + (p_j - alpha_j) (d_j - count_j)^+
//! ```
//!
//! which is zero exactly when complementary slackness holds.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::allocator::Winner;
use crate::scenario::Scenario;

/// Default enumeration budget for [`brute_force_optimal`].
pub const DEFAULT_BRUTE_FORCE_BUDGET: u64 = 10_000_000;

/// Optimal bid shifts and the yield they induce.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DualSolution {
    /// `alpha*_j` in `[0, p_j]`.
    pub alpha: Vec<f64>,
    /// `beta*_i = max(0, max_j b_ij - b_i2)`.
    pub beta: Vec<f64>,
    /// `D(alpha*)`, without the constants.
    pub dual_objective: f64,
    /// Smallest upper bound on the optimal yield seen, constants included.
    pub upper_bound: f64,
    /// Yield of the allocation rule under `alpha*`.
    pub primal_yield: f64,
    /// `(upper_bound - primal_yield) / |primal_yield|`.
    pub gap: f64,
    pub iterations: usize,
    /// Whether `gap <= tol` was reached.
    pub converged: bool,
}

impl DualSolution {
    /// Dual point with `beta` derived from `alpha` (after clamping into the box).
    pub fn from_alpha(s: &Scenario, alpha: &[f64]) -> Self {
        let p = Prepared::new(s);
        let alpha = p.project(alpha);
        let beta = p.beta(&alpha);
        let e = p.evaluate(&alpha);
        DualSolution {
            alpha,
            beta,
            dual_objective: e.objective,
            upper_bound: e.upper,
            primal_yield: e.primal,
            gap: relative(e.upper - e.primal, e.primal),
            iterations: 0,
            converged: false,
        }
    }

    /// `D(alpha) + sum_i b_i2 + sum_j c_j d_j`.
    pub fn bound(&self, s: &Scenario) -> f64 {
        self.dual_objective + s.rtb_value() + s.contract_value()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("enumeration needs (m + 1)^n = {needed} assignments, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u64 },
}

fn relative(diff: f64, base: f64) -> f64 {
    let d = diff.max(0.0);
    if d == 0.0 {
        0.0
    } else {
        d / libm::fabs(base).max(1e-12)
    }
}

/// Dense bid table plus per-contract data.
struct Prepared {
    m: usize,
    n: usize,
    /// `lambda_j q_ij`, row-major by impression.
    value: Vec<f64>,
    price: Vec<f64>,
    demand: Vec<f64>,
    penalty: Vec<f64>,
    constant: f64,
}

struct Eval {
    objective: f64,
    upper: f64,
    primal: f64,
    counts: Vec<u64>,
    gap: f64,
}

impl Prepared {
    fn new(s: &Scenario) -> Self {
        let m = s.contracts.len();
        let n = s.impressions.len();
        let mut value = Vec::with_capacity(n * m);
        for imp in &s.impressions {
            for (j, c) in s.contracts.iter().enumerate() {
                value.push(c.quality_weight * imp.quality[j]);
            }
        }
        Prepared {
            m,
            n,
            value,
            price: s.impressions.iter().map(|i| i.rtb_second).collect(),
            demand: s.contracts.iter().map(|c| c.demand as f64).collect(),
            penalty: s.contracts.iter().map(|c| c.penalty).collect(),
            constant: s.rtb_value() + s.contract_value(),
        }
    }

    fn project(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|j| {
                let a = alpha.get(j).copied().unwrap_or(0.0);
                if a.is_nan() {
                    0.0
                } else {
                    a.clamp(0.0, self.penalty[j])
                }
            })
            .collect()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.value[i * self.m..(i + 1) * self.m]
    }

    /// Winning contract and its surplus over `b_i2`, if positive. Compares
    /// exactly like the allocator so both agree on boundary impressions.
    #[inline]
    fn winner(&self, i: usize, alpha: &[f64]) -> Option<(usize, f64)> {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (j, (w, a)) in self.row(i).iter().zip(alpha).enumerate() {
            let v = w + a;
            if v > best {
                best = v;
                arg = j;
            }
        }
        (best > self.price[i]).then(|| (arg, best - self.price[i]))
    }

    fn beta(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.winner(i, alpha).map_or(0.0, |(_, v)| v))
            .collect()
    }

    fn evaluate(&self, alpha: &[f64]) -> Eval {
        let mut counts = vec![0u64; self.m];
        let mut beta_sum = 0.0;
        for i in 0..self.n {
            if let Some((j, v)) = self.winner(i, alpha) {
                counts[j] += 1;
                beta_sum += v;
            }
        }
        let mut objective = beta_sum;
        let mut paid = 0.0;
        let mut penalties = 0.0;
        let mut gap = 0.0;
        for j in 0..self.m {
            let cnt = counts[j] as f64;
            objective -= alpha[j] * self.demand[j];
            paid += alpha[j] * cnt;
            let short = (self.demand[j] - cnt).max(0.0);
            penalties += self.penalty[j] * short;
            gap += alpha[j] * (cnt - self.demand[j]).max(0.0) + (self.penalty[j] - alpha[j]) * short;
        }
        Eval {
            objective,
            upper: self.constant + objective,
            primal: self.constant + beta_sum - paid - penalties,
            counts,
            gap,
        }
    }

    /// Exact minimization of `D` along each coordinate in turn, landing in the
    /// middle of each coordinate's optimal interval. Stops early once the
    /// point certifies itself within `tol`.
    fn polish(&self, alpha: &mut [f64], rounds: usize, tol: f64) {
        let mut top: Vec<Top2> = (0..self.n).map(|i| Top2::of(self.row(i), alpha)).collect();
        let mut thresholds = vec![0.0f64; self.n];
        for r in 0..rounds {
            let mut moved = 0.0f64;
            for j in 0..self.m {
                for (i, t) in thresholds.iter_mut().enumerate() {
                    *t = self.price[i].max(top[i].without(j)) - self.row(i)[j];
                }
                let next = self.coordinate_midpoint(j, &mut thresholds);
                moved = moved.max(libm::fabs(next - alpha[j]));
                if next != alpha[j] {
                    alpha[j] = next;
                    for (i, t) in top.iter_mut().enumerate() {
                        t.set(j, self.row(i)[j] + next, self.row(i), alpha);
                    }
                }
            }
            if moved <= 1e-13 {
                break;
            }
            if r % 5 == 4 {
                let e = self.evaluate(alpha);
                if relative(e.upper - e.primal, e.primal) <= tol {
                    break;
                }
            }
        }
    }

    fn coordinate_midpoint(&self, j: usize, thresholds: &mut [f64]) -> f64 {
        let p = self.penalty[j];
        let n = thresholds.len();
        let d = self.demand[j] as usize;
        if d > n {
            return p;
        }
        let lo = if d == 0 {
            f64::NEG_INFINITY
        } else {
            *thresholds.select_nth_unstable_by(d - 1, f64::total_cmp).1
        };
        let hi = if d >= n {
            f64::INFINITY
        } else if d == 0 {
            *thresholds.select_nth_unstable_by(0, f64::total_cmp).1
        } else {
            // after the selection above, everything right of d - 1 is >= lo
            thresholds[d..].iter().copied().fold(f64::INFINITY, f64::min)
        };
        let a = lo.max(0.0);
        let b = hi.min(p);
        if a <= b {
            0.5 * (a + b)
        } else if lo > p {
            p
        } else {
            0.0
        }
    }
}

/// The two largest `w_k + alpha_k` of one impression's row and where they sit.
#[derive(Clone, Copy)]
struct Top2 {
    first: f64,
    at: usize,
    second: f64,
    second_at: usize,
}

impl Top2 {
    fn of(row: &[f64], alpha: &[f64]) -> Self {
        let mut t = Top2 {
            first: f64::NEG_INFINITY,
            at: usize::MAX,
            second: f64::NEG_INFINITY,
            second_at: usize::MAX,
        };
        for (k, (w, a)) in row.iter().zip(alpha).enumerate() {
            t.insert(k, w + a);
        }
        t
    }

    fn insert(&mut self, k: usize, v: f64) {
        if v > self.first {
            (self.second, self.second_at) = (self.first, self.at);
            (self.first, self.at) = (v, k);
        } else if v > self.second {
            (self.second, self.second_at) = (v, k);
        }
    }

    /// Largest value over every contract but `j`.
    fn without(&self, j: usize) -> f64 {
        if self.at == j {
            self.second
        } else {
            self.first
        }
    }

    /// Contract `j`'s value became `v`.
    fn set(&mut self, j: usize, v: f64, row: &[f64], alpha: &[f64]) {
        if self.at == j {
            if v >= self.second {
                self.first = v;
            } else {
                *self = Top2::of(row, alpha);
            }
        } else if self.second_at == j {
            if v >= self.second {
                self.second = v;
                if v > self.first {
                    core::mem::swap(&mut self.first, &mut self.second);
                    core::mem::swap(&mut self.at, &mut self.second_at);
                }
            } else {
                *self = Top2::of(row, alpha);
            }
        } else {
            self.insert(j, v);
        }
    }
}

/// Knobs for [`solve_dual_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualOptions {
    /// Target relative gap.
    pub tol: f64,
    pub max_iters: usize,
    /// Run coordinate polishing on the starting point and on the averaged
    /// iterate at iterations 16, 32, 64, ...
    pub polish: bool,
    /// Initial step as a fraction of `p_j`.
    pub step: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            tol: 1e-6,
            max_iters: 5000,
            polish: true,
            step: 0.5,
        }
    }
}

/// [`solve_dual_with`] using default options apart from `tol` and `max_iters`.
pub fn solve_dual(s: &Scenario, tol: f64, max_iters: usize) -> DualSolution {
    solve_dual_with(
        s,
        &DualOptions {
            tol,
            max_iters,
            ..DualOptions::default()
        },
    )
}

/// Solves the dual by projected subgradient descent with step
/// `step * p_j / sqrt(k)` scaled by the relative demand imbalance
/// `(count_j - d_j) / d_j`, weighted averaging of iterates and (optionally)
/// coordinate polishing of the average.
///
/// Stops once the certified relative gap is at most `tol` or after
/// `max_iters` iterations; in the latter case the best iterate is returned
/// with `converged == false`.
pub fn solve_dual_with(s: &Scenario, opts: &DualOptions) -> DualSolution {
    let p = Prepared::new(s);
    let m = p.m;
    let tol = opts.tol;

    let mut alpha: Vec<f64> = p.penalty.iter().map(|pj| 0.5 * pj).collect();
    let mut average = alpha.clone();
    let mut averaged = 0.0f64;

    let mut best_alpha = alpha.clone();
    let mut best = p.evaluate(&alpha);
    let mut upper = best.upper;
    let mut iterations = 0;

    // A point whose own bound certifies it within `tol` beats any point that
    // needs another point's bound, so the returned pair is itself optimal.
    let own_gap = |e: &Eval| relative(e.upper - e.primal, e.primal);
    let better = |e: &Eval, best: &Eval| {
        let (ge, gb) = (own_gap(e), own_gap(best));
        match (ge <= tol, gb <= tol) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => ge < gb || (ge == gb && e.primal > best.primal),
            (false, false) => e.primal > best.primal || (e.primal == best.primal && e.gap < best.gap),
        }
    };
    let consider = |cand: &[f64], e: Eval, best_alpha: &mut Vec<f64>, best: &mut Eval, upper: &mut f64| {
        *upper = upper.min(e.upper);
        if better(&e, best) {
            best_alpha.clear();
            best_alpha.extend_from_slice(cand);
            *best = e;
        }
    };

    let done = |upper: f64, best: &Eval| relative(upper - best.primal, best.primal) <= tol || best.gap == 0.0;

    if opts.polish && m > 0 && !done(upper, &best) {
        let mut polished = alpha.clone();
        p.polish(&mut polished, 50, tol);
        let e = p.evaluate(&polished);
        consider(&polished, e, &mut best_alpha, &mut best, &mut upper);
    }

    let mut next_check = 16;
    while m > 0 && iterations < opts.max_iters && !done(upper, &best) {
        iterations += 1;
        let k = iterations as f64;
        let e = p.evaluate(&alpha);
        let step = opts.step / libm::sqrt(k);
        let counts = e.counts.clone();
        consider(&alpha, e, &mut best_alpha, &mut best, &mut upper);
        for j in 0..m {
            let g = (counts[j] as f64 - p.demand[j]) / p.demand[j].max(1.0);
            alpha[j] = (alpha[j] - step * p.penalty[j] * g).clamp(0.0, p.penalty[j]);
        }
        // weights grow with k so early iterates fade out
        averaged += k;
        for j in 0..m {
            average[j] += (alpha[j] - average[j]) * k / averaged;
        }
        if iterations == next_check || iterations == opts.max_iters {
            next_check *= 2;
            let e = p.evaluate(&average);
            consider(&average, e, &mut best_alpha, &mut best, &mut upper);
            if opts.polish {
                let mut polished = average.clone();
                p.polish(&mut polished, 50, tol);
                let e = p.evaluate(&polished);
                consider(&polished, e, &mut best_alpha, &mut best, &mut upper);
            }
        }
    }

    let converged = done(upper, &best);
    let beta = p.beta(&best_alpha);
    DualSolution {
        alpha: best_alpha,
        beta,
        dual_objective: best.objective,
        upper_bound: upper,
        primal_yield: best.primal,
        gap: relative(upper - best.primal, best.primal),
        iterations,
        converged,
    }
}

/// The exact integral optimum, by enumerating every assignment of each
/// impression to RTB or a contract.
#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub assignment: Vec<Winner>,
    pub total: f64,
}

/// Exhaustive search over all `(m + 1)^n` assignments.
pub fn brute_force_optimal(s: &Scenario, budget: u64) -> Result<BruteForce, OracleError> {
    let m = s.contracts.len();
    let n = s.impressions.len();
    let needed = (m as u128 + 1).checked_pow(n as u32).unwrap_or(u128::MAX);
    if needed > budget as u128 {
        return Err(OracleError::BudgetExceeded { needed, budget });
    }
    let mut search = Search {
        s,
        value: s
            .impressions
            .iter()
            .map(|imp| {
                let mut v = Vec::with_capacity(m + 1);
                v.push(imp.rtb_second);
                v.extend(s.contracts.iter().enumerate().map(|(j, c)| c.quality_weight * imp.quality[j]));
                v
            })
            .collect(),
        delivered: vec![0; m],
        current: vec![0; n],
        best: vec![0; n],
        best_value: f64::NEG_INFINITY,
    };
    search.descend(0, 0.0);
    let assignment = search
        .best
        .iter()
        .map(|&o| if o == 0 { Winner::Rtb } else { Winner::Contract(o - 1) })
        .collect();
    Ok(BruteForce {
        assignment,
        total: search.best_value,
    })
}

struct Search<'a> {
    s: &'a Scenario,
    /// Per impression: option 0 is RTB, option `j + 1` is contract `j`.
    value: Vec<Vec<f64>>,
    delivered: Vec<u64>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
}

impl Search<'_> {
    fn descend(&mut self, i: usize, partial: f64) {
        if i == self.current.len() {
            let mut total = partial;
            for (c, &d) in self.s.contracts.iter().zip(&self.delivered) {
                total += c.value() - c.penalty * c.demand.saturating_sub(d) as f64;
            }
            if total > self.best_value {
                self.best_value = total;
                self.best.copy_from_slice(&self.current);
            }
            return;
        }
        for o in 0..self.value[i].len() {
            let v = self.value[i][o];
            if o > 0 {
                self.delivered[o - 1] += 1;
            }
            self.current[i] = o;
            self.descend(i + 1, partial + v);
            if o > 0 {
                self.delivered[o - 1] -= 1;
            }
        }
    }
}

/// Complementary-slackness check of a primal assignment against a dual point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlacknessReport {
    /// Conditions checked.
    pub checked: usize,
    pub violations: usize,
    /// Largest violation magnitude.
    pub worst: f64,
    /// `x_ij (b_ij - b_i2 - beta_i) = 0` for allocated pairs.
    pub allocated: usize,
    /// `(sum_j x_ij - 1) beta_i = 0` for RTB impressions.
    pub unallocated: usize,
    /// `alpha_j (sum_i x_ij + y_j - d_j) = 0`.
    pub demand: usize,
    /// `y_j (p_j - alpha_j) = 0`.
    pub shortfall: usize,
    /// Dual constraints violated by more than the tolerance.
    pub dual_infeasible: usize,
}

impl SlacknessReport {
    pub fn certified(&self) -> bool {
        self.violations == 0 && self.dual_infeasible == 0
    }

    fn record(&mut self, magnitude: f64, tol: f64) -> bool {
        self.checked += 1;
        let bad = magnitude > tol;
        if bad {
            self.violations += 1;
        }
        self.worst = self.worst.max(magnitude);
        bad
    }
}

/// Checks every complementary-slackness condition of the allocation LP for
/// `assignment` and `dual`, with `y_j = max(0, d_j - delivered_j)`.
pub fn verify_complementary_slackness(
    s: &Scenario,
    assignment: &[Winner],
    dual: &DualSolution,
    tol: f64,
) -> SlacknessReport {
    let mut r = SlacknessReport::default();
    let mut delivered = vec![0u64; s.contracts.len()];
    for (i, (imp, w)) in s.impressions.iter().zip(assignment).enumerate() {
        let beta = dual.beta[i];
        if beta < -tol {
            r.dual_infeasible += 1;
        }
        for (j, c) in s.contracts.iter().enumerate() {
            let b = c.quality_weight * imp.quality[j] + dual.alpha[j];
            if b - imp.rtb_second - beta > tol {
                r.dual_infeasible += 1;
            }
        }
        match *w {
            Winner::Contract(j) => {
                delivered[j] += 1;
                let b = s.contracts[j].quality_weight * imp.quality[j] + dual.alpha[j];
                if r.record(libm::fabs(b - imp.rtb_second - beta), tol) {
                    r.allocated += 1;
                }
            }
            Winner::Rtb => {
                if r.record(libm::fabs(beta), tol) {
                    r.unallocated += 1;
                }
            }
        }
    }
    for (j, c) in s.contracts.iter().enumerate() {
        let a = dual.alpha[j];
        if a < -tol || a > c.penalty + tol {
            r.dual_infeasible += 1;
        }
        let excess = delivered[j].saturating_sub(c.demand) as f64;
        let short = c.demand.saturating_sub(delivered[j]) as f64;
        if r.record(libm::fabs(a * excess), tol) {
            r.demand += 1;
        }
        if r.record(libm::fabs(short * (c.penalty - a)), tol) {
            r.shortfall += 1;
        }
    }
    r
}

/// `R*` for the `R/R*` metric: the brute-force optimum when it fits in
/// `budget`, otherwise the dual upper bound from [`solve_dual`].
pub fn reference_yield(s: &Scenario, tol: f64, max_iters: usize, budget: u64) -> f64 {
    match brute_force_optimal(s, budget) {
        Ok(b) => b.total,
        Err(_) => solve_dual(s, tol, max_iters).upper_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::run_fixed;
    use crate::scenario::{Contract, Impression};
    use alloc::vec::Vec;

    fn contract(id: u32, demand: u64, c: f64, p: f64, lambda: f64) -> Contract {
        Contract {
            id,
            demand,
            unit_price: c,
            penalty: p,
            quality_weight: lambda,
            alpha_init: 0.0,
        }
    }

    fn imp(id: u64, b2: f64, quality: Vec<f64>) -> Impression {
        Impression {
            id,
            step: 1,
            rtb_first: b2,
            rtb_second: b2,
            quality,
        }
    }

    #[test]
    fn top_two_tracks_row_maxima_through_updates() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for m in 1..6 {
            let row: Vec<f64> = (0..m).map(|_| rng.random_range(0..4) as f64).collect();
            let mut alpha: Vec<f64> = (0..m).map(|_| rng.random_range(0..3) as f64).collect();
            let mut top = Top2::of(&row, &alpha);
            for _ in 0..200 {
                let j = rng.random_range(0..m);
                alpha[j] = rng.random_range(0..3) as f64;
                top.set(j, row[j] + alpha[j], &row, &alpha);
                for k in 0..m {
                    let naive = (0..m)
                        .filter(|&i| i != k)
                        .map(|i| row[i] + alpha[i])
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(top.without(k), naive);
                }
            }
        }
    }

    fn two_price() -> Scenario {
        Scenario::new(
            vec![contract(1, 1, 1.0, 1.0, 0.0)],
            vec![imp(1, 0.2, vec![0.5]), imp(2, 0.8, vec![0.5])],
            1,
        )
        .unwrap()
    }

    #[test]
    fn single_contract_takes_cheap_impression() {
        let s = two_price();
        let bf = brute_force_optimal(&s, 100).unwrap();
        assert!((bf.total - 1.8).abs() < 1e-12);
        let d = solve_dual(&s, 1e-9, 1000);
        assert!(d.alpha[0] > 0.2 && d.alpha[0] <= 0.8, "alpha = {}", d.alpha[0]);
        assert!((d.primal_yield - 1.8).abs() < 1e-12);
        let (r, winners) = run_fixed(&s, &d.alpha);
        assert_eq!(winners, vec![Winner::Contract(0), Winner::Rtb]);
        assert!((r.total - 1.8).abs() < 1e-12);
    }

    #[test]
    fn no_impressions_pays_full_penalties() {
        let s = Scenario::new(vec![contract(1, 3, 2.0, 0.5, 1.0), contract(2, 1, 1.0, 2.0, 1.0)], vec![], 1).unwrap();
        let bf = brute_force_optimal(&s, 10).unwrap();
        assert!((bf.total - ((2.0 - 0.5) * 3.0 + (1.0 - 2.0))).abs() < 1e-12);
        let r = verify_complementary_slackness(&s, &[], &solve_dual(&s, 1e-9, 10), 1e-9);
        // with no supply, alpha = p is optimal and leaves nothing to violate
        assert!(r.certified(), "{r:?}");
    }

    #[test]
    fn dominated_contract_loses_to_rtb() {
        // lambda q + p = 0.3 + 0.5 < 1
        let s = Scenario::new(vec![contract(1, 1, 2.0, 0.5, 1.0)], vec![imp(1, 1.0, vec![0.3])], 1).unwrap();
        let bf = brute_force_optimal(&s, 10).unwrap();
        assert_eq!(bf.assignment, vec![Winner::Rtb]);
        assert!((bf.total - (2.0 - 0.5 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let s = two_price();
        assert_eq!(
            brute_force_optimal(&s, 3),
            Err(OracleError::BudgetExceeded { needed: 4, budget: 3 })
        );
    }

    #[test]
    fn empty_scenario_is_vacuously_certified() {
        let s = Scenario::new(vec![], vec![], 1).unwrap();
        let d = solve_dual(&s, 1e-6, 10);
        let r = verify_complementary_slackness(&s, &[], &d, 1e-6);
        assert!(r.certified());
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn zero_alpha_with_oversupply_demand() {
        // demand already covered by high-quality impressions: alpha should sit at 0
        let s = Scenario::new(
            vec![contract(1, 1, 1.0, 1.0, 10.0)],
            vec![imp(1, 0.1, vec![1.0]), imp(2, 0.1, vec![1.0])],
            1,
        )
        .unwrap();
        let d = solve_dual(&s, 1e-9, 100);
        assert_eq!(d.alpha, vec![0.0]);
        assert!((d.primal_yield - (1.0 + 20.0)).abs() < 1e-12);
    }

    #[test]
    fn perturbed_alpha_breaks_slackness() {
        let s = two_price();
        let d = solve_dual(&s, 1e-9, 1000);
        let (_, w) = run_fixed(&s, &d.alpha);
        assert!(verify_complementary_slackness(&s, &w, &d, 1e-6).certified());
        let moved = DualSolution::from_alpha(&s, &[d.alpha[0] + 0.5]);
        let (_, w) = run_fixed(&s, &moved.alpha);
        let r = verify_complementary_slackness(&s, &w, &moved, 1e-6);
        assert!(r.violations >= 1, "{r:?}");
        assert!(r.demand >= 1);
    }

    #[test]
    fn gap_formula_matches_bound_minus_primal() {
        let s = two_price();
        for a in [0.0, 0.1, 0.2, 0.5, 0.8, 0.9, 1.0] {
            let d = DualSolution::from_alpha(&s, &[a]);
            let (r, _) = run_fixed(&s, &d.alpha);
            assert!((r.total - d.primal_yield).abs() < 1e-12);
            assert!(d.bound(&s) >= 1.8 - 1e-12);
        }
    }
}
