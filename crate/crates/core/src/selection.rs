//! Budgeted 0-1 client selection.
//!
//! The objective is `sum_i w_i x_i` subject to `sum_i B_i x_i <= budget`, where
//! `w_i = (z_i - z_min) * delta^count_i`. It is solved exactly by a
//! depth-first branch-and-bound with a fractional-knapsack bound.
//!
//! Among equally good subsets the tie-break is: higher objective, then lower
//! cost, then the lexicographically smallest sorted id list. To make that rule
//! exact (and identical between the solver and the brute-force oracle),
//! comparisons are made on fixed-point integers: weights are rounded to a
//! power-of-two grid, bids are rounded up and the budget down, so every
//! integer-feasible subset is also feasible in real arithmetic. Reported
//! objective and cost are plain `f64` sums over the selected ids in id order.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::reputation::SelectionHistory;
use crate::rng::seeded_rng;

/// Largest problem the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    weights: Vec<f64>,
    bids: Vec<f64>,
    budget: f64,
}

impl SelectionProblem {
    pub fn new(weights: Vec<f64>, bids: Vec<f64>, budget: f64) -> Result<Self> {
        if weights.len() != bids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} bids",
                weights.len(),
                bids.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "selection weight must be finite and >= 0, got {w}"
            )));
        }
        validate_bids(&bids)?;
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::InvalidArgument(format!("budget must be > 0, got {budget}")));
        }
        Ok(Self {
            weights,
            bids,
            budget,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    fn result_for(&self, selected: Vec<usize>) -> SelectionResult {
        SelectionResult {
            objective: sum_over(&self.weights, &selected),
            cost: sum_over(&self.bids, &selected),
            selected,
        }
    }
}

fn validate_bids(bids: &[f64]) -> Result<()> {
    match bids.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
        Some(b) => Err(Error::InvalidArgument(format!("bids must be > 0, got {b}"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected client ids, ascending.
    pub selected: Vec<usize>,
    pub objective: f64,
    pub cost: f64,
}

impl SelectionResult {
    fn empty() -> Self {
        Self {
            selected: Vec::new(),
            objective: 0.0,
            cost: 0.0,
        }
    }
}

/// Sum of `values` over `ids`, accumulated in the order given.
fn sum_over(values: &[f64], ids: &[usize]) -> f64 {
    ids.iter().map(|&i| values[i]).sum()
}

/// `(z_i - z_min) * delta^count_i` with `count_i` taken from the history
/// window.
pub fn selection_weights(scores: &[f64], history: &SelectionHistory, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    if history.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for a history of {} clients",
            scores.len(),
            history.len()
        )));
    }
    let z_min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &z)| (z - z_min) * delta.powi(history.count(i) as i32))
        .collect())
}

/// Fixed-point image of a problem.
#[derive(Debug)]
struct Quantized {
    weights: Vec<u64>,
    bids: Vec<u64>,
    budget: u64,
}

/// Power-of-two scale that keeps `total * 2^k` below 2^60.
fn grid_exponent(total: f64) -> i32 {
    if total <= 0.0 {
        return 40;
    }
    (59 - total.log2().ceil() as i32).min(40)
}

impl Quantized {
    fn from_problem(p: &SelectionProblem) -> Self {
        let w_scale = 2f64.powi(grid_exponent(p.weights.iter().sum()));
        let bid_total: f64 = p.bids.iter().sum();
        let b_scale = 2f64.powi(grid_exponent(bid_total.max(p.budget)));
        Self {
            weights: p.weights.iter().map(|w| (w * w_scale).round() as u64).collect(),
            bids: p
                .bids
                .iter()
                .map(|b| ((b * b_scale).ceil() as u64).max(1))
                .collect(),
            budget: (p.budget * b_scale).floor() as u64,
        }
    }
}

/// True if id set `a` sorts before id set `b` (as ascending id lists).
fn lex_less(a: u64, b: u64) -> bool {
    let diff = a ^ b;
    if diff == 0 {
        return false;
    }
    let low = diff.trailing_zeros();
    let above = !((1u64 << low) | ((1u64 << low) - 1));
    if a & (1 << low) != 0 {
        // `a` continues with `low`; `b` continues with something larger or ends.
        b & above != 0
    } else {
        a & above == 0
    }
}

fn ids_of(mask: u64) -> Vec<usize> {
    (0..64).filter(|i| mask & (1 << i) != 0).collect()
}

/// Exhaustive oracle over all `2^n` subsets with the same tie-break as
/// [`solve_selection`].
pub fn brute_force_selection(p: &SelectionProblem) -> Result<SelectionResult> {
    let n = p.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge(format!(
            "brute force supports at most {BRUTE_FORCE_MAX} clients, got {n}"
        )));
    }
    let q = Quantized::from_problem(p);
    let (mut best_mask, mut best_w, mut best_c) = (0u64, 0u64, 0u64);
    let (mut mask, mut w, mut c) = (0u64, 0u64, 0u64);
    // Gray-code walk: one membership flip per step.
    for step in 1u64..(1u64 << n) {
        let bit = step.trailing_zeros() as usize;
        mask ^= 1 << bit;
        if mask & (1 << bit) != 0 {
            w += q.weights[bit];
            c += q.bids[bit];
        } else {
            w -= q.weights[bit];
            c -= q.bids[bit];
        }
        if c > q.budget {
            continue;
        }
        let better = w > best_w
            || (w == best_w && (c < best_c || (c == best_c && lex_less(mask, best_mask))));
        if better {
            best_mask = mask;
            best_w = w;
            best_c = c;
        }
    }
    Ok(p.result_for(ids_of(best_mask)))
}

struct Search<'a> {
    q: &'a Quantized,
    /// Positive-weight ids, ascending; the branching order.
    items: Vec<usize>,
    /// Indices into `items`, sorted by weight/bid ratio descending.
    by_ratio: Vec<usize>,
    chosen: Vec<usize>,
    best: Vec<usize>,
    best_w: u64,
    best_c: u64,
}

impl Search<'_> {
    /// Fractional-knapsack upper bound on the objective of any completion
    /// that only adds items at positions `>= pos`.
    fn upper_bound(&self, pos: usize, cur_w: u64, cur_c: u64) -> u64 {
        let mut cap = self.q.budget - cur_c;
        let mut ub = cur_w;
        for &k in self.by_ratio.iter().filter(|&&k| k >= pos) {
            let id = self.items[k];
            let (w, b) = (self.q.weights[id], self.q.bids[id]);
            if b <= cap {
                cap -= b;
                ub += w;
            } else {
                ub += ((cap as u128 * w as u128) / b as u128) as u64;
                break;
            }
        }
        ub
    }

    /// Fractional lower bound on the extra cost needed to gain `need` more
    /// objective from positions `>= pos`; `None` if unreachable.
    fn cost_lower_bound(&self, pos: usize, mut need: u64) -> Option<u64> {
        let mut cost = 0u64;
        for &k in self.by_ratio.iter().filter(|&&k| k >= pos) {
            if need == 0 {
                break;
            }
            let id = self.items[k];
            let (w, b) = (self.q.weights[id], self.q.bids[id]);
            if w <= need {
                need -= w;
                cost += b;
            } else {
                cost += (need as u128 * b as u128).div_ceil(w as u128) as u64;
                need = 0;
            }
        }
        (need == 0).then_some(cost)
    }

    fn prune(&self, pos: usize, cur_w: u64, cur_c: u64) -> bool {
        let ub = self.upper_bound(pos, cur_w, cur_c);
        if ub < self.best_w {
            return true;
        }
        if ub == self.best_w {
            // Only an equal objective at strictly lower cost can still win:
            // leaves reached later in this id-ordered, include-first search
            // come later lexicographically.
            return match self.cost_lower_bound(pos, self.best_w - cur_w) {
                None => true,
                Some(lb) => cur_c + lb >= self.best_c,
            };
        }
        false
    }

    fn dfs(&mut self, pos: usize, cur_w: u64, cur_c: u64) {
        if pos == self.items.len() {
            if cur_w > self.best_w || (cur_w == self.best_w && cur_c < self.best_c) {
                self.best = self.chosen.clone();
                self.best_w = cur_w;
                self.best_c = cur_c;
            }
            return;
        }
        if self.prune(pos, cur_w, cur_c) {
            return;
        }
        let id = self.items[pos];
        let (w, b) = (self.q.weights[id], self.q.bids[id]);
        if cur_c + b <= self.q.budget {
            self.chosen.push(id);
            self.dfs(pos + 1, cur_w + w, cur_c + b);
            self.chosen.pop();
        }
        self.dfs(pos + 1, cur_w, cur_c);
    }
}

/// Exact solution of the budgeted selection problem.
///
/// Zero-weight clients are never part of the answer: they add cost without
/// adding objective, so the cost tie-break always drops them. An all-zero
/// problem therefore returns the empty set; see [`select_clients`] for the
/// bootstrap rule used by the simulator.
pub fn solve_selection(p: &SelectionProblem) -> SelectionResult {
    let q = Quantized::from_problem(p);
    let items: Vec<usize> = (0..p.len()).filter(|&i| q.weights[i] > 0).collect();
    let mut by_ratio: Vec<usize> = (0..items.len()).collect();
    by_ratio.sort_by(|&a, &b| {
        let (ia, ib) = (items[a], items[b]);
        // w_a / b_a > w_b / b_b  <=>  w_a * b_b > w_b * b_a
        let lhs = q.weights[ia] as u128 * q.bids[ib] as u128;
        let rhs = q.weights[ib] as u128 * q.bids[ia] as u128;
        rhs.cmp(&lhs).then(ia.cmp(&ib))
    });
    let mut search = Search {
        q: &q,
        items,
        by_ratio,
        chosen: Vec::new(),
        best: Vec::new(),
        best_w: 0,
        best_c: 0,
    };
    search.dfs(0, 0, 0);
    let best = std::mem::take(&mut search.best);
    p.result_for(best)
}

/// Selection used by the simulator: the exact solver, except that when every
/// weight is zero (nothing distinguishes the clients yet) it falls back to
/// [`baseline_random`] with `bootstrap_seed`.
pub fn select_clients(p: &SelectionProblem, bootstrap_seed: u64) -> Result<SelectionResult> {
    if p.weights.iter().all(|&w| w == 0.0) {
        let mut r = baseline_random(&p.bids, p.budget, bootstrap_seed)?;
        r.objective = 0.0;
        return Ok(r);
    }
    Ok(solve_selection(p))
}

fn budget_fill(candidates: &[usize], bids: &[f64], budget: f64, seed: u64) -> SelectionResult {
    let mut order = candidates.to_vec();
    order.shuffle(&mut seeded_rng(seed));
    let mut chosen: Vec<usize> = Vec::new();
    for i in order {
        let mut trial = chosen.clone();
        let at = trial.binary_search(&i).unwrap_or_else(|e| e);
        trial.insert(at, i);
        if sum_over(bids, &trial) <= budget {
            chosen = trial;
        }
    }
    SelectionResult {
        objective: 0.0,
        cost: sum_over(bids, &chosen),
        selected: chosen,
    }
}

fn validate_budget(budget: f64) -> Result<()> {
    if budget.is_finite() && budget >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("budget must be finite and >= 0, got {budget}")))
    }
}

/// Random budgeted selection: walk a seeded permutation of all clients and
/// admit each one whose bid still fits in the remaining budget.
pub fn baseline_random(bids: &[f64], budget: f64, seed: u64) -> Result<SelectionResult> {
    validate_bids(bids)?;
    validate_budget(budget)?;
    let all: Vec<usize> = (0..bids.len()).collect();
    Ok(budget_fill(&all, bids, budget, seed))
}

/// [`baseline_random`] restricted to the known-clean clients.
pub fn baseline_hq_random(
    clean_ids: &[usize],
    bids: &[f64],
    budget: f64,
    seed: u64,
) -> Result<SelectionResult> {
    if clean_ids.is_empty() {
        return Err(Error::InvalidArgument("no clean clients to select from".into()));
    }
    validate_bids(bids)?;
    validate_budget(budget)?;
    if let Some(&bad) = clean_ids.iter().find(|&&i| i >= bids.len()) {
        return Err(Error::UnknownClient(bad));
    }
    let mut ids = clean_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    Ok(budget_fill(&ids, bids, budget, seed))
}

/// Every client, with no budget applied.
pub fn baseline_all(bids: &[f64]) -> SelectionResult {
    let selected: Vec<usize> = (0..bids.len()).collect();
    SelectionResult {
        objective: 0.0,
        cost: sum_over(bids, &selected),
        selected,
    }
}

impl Default for SelectionResult {
    fn default() -> Self {
        Self::empty()
    }
}
