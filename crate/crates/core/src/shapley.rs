//! Shapley contributions of the clients selected in a round.
//!
//! A coalition's value is the validation metric of the unweighted mean of
//! its members' uploaded parameters; the empty coalition takes a configured
//! convention value. Exact values come from one cached pass over all `2^m`
//! coalitions; a permutation-sampling estimator is provided as a cross-check.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{aggregate, evaluate, Dataset, Metric, ModelParams};
use crate::rng::seeded_rng;

/// Largest coalition the exact enumeration accepts.
pub const EXACT_MAX_PLAYERS: usize = 16;

/// A cooperative game over players `0..players()`, coalitions as bitmasks.
pub trait CoalitionGame: Sync {
    fn players(&self) -> usize;

    fn value(&self, coalition: u32) -> Result<f64>;
}

/// Game given as an explicit table of `2^m` coalition values.
#[derive(Debug, Clone)]
pub struct TabularGame {
    players: usize,
    values: Vec<f64>,
}

impl TabularGame {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.len().is_power_of_two() || values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "coalition table needs 2^m >= 2 entries, got {}",
                values.len()
            )));
        }
        let players = values.len().trailing_zeros() as usize;
        if players > EXACT_MAX_PLAYERS {
            return Err(Error::TooLarge(format!("{players} players")));
        }
        Ok(Self { players, values })
    }
}

impl CoalitionGame for TabularGame {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, coalition: u32) -> Result<f64> {
        Ok(self.values[coalition as usize])
    }
}

/// The round's coalition game: members' local models averaged without
/// weights and scored on the validation set.
#[derive(Debug, Clone)]
pub struct CoalitionContext<'a> {
    pub member_ids: Vec<usize>,
    pub updates: &'a [ModelParams],
    pub validation: &'a Dataset,
    pub empty_value: f64,
    pub metric: Metric,
}

impl<'a> CoalitionContext<'a> {
    pub fn new(
        member_ids: Vec<usize>,
        updates: &'a [ModelParams],
        validation: &'a Dataset,
        empty_value: f64,
    ) -> Result<Self> {
        if member_ids.is_empty() {
            return Err(Error::InvalidArgument("coalition has no members".into()));
        }
        if member_ids.len() != updates.len() {
            return Err(Error::InvalidArgument(format!(
                "{} members but {} updates",
                member_ids.len(),
                updates.len()
            )));
        }
        Ok(Self {
            member_ids,
            updates,
            validation,
            empty_value,
            metric: Metric::Accuracy,
        })
    }

    /// Value of the coalition formed by the given client ids.
    pub fn coalition_value(&self, subset: &[usize]) -> Result<f64> {
        let mut mask = 0u32;
        for id in subset {
            let pos = self
                .member_ids
                .iter()
                .position(|m| m == id)
                .ok_or(Error::UnknownClient(*id))?;
            mask |= 1 << pos;
        }
        self.value(mask)
    }
}

impl CoalitionGame for CoalitionContext<'_> {
    fn players(&self) -> usize {
        self.member_ids.len()
    }

    fn value(&self, coalition: u32) -> Result<f64> {
        if coalition == 0 {
            return Ok(self.empty_value);
        }
        let members: Vec<(&ModelParams, f64)> = (0..self.updates.len())
            .filter(|k| coalition & (1 << k) != 0)
            .map(|k| (&self.updates[k], 1.0))
            .collect();
        let averaged = aggregate(&members)?;
        evaluate(&averaged, self.validation, self.metric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyResult {
    /// One value per player, in player order.
    pub values: Vec<f64>,
    /// Value of the grand coalition.
    pub coalition_value: f64,
    pub empty_value: f64,
}

/// `C(n, k)` as a float; exact for the sizes used here.
fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley values.
///
/// Every coalition value is computed exactly once (in parallel, stored by
/// bitmask); the weighted marginal sums are then accumulated sequentially in
/// ascending mask order, so the result does not depend on thread scheduling.
pub fn exact_shapley<G: CoalitionGame + ?Sized>(game: &G) -> Result<ShapleyResult> {
    let m = game.players();
    if m == 0 {
        return Err(Error::InvalidArgument("game has no players".into()));
    }
    if m > EXACT_MAX_PLAYERS {
        return Err(Error::TooLarge(format!(
            "exact Shapley supports at most {EXACT_MAX_PLAYERS} players, got {m}"
        )));
    }
    let full = (1u32 << m) - 1;
    let table: Vec<f64> = (0..=full)
        .into_par_iter()
        .map(|mask| game.value(mask))
        .collect::<Result<_>>()?;

    // weight[s] = 1 / (m * C(m-1, s))
    let weight: Vec<f64> = (0..m)
        .map(|s| 1.0 / (m as f64 * binomial(m - 1, s)))
        .collect();

    let values = (0..m)
        .map(|i| {
            let bit = 1u32 << i;
            (0..=full)
                .filter(|mask| mask & bit == 0)
                .map(|mask| weight[mask.count_ones() as usize] * (table[(mask | bit) as usize] - table[mask as usize]))
                .sum()
        })
        .collect();

    Ok(ShapleyResult {
        values,
        coalition_value: table[full as usize],
        empty_value: table[0],
    })
}

/// Permutation-sampling estimate: mean marginal contribution over
/// `num_permutations` seeded uniform orderings of the players.
pub fn mc_shapley<G: CoalitionGame + ?Sized>(
    game: &G,
    num_permutations: usize,
    seed: u64,
) -> Result<ShapleyResult> {
    let m = game.players();
    if m == 0 {
        return Err(Error::InvalidArgument("game has no players".into()));
    }
    if m > 32 {
        return Err(Error::TooLarge(format!("{m} players exceed the 32-bit coalition mask")));
    }
    if num_permutations == 0 {
        return Err(Error::InvalidArgument("num_permutations must be >= 1".into()));
    }
    let mut cache: HashMap<u32, f64> = HashMap::new();
    let mut lookup = |mask: u32| -> Result<f64> {
        if let Some(&v) = cache.get(&mask) {
            return Ok(v);
        }
        let v = game.value(mask)?;
        cache.insert(mask, v);
        Ok(v)
    };

    let mut rng = seeded_rng(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut totals = vec![0.0; m];
    let empty = lookup(0)?;
    for _ in 0..num_permutations {
        order.shuffle(&mut rng);
        let mut mask = 0u32;
        let mut prev = empty;
        for &i in &order {
            mask |= 1 << i;
            let v = lookup(mask)?;
            totals[i] += v - prev;
            prev = v;
        }
    }
    let full_mask = if m == 32 { u32::MAX } else { (1u32 << m) - 1 };
    let coalition_value = lookup(full_mask)?;
    Ok(ShapleyResult {
        values: totals
            .into_iter()
            .map(|t| t / num_permutations as f64)
            .collect(),
        coalition_value,
        empty_value: empty,
    })
}
