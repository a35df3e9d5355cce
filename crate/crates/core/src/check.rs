//! Run-time invariant suite: drives every method over a seeded scenario and
//! checks the per-round contracts the simulator promises.

use std::fmt;
use std::sync::Arc;

use crate::config::{ExperimentConfig, Method};
use crate::error::Result;
use crate::experiment::{RoundOutcome, Scenario, Simulation};
use crate::output::records_to_csv;

/// Tolerance of the Shapley efficiency identity.
pub const EFFICIENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub violations: usize,
    /// First violation, if any.
    pub detail: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.detail {
            None => write!(f, "ok    {}", self.name),
            Some(d) => write!(f, "FAIL  {} ({} violations; first: {d})", self.name, self.violations),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }
}

#[derive(Default)]
struct Tally {
    violations: usize,
    detail: Option<String>,
}

impl Tally {
    fn fail(&mut self, msg: impl FnOnce() -> String) {
        self.violations += 1;
        if self.detail.is_none() {
            self.detail = Some(msg());
        }
    }

    fn finish(self, name: &'static str) -> CheckResult {
        CheckResult {
            name,
            violations: self.violations,
            detail: self.detail,
        }
    }
}

#[derive(Default)]
struct Checks {
    budget: Tally,
    accuracy: Tally,
    conservation: Tally,
    counts: Tally,
    efficiency: Tally,
    clean_only: Tally,
}

impl Checks {
    fn observe(&mut self, cfg: &ExperimentConfig, clean: &[usize], o: &RoundOutcome) {
        let r = &o.record;
        let tag = || format!("{} round {}", r.method, r.round);
        if r.method.is_budgeted() && r.total_cost > cfg.budget {
            self.budget
                .fail(|| format!("{}: cost {} > {}", tag(), r.total_cost, cfg.budget));
        }
        if !(0.0..=1.0).contains(&r.global_accuracy) {
            self.accuracy
                .fail(|| format!("{}: accuracy {}", tag(), r.global_accuracy));
        }
        if r.method == Method::Hqrs {
            if let Some(id) = r.selected_ids.iter().find(|i| !clean.contains(i)) {
                self.clean_only.fail(|| format!("{}: client {id} is not clean", tag()));
            }
        }
        if r.method != Method::Sbro {
            return;
        }
        if let Some(c) = o.diagnostics.counts.iter().find(|&&c| c > 5) {
            self.counts.fail(|| format!("{}: count {c}", tag()));
        }
        for (i, (before, after)) in o
            .diagnostics
            .reputation_before
            .iter()
            .zip(&r.reputation_snapshot)
            .enumerate()
        {
            if before != after && !r.selected_ids.contains(&i) {
                self.conservation
                    .fail(|| format!("{}: unselected client {i} changed", tag()));
            }
        }
        if let (Some(full), Some(empty)) = (o.diagnostics.coalition_value, o.diagnostics.empty_value) {
            let gap = (r.sv.iter().sum::<f64>() - (full - empty)).abs();
            if gap > EFFICIENCY_TOL {
                self.efficiency.fail(|| format!("{}: efficiency gap {gap:e}", tag()));
            }
        }
    }
}

/// Runs every method in `methods` on the scenario of `cfg`, then reruns the
/// first method to confirm byte-identical output.
pub fn run_checks(cfg: &ExperimentConfig, methods: &[Method]) -> Result<CheckReport> {
    cfg.validate()?;
    let scenario = Arc::new(Scenario::build(cfg)?);
    let clean = scenario.clean_ids();
    let mut checks = Checks::default();
    let mut first_csv = None;
    for &method in methods {
        let arm = ExperimentConfig {
            method,
            ..cfg.clone()
        };
        let records = Simulation::new(arm.clone(), Arc::clone(&scenario))?
            .run_with(|o| checks.observe(&arm, &clean, o))?;
        if first_csv.is_none() {
            first_csv = Some((arm, records_to_csv(&records)));
        }
    }

    let mut determinism = Tally::default();
    if let Some((arm, csv)) = first_csv {
        let again = Simulation::new(arm.clone(), Arc::clone(&scenario))?.run_with(|_| {})?;
        if records_to_csv(&again) != csv {
            determinism.fail(|| format!("{} rerun produced different CSV", arm.method));
        }
    }

    let c = checks;
    Ok(CheckReport {
        results: vec![
            c.budget.finish("budget safety"),
            c.accuracy.finish("accuracy in [0, 1]"),
            c.clean_only.finish("hqrs selects clean clients only"),
            c.counts.finish("selection counts within [0, 5]"),
            c.conservation.finish("only selected reputations change"),
            c.efficiency.finish("Shapley efficiency"),
            determinism.finish("determinism"),
        ],
    })
}
