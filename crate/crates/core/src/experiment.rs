//! The round loop: selection, local training, aggregation and, for the
//! reputation method, Shapley assessment and reputation update. Baseline
//! methods only replace the selection step and skip the assessment.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{DataSource, EmptyValue, ExperimentConfig, Method};
use crate::data::{flip_all, generate_bids, generate_synthetic, load_idx, partition, ClientDataset};
use crate::error::{Error, Result};
use crate::model::{aggregate, evaluate, init_model, local_train, Dataset, ModelParams};
use crate::reputation::ReputationState;
use crate::rng::{derive_seed, seeded_rng};
use crate::selection::{
    baseline_all, baseline_hq_random, baseline_random, select_clients, selection_weights,
    SelectionProblem, SelectionResult,
};
use crate::shapley::{exact_shapley, CoalitionContext};

// Seed stream tags.
const STREAM_DATA: u64 = 1;
const STREAM_PARTITION: u64 = 2;
const STREAM_FLIP: u64 = 3;
const STREAM_BIDS: u64 = 4;
const STREAM_SPLIT: u64 = 5;
const STREAM_INIT: u64 = 10;
const STREAM_TRAIN: u64 = 11;
const STREAM_RANDOM_SELECT: u64 = 12;
const STREAM_BOOTSTRAP: u64 = 13;

/// The federation a run operates on: client shards (labels already flipped),
/// bids, and the server-side validation and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub clients: Vec<ClientDataset>,
    pub bids: Vec<f64>,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Scenario {
    /// Builds the scenario from the data, partition and bid sections of `cfg`
    /// using only `cfg.scenario_seed`.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let s = cfg.scenario_seed;
        let d = &cfg.data;
        let carve = d.validation_size + d.test_size;
        let pool = match d.source {
            DataSource::Synthetic => generate_synthetic(
                d.num_classes,
                d.input_dim,
                carve + cfg.partition.samples_total,
                d.class_separation,
                derive_seed(s, &[STREAM_DATA]),
            )?,
            DataSource::Idx => {
                let (images, labels) = match (&d.idx_images, &d.idx_labels) {
                    (Some(i), Some(l)) => (i, l),
                    _ => return Err(Error::InvalidConfig("missing IDX paths".into())),
                };
                let raw = load_idx(images, labels)?;
                let mut rows: Vec<usize> = (0..raw.len()).collect();
                rows.shuffle(&mut seeded_rng(derive_seed(s, &[STREAM_SPLIT])));
                raw.select(&rows)
            }
        };
        if pool.len() < carve + cfg.partition.samples_total {
            return Err(Error::InvalidConfig(format!(
                "{} rows available, need {} for validation/test plus {} for clients",
                pool.len(),
                carve,
                cfg.partition.samples_total
            )));
        }
        let (validation, rest) = pool.split_at(d.validation_size);
        let (test, rest) = rest.split_at(d.test_size);

        let mut spec = cfg.partition_spec();
        spec.seed = derive_seed(s, &[STREAM_PARTITION]);
        let clients = partition(&rest, &spec)?;
        let clients = flip_all(&clients, rest.num_classes(), derive_seed(s, &[STREAM_FLIP]))?;
        let bids = generate_bids(&cfg.bid_spec(derive_seed(s, &[STREAM_BIDS])), &clients)?;
        Ok(Self {
            clients,
            bids,
            validation,
            test,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn clean_ids(&self) -> Vec<usize> {
        self.clients
            .iter()
            .filter(|c| c.is_clean())
            .map(|c| c.client_id)
            .collect()
    }

    /// Held-out set for reporting; falls back to validation when empty.
    fn report_set(&self) -> &Dataset {
        if self.test.is_empty() {
            &self.validation
        } else {
            &self.test
        }
    }
}

/// One row of the per-round log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub method: Method,
    pub selected_ids: Vec<usize>,
    pub total_cost: f64,
    pub global_accuracy: f64,
    /// Shapley value per selected client (reputation method only).
    pub sv: Vec<f64>,
    /// Reputation of every client after the round (reputation method only).
    pub reputation_snapshot: Vec<f64>,
    pub wall_time_ms: f64,
}

/// Extra per-round facts used by the invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDiagnostics {
    /// Selection counts over the last five rounds, as used for this round.
    pub counts: Vec<u32>,
    pub reputation_before: Vec<f64>,
    /// `v(S)` and `v(empty)` of the Shapley game, when one was played.
    pub coalition_value: Option<f64>,
    pub empty_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub record: RoundRecord,
    pub diagnostics: RoundDiagnostics,
}

/// A single run in progress. Owns its model and reputation state; the
/// scenario is shared.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ExperimentConfig,
    scenario: Arc<Scenario>,
    clean_ids: Vec<usize>,
    global: ModelParams,
    state: ReputationState,
    round: usize,
}

impl Simulation {
    pub fn new(cfg: ExperimentConfig, scenario: Arc<Scenario>) -> Result<Self> {
        cfg.validate()?;
        let first = scenario
            .clients
            .first()
            .ok_or_else(|| Error::InvalidConfig("scenario has no clients".into()))?;
        let mut shape = vec![first.data.input_dim()];
        shape.extend(&cfg.model.hidden);
        shape.push(first.data.num_classes());
        let global = init_model(&shape, derive_seed(cfg.seed, &[STREAM_INIT]))?;
        let clean_ids = scenario.clean_ids();
        if cfg.method == Method::Hqrs && clean_ids.is_empty() {
            return Err(Error::InvalidConfig("hqrs needs at least one clean client".into()));
        }
        let state = ReputationState::new(scenario.num_clients());
        Ok(Self {
            cfg,
            scenario,
            clean_ids,
            global,
            state,
            round: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn global_model(&self) -> &ModelParams {
        &self.global
    }

    pub fn reputation(&self) -> &ReputationState {
        &self.state
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.cfg.rounds
    }

    fn select(&self, round: usize) -> Result<SelectionResult> {
        let cfg = &self.cfg;
        let bids = &self.scenario.bids;
        let seed = cfg.seed;
        match cfg.method {
            Method::Sbro => {
                let scores = self.state.scores(&cfg.prospect);
                let weights = selection_weights(&scores, self.state.participation(), cfg.delta)?;
                let problem = SelectionProblem::new(weights, bids.clone(), cfg.budget)?;
                select_clients(&problem, derive_seed(seed, &[STREAM_BOOTSTRAP, round as u64]))
            }
            Method::Rs => baseline_random(
                bids,
                cfg.budget,
                derive_seed(seed, &[STREAM_RANDOM_SELECT, round as u64]),
            ),
            Method::Hqrs => baseline_hq_random(
                &self.clean_ids,
                bids,
                cfg.budget,
                derive_seed(seed, &[STREAM_RANDOM_SELECT, round as u64]),
            ),
            Method::All => Ok(baseline_all(bids)),
        }
    }

    /// Runs one round.
    pub fn step(&mut self) -> Result<RoundOutcome> {
        let start = Instant::now();
        let round = self.round + 1;
        let cfg = &self.cfg;
        let scenario = &self.scenario;
        let counts = self.state.participation().counts();
        let reputation_before = self.state.reputation().to_vec();

        let selection = self.select(round)?;
        let selected = &selection.selected;

        let updates: Vec<ModelParams> = selected
            .par_iter()
            .map(|&i| {
                let train = cfg
                    .train
                    .with_seed(derive_seed(cfg.seed, &[STREAM_TRAIN, round as u64, i as u64]));
                local_train(&self.global, &scenario.clients[i].data, &train)
            })
            .collect::<Result<_>>()?;

        let mut sv = Vec::new();
        let mut game_values = (None, None);
        if !updates.is_empty() {
            let weighted: Vec<(&ModelParams, f64)> = updates
                .iter()
                .zip(selected)
                .map(|(u, &i)| (u, scenario.clients[i].data.len() as f64))
                .collect();
            let next = aggregate(&weighted)?;

            if cfg.method == Method::Sbro {
                let empty_value = match cfg.shapley.empty_value {
                    EmptyValue::PreviousGlobal => {
                        evaluate(&self.global, &scenario.validation, cfg.shapley.metric)?
                    }
                    EmptyValue::RandomGuess => 1.0 / scenario.validation.num_classes() as f64,
                };
                let mut ctx = CoalitionContext::new(
                    selected.clone(),
                    &updates,
                    &scenario.validation,
                    empty_value,
                )?;
                ctx.metric = cfg.shapley.metric;
                let result = exact_shapley(&ctx)?;
                game_values = (Some(result.coalition_value), Some(result.empty_value));
                sv = result.values;
            }
            self.global = next;
        }
        if cfg.method == Method::Sbro {
            self.state
                .update(selected, &sv, &scenario.bids, &cfg.update, round)?;
        }

        let global_accuracy = evaluate(&self.global, scenario.report_set(), cfg.shapley.metric)?;
        self.round = round;
        let reputation_snapshot = if cfg.method == Method::Sbro {
            self.state.reputation().to_vec()
        } else {
            Vec::new()
        };
        Ok(RoundOutcome {
            record: RoundRecord {
                round,
                method: cfg.method,
                selected_ids: selection.selected,
                total_cost: selection.cost,
                global_accuracy,
                sv,
                reputation_snapshot,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            },
            diagnostics: RoundDiagnostics {
                counts,
                reputation_before,
                coalition_value: game_values.0,
                empty_value: game_values.1,
            },
        })
    }

    /// Runs the remaining rounds, handing each outcome to `observe`.
    pub fn run_with(&mut self, mut observe: impl FnMut(&RoundOutcome)) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(self.cfg.rounds - self.round);
        while !self.is_finished() {
            let outcome = self.step()?;
            observe(&outcome);
            records.push(outcome.record);
        }
        Ok(records)
    }
}

/// Runs a full experiment on a freshly built scenario.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    let scenario = Arc::new(Scenario::build(cfg)?);
    run_on(cfg, scenario)
}

pub fn run_on(cfg: &ExperimentConfig, scenario: Arc<Scenario>) -> Result<Vec<RoundRecord>> {
    Simulation::new(cfg.clone(), scenario)?.run_with(|_| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
}

/// Final-round statistics of one method across seeds. Variances are
/// population variances.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub seeds: usize,
    pub final_accuracy_mean: f64,
    pub final_accuracy_variance: f64,
    /// Mean over seeds of the mean accuracy of the last 20 rounds.
    pub last20_accuracy_mean: f64,
    /// Mean over seeds of the variance of the last 20 rounds' accuracy.
    pub last20_accuracy_variance: f64,
    pub mean_round_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scenario: Arc<Scenario>,
    pub arms: Vec<ArmResult>,
    pub summary: Vec<SummaryRow>,
}

pub const SUMMARY_TAIL: usize = 20;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn summarize(method: Method, arms: &[&ArmResult]) -> SummaryRow {
    let finals: Vec<f64> = arms
        .iter()
        .filter_map(|a| a.records.last().map(|r| r.global_accuracy))
        .collect();
    let (final_mean, final_var) = mean_var(&finals);
    let tails: Vec<(f64, f64)> = arms
        .iter()
        .map(|a| {
            let start = a.records.len().saturating_sub(SUMMARY_TAIL);
            let accs: Vec<f64> = a.records[start..].iter().map(|r| r.global_accuracy).collect();
            mean_var(&accs)
        })
        .collect();
    let k = tails.len().max(1) as f64;
    let costs: Vec<f64> = arms
        .iter()
        .flat_map(|a| a.records.iter().map(|r| r.total_cost))
        .collect();
    SummaryRow {
        method,
        seeds: arms.len(),
        final_accuracy_mean: final_mean,
        final_accuracy_variance: final_var,
        last20_accuracy_mean: tails.iter().map(|t| t.0).sum::<f64>() / k,
        last20_accuracy_variance: tails.iter().map(|t| t.1).sum::<f64>() / k,
        mean_round_cost: mean_var(&costs).0,
    }
}

/// Runs every `(method, seed)` arm on one shared scenario (built from
/// `base.scenario_seed`); arms differ only in method and algorithmic seed.
pub fn run_comparison(base: &ExperimentConfig, methods: &[Method], seeds: &[u64]) -> Result<Comparison> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "comparison needs at least one method and one seed".into(),
        ));
    }
    base.validate()?;
    let scenario = Arc::new(Scenario::build(base)?);
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let arms: Vec<ArmResult> = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let cfg = ExperimentConfig {
                method,
                seed,
                ..base.clone()
            };
            run_on(&cfg, Arc::clone(&scenario)).map(|records| ArmResult {
                method,
                seed,
                records,
            })
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<Method> = Vec::new();
    for &m in methods {
        if !order.contains(&m) {
            order.push(m);
        }
    }
    let summary = order
        .into_iter()
        .map(|m| {
            let of: Vec<&ArmResult> = arms.iter().filter(|a| a.method == m).collect();
            summarize(m, &of)
        })
        .collect();
    Ok(Comparison {
        scenario,
        arms,
        summary,
    })
}
