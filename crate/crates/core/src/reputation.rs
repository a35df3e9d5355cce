//! Per-client reputation: the prospect-theory score transform and the
//! Shapley-and-bid driven update with exponentially growing penalties.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many past rounds of selection flags are kept per client.
pub const HISTORY_WINDOW: usize = 5;

/// Sign applied to the loss branch of the score transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSign {
    /// `-gamma * (R_th - R)^beta`: losses score below zero.
    #[default]
    Negative,
    /// `+gamma * (R_th - R)^beta`, the literal printed form.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProspectParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub loss_sign: LossSign,
}

impl Default for ProspectParams {
    fn default() -> Self {
        Self {
            alpha: 0.15,
            beta: 0.3,
            gamma: 1.0,
            loss_sign: LossSign::Negative,
        }
    }
}

impl ProspectParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.alpha) || !unit(self.beta) {
            return Err(Error::InvalidConfig(format!(
                "alpha and beta must lie in (0, 1], got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateParams {
    /// Reward coefficient.
    pub omega: f64,
    /// Punishment coefficient.
    pub psi: f64,
    /// Penalty base, raised to the recent error count.
    pub rho: f64,
    pub err_window: usize,
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self {
            omega: 1.0,
            psi: 1.0,
            rho: 2.0,
            err_window: 5,
        }
    }
}

impl UpdateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::InvalidConfig(format!("omega must be > 0, got {}", self.omega)));
        }
        if !(self.psi.is_finite() && self.psi > 0.0) {
            return Err(Error::InvalidConfig(format!("psi must be > 0, got {}", self.psi)));
        }
        if !(self.rho.is_finite() && self.rho > 1.0) {
            return Err(Error::InvalidConfig(format!("rho must be > 1, got {}", self.rho)));
        }
        if self.err_window == 0 {
            return Err(Error::InvalidConfig("err_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Last `HISTORY_WINDOW` selection flags per client, newest at the back.
/// Rounds before the first are treated as unselected.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionHistory {
    flags: Vec<VecDeque<bool>>,
}

impl SelectionHistory {
    pub fn new(n: usize) -> Self {
        Self {
            flags: vec![VecDeque::with_capacity(HISTORY_WINDOW); n],
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Times the client was selected in the retained window.
    pub fn count(&self, client: usize) -> u32 {
        self.flags[client].iter().filter(|&&f| f).count() as u32
    }

    pub fn counts(&self) -> Vec<u32> {
        (0..self.flags.len()).map(|i| self.count(i)).collect()
    }

    pub fn window(&self, client: usize) -> &VecDeque<bool> {
        &self.flags[client]
    }

    /// Appends one round; `selected` holds the chosen client ids.
    pub fn record(&mut self, selected: &[usize]) {
        let mut mask = vec![false; self.flags.len()];
        for &i in selected {
            mask[i] = true;
        }
        for (buf, flag) in self.flags.iter_mut().zip(mask) {
            if buf.len() == HISTORY_WINDOW {
                buf.pop_front();
            }
            buf.push_back(flag);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReputationState {
    reputation: Vec<f64>,
    sv_history: Vec<Vec<(usize, f64)>>,
    participation: SelectionHistory,
}

impl ReputationState {
    /// All reputations start at zero with empty histories.
    pub fn new(n: usize) -> Self {
        Self {
            reputation: vec![0.0; n],
            sv_history: vec![Vec::new(); n],
            participation: SelectionHistory::new(n),
        }
    }

    pub fn len(&self) -> usize {
        self.reputation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reputation.is_empty()
    }

    pub fn reputation(&self) -> &[f64] {
        &self.reputation
    }

    /// `(round, shapley value)` for every round the client was selected.
    pub fn sv_history(&self, client: usize) -> &[(usize, f64)] {
        &self.sv_history[client]
    }

    pub fn participation(&self) -> &SelectionHistory {
        &self.participation
    }

    /// Mean reputation over all clients; the reference point of the score.
    pub fn threshold(&self) -> f64 {
        if self.reputation.is_empty() {
            return 0.0;
        }
        self.reputation.iter().sum::<f64>() / self.reputation.len() as f64
    }

    pub fn scores(&self, params: &ProspectParams) -> Vec<f64> {
        let th = self.threshold();
        self.reputation
            .iter()
            .map(|&r| reputation_score(r, th, params))
            .collect()
    }

    /// Non-positive Shapley values among the client's last `window` selected
    /// rounds.
    pub fn error_count(&self, client: usize, window: usize) -> usize {
        let h = &self.sv_history[client];
        h[h.len().saturating_sub(window)..]
            .iter()
            .filter(|(_, sv)| *sv <= 0.0)
            .count()
    }

    /// Applies one round of reputation updates.
    ///
    /// `sv[k]` and the selection flag belong to client `selected[k]`. Error
    /// counts are taken from the history before this round's values are
    /// appended. Unselected clients keep their reputation and Shapley history;
    /// every client gets this round's selection flag.
    pub fn update(
        &mut self,
        selected: &[usize],
        sv: &[f64],
        bids: &[f64],
        up: &UpdateParams,
        round: usize,
    ) -> Result<()> {
        let n = self.len();
        if sv.len() != selected.len() {
            return Err(Error::InvalidArgument(format!(
                "{} shapley values for {} selected clients",
                sv.len(),
                selected.len()
            )));
        }
        if bids.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} bids for {n} clients",
                bids.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in selected {
            if i >= n {
                return Err(Error::UnknownClient(i));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("client {i} selected twice")));
            }
            if !(bids[i].is_finite() && bids[i] > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "client {i} has non-positive bid {}",
                    bids[i]
                )));
            }
        }
        if let Some(v) = sv.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite shapley value {v}")));
        }

        let (s_pos, b_pos) = selected
            .iter()
            .zip(sv)
            .filter(|(_, &v)| v > 0.0)
            .fold((0.0, 0.0), |(s, b), (&i, &v)| (s + v, b + bids[i]));

        for (&i, &v) in selected.iter().zip(sv) {
            if v <= 0.0 {
                let err = self.error_count(i, up.err_window);
                self.reputation[i] -= penalty(up, err);
            } else {
                self.reputation[i] += reward(up, v, s_pos, bids[i], b_pos);
            }
        }
        for (&i, &v) in selected.iter().zip(sv) {
            self.sv_history[i].push((round, v));
        }
        self.participation.record(selected);
        Ok(())
    }
}

/// Prospect-theory value of `r` relative to the reference point `th`.
pub fn reputation_score(r: f64, th: f64, p: &ProspectParams) -> f64 {
    if r > th {
        (r - th).powf(p.alpha)
    } else {
        let loss = p.gamma * (th - r).powf(p.beta);
        match p.loss_sign {
            // `+ 0.0` folds -0 into +0 at the reference point.
            LossSign::Negative => -loss + 0.0,
            LossSign::AsPrinted => loss,
        }
    }
}

/// `psi * rho^err`.
pub fn penalty(up: &UpdateParams, err: usize) -> f64 {
    up.psi * up.rho.powi(err as i32)
}

/// `omega * (1 - exp(-(sv / s_pos) / (bid / b_pos)))` for a positive
/// contributor.
pub fn reward(up: &UpdateParams, sv: f64, s_pos: f64, bid: f64, b_pos: f64) -> f64 {
    let ratio = (sv / s_pos) / (bid / b_pos);
    up.omega * (1.0 - (-ratio).exp())
}
