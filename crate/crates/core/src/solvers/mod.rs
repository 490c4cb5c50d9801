//! Solvers that turn a domain into a [`TrainedPolicy`]: model-based policy
//! iteration, linear approximate Q-learning and a small replay-buffer DQN.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod dqn;
pub mod linear;
pub mod model_based;

pub use dqn::{dqn_learn, DqnConfig, Experience, InputEncoding, Mlp, QNetwork, ReplayBuffer};
pub use linear::{linear_q_learn, FeatureMap, LinearQ, LinearQConfig};
pub use model_based::{estimate_model, model_based, policy_iteration, EstimatedModel, PolicyIterationConfig};

/// Artifact format version written into every serialized policy.
pub const POLICY_FORMAT_VERSION: u32 = 1;

/// Tie tolerance used when reading greedy actions off exact dynamic-programming values.
pub const EXACT_TIE_TOLERANCE: f64 = 1e-6;

/// Linear decay of the exploration rate over episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Episodes over which `start` decays to `end`; constant afterwards.
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn linear(start: f64, end: f64, decay_episodes: usize) -> Self {
        Self {
            start,
            end,
            decay_episodes,
        }
    }

    pub fn constant(epsilon: f64) -> Self {
        Self::linear(epsilon, epsilon, 0)
    }

    pub fn at(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub solver: String,
    pub seed: Option<u64>,
    pub hyperparameters: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(solver: &str, seed: Option<u64>) -> Self {
        Self {
            solver: solver.to_string(),
            seed,
            hyperparameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.hyperparameters.insert(key.to_string(), value.into());
        self
    }
}

/// Lowest action id whose value is within `tolerance` of the row maximum.
pub fn greedy_action(row: &[f64], tolerance: f64) -> usize {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter().position(|&q| q >= max - tolerance).unwrap_or(0)
}

/// Lowest action id attaining the exact maximum.
pub fn argmax_lowest(row: &[f64]) -> usize {
    greedy_action(row, 0.0)
}

/// The output of every solver: a dense Q table over the enumerated states,
/// the greedy policy and state values read off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub format_version: u32,
    pub domain: String,
    pub gamma: f64,
    /// Actions within this distance of the row maximum count as tied.
    pub tie_tolerance: f64,
    pub provenance: Provenance,
    pub terminal: Vec<bool>,
    pub pi: Vec<usize>,
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl TrainedPolicy {
    /// Zeroes terminal rows, then derives `v` and `pi` from `q`.
    pub fn from_q(
        domain: &str,
        mut q: Vec<Vec<f64>>,
        terminal: Vec<bool>,
        gamma: f64,
        tie_tolerance: f64,
        provenance: Provenance,
    ) -> Self {
        for (row, &t) in q.iter_mut().zip(&terminal) {
            if t {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let v = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let pi = q.iter().map(|row| greedy_action(row, tie_tolerance)).collect();
        Self {
            format_version: POLICY_FORMAT_VERSION,
            domain: domain.to_string(),
            gamma,
            tie_tolerance,
            provenance,
            terminal,
            pi,
            v,
            q,
        }
    }

    pub fn num_states(&self) -> usize {
        self.q.len()
    }

    pub fn num_actions(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    pub fn action(&self, state: usize) -> usize {
        self.pi[state]
    }

    /// Checks the derived fields against `q`.
    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.pi.len() != n || self.v.len() != n || self.terminal.len() != n {
            return Err(Error::Validation("policy tables differ in length".into()));
        }
        let m = self.num_actions();
        for (s, row) in self.q.iter().enumerate() {
            if row.len() != m || m == 0 {
                return Err(Error::Validation(format!("q row {s} has {} actions", row.len())));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("q row {s} is not finite")));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if self.v[s] != max {
                return Err(Error::Validation(format!("v({s}) != max_a q({s}, a)")));
            }
            if self.pi[s] != greedy_action(row, self.tie_tolerance) {
                return Err(Error::Validation(format!("pi({s}) is not the greedy action")));
            }
            if self.terminal[s] && row.iter().any(|&x| x != 0.0) {
                return Err(Error::Validation(format!("terminal state {s} has non-zero q")));
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut text = serde_json::to_string(self).expect("policy serializes");
        text.push('\n');
        text
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let policy: Self = serde_json::from_str(text).map_err(Error::schema)?;
        if policy.format_version != POLICY_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported policy format version {}",
                policy.format_version
            )));
        }
        policy.validate()?;
        Ok(policy)
    }
}
