//! Approximate Q-learning with a per-action linear model over state features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, EpsilonSchedule, Provenance, TrainedPolicy};
use crate::error::{Error, Result};
use crate::mdp::{DomainModel, Mdp};

/// Weights larger than this in magnitude count as divergence.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// How a state is turned into the feature vector the linear model weighs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMap {
    /// `[1, f1(s), ..., fn(s)]`: the domain features plus a bias term.
    Raw,
    /// Indicator vector over enumerated states; makes the learner tabular.
    OneHot,
}

impl FeatureMap {
    pub fn dimension(self, domain: &DomainModel) -> usize {
        match self {
            FeatureMap::Raw => domain.features().len() + 1,
            FeatureMap::OneHot => domain.num_states(),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            FeatureMap::Raw => "raw",
            FeatureMap::OneHot => "one-hot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearQConfig {
    pub alpha: f64,
    /// Defaults to the domain discount.
    pub gamma: Option<f64>,
    pub epsilon: EpsilonSchedule,
    pub episodes: usize,
    pub max_steps: usize,
    pub features: FeatureMap,
    pub tie_tolerance: f64,
}

impl Default for LinearQConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            gamma: None,
            epsilon: EpsilonSchedule::linear(1.0, 0.05, 2_000),
            episodes: 4_000,
            max_steps: 500,
            features: FeatureMap::Raw,
            tie_tolerance: 0.0,
        }
    }
}

/// Per-action weight vectors `theta[a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQ {
    pub theta: Vec<Vec<f64>>,
    pub alpha: f64,
    pub gamma: f64,
    features: FeatureMap,
    raw: Vec<Vec<f64>>,
}

impl LinearQ {
    pub fn new(domain: &DomainModel, features: FeatureMap, alpha: f64, gamma: f64) -> Self {
        let dim = features.dimension(domain);
        let raw = match features {
            FeatureMap::Raw => domain
                .states()
                .iter()
                .map(|s| std::iter::once(1.0).chain(s.features.as_slice().iter().copied()).collect())
                .collect(),
            FeatureMap::OneHot => Vec::new(),
        };
        Self {
            theta: vec![vec![0.0; dim]; domain.num_actions()],
            alpha,
            gamma,
            features,
            raw,
        }
    }

    pub fn value(&self, state: usize, action: usize) -> f64 {
        let w = &self.theta[action];
        match self.features {
            FeatureMap::OneHot => w[state],
            FeatureMap::Raw => w.iter().zip(&self.raw[state]).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn row(&self, state: usize) -> Vec<f64> {
        (0..self.theta.len()).map(|a| self.value(state, a)).collect()
    }

    /// One semi-gradient update for the observed transition. `next` is
    /// `None` when the successor is terminal, in which case the target is `r`.
    /// Returns the TD error.
    pub fn update(&mut self, state: usize, action: usize, reward: f64, next: Option<usize>) -> f64 {
        let bootstrap = next.map_or(0.0, |s2| {
            self.row(s2).into_iter().fold(f64::NEG_INFINITY, f64::max)
        });
        let td = reward + self.gamma * bootstrap - self.value(state, action);
        let step = self.alpha * td;
        match self.features {
            FeatureMap::OneHot => self.theta[action][state] += step,
            FeatureMap::Raw => {
                for (w, f) in self.theta[action].iter_mut().zip(&self.raw[state]) {
                    *w += step * f;
                }
            }
        }
        td
    }

    fn diverged(&self, action: usize) -> bool {
        self.theta[action]
            .iter()
            .any(|w| !w.is_finite() || w.abs() > DIVERGENCE_GUARD)
    }

    /// Runs one ε-greedy episode from a uniformly drawn non-terminal state.
    ///
    /// Per step the rng is consumed as: one `f64` for the exploration coin,
    /// one action index if exploring, then one draw inside [`DomainModel::step`].
    pub fn run_episode<R: Rng + ?Sized>(
        &mut self,
        domain: &DomainModel,
        starts: &[usize],
        epsilon: f64,
        max_steps: usize,
        episode: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let mut s = starts[rng.random_range(0..starts.len())];
        let m = domain.num_actions();
        for step in 0..max_steps {
            let a = if rng.random::<f64>() < epsilon {
                rng.random_range(0..m)
            } else {
                argmax_lowest(&self.row(s))
            };
            let (next, reward) = domain.step(s, a, rng)?;
            let terminal = domain.is_terminal(next);
            self.update(s, a, reward, (!terminal).then_some(next));
            if self.diverged(a) {
                return Err(Error::Diverged { episode, step });
            }
            s = next;
            if terminal {
                return Ok(step + 1);
            }
        }
        Ok(max_steps)
    }

    pub fn materialize(&self, domain: &DomainModel, tie_tolerance: f64, provenance: Provenance) -> TrainedPolicy {
        let q = (0..domain.num_states()).map(|s| self.row(s)).collect();
        let terminal = domain.states().iter().map(|s| s.terminal).collect();
        let mut policy = TrainedPolicy::from_q(domain.name(), q, terminal, self.gamma, tie_tolerance, provenance);
        policy.domain = domain.name().to_string();
        policy
    }
}

pub fn linear_q_learn<R: Rng + ?Sized>(
    domain: &DomainModel,
    config: &LinearQConfig,
    seed: Option<u64>,
    rng: &mut R,
) -> Result<TrainedPolicy> {
    if !(config.alpha > 0.0) {
        return Err(Error::Contract(format!("alpha {} must be positive", config.alpha)));
    }
    if config.episodes == 0 {
        return Err(Error::Contract("episodes must be at least 1".into()));
    }
    let starts = domain.non_terminal_states();
    let gamma = config.gamma.unwrap_or(domain.discount());
    let mut model = LinearQ::new(domain, config.features, config.alpha, gamma);
    if !starts.is_empty() {
        for episode in 0..config.episodes {
            let eps = config.epsilon.at(episode);
            model.run_episode(domain, &starts, eps, config.max_steps, episode, rng)?;
        }
    }
    let provenance = Provenance::new("linear-q", seed)
        .with("alpha", config.alpha)
        .with("gamma", gamma)
        .with("epsilon_start", config.epsilon.start)
        .with("epsilon_end", config.epsilon.end)
        .with("epsilon_decay_episodes", config.epsilon.decay_episodes)
        .with("episodes", config.episodes)
        .with("max_steps", config.max_steps)
        .with("features", config.features.as_str())
        .with("tie_tolerance", config.tie_tolerance);
    Ok(model.materialize(domain, config.tie_tolerance, provenance))
}
