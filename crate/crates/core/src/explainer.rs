//! Why / Why-not / When answers over a fitted surrogate tree, plus the
//! policy overviews shown next to them: criticality ranking, trajectories,
//! action and reward summaries, 2-D projection and important states.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{scaled_euclidean_distance, DomainModel, Mdp, StateRecord};
use crate::solvers::TrainedPolicy;
use crate::tree::{rule_coverage, rule_of_path, Rule, SurrogateTree};

/// Maximum number of rules returned for a When question.
pub const WHEN_TOP: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhenEntry {
    /// Preorder index of the leaf the rule describes.
    pub leaf: usize,
    pub rule: Rule,
    /// States routed to that leaf.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Explanation {
    Why {
        state: usize,
        action: usize,
        rule: Rule,
        coverage_count: usize,
        coverage: Vec<usize>,
        subgoal: Option<String>,
    },
    WhyNot {
        state: usize,
        fact_action: usize,
        foil_action: usize,
        foil_state: usize,
        distance: f64,
        fact_rule: Rule,
        foil_rule: Rule,
        fact_coverage_count: usize,
        foil_coverage_count: usize,
    },
    When {
        action: usize,
        /// Set when no leaf concludes `action`; `entries` is then empty.
        never_optimal: bool,
        entries: Vec<WhenEntry>,
    },
}

/// Query interface over one domain, its trained policy and surrogate tree.
#[derive(Debug, Clone)]
pub struct Explainer<'a> {
    domain: &'a DomainModel,
    policy: &'a TrainedPolicy,
    tree: &'a SurrogateTree,
    scale: Vec<f64>,
}

impl<'a> Explainer<'a> {
    pub fn new(domain: &'a DomainModel, policy: &'a TrainedPolicy, tree: &'a SurrogateTree) -> Result<Self> {
        if policy.num_states() != domain.num_states() || policy.num_actions() != domain.num_actions() {
            return Err(Error::Contract(format!(
                "policy shape {}x{} does not match domain {}x{}",
                policy.num_states(),
                policy.num_actions(),
                domain.num_states(),
                domain.num_actions()
            )));
        }
        if tree.feature_count != domain.features().len() {
            return Err(Error::Contract("tree feature count does not match domain".into()));
        }
        Ok(Self {
            domain,
            policy,
            tree,
            scale: vec![1.0; domain.features().len()],
        })
    }

    /// Per-feature multipliers applied before Why-not distances (identity by default).
    pub fn with_feature_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.domain.features().len() {
            return Err(Error::Contract("one scale factor per feature required".into()));
        }
        self.scale = scale;
        Ok(self)
    }

    fn faithful_rule(&self, state: usize) -> Result<Rule> {
        let record = self.domain.state(state)?;
        let path = self.tree.path_of(&record.features)?;
        let predicted = self.tree.leaf_action(path.leaf).unwrap_or(usize::MAX);
        let optimal = self.policy.pi[state];
        if predicted != optimal {
            return Err(Error::ExplanationUnavailable {
                state,
                predicted,
                optimal,
            });
        }
        rule_of_path(self.tree, &path, self.domain.features())
    }

    pub fn why(&self, state: usize) -> Result<Explanation> {
        let rule = self.faithful_rule(state)?;
        let coverage = rule_coverage(&rule, self.domain.states());
        let action = self.policy.pi[state];
        Ok(Explanation::Why {
            state,
            action,
            coverage_count: coverage.len(),
            coverage,
            subgoal: self.domain.subgoal(state, action).map(str::to_string),
            rule,
        })
    }

    /// Nearest state (ties: lowest id) whose optimal action is `foil`.
    pub fn nearest_foil_state(&self, state: usize, foil: usize) -> Result<(usize, f64)> {
        let origin = &self.domain.state(state)?.features;
        let mut best: Option<(usize, f64)> = None;
        for s in self.domain.states() {
            if self.policy.pi[s.id] != foil {
                continue;
            }
            let d = scaled_euclidean_distance(origin, &s.features, &self.scale)?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((s.id, d));
            }
        }
        best.ok_or(Error::NoFoilState { action: foil })
    }

    pub fn why_not(&self, state: usize, foil: usize) -> Result<Explanation> {
        self.domain.state(state)?;
        if foil >= self.domain.num_actions() {
            return Err(Error::Contract(format!("unknown action id {foil}")));
        }
        let fact = self.policy.pi[state];
        if foil == fact {
            return Err(Error::InvalidFoil { state, action: foil });
        }
        let (foil_state, distance) = self.nearest_foil_state(state, foil)?;
        let fact_rule = self.faithful_rule(state)?;
        let foil_rule = self.faithful_rule(foil_state)?;
        let states = self.domain.states();
        Ok(Explanation::WhyNot {
            state,
            fact_action: fact,
            foil_action: foil,
            foil_state,
            distance,
            fact_coverage_count: rule_coverage(&fact_rule, states).len(),
            foil_coverage_count: rule_coverage(&foil_rule, states).len(),
            fact_rule,
            foil_rule,
        })
    }

    pub fn when(&self, action: usize) -> Result<Explanation> {
        if action >= self.domain.num_actions() {
            return Err(Error::Contract(format!("unknown action id {action}")));
        }
        let mut leaves: Vec<(usize, usize)> = self
            .tree
            .leaves()
            .filter(|(_, a, _)| *a == action)
            .map(|(leaf, _, states)| (leaf, states.len()))
            .collect();
        let never_optimal = leaves.is_empty();
        leaves.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let entries = leaves
            .into_iter()
            .take(WHEN_TOP)
            .map(|(leaf, count)| {
                let path = self
                    .tree
                    .path_to(leaf)
                    .ok_or_else(|| Error::Contract(format!("leaf {leaf} unreachable")))?;
                Ok(WhenEntry {
                    leaf,
                    rule: rule_of_path(self.tree, &path, self.domain.features())?,
                    count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Explanation::When {
            action,
            never_optimal,
            entries,
        })
    }
}

// ---------------------------------------------------------------------------
// Criticality
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValueLabel {
    #[serde(rename = "Very Low")]
    VeryLow,
    Low,
    Medium,
    High,
    #[serde(rename = "Very High")]
    VeryHigh,
}

impl ValueLabel {
    const ALL: [ValueLabel; 5] = [
        ValueLabel::VeryLow,
        ValueLabel::Low,
        ValueLabel::Medium,
        ValueLabel::High,
        ValueLabel::VeryHigh,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityEntry {
    pub state: usize,
    pub criticality: f64,
    pub value: f64,
    pub label: ValueLabel,
}

/// States in descending criticality, ties by ascending state id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityRanking {
    pub entries: Vec<CriticalityEntry>,
}

/// `max_a Q(s, a) - mean_a Q(s, a)`.
pub fn state_criticality(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    (max - mean).max(0.0)
}

/// Quintile label of every value. Cut points are the values at ranks
/// `ceil(k n / 5)` of the ascending order, so equal values share a label.
pub fn value_labels(values: &[f64]) -> Vec<ValueLabel> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..5)
        .map(|k| sorted[((k * n).div_ceil(5)).min(n - 1)])
        .collect();
    values
        .iter()
        .map(|v| ValueLabel::ALL[cuts.iter().filter(|&&c| *v >= c).count()])
        .collect()
}

pub fn criticality(policy: &TrainedPolicy) -> CriticalityRanking {
    let labels = value_labels(&policy.v);
    let mut entries: Vec<CriticalityEntry> = policy
        .q
        .iter()
        .enumerate()
        .map(|(s, row)| CriticalityEntry {
            state: s,
            criticality: state_criticality(row),
            value: policy.v[s],
            label: labels[s],
        })
        .collect();
    entries.sort_by(|a, b| {
        b.criticality
            .total_cmp(&a.criticality)
            .then(a.state.cmp(&b.state))
    });
    CriticalityRanking { entries }
}

/// The `k` most critical states, ties by state id.
pub fn important_states(policy: &TrainedPolicy, k: usize) -> Result<Vec<usize>> {
    if k > policy.num_states() {
        return Err(Error::Contract(format!(
            "asked for {k} states but only {} exist",
            policy.num_states()
        )));
    }
    Ok(criticality(policy)
        .entries
        .into_iter()
        .take(k)
        .map(|e| e.state)
        .collect())
}

// ---------------------------------------------------------------------------
// Trajectories and summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: usize,
    pub steps: Vec<TrajectoryStep>,
    /// Reached a terminal state.
    pub terminated: bool,
    /// Stopped by the step cap before reaching a terminal state.
    pub truncated: bool,
    /// `Σ γ^(t-1) R_t` at the domain discount.
    pub discounted_return: f64,
}

/// Follows the policy from `start` until a terminal state or `max_steps`.
pub fn rollout<R: Rng + ?Sized>(
    domain: &DomainModel,
    policy: &TrainedPolicy,
    start: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    domain.state(start)?;
    let gamma = domain.discount();
    let mut steps = Vec::new();
    let mut s = start;
    let mut discount = 1.0;
    let mut ret = 0.0;
    while !domain.is_terminal(s) && steps.len() < max_steps {
        let a = policy.pi[s];
        let (next, reward) = domain.step(s, a, rng)?;
        ret += discount * reward;
        discount *= gamma;
        steps.push(TrajectoryStep {
            state: s,
            action: a,
            reward,
            next,
        });
        s = next;
    }
    let terminated = domain.is_terminal(s);
    Ok(Trajectory {
        start,
        steps,
        terminated,
        truncated: !terminated,
        discounted_return: ret,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCount {
    pub action: usize,
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBin {
    pub reward: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub action_counts: Vec<ActionCount>,
    /// Histogram of the expected immediate reward under the policy, per state.
    pub reward_histogram: Vec<RewardBin>,
}

fn histogram(values: impl IntoIterator<Item = f64>) -> Vec<RewardBin> {
    // Group on values rounded to 1e-9.
    let mut bins: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for v in values {
        let key = (v * 1e9).round() as i64;
        bins.entry(key).or_insert((v, 0)).1 += 1;
    }
    bins.into_values()
        .map(|(reward, count)| RewardBin { reward, count })
        .collect()
}

pub fn summarize_policy(policy: &TrainedPolicy, domain: &DomainModel) -> PolicySummary {
    let mut counts = vec![0usize; domain.num_actions()];
    for &a in &policy.pi {
        counts[a] += 1;
    }
    PolicySummary {
        action_counts: domain
            .actions()
            .iter()
            .map(|a| ActionCount {
                action: a.id,
                label: a.label.clone(),
                count: counts[a.id],
            })
            .collect(),
        reward_histogram: histogram((0..domain.num_states()).map(|s| domain.expected_reward(s, policy.pi[s]))),
    }
}

/// Histogram of realised rewards over rollouts from every non-terminal state.
pub fn rollout_reward_histogram<R: Rng + ?Sized>(
    domain: &DomainModel,
    policy: &TrainedPolicy,
    max_steps: usize,
    rng: &mut R,
) -> Result<Vec<RewardBin>> {
    let mut rewards = Vec::new();
    for s in domain.non_terminal_states() {
        let t = rollout(domain, policy, s, max_steps, rng)?;
        rewards.extend(t.steps.iter().map(|st| st.reward));
    }
    Ok(histogram(rewards))
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// Principal-component coordinates of the centred, unscaled feature matrix.
/// Each axis is oriented so its largest-magnitude loading is positive.
pub fn project_states(states: &[StateRecord]) -> Result<Vec<[f64; 2]>> {
    if states.len() < 2 {
        return Err(Error::Contract("projection needs at least two states".into()));
    }
    let d = states[0].features.len();
    let axes = principal_axes(states, 2)?;
    let mean = feature_means(states);
    Ok(states
        .iter()
        .map(|s| {
            let mut out = [0.0; 2];
            for (k, axis) in axes.iter().enumerate() {
                out[k] = (0..d).map(|j| (s.features[j] - mean[j]) * axis[j]).sum();
            }
            out
        })
        .collect())
}

fn feature_means(states: &[StateRecord]) -> Vec<f64> {
    let d = states[0].features.len();
    let n = states.len() as f64;
    (0..d)
        .map(|j| states.iter().map(|s| s.features[j]).sum::<f64>() / n)
        .collect()
}

/// Up to `k` unit principal axes in descending eigenvalue order.
pub fn principal_axes(states: &[StateRecord], k: usize) -> Result<Vec<Vec<f64>>> {
    let d = states[0].features.len();
    if states.iter().any(|s| s.features.len() != d) {
        return Err(Error::Contract("states differ in feature count".into()));
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    let mean = feature_means(states);
    let n = states.len();
    let centred = DMatrix::from_fn(n, d, |i, j| states[i].features[j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|c| {
            let mut axis: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let mut pivot = 0;
            for (j, v) in axis.iter().enumerate() {
                if v.abs() > axis[pivot].abs() + 1e-12 {
                    pivot = j;
                }
            }
            if axis[pivot] < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            axis
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::FeatureVector;
    use crate::solvers::Provenance;

    fn policy_from(q: Vec<Vec<f64>>) -> TrainedPolicy {
        let n = q.len();
        TrainedPolicy::from_q("fixture", q, vec![false; n], 0.9, 0.0, Provenance::new("test", None))
    }

    fn state(id: usize, x: &[f64]) -> StateRecord {
        StateRecord {
            id,
            features: FeatureVector::new(x.to_vec()).unwrap(),
            terminal: false,
        }
    }

    #[test]
    fn criticality_examples() {
        assert_eq!(state_criticality(&[1.0, 1.0, 1.0, 1.0]), 0.0);
        assert_eq!(state_criticality(&[4.0, 0.0, 0.0, 0.0]), 3.0);
        let p = policy_from(vec![vec![1.0, 1.0, 1.0, 1.0], vec![4.0, 0.0, 0.0, 0.0]]);
        let ranking = criticality(&p);
        assert_eq!(ranking.entries[0].state, 1);
        assert_eq!(ranking.entries[0].criticality, 3.0);
        assert_eq!(important_states(&p, 1).unwrap(), vec![1]);
        assert_eq!(important_states(&p, 2).unwrap().len(), 2);
        assert!(important_states(&p, 3).is_err());
    }

    #[test]
    fn quintile_labels() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let labels = value_labels(&v);
        assert_eq!(labels[0], ValueLabel::VeryLow);
        assert_eq!(labels[1], ValueLabel::VeryLow);
        assert_eq!(labels[2], ValueLabel::Low);
        assert_eq!(labels[9], ValueLabel::VeryHigh);
        let same = value_labels(&[3.0; 7]);
        assert!(same.iter().all(|l| *l == same[0]));
    }

    #[test]
    fn one_dimensional_data_projects_onto_first_axis() {
        let states: Vec<_> = (0..6)
            .map(|i| state(i, &[i as f64, 2.0 * i as f64, -(i as f64)]))
            .collect();
        let coords = project_states(&states).unwrap();
        for c in &coords {
            assert!(c[1].abs() < 1e-9, "{c:?}");
        }
        // Largest loading (on the second feature) is positive, so x grows with i.
        assert!(coords[5][0] > coords[0][0]);
    }

    #[test]
    fn zero_variance_projects_to_origin() {
        let states: Vec<_> = (0..3).map(|i| state(i, &[1.0, 1.0])).collect();
        for c in project_states(&states).unwrap() {
            assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
        }
        assert!(project_states(&states[..1]).is_err());
    }
}
