//! Sample-based model estimation followed by policy iteration.

use rand::Rng;

use super::{greedy_action, Provenance, TrainedPolicy, EXACT_TIE_TOLERANCE};
use crate::error::{Error, Result};
use crate::mdp::{DomainModel, Mdp, Transition};

/// Empirical model built by executing every action `k` times in every state.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedModel {
    /// `rows[s][a]`: observed successors with `prob = k'/k` and the mean
    /// reward of that `(s, a, s')` triple, sorted by successor id.
    rows: Vec<Vec<Vec<Transition>>>,
    counts: Vec<Vec<Vec<usize>>>,
    terminal: Vec<bool>,
    k: usize,
}

impl EstimatedModel {
    pub fn samples_per_pair(&self) -> usize {
        self.k
    }

    /// Raw successor counts for `(s, a)`, aligned with [`Mdp::outcomes`].
    pub fn counts(&self, state: usize, action: usize) -> &[usize] {
        &self.counts[state][action]
    }
}

impl Mdp for EstimatedModel {
    fn num_states(&self) -> usize {
        self.rows.len()
    }

    fn num_actions(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn outcomes(&self, state: usize, action: usize) -> &[Transition] {
        &self.rows[state][action]
    }

    fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }
}

pub fn estimate_model<R: Rng + ?Sized>(domain: &DomainModel, k: usize, rng: &mut R) -> Result<EstimatedModel> {
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    let n = domain.num_states();
    let m = domain.num_actions();
    let mut rows = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    let mut terminal = Vec::with_capacity(n);
    for s in 0..n {
        let is_terminal = domain.is_terminal(s);
        terminal.push(is_terminal);
        if is_terminal {
            rows.push(vec![vec![Transition::certain(s, 0.0)]; m]);
            counts.push(vec![vec![k]; m]);
            continue;
        }
        let mut s_rows = Vec::with_capacity(m);
        let mut s_counts = Vec::with_capacity(m);
        for a in 0..m {
            // (successor, count, reward sum), kept sorted by successor.
            let mut seen: Vec<(usize, usize, f64)> = Vec::new();
            for _ in 0..k {
                let (next, reward) = domain.step(s, a, rng)?;
                match seen.binary_search_by_key(&next, |e| e.0) {
                    Ok(i) => {
                        seen[i].1 += 1;
                        seen[i].2 += reward;
                    }
                    Err(i) => seen.insert(i, (next, 1, reward)),
                }
            }
            s_rows.push(
                seen.iter()
                    .map(|&(next, c, sum)| Transition {
                        next,
                        prob: c as f64 / k as f64,
                        reward: sum / c as f64,
                    })
                    .collect(),
            );
            s_counts.push(seen.iter().map(|e| e.1).collect());
        }
        rows.push(s_rows);
        counts.push(s_counts);
    }
    Ok(EstimatedModel {
        rows,
        counts,
        terminal,
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyIterationConfig {
    pub gamma: f64,
    /// Bound on the final Bellman optimality residual `max |Q - T(Q)|`.
    pub tol: f64,
    /// Stopping threshold for the iterative policy-evaluation sweeps.
    pub eval_tol: f64,
    pub max_iterations: usize,
    pub max_sweeps: usize,
}

impl PolicyIterationConfig {
    pub fn new(gamma: f64, tol: f64) -> Self {
        Self {
            gamma,
            tol,
            eval_tol: 1e-9,
            max_iterations: 1_000,
            max_sweeps: 1_000_000,
        }
    }
}

fn backup<M: Mdp>(model: &M, v: &[f64], gamma: f64, s: usize, a: usize) -> f64 {
    model
        .outcomes(s, a)
        .iter()
        .map(|t| t.prob * (t.reward + gamma * v[t.next]))
        .sum()
}

/// Solves the Bellman optimality equation on `model` by policy iteration.
///
/// Evaluation uses in-place sweeps until the largest update is below
/// `eval_tol`. Once the policy is stable the Q table is polished with
/// optimality backups until its residual is at most `tol`.
pub fn policy_iteration<M: Mdp>(model: &M, config: &PolicyIterationConfig) -> Result<TrainedPolicy> {
    let PolicyIterationConfig {
        gamma,
        tol,
        eval_tol,
        max_iterations,
        max_sweeps,
    } = *config;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Contract(format!("gamma {gamma} outside (0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("tolerance {tol} must be positive")));
    }
    let n = model.num_states();
    let m = model.num_actions();
    let mut pi = vec![0usize; n];
    let mut v = vec![0.0f64; n];
    let mut sweeps = 0usize;

    let mut stable = false;
    for _ in 0..max_iterations {
        loop {
            let mut delta: f64 = 0.0;
            for s in 0..n {
                if model.is_terminal(s) {
                    continue;
                }
                let new = backup(model, &v, gamma, s, pi[s]);
                delta = delta.max((new - v[s]).abs());
                v[s] = new;
            }
            sweeps += 1;
            if delta < eval_tol {
                break;
            }
            if sweeps >= max_sweeps {
                return Err(Error::NotConverged {
                    iterations: sweeps,
                    residual: delta,
                });
            }
        }

        let mut changed = false;
        for s in 0..n {
            if model.is_terminal(s) {
                continue;
            }
            let row: Vec<f64> = (0..m).map(|a| backup(model, &v, gamma, s, a)).collect();
            let best = greedy_action(&row, 0.0);
            // Keep the incumbent unless the challenger is clearly better.
            if row[best] > row[pi[s]] + 10.0 * eval_tol {
                pi[s] = best;
                changed = true;
            }
        }
        if !changed {
            stable = true;
            break;
        }
    }

    let mut q = q_from_values(model, &v, gamma);
    let mut residual = bellman_residual(model, &q, gamma);
    let mut polish = 0;
    while residual > tol {
        if polish >= max_sweeps || !stable {
            return Err(Error::NotConverged {
                iterations: max_iterations,
                residual,
            });
        }
        let values: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        q = q_from_values(model, &values, gamma);
        residual = bellman_residual(model, &q, gamma);
        polish += 1;
    }

    let terminal = (0..n).map(|s| model.is_terminal(s)).collect();
    let provenance = Provenance::new("policy-iteration", None)
        .with("gamma", gamma)
        .with("tol", tol)
        .with("eval_tol", eval_tol);
    Ok(TrainedPolicy::from_q("", q, terminal, gamma, EXACT_TIE_TOLERANCE, provenance))
}

fn q_from_values<M: Mdp>(model: &M, v: &[f64], gamma: f64) -> Vec<Vec<f64>> {
    (0..model.num_states())
        .map(|s| {
            if model.is_terminal(s) {
                vec![0.0; model.num_actions()]
            } else {
                (0..model.num_actions())
                    .map(|a| backup(model, v, gamma, s, a))
                    .collect()
            }
        })
        .collect()
}

/// `max_{s,a} |Q(s,a) - Σ T(s,a,s')[R + γ max_a' Q(s',a')]|` over non-terminal states.
pub fn bellman_residual<M: Mdp>(model: &M, q: &[Vec<f64>], gamma: f64) -> f64 {
    let values: Vec<f64> = q
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut residual: f64 = 0.0;
    for s in 0..model.num_states() {
        if model.is_terminal(s) {
            continue;
        }
        for a in 0..model.num_actions() {
            residual = residual.max((q[s][a] - backup(model, &values, gamma, s, a)).abs());
        }
    }
    residual
}

/// Estimates a model with `k` samples per pair, then solves it with policy
/// iteration at the domain's discount.
pub fn model_based<R: Rng + ?Sized>(
    domain: &DomainModel,
    k: usize,
    tol: f64,
    seed: Option<u64>,
    rng: &mut R,
) -> Result<TrainedPolicy> {
    let model = estimate_model(domain, k, rng)?;
    let mut policy = policy_iteration(&model, &PolicyIterationConfig::new(domain.discount(), tol))?;
    policy.domain = domain.name().to_string();
    policy.provenance = Provenance::new("model-based", seed)
        .with("k", k)
        .with("gamma", domain.discount())
        .with("tol", tol);
    Ok(policy)
}
