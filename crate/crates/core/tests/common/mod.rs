#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use whyrl_core::mdp::{DomainParts, FeatureSpec, Mdp, Transition};
use whyrl_core::solvers::{policy_iteration, PolicyIterationConfig, Provenance, TrainedPolicy};
use whyrl_core::DomainModel;

/// Fewest steps from each state to any terminal state over the support of
/// the transition graph (reverse BFS). `None` when no terminal is reachable.
pub fn steps_to_terminal(d: &DomainModel) -> Vec<Option<usize>> {
    let n = d.num_states();
    let mut preds = vec![Vec::new(); n];
    for s in 0..n {
        if d.is_terminal(s) {
            continue;
        }
        for a in 0..d.num_actions() {
            for t in d.outcomes(s, a) {
                if t.prob > 0.0 {
                    preds[t.next].push(s);
                }
            }
        }
    }
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        if d.is_terminal(s) {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        let next = dist[s].unwrap() + 1;
        for &p in &preds[s] {
            if dist[p].is_none() {
                dist[p] = Some(next);
                queue.push_back(p);
            }
        }
    }
    dist
}

pub fn solve(d: &DomainModel) -> TrainedPolicy {
    let mut p = policy_iteration(d, &PolicyIterationConfig::new(d.discount(), 1e-9)).unwrap();
    p.domain = d.name().to_string();
    p
}

pub fn policy_from_pi(domain: &str, pi: &[usize], actions: usize) -> TrainedPolicy {
    let q = pi
        .iter()
        .map(|&a| (0..actions).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
        .collect();
    TrainedPolicy::from_q(domain, q, vec![false; pi.len()], 0.9, 0.0, Provenance::new("fixture", None))
}

/// Self-looping domain over the given feature rows; every action keeps the state.
pub fn grid_fixture(name: &str, rows: &[Vec<f64>], actions: usize) -> DomainModel {
    let dim = rows[0].len();
    let features = (0..dim)
        .map(|j| {
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            FeatureSpec::new(format!("f{j}"), lo, hi)
        })
        .collect();
    DomainModel::new(DomainParts {
        name: name.into(),
        discount: 0.9,
        features,
        actions: (0..actions).map(|a| format!("a{a}")).collect(),
        states: rows.iter().map(|r| (r.clone(), false)).collect(),
        transitions: (0..rows.len())
            .map(|s| (0..actions).map(|_| vec![Transition::certain(s, 0.0)]).collect())
            .collect(),
        layout: None,
        subgoals: BTreeMap::new(),
    })
    .unwrap()
}
