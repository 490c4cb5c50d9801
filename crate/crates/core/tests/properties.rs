mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{grid_fixture, policy_from_pi};
use whyrl_core::explainer::{criticality, state_criticality, value_labels};
use whyrl_core::mdp::{euclidean_distance, DomainParts, FeatureSpec, Transition};
use whyrl_core::solvers::model_based::bellman_residual;
use whyrl_core::solvers::*;
use whyrl_core::tree::fit_tree;
use whyrl_core::{DomainModel, Explainer, Explanation, FeatureVector, Mdp};

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, dim)
}

/// Random MDP with one terminal state and rows of up to three successors.
fn random_mdp() -> impl Strategy<Value = DomainModel> {
    (2usize..7, 1usize..4).prop_flat_map(|(n, m)| {
        let row = prop::collection::vec((0..n, 1u32..10, -5i32..6), 1..4);
        prop::collection::vec(prop::collection::vec(row, m), n - 1).prop_map(move |rows| {
            let transitions = rows
                .into_iter()
                .map(|actions| {
                    actions
                        .into_iter()
                        .map(|succ| {
                            let total: u32 = succ.iter().map(|(_, w, _)| w).sum();
                            succ.into_iter()
                                .map(|(next, w, r)| Transition {
                                    next,
                                    prob: w as f64 / total as f64,
                                    reward: r as f64,
                                })
                                .collect()
                        })
                        .collect()
                })
                .chain(std::iter::once(Vec::new()))
                .collect();
            DomainModel::new(DomainParts {
                name: "random".into(),
                discount: 0.9,
                features: vec![FeatureSpec::new("i", 0.0, n as f64)],
                actions: (0..m).map(|a| format!("a{a}")).collect(),
                states: (0..n).map(|i| (vec![i as f64], i == n - 1)).collect(),
                transitions,
                layout: None,
                subgoals: BTreeMap::new(),
            })
            .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn distance_is_a_metric(x in vector(4), y in vector(4), z in vector(4)) {
        let (x, y, z) = (
            FeatureVector::new(x).unwrap(),
            FeatureVector::new(y).unwrap(),
            FeatureVector::new(z).unwrap(),
        );
        let d = |a: &FeatureVector, b: &FeatureVector| euclidean_distance(a, b).unwrap();
        prop_assert_eq!(d(&x, &x), 0.0);
        prop_assert!(d(&x, &y) >= 0.0);
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
    }

    #[test]
    fn domain_files_round_trip(d in random_mdp()) {
        let text = d.to_json_string();
        let back = DomainModel::from_json_str(&text).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(back.to_json_string(), text);
    }

    #[test]
    fn policy_iteration_satisfies_bellman(d in random_mdp()) {
        let p = policy_iteration(&d, &PolicyIterationConfig::new(0.9, 1e-8)).unwrap();
        prop_assert!(bellman_residual(&d, &p.q, 0.9) <= 1e-8);
        for s in 0..d.num_states() {
            let best = p.q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p.q[s][p.pi[s]] >= best - EXACT_TIE_TOLERANCE);
            prop_assert_eq!(p.v[s], best);
        }
    }

    #[test]
    fn estimated_rows_are_distributions(d in random_mdp(), k in 1usize..40, seed in any::<u64>()) {
        let est = estimate_model(&d, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for s in 0..d.num_states() {
            for a in 0..d.num_actions() {
                let row = est.outcomes(s, a);
                let total: f64 = row.iter().map(|t| t.prob).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                // Only successors the true model can produce appear.
                for t in row {
                    prop_assert!(d.outcomes(s, a).iter().any(|u| u.next == t.next && u.prob > 0.0));
                }
            }
        }
    }

    #[test]
    fn criticality_is_non_negative_and_shift_invariant(
        rows in prop::collection::vec(prop::collection::vec(-100.0..100.0f64, 4), 1..30),
        shift in -1000.0..1000.0f64,
    ) {
        let n = rows.len();
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
        let p = TrainedPolicy::from_q("a", rows, vec![false; n], 0.9, 0.0, Provenance::new("t", None));
        let q = TrainedPolicy::from_q("b", shifted, vec![false; n], 0.9, 0.0, Provenance::new("t", None));
        for s in 0..n {
            let c = state_criticality(&p.q[s]);
            prop_assert!(c >= 0.0);
            prop_assert!((c - state_criticality(&q.q[s])).abs() < 1e-9);
        }
        let _ = criticality(&p);
    }

    #[test]
    fn argmax_ignores_constant_shift(row in prop::collection::vec(-8i32..8, 1..7), shift in -20i32..20) {
        // Integer-valued rows keep the shifted comparison exact.
        let a: Vec<f64> = row.iter().map(|&x| x as f64).collect();
        let b: Vec<f64> = row.iter().map(|&x| (x + shift) as f64).collect();
        prop_assert_eq!(argmax_lowest(&a), argmax_lowest(&b));
        prop_assert_eq!(greedy_action(&a, 0.5), greedy_action(&b, 0.5));
    }

    #[test]
    fn value_labels_are_monotone(values in prop::collection::vec(-20i32..20, 1..60)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let labels = value_labels(&v);
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] <= v[j] {
                    prop_assert!(labels[i] <= labels[j]);
                }
            }
        }
    }

    #[test]
    fn why_not_matches_exhaustive_scan(
        cells in prop::collection::btree_set((0i32..6, 0i32..6), 3..20),
        actions in prop::collection::vec(0usize..3, 20),
        pick in any::<prop::sample::Index>(),
        foil in 0usize..3,
    ) {
        let rows: Vec<Vec<f64>> = cells.iter().map(|&(a, b)| vec![a as f64, b as f64]).collect();
        let n = rows.len();
        let pi = &actions[..n];
        let d = grid_fixture("grid", &rows, 3);
        let p = policy_from_pi("grid", pi, 3);
        let t = fit_tree(d.states(), &p.pi, 3).unwrap();
        let ex = Explainer::new(&d, &p, &t).unwrap();
        let s = pick.index(n);
        let oracle = (0..n)
            .filter(|&c| pi[c] == foil)
            .map(|c| (c, euclidean_distance(&d.states()[s].features, &d.states()[c].features).unwrap()))
            .fold(None::<(usize, f64)>, |best, (c, dist)| match best {
                Some((_, bd)) if bd <= dist => best,
                _ => Some((c, dist)),
            });
        match ex.why_not(s, foil) {
            Ok(Explanation::WhyNot { foil_state, distance, .. }) => {
                prop_assert_eq!(Some((foil_state, distance)), oracle);
            }
            Err(whyrl_core::Error::InvalidFoil { .. }) => prop_assert_eq!(pi[s], foil),
            Err(whyrl_core::Error::NoFoilState { .. }) => prop_assert!(oracle.is_none()),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn replay_buffer_keeps_the_newest(cap in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(cap);
        for i in 0..pushes {
            buf.push(Experience { state: i, action: 0, reward: 0.0, next: i, terminal: false });
            prop_assert!(buf.len() <= cap);
        }
        let kept: Vec<usize> = buf.iter_oldest_first().map(|e| e.state).collect();
        let expected: Vec<usize> = (pushes.saturating_sub(cap)..pushes).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn epsilon_schedule_stays_in_range(start in 0.0..1.0f64, end in 0.0..1.0f64, decay in 1usize..500, ep in 0usize..1000) {
        let s = EpsilonSchedule::linear(start, end, decay);
        let e = s.at(ep);
        prop_assert!(e >= start.min(end) - 1e-12 && e <= start.max(end) + 1e-12);
        if ep >= decay {
            prop_assert!((e - end).abs() < 1e-12);
        }
    }
}
