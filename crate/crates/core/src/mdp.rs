//! The discrete MDP model shared by every other module: states described by
//! named real-valued features, labelled actions, sparse transition rows and a
//! per-domain discount.
//!
//! A [`DomainModel`] is validated once at construction and is immutable
//! afterwards. Terminal states are absorbing: their rows are a self-loop with
//! probability 1 and reward 0.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of every transition row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Ordered feature values of a single state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "feature {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub id: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub id: usize,
    pub features: FeatureVector,
    pub terminal: bool,
}

/// One successor of a transition row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

impl Transition {
    pub fn certain(next: usize, reward: f64) -> Self {
        Self {
            next,
            prob: 1.0,
            reward,
        }
    }
}

// Written as a `[next, prob, reward]` triple in domain files.
impl Serialize for Transition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        (self.next, self.prob, self.reward).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Transition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let (next, prob, reward) = <(usize, f64, f64)>::deserialize(deserializer)?;
        Ok(Self { next, prob, reward })
    }
}

/// A glyph drawn in a grid cell by the spatial renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glyph {
    pub kind: String,
    pub row: i64,
    pub col: i64,
}

/// Optional spatial rendering metadata for grid domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    /// Blocked edges between two orthogonally adjacent cells, `[r1, c1, r2, c2]`.
    #[serde(default)]
    pub walls: Vec<[usize; 4]>,
    /// Glyph placements per state id.
    pub placements: Vec<Vec<Glyph>>,
}

/// Unvalidated parts of a domain, as produced by the builders.
#[derive(Debug, Clone)]
pub struct DomainParts {
    pub name: String,
    pub discount: f64,
    pub features: Vec<FeatureSpec>,
    pub actions: Vec<String>,
    /// Feature row and terminal flag per state; ids are the positions.
    pub states: Vec<(Vec<f64>, bool)>,
    /// `transitions[s][a]`; rows of terminal states may be left empty.
    pub transitions: Vec<Vec<Vec<Transition>>>,
    pub layout: Option<GridLayout>,
    pub subgoals: BTreeMap<(usize, usize), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainModel {
    name: String,
    discount: f64,
    features: Vec<FeatureSpec>,
    actions: Vec<ActionSpec>,
    states: Vec<StateRecord>,
    transitions: Vec<Vec<Vec<Transition>>>,
    layout: Option<GridLayout>,
    subgoals: BTreeMap<(usize, usize), String>,
}

/// Read access to a finite MDP, implemented by the true domain and by
/// sample-estimated models.
pub trait Mdp {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn outcomes(&self, state: usize, action: usize) -> &[Transition];
    fn is_terminal(&self, state: usize) -> bool;
}

impl DomainModel {
    pub fn new(parts: DomainParts) -> Result<Self> {
        let DomainParts {
            name,
            discount,
            features,
            actions,
            states,
            mut transitions,
            layout,
            subgoals,
        } = parts;

        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::Validation(format!(
                "discount {discount} outside (0, 1]"
            )));
        }
        for (i, f) in features.iter().enumerate() {
            if !(f.min.is_finite() && f.max.is_finite() && f.min <= f.max) {
                return Err(Error::Validation(format!(
                    "feature {i} ({}) has invalid range [{}, {}]",
                    f.name, f.min, f.max
                )));
            }
        }
        if actions.is_empty() {
            return Err(Error::Validation("domain declares no actions".into()));
        }
        let mut labels = HashSet::new();
        for label in &actions {
            if !labels.insert(label.as_str()) {
                return Err(Error::Validation(format!("duplicate action label {label:?}")));
            }
        }
        if states.is_empty() {
            return Err(Error::Validation("domain declares no states".into()));
        }

        let mut seen = HashSet::new();
        let mut records = Vec::with_capacity(states.len());
        for (id, (values, terminal)) in states.into_iter().enumerate() {
            if values.len() != features.len() {
                return Err(Error::Validation(format!(
                    "state {id} has {} features, expected {}",
                    values.len(),
                    features.len()
                )));
            }
            let fv = FeatureVector::new(values)
                .map_err(|e| Error::Validation(format!("state {id}: {e}")))?;
            for (i, (v, spec)) in fv.as_slice().iter().zip(&features).enumerate() {
                if *v < spec.min || *v > spec.max {
                    return Err(Error::Validation(format!(
                        "state {id}: feature {i} ({}) = {v} outside declared range [{}, {}]",
                        spec.name, spec.min, spec.max
                    )));
                }
            }
            let key: Vec<u64> = fv.as_slice().iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::Validation(format!(
                    "state {id} duplicates the feature vector of an earlier state"
                )));
            }
            records.push(StateRecord {
                id,
                features: fv,
                terminal,
            });
        }

        let n = records.len();
        let m = actions.len();
        if transitions.len() != n {
            return Err(Error::Validation(format!(
                "transition table covers {} states, expected {n}",
                transitions.len()
            )));
        }
        for (s, rows) in transitions.iter_mut().enumerate() {
            let terminal = records[s].terminal;
            if terminal && rows.iter().all(|r| r.is_empty()) {
                *rows = vec![vec![Transition::certain(s, 0.0)]; m];
                continue;
            }
            if rows.len() != m {
                return Err(Error::Validation(format!(
                    "state {s} has {} action rows, expected {m}",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                validate_row(s, a, row, n, terminal)?;
            }
        }

        if let Some(layout) = &layout {
            if layout.placements.len() != n {
                return Err(Error::Validation(format!(
                    "layout has placements for {} states, expected {n}",
                    layout.placements.len()
                )));
            }
        }
        for &(s, a) in subgoals.keys() {
            if s >= n || a >= m {
                return Err(Error::Validation(format!(
                    "subgoal annotation for unknown pair (state {s}, action {a})"
                )));
            }
        }

        Ok(Self {
            name,
            discount,
            features,
            actions: actions
                .into_iter()
                .enumerate()
                .map(|(id, label)| ActionSpec { id, label })
                .collect(),
            states: records,
            transitions,
            layout,
            subgoals,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn actions(&self) -> &[ActionSpec] {
        &self.actions
    }

    pub fn states(&self) -> &[StateRecord] {
        &self.states
    }

    pub fn state(&self, id: usize) -> Result<&StateRecord> {
        self.states
            .get(id)
            .ok_or_else(|| Error::Contract(format!("unknown state id {id}")))
    }

    pub fn layout(&self) -> Option<&GridLayout> {
        self.layout.as_ref()
    }

    pub fn subgoal(&self, state: usize, action: usize) -> Option<&str> {
        self.subgoals.get(&(state, action)).map(String::as_str)
    }

    pub fn subgoals(&self) -> &BTreeMap<(usize, usize), String> {
        &self.subgoals
    }

    pub fn action_id(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.label == label)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn non_terminal_states(&self) -> Vec<usize> {
        self.states
            .iter()
            .filter(|s| !s.terminal)
            .map(|s| s.id)
            .collect()
    }

    /// Samples a successor of `(state, action)`.
    ///
    /// Exactly one `f64` is drawn from `rng` per call, whatever the row's
    /// shape, so learners that share a seed consume randomness in lockstep.
    pub fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<(usize, f64)> {
        let record = self.state(state)?;
        if action >= self.actions.len() {
            return Err(Error::Contract(format!("unknown action id {action}")));
        }
        if record.terminal {
            return Err(Error::Contract(format!(
                "cannot step from terminal state {state}"
            )));
        }
        let row = &self.transitions[state][action];
        let u: f64 = rng.random();
        let t = sample_row(row, u);
        Ok((t.next, t.reward))
    }

    /// Expected immediate reward `Σ T(s,a,s')·R(s,a,s')`.
    pub fn expected_reward(&self, state: usize, action: usize) -> f64 {
        self.transitions[state][action]
            .iter()
            .map(|t| t.prob * t.reward)
            .sum()
    }

    pub fn to_file(&self) -> DomainFile {
        DomainFile {
            meta: Meta {
                name: self.name.clone(),
                discount: self.discount,
            },
            features: self.features.clone(),
            actions: self.actions.iter().map(|a| a.label.clone()).collect(),
            states: self
                .states
                .iter()
                .map(|s| StateRow {
                    id: s.id,
                    features: s.features.as_slice().to_vec(),
                    terminal: s.terminal,
                })
                .collect(),
            transitions: self
                .states
                .iter()
                .filter(|s| !s.terminal)
                .flat_map(|s| {
                    self.transitions[s.id]
                        .iter()
                        .enumerate()
                        .map(move |(a, row)| TransitionRow {
                            s: s.id,
                            a,
                            next: row.clone(),
                        })
                })
                .collect(),
            layout: self.layout.clone(),
            subgoals: self
                .subgoals
                .iter()
                .map(|(&(s, a), label)| SubgoalRow {
                    s,
                    a,
                    label: label.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: DomainFile) -> Result<Self> {
        let n = file.states.len();
        let m = file.actions.len();
        let mut states = Vec::with_capacity(n);
        for (i, row) in file.states.into_iter().enumerate() {
            if row.id != i {
                return Err(Error::Validation(format!(
                    "state ids must be contiguous from 0; found id {} at position {i}",
                    row.id
                )));
            }
            states.push((row.features, row.terminal));
        }
        let mut transitions = vec![vec![Vec::new(); m]; n];
        let mut filled = vec![vec![false; m]; n];
        for row in file.transitions {
            if row.s >= n || row.a >= m {
                return Err(Error::Validation(format!(
                    "transition row for unknown pair (state {}, action {})",
                    row.s, row.a
                )));
            }
            if filled[row.s][row.a] {
                return Err(Error::Validation(format!(
                    "duplicate transition row for state {}, action {}",
                    row.s, row.a
                )));
            }
            filled[row.s][row.a] = true;
            transitions[row.s][row.a] = row.next;
        }
        for (s, rows) in filled.iter().enumerate() {
            if states[s].1 {
                continue;
            }
            if let Some(a) = rows.iter().position(|f| !f) {
                return Err(Error::Validation(format!(
                    "missing transition row for state {s}, action {a}"
                )));
            }
        }
        let mut subgoals = BTreeMap::new();
        for row in file.subgoals {
            subgoals.insert((row.s, row.a), row.label);
        }
        Self::new(DomainParts {
            name: file.meta.name,
            discount: file.meta.discount,
            features: file.features,
            actions: file.actions,
            states,
            transitions,
            layout: file.layout,
            subgoals,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: DomainFile = serde_json::from_str(text).map_err(Error::schema)?;
        Self::from_file(file)
    }

    pub fn to_json_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_file()).expect("domain serializes");
        text.push('\n');
        text
    }
}

impl Mdp for DomainModel {
    fn num_states(&self) -> usize {
        self.states.len()
    }

    fn num_actions(&self) -> usize {
        self.actions.len()
    }

    fn outcomes(&self, state: usize, action: usize) -> &[Transition] {
        &self.transitions[state][action]
    }

    fn is_terminal(&self, state: usize) -> bool {
        self.states[state].terminal
    }
}

fn validate_row(s: usize, a: usize, row: &[Transition], n: usize, terminal: bool) -> Result<()> {
    if row.is_empty() {
        return Err(Error::Validation(format!(
            "empty transition row for state {s}, action {a}"
        )));
    }
    let mut sum = 0.0;
    for t in row {
        if t.next >= n {
            return Err(Error::Validation(format!(
                "state {s}, action {a}: successor {} does not exist",
                t.next
            )));
        }
        if !(t.prob.is_finite() && t.prob >= 0.0) {
            return Err(Error::Validation(format!(
                "state {s}, action {a}: invalid probability {}",
                t.prob
            )));
        }
        if !t.reward.is_finite() {
            return Err(Error::Validation(format!(
                "state {s}, action {a}: non-finite reward"
            )));
        }
        if terminal && (t.next != s || t.reward != 0.0) && t.prob > 0.0 {
            return Err(Error::Validation(format!(
                "terminal state {s} must self-loop with reward 0 (action {a})"
            )));
        }
        sum += t.prob;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::Validation(format!(
            "transition row for state {s}, action {a} sums to {sum}, not 1"
        )));
    }
    Ok(())
}

fn sample_row(row: &[Transition], u: f64) -> &Transition {
    let mut acc = 0.0;
    for t in row {
        acc += t.prob;
        if u < acc {
            return t;
        }
    }
    row.iter().rev().find(|t| t.prob > 0.0).unwrap_or(&row[row.len() - 1])
}

/// Euclidean distance between two feature vectors on raw feature values.
pub fn euclidean_distance(x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "feature vectors differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    Ok(x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Euclidean distance after multiplying feature `i` by `scale[i]`.
pub fn scaled_euclidean_distance(x: &FeatureVector, y: &FeatureVector, scale: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() != scale.len() {
        return Err(Error::Contract(format!(
            "length mismatch: {} / {} features, {} scale factors",
            x.len(),
            y.len(),
            scale.len()
        )));
    }
    Ok(x.as_slice()
        .iter()
        .zip(y.as_slice())
        .zip(scale)
        .map(|((a, b), w)| {
            let d = (a - b) * w;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

pub fn load_domain(path: impl AsRef<Path>) -> Result<DomainModel> {
    let text = fs::read_to_string(path)?;
    DomainModel::from_json_str(&text)
}

pub fn save_domain(domain: &DomainModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, domain.to_json_string())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// On-disk document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFile {
    pub meta: Meta,
    pub features: Vec<FeatureSpec>,
    pub actions: Vec<String>,
    pub states: Vec<StateRow>,
    pub transitions: Vec<TransitionRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<GridLayout>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subgoals: Vec<SubgoalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRow {
    pub id: usize,
    pub features: Vec<f64>,
    #[serde(default)]
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRow {
    pub s: usize,
    pub a: usize,
    pub next: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgoalRow {
    pub s: usize,
    pub a: usize,
    pub label: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ABSORBING: &str = r#"{
        "meta": {"name": "absorbing", "discount": 0.5},
        "features": [{"name": "x", "min": 0, "max": 0}],
        "actions": ["stay"],
        "states": [{"id": 0, "features": [0], "terminal": false}],
        "transitions": [{"s": 0, "a": 0, "next": [[0, 1.0, 1.0]]}]
    }"#;

    #[test]
    fn loads_minimal_absorbing_domain() {
        let d = DomainModel::from_json_str(ABSORBING).unwrap();
        assert_eq!(d.num_states(), 1);
        assert_eq!(d.num_actions(), 1);
        assert_eq!(d.discount(), 0.5);
    }

    #[test]
    fn rejects_row_not_summing_to_one() {
        let text = ABSORBING.replace("[[0, 1.0, 1.0]]", "[[0, 0.9, 1.0]]");
        let err = DomainModel::from_json_str(&text).unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("state 0, action 0"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_position() {
        let text = ABSORBING.replace("\"discount\": 0.5", "\"discount\": \"high\"");
        match DomainModel::from_json_str(&text).unwrap_err() {
            Error::Schema { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_feature_vectors() {
        let parts = DomainParts {
            name: "dup".into(),
            discount: 0.9,
            features: vec![FeatureSpec::new("x", 0.0, 1.0)],
            actions: vec!["a".into()],
            states: vec![(vec![1.0], true), (vec![1.0], true)],
            transitions: vec![vec![vec![]], vec![vec![]]],
            layout: None,
            subgoals: BTreeMap::new(),
        };
        assert!(matches!(DomainModel::new(parts), Err(Error::Validation(_))));
    }

    #[test]
    fn terminal_states_must_self_loop() {
        let parts = DomainParts {
            name: "bad".into(),
            discount: 0.9,
            features: vec![FeatureSpec::new("x", 0.0, 1.0)],
            actions: vec!["a".into()],
            states: vec![(vec![0.0], false), (vec![1.0], true)],
            transitions: vec![
                vec![vec![Transition::certain(1, 1.0)]],
                vec![vec![Transition::certain(0, 0.0)]],
            ],
            layout: None,
            subgoals: BTreeMap::new(),
        };
        assert!(matches!(DomainModel::new(parts), Err(Error::Validation(_))));
    }

    #[test]
    fn step_from_terminal_is_a_contract_violation() {
        let parts = DomainParts {
            name: "t".into(),
            discount: 0.9,
            features: vec![FeatureSpec::new("x", 0.0, 1.0)],
            actions: vec!["a".into()],
            states: vec![(vec![0.0], false), (vec![1.0], true)],
            transitions: vec![vec![vec![Transition::certain(1, 1.0)]], vec![vec![]]],
            layout: None,
            subgoals: BTreeMap::new(),
        };
        let d = DomainModel::new(parts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(d.step(0, 0, &mut rng).unwrap(), (1, 1.0));
        assert!(matches!(d.step(1, 0, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn distance_examples() {
        let a = FeatureVector::new(vec![0.0, 0.0]).unwrap();
        let b = FeatureVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&a, &b).unwrap(), 5.0);
        let c = FeatureVector::new(vec![1.0]).unwrap();
        assert!(matches!(euclidean_distance(&a, &c), Err(Error::Contract(_))));
        assert_eq!(scaled_euclidean_distance(&a, &b, &[1.0, 1.0]).unwrap(), 5.0);
        assert_eq!(scaled_euclidean_distance(&a, &b, &[0.0, 0.5]).unwrap(), 2.0);
    }

    #[test]
    fn non_finite_features_rejected() {
        assert!(FeatureVector::new(vec![f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![f64::INFINITY]).is_err());
    }
}
