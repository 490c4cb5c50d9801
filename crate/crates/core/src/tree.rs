//! Overfitted CART surrogate of a policy, root-to-leaf paths and the
//! conversion of a path into an interval rule.
//!
//! Internal nodes test `feature < threshold` (left) against
//! `feature >= threshold` (right). Rules carry half-open intervals `[lo, hi)`:
//! right edges raise `lo`, left edges lower `hi`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionSpec, FeatureSpec, FeatureVector, StateRecord};

pub const TREE_FORMAT_VERSION: u32 = 1;

/// Slack used when comparing split scores so float noise cannot reorder ties.
const SCORE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        action: usize,
        /// Training states routed to this leaf.
        states: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub node: usize,
    pub direction: Direction,
}

/// Root-to-leaf path: the internal nodes crossed and the leaf reached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreePath {
    pub steps: Vec<PathStep>,
    pub leaf: usize,
}

/// Binary decision tree stored as a preorder node list, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTree {
    pub format_version: u32,
    pub feature_count: usize,
    pub action_count: usize,
    pub fidelity: f64,
    pub nodes: Vec<TreeNode>,
}

struct Sample<'a> {
    id: usize,
    x: &'a [f64],
    y: usize,
}

struct Builder<'a> {
    samples: Vec<Sample<'a>>,
    feature_count: usize,
    action_count: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>) -> Result<usize> {
        let slot = self.nodes.len();
        let first = self.samples[idx[0]].y;
        if idx.iter().all(|&i| self.samples[i].y == first) {
            let mut states: Vec<usize> = idx.iter().map(|&i| self.samples[i].id).collect();
            states.sort_unstable();
            self.nodes.push(TreeNode::Leaf { action: first, states });
            return Ok(slot);
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            let a = self.samples[idx[0]].id;
            let b = idx
                .iter()
                .map(|&i| &self.samples[i])
                .find(|s| s.y != first)
                .map_or(a, |s| s.id);
            return Err(Error::UnsplittableLeaf { first: a, second: b });
        };
        self.nodes.push(TreeNode::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.samples[i].x[feature] < threshold);
        let left = self.grow(l)?;
        let right = self.grow(r)?;
        if let TreeNode::Split { left: lref, right: rref, .. } = &mut self.nodes[slot] {
            *lref = left;
            *rref = right;
        }
        Ok(slot)
    }

    /// Gini-minimising split over midpoints of consecutive distinct values.
    /// Ties go to the lowest feature index, then the lowest threshold.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let mut total = vec![0usize; self.action_count];
        for &i in idx {
            total[self.samples[i].y] += 1;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.feature_count {
            order.sort_by(|&a, &b| self.samples[a].x[f].total_cmp(&self.samples[b].x[f]));
            let mut left = vec![0usize; self.action_count];
            for pos in 0..n - 1 {
                let cur = &self.samples[order[pos]];
                left[cur.y] += 1;
                let next_v = self.samples[order[pos + 1]].x[f];
                if cur.x[f] == next_v {
                    continue;
                }
                let nl = (pos + 1) as f64;
                let nr = (n - pos - 1) as f64;
                let sq_l: f64 = left.iter().map(|&c| (c * c) as f64).sum();
                let sq_r: f64 = left
                    .iter()
                    .zip(&total)
                    .map(|(&l, &t)| ((t - l) * (t - l)) as f64)
                    .sum();
                // n · weighted Gini impurity of the two children.
                let score = (nl - sq_l / nl) + (nr - sq_r / nr);
                if best.is_none_or(|(b, _, _)| score < b - SCORE_EPS) {
                    best = Some((score, f, (cur.x[f] + next_v) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Grows a tree to purity on `(features(s), pi(s))` for every state.
/// `pi` is indexed by state id.
pub fn fit_tree(states: &[StateRecord], pi: &[usize], action_count: usize) -> Result<SurrogateTree> {
    if states.is_empty() {
        return Err(Error::Contract("cannot fit a tree on zero states".into()));
    }
    let feature_count = states[0].features.len();
    let mut samples = Vec::with_capacity(states.len());
    for s in states {
        let y = *pi
            .get(s.id)
            .ok_or_else(|| Error::Contract(format!("policy has no action for state {}", s.id)))?;
        if y >= action_count {
            return Err(Error::Contract(format!("action {y} out of range for state {}", s.id)));
        }
        if s.features.len() != feature_count {
            return Err(Error::Contract(format!("state {} has the wrong feature count", s.id)));
        }
        samples.push(Sample {
            id: s.id,
            x: s.features.as_slice(),
            y,
        });
    }
    let mut builder = Builder {
        samples,
        feature_count,
        action_count,
        nodes: Vec::new(),
    };
    let all: Vec<usize> = (0..states.len()).collect();
    builder.grow(all)?;

    let mut tree = SurrogateTree {
        format_version: TREE_FORMAT_VERSION,
        feature_count,
        action_count,
        fidelity: 0.0,
        nodes: builder.nodes,
    };
    tree.fidelity = tree.fidelity_on(states, pi);
    Ok(tree)
}

impl SurrogateTree {
    /// Fraction of `states` whose reached leaf predicts `pi(s)`.
    pub fn fidelity_on(&self, states: &[StateRecord], pi: &[usize]) -> f64 {
        let hits = states
            .iter()
            .filter(|s| self.predict(&s.features) == Some(pi[s.id]))
            .count();
        hits as f64 / states.len() as f64
    }

    pub fn predict(&self, x: &FeatureVector) -> Option<usize> {
        let path = self.path_of(x).ok()?;
        match &self.nodes[path.leaf] {
            TreeNode::Leaf { action, .. } => Some(*action),
            TreeNode::Split { .. } => None,
        }
    }

    /// Follows `f < θ → left`, otherwise right, from the root to a leaf.
    pub fn path_of(&self, x: &FeatureVector) -> Result<TreePath> {
        if x.len() != self.feature_count {
            return Err(Error::Contract(format!(
                "state has {} features, tree expects {}",
                x.len(),
                self.feature_count
            )));
        }
        let mut steps = Vec::new();
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { .. } => return Ok(TreePath { steps, leaf: node }),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let direction = if x[*feature] < *threshold {
                        Direction::Left
                    } else {
                        Direction::Right
                    };
                    steps.push(PathStep { node, direction });
                    node = if direction == Direction::Left { *left } else { *right };
                }
            }
        }
    }

    /// Path from the root to the given node.
    pub fn path_to(&self, target: usize) -> Option<TreePath> {
        fn walk(tree: &SurrogateTree, node: usize, target: usize, steps: &mut Vec<PathStep>) -> bool {
            if node == target {
                return true;
            }
            if let TreeNode::Split { left, right, .. } = tree.nodes[node] {
                for (child, direction) in [(left, Direction::Left), (right, Direction::Right)] {
                    steps.push(PathStep { node, direction });
                    if walk(tree, child, target, steps) {
                        return true;
                    }
                    steps.pop();
                }
            }
            false
        }
        let mut steps = Vec::new();
        walk(self, 0, target, &mut steps).then_some(TreePath { steps, leaf: target })
    }

    /// Leaf node indices in preorder.
    pub fn leaves(&self) -> impl Iterator<Item = (usize, usize, &[usize])> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            TreeNode::Leaf { action, states } => Some((i, *action, states.as_slice())),
            TreeNode::Split { .. } => None,
        })
    }

    pub fn leaf_action(&self, node: usize) -> Option<usize> {
        match self.nodes.get(node)? {
            TreeNode::Leaf { action, .. } => Some(*action),
            TreeNode::Split { .. } => None,
        }
    }

    pub fn depth(&self) -> usize {
        fn go(tree: &SurrogateTree, node: usize) -> usize {
            match tree.nodes[node] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(tree, left).max(go(tree, right)),
            }
        }
        go(self, 0)
    }

    /// Structural checks: strict binary preorder layout, children in range,
    /// every training state in exactly one leaf.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Validation("tree has no nodes".into()));
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(Error::Validation(format!("fidelity {} outside [0, 1]", self.fidelity)));
        }
        let mut seen_states = std::collections::HashSet::new();
        let mut referenced = vec![false; self.nodes.len()];
        referenced[0] = true;
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= self.feature_count || !threshold.is_finite() {
                        return Err(Error::Validation(format!("node {i} has an invalid test")));
                    }
                    if *left != i + 1 || *right <= *left || *right >= self.nodes.len() {
                        return Err(Error::Validation(format!("node {i} breaks preorder layout")));
                    }
                    for c in [*left, *right] {
                        if std::mem::replace(&mut referenced[c], true) {
                            return Err(Error::Validation(format!("node {c} has two parents")));
                        }
                    }
                }
                TreeNode::Leaf { action, states } => {
                    if *action >= self.action_count {
                        return Err(Error::Validation(format!("leaf {i} has unknown action")));
                    }
                    for s in states {
                        if !seen_states.insert(*s) {
                            return Err(Error::Validation(format!("state {s} appears in two leaves")));
                        }
                    }
                }
            }
        }
        if let Some(i) = referenced.iter().position(|r| !r) {
            return Err(Error::Validation(format!("node {i} is unreachable")));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut text = serde_json::to_string(self).expect("tree serializes");
        text.push('\n');
        text
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let tree: Self = serde_json::from_str(text).map_err(Error::schema)?;
        if tree.format_version != TREE_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported tree format version {}",
                tree.format_version
            )));
        }
        tree.validate()?;
        Ok(tree)
    }
}

// ---------------------------------------------------------------------------
// Rules
// ---------------------------------------------------------------------------

/// Half-open interval `[lo, hi)`; `None` bounds are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Interval {
    pub const ANY: Interval = Interval { lo: None, hi: None };

    pub fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v < hi)
    }

    fn raise_lo(&mut self, t: f64) {
        self.lo = Some(self.lo.map_or(t, |lo| lo.max(t)));
    }

    fn lower_hi(&mut self, t: f64) {
        self.hi = Some(self.hi.map_or(t, |hi| hi.min(t)));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub interval: Interval,
}

/// Conjunction of feature intervals concluding an action. Conditions are
/// listed in order of first appearance along the originating path; features
/// absent from the list are unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub conditions: Vec<Condition>,
    pub action: usize,
}

impl Rule {
    pub fn matches(&self, x: &FeatureVector) -> bool {
        self.conditions
            .iter()
            .all(|c| c.interval.contains(x[c.feature]))
    }

    pub fn condition(&self, feature: usize) -> Option<&Interval> {
        self.conditions
            .iter()
            .find(|c| c.feature == feature)
            .map(|c| &c.interval)
    }

    pub fn is_unconditional(&self) -> bool {
        self.conditions.is_empty()
    }

    /// `if taxi_row ≥ 2.5 and 0.5 ≤ passenger < 1.5 then Move South`, or
    /// `always <action>` when nothing is constrained.
    pub fn render(&self, features: &[FeatureSpec], actions: &[ActionSpec]) -> String {
        let action = &actions[self.action].label;
        if self.conditions.is_empty() {
            return format!("always {action}");
        }
        let parts: Vec<String> = self
            .conditions
            .iter()
            .map(|c| {
                let name = &features[c.feature].name;
                match (c.interval.lo, c.interval.hi) {
                    (Some(lo), Some(hi)) => format!("{lo} ≤ {name} < {hi}"),
                    (Some(lo), None) => format!("{name} ≥ {lo}"),
                    (None, Some(hi)) => format!("{name} < {hi}"),
                    (None, None) => format!("{name} any"),
                }
            })
            .collect();
        format!("if {} then {action}", parts.join(" and "))
    }

    /// Inverse of [`Rule::render`].
    pub fn parse(text: &str, features: &[FeatureSpec], actions: &[ActionSpec]) -> Result<Rule> {
        let bad = |what: &str| Error::Validation(format!("cannot parse rule {text:?}: {what}"));
        let action_of = |label: &str| {
            actions
                .iter()
                .position(|a| a.label == label)
                .ok_or_else(|| bad(&format!("unknown action {label:?}")))
        };
        let feature_of = |name: &str| {
            features
                .iter()
                .position(|f| f.name == name)
                .ok_or_else(|| bad(&format!("unknown feature {name:?}")))
        };
        let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));

        if let Some(label) = text.strip_prefix("always ") {
            return Ok(Rule {
                conditions: Vec::new(),
                action: action_of(label)?,
            });
        }
        let body = text.strip_prefix("if ").ok_or_else(|| bad("missing 'if'"))?;
        let (conds, label) = body.rsplit_once(" then ").ok_or_else(|| bad("missing 'then'"))?;
        let mut conditions = Vec::new();
        for part in conds.split(" and ") {
            let part = part.trim();
            let condition = if let Some((lo, rest)) = part.split_once(" ≤ ") {
                let (name, hi) = rest.split_once(" < ").ok_or_else(|| bad("unbalanced interval"))?;
                Condition {
                    feature: feature_of(name)?,
                    interval: Interval {
                        lo: Some(number(lo)?),
                        hi: Some(number(hi)?),
                    },
                }
            } else if let Some((name, lo)) = part.split_once(" ≥ ") {
                Condition {
                    feature: feature_of(name)?,
                    interval: Interval {
                        lo: Some(number(lo)?),
                        hi: None,
                    },
                }
            } else if let Some((name, hi)) = part.split_once(" < ") {
                Condition {
                    feature: feature_of(name)?,
                    interval: Interval {
                        lo: None,
                        hi: Some(number(hi)?),
                    },
                }
            } else if let Some(name) = part.strip_suffix(" any") {
                Condition {
                    feature: feature_of(name)?,
                    interval: Interval::ANY,
                }
            } else {
                return Err(bad(&format!("unrecognised condition {part:?}")));
            };
            conditions.push(condition);
        }
        Ok(Rule {
            conditions,
            action: action_of(label)?,
        })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => write!(f, "[{lo}, {hi})"),
            (Some(lo), None) => write!(f, "[{lo}, ∞)"),
            (None, Some(hi)) => write!(f, "(-∞, {hi})"),
            (None, None) => write!(f, "any"),
        }
    }
}

/// Intersects the edge constraints along `path` feature by feature.
///
/// Every constrained feature's interval must still meet the feature's
/// declared `[min, max]` range; otherwise the tree is corrupt.
pub fn rule_of_path(tree: &SurrogateTree, path: &TreePath, features: &[FeatureSpec]) -> Result<Rule> {
    let mut conditions: Vec<Condition> = Vec::new();
    let mut expected = 0usize;
    for step in &path.steps {
        if step.node != expected {
            return Err(Error::Contract(format!("path is not connected at node {}", step.node)));
        }
        let Some(TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        }) = tree.nodes.get(step.node)
        else {
            return Err(Error::Contract(format!("path step {} is not an internal node", step.node)));
        };
        let pos = match conditions.iter().position(|c| c.feature == *feature) {
            Some(p) => p,
            None => {
                conditions.push(Condition {
                    feature: *feature,
                    interval: Interval::ANY,
                });
                conditions.len() - 1
            }
        };
        let interval = &mut conditions[pos].interval;
        match step.direction {
            Direction::Right => {
                interval.raise_lo(*threshold);
                expected = *right;
            }
            Direction::Left => {
                interval.lower_hi(*threshold);
                expected = *left;
            }
        }
    }
    if path.leaf != expected {
        return Err(Error::Contract("path does not end at its declared leaf".into()));
    }
    let Some(action) = tree.leaf_action(path.leaf) else {
        return Err(Error::Contract(format!("node {} is not a leaf", path.leaf)));
    };
    for c in &conditions {
        let spec = features.get(c.feature);
        let lo = c.interval.lo.unwrap_or(f64::NEG_INFINITY);
        let hi = c.interval.hi.unwrap_or(f64::INFINITY);
        let (min, max) = spec.map_or((f64::NEG_INFINITY, f64::INFINITY), |s| (s.min, s.max));
        if lo >= hi || lo > max || hi <= min {
            return Err(Error::EmptyInterval {
                feature: c.feature,
                lo,
                hi,
            });
        }
    }
    Ok(Rule { conditions, action })
}

/// Ids of the states satisfying every condition of `rule`.
pub fn rule_coverage(rule: &Rule, states: &[StateRecord]) -> Vec<usize> {
    states
        .iter()
        .filter(|s| rule.matches(&s.features))
        .map(|s| s.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(id: usize, x: &[f64]) -> StateRecord {
        StateRecord {
            id,
            features: FeatureVector::new(x.to_vec()).unwrap(),
            terminal: false,
        }
    }

    fn specs(n: usize) -> Vec<FeatureSpec> {
        (0..n).map(|i| FeatureSpec::new(format!("f{i}"), -10.0, 10.0)).collect()
    }

    fn actions(n: usize) -> Vec<ActionSpec> {
        (0..n)
            .map(|id| ActionSpec {
                id,
                label: format!("a{id}"),
            })
            .collect()
    }

    #[test]
    fn single_action_gives_single_leaf() {
        let states: Vec<_> = (0..5).map(|i| state(i, &[i as f64])).collect();
        let tree = fit_tree(&states, &[2; 5], 3).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.fidelity, 1.0);
        let path = tree.path_of(&states[3].features).unwrap();
        assert!(path.steps.is_empty());
        let rule = rule_of_path(&tree, &path, &specs(1)).unwrap();
        assert!(rule.is_unconditional());
        assert_eq!(rule.render(&specs(1), &actions(3)), "always a2");
        assert_eq!(rule_coverage(&rule, &states).len(), 5);
    }

    #[test]
    fn separable_pair_splits_between_values() {
        let states = vec![state(0, &[0.0]), state(1, &[1.0])];
        let tree = fit_tree(&states, &[0, 1], 2).unwrap();
        match tree.nodes[0] {
            TreeNode::Split { threshold, .. } => assert!(threshold > 0.0 && threshold < 1.0),
            _ => panic!("expected a split"),
        }
        assert_eq!(tree.fidelity, 1.0);
    }

    #[test]
    fn value_equal_to_threshold_goes_right() {
        let tree = SurrogateTree {
            format_version: TREE_FORMAT_VERSION,
            feature_count: 1,
            action_count: 2,
            fidelity: 1.0,
            nodes: vec![
                TreeNode::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                TreeNode::Leaf { action: 0, states: vec![0] },
                TreeNode::Leaf { action: 1, states: vec![1] },
            ],
        };
        tree.validate().unwrap();
        let path = tree.path_of(&FeatureVector::new(vec![0.5]).unwrap()).unwrap();
        assert_eq!(path.steps[0].direction, Direction::Right);
        assert_eq!(path.leaf, 2);
    }

    #[test]
    fn identical_features_with_different_actions_are_unsplittable() {
        let states = vec![state(0, &[1.0]), state(1, &[1.0])];
        assert!(matches!(
            fit_tree(&states, &[0, 1], 2),
            Err(Error::UnsplittableLeaf { first: 0, second: 1 })
        ));
    }

    #[test]
    fn xor_pattern_still_reaches_purity() {
        let states = vec![
            state(0, &[0.0, 0.0]),
            state(1, &[1.0, 1.0]),
            state(2, &[0.0, 1.0]),
            state(3, &[1.0, 0.0]),
        ];
        let tree = fit_tree(&states, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(tree.fidelity, 1.0);
        // Zero-gain tie: lowest feature index wins at the root.
        assert!(matches!(tree.nodes[0], TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn interval_intersection_on_repeated_feature() {
        // right at (f1, 0.5), then left at (f1, 1.5)
        let tree = SurrogateTree {
            format_version: TREE_FORMAT_VERSION,
            feature_count: 2,
            action_count: 3,
            fidelity: 1.0,
            nodes: vec![
                TreeNode::Split { feature: 1, threshold: 0.5, left: 1, right: 2 },
                TreeNode::Leaf { action: 0, states: vec![] },
                TreeNode::Split { feature: 1, threshold: 1.5, left: 3, right: 4 },
                TreeNode::Leaf { action: 1, states: vec![] },
                TreeNode::Leaf { action: 2, states: vec![] },
            ],
        };
        let path = TreePath {
            steps: vec![
                PathStep { node: 0, direction: Direction::Right },
                PathStep { node: 2, direction: Direction::Left },
            ],
            leaf: 3,
        };
        let rule = rule_of_path(&tree, &path, &specs(2)).unwrap();
        assert_eq!(
            rule,
            Rule {
                conditions: vec![Condition {
                    feature: 1,
                    interval: Interval { lo: Some(0.5), hi: Some(1.5) },
                }],
                action: 1,
            }
        );
        assert_eq!(rule.render(&specs(2), &actions(3)), "if 0.5 ≤ f1 < 1.5 then a1");
        assert_eq!(tree.path_to(3), Some(path));
    }

    #[test]
    fn corrupted_path_gives_empty_interval() {
        // left at (f0, 0.5) then right at (f0, 1.5) can never hold.
        let tree = SurrogateTree {
            format_version: TREE_FORMAT_VERSION,
            feature_count: 1,
            action_count: 1,
            fidelity: 1.0,
            nodes: vec![
                TreeNode::Split { feature: 0, threshold: 0.5, left: 1, right: 4 },
                TreeNode::Split { feature: 0, threshold: 1.5, left: 2, right: 3 },
                TreeNode::Leaf { action: 0, states: vec![] },
                TreeNode::Leaf { action: 0, states: vec![] },
                TreeNode::Leaf { action: 0, states: vec![] },
            ],
        };
        let path = TreePath {
            steps: vec![
                PathStep { node: 0, direction: Direction::Left },
                PathStep { node: 1, direction: Direction::Right },
            ],
            leaf: 3,
        };
        assert!(matches!(
            rule_of_path(&tree, &path, &specs(1)),
            Err(Error::EmptyInterval { feature: 0, .. })
        ));
    }

    #[test]
    fn disconnected_path_is_rejected() {
        let states = vec![state(0, &[0.0]), state(1, &[1.0])];
        let tree = fit_tree(&states, &[0, 1], 2).unwrap();
        let bogus = TreePath {
            steps: vec![PathStep { node: 0, direction: Direction::Left }],
            leaf: 2,
        };
        assert!(matches!(rule_of_path(&tree, &bogus, &specs(1)), Err(Error::Contract(_))));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(Rule::parse("maybe a0", &specs(1), &actions(1)).is_err());
        assert!(Rule::parse("if f9 < 1 then a0", &specs(1), &actions(1)).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = (Vec<StateRecord>, Vec<usize>)> {
        prop::collection::btree_set((0i32..6, 0i32..6, 0i32..4), 1..40).prop_flat_map(|pts| {
            let n = pts.len();
            let states: Vec<StateRecord> = pts
                .into_iter()
                .enumerate()
                .map(|(i, (a, b, c))| state(i, &[a as f64, b as f64 * 0.5, c as f64]))
                .collect();
            (Just(states), prop::collection::vec(0usize..3, n))
        })
    }

    proptest! {
        #[test]
        fn membership_partition_and_fidelity((states, pi) in arb_dataset()) {
            let tree = fit_tree(&states, &pi, 3).unwrap();
            tree.validate().unwrap();
            prop_assert_eq!(tree.fidelity, 1.0);
            let feats = specs(3);
            let mut owner = vec![usize::MAX; states.len()];
            for (leaf, action, routed) in tree.leaves() {
                let rule = rule_of_path(&tree, &tree.path_to(leaf).unwrap(), &feats).unwrap();
                prop_assert_eq!(rule.action, action);
                let cov = rule_coverage(&rule, &states);
                prop_assert_eq!(&cov, &routed.to_vec());
                for s in cov {
                    prop_assert_eq!(owner[s], usize::MAX);
                    owner[s] = leaf;
                }
            }
            prop_assert!(owner.iter().all(|&o| o != usize::MAX));
            for s in &states {
                let rule = rule_of_path(&tree, &tree.path_of(&s.features).unwrap(), &feats).unwrap();
                prop_assert!(rule_coverage(&rule, &states).contains(&s.id));
                let text = rule.render(&feats, &actions(3));
                prop_assert_eq!(Rule::parse(&text, &feats, &actions(3)).unwrap(), rule);
            }
            let back = SurrogateTree::from_json_str(&tree.to_json_string()).unwrap();
            prop_assert_eq!(back, tree);
        }

        #[test]
        fn crossing_a_threshold_changes_the_path_there((states, pi) in arb_dataset(), pick in 0usize..40) {
            let tree = fit_tree(&states, &pi, 3).unwrap();
            let s = &states[pick % states.len()];
            let path = tree.path_of(&s.features).unwrap();
            for (k, step) in path.steps.iter().enumerate() {
                let TreeNode::Split { feature, threshold, .. } = tree.nodes[step.node] else { unreachable!() };
                let mut x = s.features.as_slice().to_vec();
                x[feature] = match step.direction {
                    Direction::Left => threshold,
                    Direction::Right => threshold - 1e-6,
                };
                let moved = tree.path_of(&FeatureVector::new(x).unwrap()).unwrap();
                // Identical up to node k, opposite direction at node k.
                prop_assert_eq!(&moved.steps[..k], &path.steps[..k]);
                prop_assert_eq!(moved.steps[k].node, step.node);
                prop_assert_ne!(moved.steps[k].direction, step.direction);
            }
        }
    }
}
