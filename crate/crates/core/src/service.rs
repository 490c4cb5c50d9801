//! Read-only query layer over loaded artifacts.
//!
//! [`Workspace::handle`] maps a request path (with optional query string) to
//! a status code and JSON body. It is a pure function of the loaded
//! artifacts and the request, so any transport can sit in front of it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts::{load_run, LoadedRun, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::explainer::{
    criticality, project_states, rollout, summarize_policy, value_labels, CriticalityRanking, Explainer,
    Explanation, PolicySummary, Trajectory, ValueLabel,
};
use crate::mdp::{DomainModel, Mdp};
use crate::solvers::TrainedPolicy;
use crate::tree::{Rule, SurrogateTree};

pub const DEFAULT_PER_PAGE: usize = 50;
pub const MAX_PER_PAGE: usize = 1000;
pub const DEFAULT_TRAJECTORY_STEPS: usize = 500;
/// Seed for trajectories on stochastic domains, so responses stay reproducible.
pub const TRAJECTORY_SEED: u64 = 0;
/// Environment variable naming the artifact directory.
pub const ARTIFACTS_ENV: &str = "WHYRL_ARTIFACTS";
pub const SCHEMA_VERSION: u32 = 1;

/// Published response schemas, by file name.
pub const SCHEMAS: [(&str, &str); 10] = [
    ("domain_list.schema.json", include_str!("../schemas/domain_list.schema.json")),
    ("state_page.schema.json", include_str!("../schemas/state_page.schema.json")),
    ("state.schema.json", include_str!("../schemas/state.schema.json")),
    ("policy_summary.schema.json", include_str!("../schemas/policy_summary.schema.json")),
    ("projection.schema.json", include_str!("../schemas/projection.schema.json")),
    ("criticality.schema.json", include_str!("../schemas/criticality.schema.json")),
    ("trajectory.schema.json", include_str!("../schemas/trajectory.schema.json")),
    ("explanation.schema.json", include_str!("../schemas/explanation.schema.json")),
    ("layout.schema.json", include_str!("../schemas/layout.schema.json")),
    ("error.schema.json", include_str!("../schemas/error.schema.json")),
];

pub fn schema(name: &str) -> Option<&'static str> {
    SCHEMAS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": { "code": code, "message": message.into() } }),
        }
    }

    fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::error(404, code, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::error(400, "bad_request", message)
    }

    /// Compact JSON bytes plus a trailing newline.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.body).expect("json values serialize");
        out.push(b'\n');
        out
    }

    /// Name of the schema this response validates against.
    pub fn schema_name(&self, path: &str) -> &'static str {
        if self.status != 200 {
            return "error.schema.json";
        }
        let path = path.split('?').next().unwrap_or("");
        let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
        match parts.as_slice() {
            ["domains"] => "domain_list.schema.json",
            ["domains", _, "states"] => "state_page.schema.json",
            ["domains", _, "states", _] => "state.schema.json",
            ["domains", _, "states", _, "trajectory"] => "trajectory.schema.json",
            ["domains", _, "policy", "summary"] => "policy_summary.schema.json",
            ["domains", _, "policy", "projection"] => "projection.schema.json",
            ["domains", _, "policy", "criticality"] => "criticality.schema.json",
            ["domains", _, "explain", ..] => "explanation.schema.json",
            _ => "layout.schema.json",
        }
    }
}

impl From<Error> for ApiResponse {
    fn from(err: Error) -> Self {
        let message = err.to_string();
        match err {
            Error::InvalidFoil { .. } => ApiResponse::error(422, "invalid_foil", message),
            Error::NoFoilState { .. } => ApiResponse::not_found("no_foil_state", message),
            Error::ExplanationUnavailable { .. } => ApiResponse::error(409, "explanation_unavailable", message),
            Error::Contract(_) | Error::Validation(_) => ApiResponse::bad_request(message),
            _ => ApiResponse::error(500, "internal", message),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionPoint {
    pub state: usize,
    pub x: f64,
    pub y: f64,
    pub action: usize,
}

/// One loaded artifact set with its precomputed overviews.
#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub solver: String,
    pub domain: DomainModel,
    pub policy: TrainedPolicy,
    pub tree: SurrogateTree,
    pub ranking: CriticalityRanking,
    pub labels: Vec<ValueLabel>,
    pub state_criticality: Vec<f64>,
    pub summary: PolicySummary,
    pub projection: Vec<ProjectionPoint>,
}

impl Entry {
    pub fn new(name: &str, solver: &str, domain: DomainModel, policy: TrainedPolicy, tree: SurrogateTree) -> Result<Self> {
        // Checks shapes once up front.
        Explainer::new(&domain, &policy, &tree)?;
        let ranking = criticality(&policy);
        let mut state_criticality = vec![0.0; policy.num_states()];
        for e in &ranking.entries {
            state_criticality[e.state] = e.criticality;
        }
        let labels = value_labels(&policy.v);
        let summary = summarize_policy(&policy, &domain);
        let projection = if domain.num_states() >= 2 {
            project_states(domain.states())?
                .into_iter()
                .enumerate()
                .map(|(s, [x, y])| ProjectionPoint {
                    state: s,
                    x,
                    y,
                    action: policy.pi[s],
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            name: name.to_string(),
            solver: solver.to_string(),
            domain,
            policy,
            tree,
            ranking,
            labels,
            state_criticality,
            summary,
            projection,
        })
    }

    fn explainer(&self) -> Explainer<'_> {
        Explainer::new(&self.domain, &self.policy, &self.tree).expect("shapes checked on load")
    }

    fn rule_text(&self, rule: &Rule) -> String {
        rule.render(self.domain.features(), self.domain.actions())
    }

    fn action_label(&self, a: usize) -> &str {
        &self.domain.actions()[a].label
    }

    /// Plain-text lines describing an explanation.
    pub fn render_explanation(&self, explanation: &Explanation) -> Vec<String> {
        match explanation {
            Explanation::Why {
                state,
                action,
                rule,
                coverage_count,
                subgoal,
                ..
            } => {
                let mut lines = vec![
                    format!("state {state}: {}", self.action_label(*action)),
                    self.rule_text(rule),
                    format!("covers {coverage_count} of {} states", self.domain.num_states()),
                ];
                if let Some(goal) = subgoal {
                    lines.push(format!("subgoal: {goal}"));
                }
                lines
            }
            Explanation::WhyNot {
                state,
                fact_action,
                foil_action,
                foil_state,
                distance,
                fact_rule,
                foil_rule,
                ..
            } => vec![
                format!(
                    "state {state}: {} rather than {}",
                    self.action_label(*fact_action),
                    self.action_label(*foil_action)
                ),
                format!("fact: {}", self.rule_text(fact_rule)),
                format!("foil (state {foil_state}, distance {distance}): {}", self.rule_text(foil_rule)),
            ],
            Explanation::When {
                action,
                never_optimal,
                entries,
            } => {
                if *never_optimal {
                    return vec![format!("{} is never optimal", self.action_label(*action))];
                }
                entries
                    .iter()
                    .map(|e| format!("{} ({} states)", self.rule_text(&e.rule), e.count))
                    .collect()
            }
        }
    }

    fn explanation_body(&self, query: &str, explanation: Explanation) -> Value {
        let text = self.render_explanation(&explanation);
        json!({
            "domain": self.name,
            "query": query,
            "explanation": explanation,
            "text": text,
        })
    }

    pub fn why(&self, state: usize) -> Result<Value> {
        Ok(self.explanation_body("why", self.explainer().why(state)?))
    }

    pub fn why_not(&self, state: usize, foil: usize) -> Result<Value> {
        Ok(self.explanation_body("whynot", self.explainer().why_not(state, foil)?))
    }

    pub fn when(&self, action: usize) -> Result<Value> {
        Ok(self.explanation_body("when", self.explainer().when(action)?))
    }

    fn state_summary(&self, s: usize) -> Value {
        let record = &self.domain.states()[s];
        json!({
            "id": s,
            "features": record.features.as_slice(),
            "terminal": record.terminal,
            "action": self.policy.pi[s],
            "value": self.policy.v[s],
            "value_label": self.labels[s],
            "criticality": self.state_criticality[s],
        })
    }

    pub fn state_detail(&self, s: usize) -> Value {
        let record = &self.domain.states()[s];
        let features: Vec<Value> = self
            .domain
            .features()
            .iter()
            .zip(record.features.as_slice())
            .map(|(f, v)| json!({ "name": f.name, "value": v }))
            .collect();
        let action = self.policy.pi[s];
        json!({
            "domain": self.name,
            "id": s,
            "features": features,
            "terminal": record.terminal,
            "q": self.policy.q[s],
            "action": action,
            "action_label": self.action_label(action),
            "value": self.policy.v[s],
            "value_label": self.labels[s],
            "criticality": self.state_criticality[s],
            "subgoal": self.domain.subgoal(s, action),
        })
    }

    pub fn trajectory(&self, start: usize, max_steps: usize) -> Result<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(TRAJECTORY_SEED);
        rollout(&self.domain, &self.policy, start, max_steps, &mut rng)
    }

    fn projection_body(&self) -> Value {
        json!({ "domain": self.name, "points": self.projection })
    }
}

/// Named artifact sets served together.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    entries: BTreeMap<String, Entry>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every subdirectory of `dir` that holds a run manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let mut ws = Self::new();
        let mut dirs: Vec<_> = fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        dirs.sort();
        for path in dirs {
            ws.insert_run(load_run(&path)?)?;
        }
        Ok(ws)
    }

    pub fn insert_run(&mut self, run: LoadedRun) -> Result<()> {
        let name = run.manifest.name.clone();
        let entry = Entry::new(&name, &run.manifest.solver, run.domain, run.policy, run.tree)?;
        self.insert(entry)
    }

    pub fn insert(&mut self, entry: Entry) -> Result<()> {
        if self.entries.contains_key(&entry.name) {
            return Err(Error::Validation(format!("duplicate artifact name {:?}", entry.name)));
        }
        self.entries.insert(entry.name.clone(), entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Answers one GET request. `target` is the path with an optional query string.
    pub fn handle(&self, target: &str) -> ApiResponse {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        let params = match parse_query(query) {
            Ok(p) => p,
            Err(msg) => return ApiResponse::bad_request(msg),
        };
        let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
        match parts.as_slice() {
            ["domains"] => ApiResponse::ok(self.domain_list()),
            ["domains", d, rest @ ..] => match self.entries.get(*d) {
                None => ApiResponse::not_found("unknown_domain", format!("no artifacts registered as {d:?}")),
                Some(entry) => route(entry, rest, &params).unwrap_or_else(|r| r),
            },
            _ => ApiResponse::not_found("unknown_path", format!("no endpoint at {path:?}")),
        }
    }

    fn domain_list(&self) -> Value {
        let domains: Vec<Value> = self
            .entries
            .values()
            .map(|e| {
                json!({
                    "name": e.name,
                    "domain": e.domain.name(),
                    "solver": e.solver,
                    "states": e.domain.num_states(),
                    "features": e.domain.features(),
                    "actions": e.domain.actions(),
                    "fidelity": e.tree.fidelity,
                    "has_layout": e.domain.layout().is_some(),
                })
            })
            .collect();
        json!({ "schema_version": SCHEMA_VERSION, "domains": domains })
    }
}

type Routed = std::result::Result<ApiResponse, ApiResponse>;

fn route(entry: &Entry, rest: &[&str], params: &BTreeMap<String, String>) -> Routed {
    let state = |text: &str| -> std::result::Result<usize, ApiResponse> {
        text.parse::<usize>()
            .ok()
            .filter(|&s| s < entry.domain.num_states())
            .ok_or_else(|| ApiResponse::not_found("unknown_state", format!("no state {text:?} in {}", entry.name)))
    };
    let action = |text: &str| -> std::result::Result<usize, ApiResponse> {
        text.parse::<usize>()
            .ok()
            .filter(|&a| a < entry.domain.num_actions())
            .ok_or_else(|| ApiResponse::not_found("unknown_action", format!("no action {text:?} in {}", entry.name)))
    };
    let body = match rest {
        ["states"] => {
            let page = param(params, "page", 1)?;
            let per_page = param(params, "per_page", DEFAULT_PER_PAGE)?;
            if page == 0 || per_page == 0 || per_page > MAX_PER_PAGE {
                return Err(ApiResponse::bad_request(format!(
                    "page must be at least 1 and per_page in 1..={MAX_PER_PAGE}"
                )));
            }
            let order = params.get("order").map(String::as_str).unwrap_or("id");
            let ids: Vec<usize> = match order {
                "id" => (0..entry.domain.num_states()).collect(),
                "criticality" => entry.ranking.entries.iter().map(|e| e.state).collect(),
                _ => return Err(ApiResponse::bad_request("order must be id or criticality")),
            };
            let total = ids.len();
            let states: Vec<Value> = ids
                .iter()
                .skip((page - 1).saturating_mul(per_page))
                .take(per_page)
                .map(|&s| entry.state_summary(s))
                .collect();
            json!({
                "domain": entry.name,
                "order": order,
                "page": page,
                "per_page": per_page,
                "total": total,
                "pages": total.div_ceil(per_page),
                "states": states,
            })
        }
        ["states", s] => entry.state_detail(state(s)?),
        ["states", s, "trajectory"] => {
            let start = state(s)?;
            let max_steps = param(params, "max_steps", DEFAULT_TRAJECTORY_STEPS)?;
            let t = entry.trajectory(start, max_steps).map_err(ApiResponse::from)?;
            json!({ "domain": entry.name, "max_steps": max_steps, "trajectory": t })
        }
        ["policy", "summary"] => json!({
            "domain": entry.name,
            "action_counts": entry.summary.action_counts,
            "reward_histogram": entry.summary.reward_histogram,
            "projection": entry.projection_body(),
        }),
        ["policy", "projection"] => entry.projection_body(),
        ["policy", "criticality"] => json!({ "domain": entry.name, "entries": entry.ranking.entries }),
        ["explain", "why", s] => entry.why(state(s)?).map_err(ApiResponse::from)?,
        ["explain", "whynot", s, a] => entry.why_not(state(s)?, action(a)?).map_err(ApiResponse::from)?,
        ["explain", "when", a] => entry.when(action(a)?).map_err(ApiResponse::from)?,
        ["layout"] => match entry.domain.layout() {
            Some(layout) => json!({ "domain": entry.name, "layout": layout }),
            None => {
                return Err(ApiResponse::not_found(
                    "no_layout",
                    format!("{} has no spatial layout", entry.name),
                ))
            }
        },
        _ => {
            return Err(ApiResponse::not_found(
                "unknown_path",
                format!("no endpoint /domains/{}/{}", entry.name, rest.join("/")),
            ))
        }
    };
    Ok(ApiResponse::ok(body))
}

fn param(params: &BTreeMap<String, String>, key: &str, default: usize) -> std::result::Result<usize, ApiResponse> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiResponse::bad_request(format!("{key} must be a non-negative integer, got {v:?}"))),
    }
}

fn parse_query(query: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("query parameter {k:?} given twice"));
        }
    }
    Ok(out)
}
