//! Training runs and the on-disk artifact set they produce.
//!
//! Each run writes `<dir>/<name>/` containing `domain.json`, `policy.json`,
//! `tree.json` and `manifest.json`. The first three are pure functions of
//! the domain, solver, seed and hyperparameters; the manifest additionally
//! records wall time and the checksums of the other three.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::DomainModel;
use crate::solvers::{
    dqn_learn, linear_q_learn, model_based, DqnConfig, EpsilonSchedule, FeatureMap, InputEncoding,
    LinearQConfig, TrainedPolicy,
};
use crate::tree::{fit_tree, SurrogateTree};

/// Minimum surrogate fidelity a run must reach to be accepted.
pub const MIN_FIDELITY: f64 = 0.99;

pub const DOMAIN_FILE: &str = "domain.json";
pub const POLICY_FILE: &str = "policy.json";
pub const TREE_FILE: &str = "tree.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    ModelBased,
    LinearQ,
    Dqn,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::ModelBased => "model-based",
            SolverKind::LinearQ => "linear-q",
            SolverKind::Dqn => "dqn",
        }
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model-based" => Ok(SolverKind::ModelBased),
            "linear-q" => Ok(SolverKind::LinearQ),
            "dqn" => Ok(SolverKind::Dqn),
            other => Err(Error::Contract(format!(
                "unknown solver {other:?}; expected model-based, linear-q or dqn"
            ))),
        }
    }
}

/// Hyperparameter overrides given as `key=value` strings.
pub type Overrides = BTreeMap<String, String>;

pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Contract(format!("override {text:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Contract(format!("invalid value {value:?} for {key}")))
}

pub const MODEL_BASED_DEFAULT_K: usize = 50;
pub const MODEL_BASED_DEFAULT_TOL: f64 = 1e-6;

pub fn linear_config(overrides: &Overrides) -> Result<LinearQConfig> {
    let mut cfg = LinearQConfig::default();
    let mut eps = cfg.epsilon;
    for (k, v) in overrides {
        match k.as_str() {
            "alpha" => cfg.alpha = parse_value(k, v)?,
            "gamma" => cfg.gamma = Some(parse_value(k, v)?),
            "episodes" => cfg.episodes = parse_value(k, v)?,
            "max_steps" => cfg.max_steps = parse_value(k, v)?,
            "epsilon_start" => eps.start = parse_value(k, v)?,
            "epsilon_end" => eps.end = parse_value(k, v)?,
            "epsilon_decay_episodes" => eps.decay_episodes = parse_value(k, v)?,
            "tie_tolerance" => cfg.tie_tolerance = parse_value(k, v)?,
            "features" => {
                cfg.features = match v.as_str() {
                    "raw" => FeatureMap::Raw,
                    "one-hot" => FeatureMap::OneHot,
                    _ => return Err(Error::Contract(format!("features must be raw or one-hot, got {v:?}"))),
                }
            }
            _ => return Err(Error::Contract(format!("unknown linear-q hyperparameter {k:?}"))),
        }
    }
    cfg.epsilon = EpsilonSchedule::linear(eps.start, eps.end, eps.decay_episodes);
    Ok(cfg)
}

pub fn dqn_config(overrides: &Overrides) -> Result<DqnConfig> {
    let mut cfg = DqnConfig::default();
    let mut eps = cfg.epsilon;
    for (k, v) in overrides {
        match k.as_str() {
            "hidden" => {
                cfg.hidden = v
                    .split(',')
                    .filter(|p| !p.is_empty())
                    .map(|p| parse_value(k, p.trim()))
                    .collect::<Result<_>>()?
            }
            "buffer_capacity" => cfg.buffer_capacity = parse_value(k, v)?,
            "batch_size" => cfg.batch_size = parse_value(k, v)?,
            "target_sync" => cfg.target_sync = parse_value(k, v)?,
            "alpha" => cfg.alpha = parse_value(k, v)?,
            "gamma" => cfg.gamma = Some(parse_value(k, v)?),
            "episodes" => cfg.episodes = parse_value(k, v)?,
            "max_steps" => cfg.max_steps = parse_value(k, v)?,
            "epsilon_start" => eps.start = parse_value(k, v)?,
            "epsilon_end" => eps.end = parse_value(k, v)?,
            "epsilon_decay_episodes" => eps.decay_episodes = parse_value(k, v)?,
            "tie_tolerance" => cfg.tie_tolerance = parse_value(k, v)?,
            "encoding" => {
                cfg.encoding = match v.as_str() {
                    "features" => InputEncoding::Features,
                    "one-hot" => InputEncoding::OneHot,
                    _ => return Err(Error::Contract(format!("encoding must be features or one-hot, got {v:?}"))),
                }
            }
            _ => return Err(Error::Contract(format!("unknown dqn hyperparameter {k:?}"))),
        }
    }
    cfg.epsilon = EpsilonSchedule::linear(eps.start, eps.end, eps.decay_episodes);
    Ok(cfg)
}

/// Seed used when a run does not name one.
pub const DEFAULT_SEED: u64 = 7;

/// Budgets under which the learned solvers match policy iteration on the
/// built-in Taxi and chain domains. Explicit overrides take precedence.
pub fn documented_budget(domain: &str, solver: SolverKind) -> Overrides {
    let pairs: &[(&str, &str)] = match (domain, solver) {
        ("taxi", SolverKind::LinearQ) => &[
            ("features", "one-hot"),
            ("alpha", "1"),
            ("episodes", "10000"),
            ("max_steps", "200"),
            ("epsilon_end", "0.1"),
            ("epsilon_decay_episodes", "5000"),
            ("tie_tolerance", "0.001"),
        ],
        ("taxi", SolverKind::Dqn) => &[
            ("hidden", "64"),
            ("encoding", "one-hot"),
            ("alpha", "0.01"),
            ("episodes", "10000"),
            ("max_steps", "200"),
            ("epsilon_end", "0.1"),
            ("epsilon_decay_episodes", "5000"),
            ("buffer_capacity", "50000"),
            ("target_sync", "500"),
            ("tie_tolerance", "0.3"),
        ],
        ("chain", SolverKind::LinearQ) => &[
            ("features", "one-hot"),
            ("alpha", "0.5"),
            ("episodes", "200"),
            ("tie_tolerance", "0.001"),
        ],
        ("chain", SolverKind::Dqn) => &[
            ("hidden", "16"),
            ("encoding", "one-hot"),
            ("alpha", "0.01"),
            ("episodes", "300"),
            ("batch_size", "8"),
            ("buffer_capacity", "1000"),
            ("target_sync", "50"),
            ("epsilon_decay_episodes", "150"),
            ("tie_tolerance", "0.3"),
        ],
        _ => &[],
    };
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Trains a policy with the chosen solver. All randomness comes from `seed`.
/// `overrides` are applied on top of [`documented_budget`].
pub fn train_policy(domain: &DomainModel, solver: SolverKind, seed: u64, overrides: &Overrides) -> Result<TrainedPolicy> {
    let mut merged = documented_budget(domain.name(), solver);
    merged.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
    let overrides = &merged;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match solver {
        SolverKind::ModelBased => {
            let mut k = MODEL_BASED_DEFAULT_K;
            let mut tol = MODEL_BASED_DEFAULT_TOL;
            for (key, v) in overrides {
                match key.as_str() {
                    "k" => k = parse_value(key, v)?,
                    "tol" => tol = parse_value(key, v)?,
                    _ => return Err(Error::Contract(format!("unknown model-based hyperparameter {key:?}"))),
                }
            }
            model_based(domain, k, tol, Some(seed), &mut rng)
        }
        SolverKind::LinearQ => linear_q_learn(domain, &linear_config(overrides)?, Some(seed), &mut rng),
        SolverKind::Dqn => dqn_learn(domain, &dqn_config(overrides)?, Some(seed), &mut rng),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checksums {
    pub domain: String,
    pub policy: String,
    pub tree: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub domain: String,
    pub solver: String,
    pub seed: u64,
    pub hyperparameters: BTreeMap<String, serde_json::Value>,
    pub fidelity: f64,
    pub tree_nodes: usize,
    pub tree_depth: usize,
    pub wall_time_ms: u128,
    pub checksums: Checksums,
}

/// A finished run held in memory, with its serialized artifacts.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub domain: DomainModel,
    pub policy: TrainedPolicy,
    pub tree: SurrogateTree,
    pub manifest: RunManifest,
    pub domain_json: String,
    pub policy_json: String,
    pub tree_json: String,
}

impl TrainedRun {
    pub fn meets_fidelity(&self) -> bool {
        self.tree.fidelity >= MIN_FIDELITY
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Trains, fits the surrogate tree and serializes everything.
pub fn run_training(
    name: &str,
    domain: DomainModel,
    solver: SolverKind,
    seed: u64,
    overrides: &Overrides,
) -> Result<TrainedRun> {
    let started = Instant::now();
    let policy = train_policy(&domain, solver, seed, overrides)?;
    let tree = fit_tree(domain.states(), &policy.pi, domain.actions().len())?;
    let wall_time_ms = started.elapsed().as_millis();

    let domain_json = domain.to_json_string();
    let policy_json = policy.to_json_string();
    let tree_json = tree.to_json_string();
    let manifest = RunManifest {
        name: name.to_string(),
        domain: domain.name().to_string(),
        solver: solver.as_str().to_string(),
        seed,
        hyperparameters: policy.provenance.hyperparameters.clone(),
        fidelity: tree.fidelity,
        tree_nodes: tree.nodes.len(),
        tree_depth: tree.depth(),
        wall_time_ms,
        checksums: Checksums {
            domain: sha256_hex(domain_json.as_bytes()),
            policy: sha256_hex(policy_json.as_bytes()),
            tree: sha256_hex(tree_json.as_bytes()),
        },
    };
    Ok(TrainedRun {
        domain,
        policy,
        tree,
        manifest,
        domain_json,
        policy_json,
        tree_json,
    })
}

pub fn write_run(dir: impl AsRef<Path>, run: &TrainedRun) -> Result<PathBuf> {
    let out = dir.as_ref().join(&run.manifest.name);
    fs::create_dir_all(&out)?;
    fs::write(out.join(DOMAIN_FILE), &run.domain_json)?;
    fs::write(out.join(POLICY_FILE), &run.policy_json)?;
    fs::write(out.join(TREE_FILE), &run.tree_json)?;
    let mut manifest = serde_json::to_string_pretty(&run.manifest).expect("manifest serializes");
    manifest.push('\n');
    fs::write(out.join(MANIFEST_FILE), manifest)?;
    Ok(out)
}

/// Artifacts read back from disk and checked against the manifest.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub domain: DomainModel,
    pub policy: TrainedPolicy,
    pub tree: SurrogateTree,
}

pub fn load_run(dir: impl AsRef<Path>) -> Result<LoadedRun> {
    let dir = dir.as_ref();
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?).map_err(Error::schema)?;
    let read_checked = |file: &str, expected: &str| -> Result<String> {
        let text = fs::read_to_string(dir.join(file))?;
        if sha256_hex(text.as_bytes()) != expected {
            return Err(Error::Checksum(dir.join(file).display().to_string()));
        }
        Ok(text)
    };
    let domain = DomainModel::from_json_str(&read_checked(DOMAIN_FILE, &manifest.checksums.domain)?)?;
    let policy = TrainedPolicy::from_json_str(&read_checked(POLICY_FILE, &manifest.checksums.policy)?)?;
    let tree = SurrogateTree::from_json_str(&read_checked(TREE_FILE, &manifest.checksums.tree)?)?;
    if policy.domain != domain.name() {
        return Err(Error::Validation(format!(
            "policy was trained on {:?} but the artifact domain is {:?}",
            policy.domain,
            domain.name()
        )));
    }
    if policy.num_states() != domain.states().len() || tree.feature_count != domain.features().len() {
        return Err(Error::Validation("artifact shapes do not match the domain".into()));
    }
    Ok(LoadedRun {
        manifest,
        domain,
        policy,
        tree,
    })
}
