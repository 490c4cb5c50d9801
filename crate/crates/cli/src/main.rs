use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use whyrl_core::artifacts::{
    load_run, parse_override, run_training, write_run, Overrides, SolverKind, DEFAULT_SEED, MIN_FIDELITY,
};
use whyrl_core::domains::{builtin, BUILTIN_NAMES};
use whyrl_core::mdp::{load_domain, save_domain};
use whyrl_core::service::{Entry, ARTIFACTS_ENV};
use whyrl_core::DomainModel;

mod serve;

#[derive(Parser)]
#[command(name = "whyrl", version, about = "Train policies, fit surrogate trees and explain them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy, fit its surrogate tree and write the artifacts.
    Train {
        /// Built-in domain name or path to a domain JSON file.
        domain: String,
        /// model-based, linear-q or dqn.
        solver: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Hyperparameter override, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, env = ARTIFACTS_ENV, default_value = "artifacts")]
        artifacts: PathBuf,
        /// Artifact name; defaults to the domain name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Answer a why / whynot / when question about a trained artifact.
    Explain {
        /// Artifact name under the artifact directory, or a path to one.
        artifact: String,
        /// `why <state>`, `whynot <state> <action>` or `when <action>`.
        #[arg(num_args = 1..)]
        query: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long, env = ARTIFACTS_ENV, default_value = "artifacts")]
        artifacts: PathBuf,
    },
    /// Serve every artifact in the directory over HTTP.
    Serve {
        #[arg(long, env = ARTIFACTS_ENV, default_value = "artifacts")]
        artifacts: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Write a built-in domain to a JSON file.
    ExportDomain {
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, PartialEq)]
enum Query {
    Why(usize),
    WhyNot(usize, usize),
    When(usize),
}

const QUERY_FORMS: &str = "expected one of: why <state> | whynot <state> <action> | when <action>";

fn parse_action(text: &str, domain: &DomainModel) -> Result<usize, String> {
    if let Ok(id) = text.parse::<usize>() {
        return Ok(id);
    }
    domain
        .action_id(text)
        .ok_or_else(|| format!("unknown action {text:?}"))
}

fn parse_query(args: &[String], domain: &DomainModel) -> Result<Query, String> {
    let state = |t: &str| t.parse::<usize>().map_err(|_| format!("state must be an integer id, got {t:?}"));
    match args.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["why", s] => Ok(Query::Why(state(s)?)),
        ["whynot", s, a] => Ok(Query::WhyNot(state(s)?, parse_action(a, domain)?)),
        ["when", a] => Ok(Query::When(parse_action(a, domain)?)),
        _ => Err(format!("malformed query {:?}; {QUERY_FORMS}", args.join(" "))),
    }
}

fn resolve_domain(spec: &str) -> Result<DomainModel, String> {
    if let Some(d) = builtin(spec) {
        return Ok(d);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return load_domain(path).map_err(|e| format!("{spec}: {e}"));
    }
    Err(format!(
        "unknown domain {spec:?}; expected one of {} or a domain file",
        BUILTIN_NAMES.join(", ")
    ))
}

fn resolve_artifact(artifact: &str, dir: &Path) -> PathBuf {
    let direct = Path::new(artifact);
    if direct.join("manifest.json").is_file() {
        direct.to_path_buf()
    } else {
        dir.join(artifact)
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<whyrl_core::Error> for Failure {
    fn from(e: whyrl_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn train(
    domain: &str,
    solver: &str,
    seed: u64,
    overrides: &[String],
    artifacts: &Path,
    name: Option<String>,
) -> Result<(), Failure> {
    let solver: SolverKind = solver.parse().map_err(|e: whyrl_core::Error| Failure::Usage(e.to_string()))?;
    let domain = resolve_domain(domain).map_err(Failure::Usage)?;
    let mut parsed = Overrides::new();
    for text in overrides {
        let (k, v) = parse_override(text).map_err(|e| Failure::Usage(e.to_string()))?;
        parsed.insert(k, v);
    }
    let name = name.unwrap_or_else(|| domain.name().to_string());
    let run = run_training(&name, domain, solver, seed, &parsed)?;
    if !run.meets_fidelity() {
        return Err(Failure::Runtime(format!(
            "surrogate fidelity {:.4} is below the required {MIN_FIDELITY}; artifacts not written",
            run.tree.fidelity
        )));
    }
    let out = write_run(artifacts, &run)?;
    println!(
        "trained {} on {} (seed {seed}): fidelity {}, {} tree nodes, {} ms -> {}",
        run.manifest.solver,
        run.manifest.domain,
        run.tree.fidelity,
        run.manifest.tree_nodes,
        run.manifest.wall_time_ms,
        out.display()
    );
    Ok(())
}

fn explain(artifact: &str, query: &[String], format: Format, artifacts: &Path) -> Result<(), Failure> {
    let dir = resolve_artifact(artifact, artifacts);
    if !dir.join("manifest.json").is_file() {
        return Err(Failure::Usage(format!("no trained artifact at {}", dir.display())));
    }
    let run = load_run(&dir)?;
    let query = parse_query(query, &run.domain).map_err(Failure::Usage)?;
    let entry = Entry::new(&run.manifest.name, &run.manifest.solver, run.domain, run.policy, run.tree)?;
    let body = match query {
        Query::Why(s) => entry.why(s),
        Query::WhyNot(s, a) => entry.why_not(s, a),
        Query::When(a) => entry.when(a),
    }?;
    match format {
        Format::Json => println!("{}", serde_json::to_string(&body).expect("json values serialize")),
        Format::Text => {
            for line in body["text"].as_array().into_iter().flatten() {
                println!("{}", line.as_str().unwrap_or_default());
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            domain,
            solver,
            seed,
            overrides,
            artifacts,
            name,
        } => train(&domain, &solver, seed, &overrides, &artifacts, name),
        Command::Explain {
            artifact,
            query,
            format,
            artifacts,
        } => explain(&artifact, &query, format, &artifacts),
        Command::Serve { artifacts, bind } => serve::serve(&artifacts, &bind).map_err(Failure::Runtime),
        Command::ExportDomain { name, out } => {
            let domain = builtin(&name).ok_or_else(|| {
                Failure::Usage(format!("unknown domain {name:?}; expected one of {}", BUILTIN_NAMES.join(", ")))
            })?;
            save_domain(&domain, &out)?;
            println!("wrote {} to {}", domain.name(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use whyrl_core::domains::build_stackbot;

    fn args(text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn parses_the_three_query_forms() {
        let d = build_stackbot();
        assert_eq!(parse_query(&args("why 12"), &d), Ok(Query::Why(12)));
        assert_eq!(parse_query(&args("whynot 3 4"), &d), Ok(Query::WhyNot(3, 4)));
        assert_eq!(parse_query(&args("when 5"), &d), Ok(Query::When(5)));
        let labelled = vec!["when".to_string(), "Pickup Box".to_string()];
        assert_eq!(parse_query(&labelled, &d), Ok(Query::When(4)));
    }

    #[test]
    fn malformed_queries_list_the_accepted_forms() {
        let d = build_stackbot();
        for bad in ["why", "why 1 2", "how 3", "whynot 1", "when Fly"] {
            let err = parse_query(&args(bad), &d).unwrap_err();
            assert!(err.contains("why <state>") || err.contains("unknown action"), "{bad}: {err}");
        }
        assert!(parse_query(&args("why -1"), &d).is_err());
    }
}
