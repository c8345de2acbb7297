//! Command-line surface: argument parsing, overrides, thread-pool setup,
//! and exit codes.
//!
//! One binary, four subcommands, run in order: `generate` writes the
//! corpus, `induce` builds every induction artifact from it, `evaluate`
//! scores question agreement, and `analyze` computes distances, analogies,
//! and annotation metrics. All commands share one output directory and one
//! effective config: the TOML file (or built-in defaults) with `--seed`,
//! `--noise-sigma`, and `--questions` applied on top. Exit codes: 0 ok,
//! 2 config error, 3 missing artifact, 4 bad reference, 1 anything else.

use crate::config::RunConfig;
use crate::pipeline::{self, AnalyzeCmd, PipelineError};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

pub const THREADS_ENV: &str = "CONCEPT_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "concept-forge", version, about = "Concept induction over simulated grounded corpora")]
pub struct Cli {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override the attention noise level.
    #[arg(long, global = true, value_name = "F")]
    noise_sigma: Option<f64>,
    /// Override the evaluation question count.
    #[arg(long, global = true, value_name = "N")]
    questions: Option<usize>,
    /// Also render correlation heatmaps as SVG during induce.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the scene and mention corpus.
    Generate,
    /// Fit boundaries, build codes, and induce the concept hierarchy.
    Induce,
    /// Measure executor agreement over generated questions.
    Evaluate,
    /// Concept-space geometry and annotation metrics.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
}

#[derive(Debug, Subcommand)]
enum Analyze {
    /// Pairwise semantic distances within every scene.
    Distance,
    /// Retrieval for one or more "k0 - k_sub + k_add" object-id triples.
    Analogy {
        #[arg(required = true, value_name = "TRIPLE")]
        triples: Vec<String>,
    },
    /// Classification accuracy and ranking distance over annotations.
    Metrics {
        /// Annotation file; ontology-derived synthetic records when omitted.
        #[arg(long, value_name = "PATH")]
        annotations: Option<PathBuf>,
    },
}

fn init_threads() -> Result<(), PipelineError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads = value
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            PipelineError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

fn effective_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| PipelineError::Config(e.to_string()))?,
        None => RunConfig::builtin_default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(sigma) = cli.noise_sigma {
        cfg.noise.sigma = sigma;
    }
    if let Some(questions) = cli.questions {
        cfg.questions = questions;
    }
    cfg.validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    init_threads()?;
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Generate => pipeline::cmd_generate(&cfg, &cli.out),
        Command::Induce => pipeline::cmd_induce(&cfg, &cli.out, cli.svg),
        Command::Evaluate => pipeline::cmd_evaluate(&cfg, &cli.out),
        Command::Analyze { what } => {
            let sub = match what {
                Analyze::Distance => AnalyzeCmd::Distance,
                Analyze::Analogy { triples } => AnalyzeCmd::Analogy {
                    triples: triples.clone(),
                },
                Analyze::Metrics { annotations } => AnalyzeCmd::Metrics {
                    annotations: annotations.clone(),
                },
            };
            pipeline::cmd_analyze(&cfg, &cli.out, &sub)
        }
    }
}

/// Parses the process arguments, runs the command, and returns the exit
/// code. Errors print to stderr.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_grammar_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse_into_overrides() {
        let cli = Cli::try_parse_from([
            "concept-forge",
            "--seed",
            "7",
            "--noise-sigma",
            "0.5",
            "--questions",
            "100",
            "--out",
            "artifacts",
            "generate",
        ])
        .unwrap();
        let cfg = effective_config(&cli).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.noise.sigma, 0.5);
        assert_eq!(cfg.questions, 100);
        assert_eq!(cli.out, PathBuf::from("artifacts"));
    }

    #[test]
    fn invalid_overrides_are_config_errors() {
        let cli = Cli::try_parse_from(["concept-forge", "--noise-sigma=-1", "generate"]).unwrap();
        let err = effective_config(&cli).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn analogy_requires_a_triple() {
        assert!(Cli::try_parse_from(["concept-forge", "analyze", "analogy"]).is_err());
        let cli =
            Cli::try_parse_from(["concept-forge", "analyze", "analogy", "0 - 1 + 2"]).unwrap();
        match cli.command {
            Command::Analyze {
                what: Analyze::Analogy { triples },
            } => assert_eq!(triples, ["0 - 1 + 2"]),
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn subcommands_accept_global_flags_after_the_verb() {
        let cli = Cli::try_parse_from([
            "concept-forge",
            "analyze",
            "metrics",
            "--annotations",
            "notes.txt",
            "--out",
            "dir",
        ])
        .unwrap();
        match cli.command {
            Command::Analyze {
                what: Analyze::Metrics { annotations },
            } => assert_eq!(annotations, Some(PathBuf::from("notes.txt"))),
            other => panic!("parsed {other:?}"),
        }
        assert_eq!(cli.out, PathBuf::from("dir"));
    }
}
