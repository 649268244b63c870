//! The `memora` binary: ingest sources, query the store, inspect stats,
//! export snapshots, replay the compatibility suites, or serve HTTP.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memora_cli::{exit_code, serve};
use memora_core::retrieval::Action;
use memora_core::store::EntryId;
use memora_core::theory::{
    run_all_suites, run_efficiency_suite, run_explicit_kg_suite, run_kg_suite, run_rag_suite,
    run_strictness_suite, SuiteReport,
};
use memora_core::{
    load_config, Engine, IngestReport, MemoraError, QueryMode, RetrievalResult, SourceSpec,
};

#[derive(Parser)]
#[command(name = "memora", version, about = "Agent memory engine over cue-anchored abstractions")]
struct Cli {
    /// Engine config file (TOML).
    #[arg(long, global = true, default_value = "memora.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest one source file (JSON: name, kind, units) and save the store.
    Ingest {
        /// Path to the source spec.
        #[arg(long)]
        source: PathBuf,
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Retrieve memories for a query.
    Query {
        /// Query text.
        text: String,
        /// Retrieval mode: semantic or policy.
        #[arg(long, default_value = "semantic")]
        mode: String,
        /// Print the full result as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Print store counters.
    Stats {
        #[arg(long)]
        json: bool,
    },
    /// Write a snapshot of the current store.
    Export {
        /// Target path; defaults to the configured store_path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the equivalence and efficiency suites and report each case.
    Theory {
        /// Suite to run: rag, kg, strictness, efficiency, or all.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Seed for the randomized suites.
        #[arg(long, default_value_t = 1848)]
        seed: u64,
        /// Instances per randomized suite.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Print the reports as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1:4727")]
        addr: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, MemoraError> {
    match cli.command {
        Command::Ingest { source, json } => {
            let mut engine = open_engine(&cli.config)?;
            let text = fs::read_to_string(&source)?;
            let spec: SourceSpec = serde_json::from_str(&text)?;
            let report = engine.ingest_source(spec)?;
            if engine.config().store_path.is_some() {
                engine.save_snapshot()?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print_report(&report);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Query { text, mode, json } => {
            let engine = open_engine(&cli.config)?;
            let Some(mode) = QueryMode::parse(&mode) else {
                return Err(MemoraError::Config(format!(
                    "bad_mode: {mode:?} is not one of semantic, policy"
                )));
            };
            let result = engine.query(&text, mode)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                print_result(&engine, &result)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { json } => {
            let engine = open_engine(&cli.config)?;
            let stats = engine.stats();
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!("entries              {}", stats.entry_count);
                println!("cue anchors          {}", stats.anchor_count);
                println!("episodes             {}", stats.episode_count);
                println!("mean cues per entry  {:.2}", stats.mean_cues_per_entry);
                println!("approx tokens stored {}", stats.approx_token_total);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Export { out } => {
            let engine = open_engine(&cli.config)?;
            let written = match out {
                Some(path) => {
                    engine.save_snapshot_to(&path)?;
                    path
                }
                None => engine.save_snapshot()?,
            };
            println!("snapshot written to {}", written.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Theory {
            suite,
            seed,
            instances,
            json,
        } => {
            let reports = match suite.as_str() {
                "rag" => vec![run_rag_suite(instances, seed)?],
                "kg" => vec![
                    run_kg_suite(instances, seed)?,
                    run_explicit_kg_suite(instances, seed)?,
                ],
                "strictness" => vec![run_strictness_suite()?],
                "efficiency" => vec![run_efficiency_suite()?],
                "all" => run_all_suites(seed)?,
                other => {
                    return Err(MemoraError::Config(format!(
                        "unknown suite {other:?}, expected rag, kg, strictness, efficiency, or all"
                    )))
                }
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            } else {
                print_suites(&reports);
            }
            let all_pass = reports.iter().all(SuiteReport::all_pass);
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Serve { addr } => {
            let engine = open_engine(&cli.config)?;
            let addr = addr
                .parse()
                .map_err(|_| MemoraError::Config(format!("cannot parse bind address {addr:?}")))?;
            serve(engine, addr)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Loads the config and builds the engine with paths resolved against
/// the config file's directory.
fn open_engine(config_path: &Path) -> Result<Engine, MemoraError> {
    let config = load_config(config_path)?;
    let base = match config_path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir,
        _ => Path::new("."),
    };
    Engine::with_base_dir(config, base)
}

fn print_report(report: &IngestReport) {
    match report.source_id {
        Some(id) => println!("source {id} ingested"),
        None => println!("source skipped (no units)"),
    }
    println!("  segments   {}", report.segments_made);
    println!("  episodes   {}", report.episodes_made);
    println!("  candidates {}", report.candidates_extracted);
    println!(
        "  entries    {} created, {} updated",
        report.entries_created, report.entries_updated
    );
    println!(
        "  anchors    {} created, {} reused",
        report.anchors_created, report.anchors_reused
    );
    if !report.flags.is_empty() {
        println!("  flags      {}", report.flags.join(", "));
    }
}

fn print_result(engine: &Engine, result: &RetrievalResult) -> Result<(), MemoraError> {
    println!("query: {}", result.query);
    if result.entries.is_empty() {
        println!("no entries retrieved");
    }
    for hit in &result.entries {
        let entry = engine.store().entry(hit.id)?;
        println!(
            "[{}] {}: {} ({:.3})",
            hit.id.0, entry.abstraction, entry.value, hit.score
        );
    }
    for (episode, members) in &result.episodic_groups {
        let ids: Vec<String> = members.iter().map(|e| e.0.to_string()).collect();
        println!("episode {}: entries {}", episode.0, ids.join(", "));
    }
    println!(
        "steps {} | budget spent {} | end {:?}{}",
        result.steps_taken,
        result.budget_spent,
        result.end,
        if result.coerced { " | coerced" } else { "" }
    );
    for step in &result.trace {
        println!(
            "  step {}: {} (cost {}, budget after {}{})",
            step.step,
            describe_action(&step.action),
            step.cost,
            step.budget_after,
            if step.applied { "" } else { ", not applied" }
        );
    }
    Ok(())
}

fn describe_action(action: &Action) -> String {
    match action {
        Action::Refine { query } => format!("refine {query:?}"),
        Action::Expand { selected } => {
            let ids: Vec<String> = selected.iter().map(EntryId::to_string).collect();
            format!("expand [{}]", ids.join(", "))
        }
        Action::Stop => "stop".to_string(),
    }
}

fn print_suites(reports: &[SuiteReport]) {
    let mut failed = 0;
    for report in reports {
        println!(
            "suite {}: {}/{} passed",
            report.suite,
            report.passed(),
            report.cases.len()
        );
        for case in &report.cases {
            let tag = if case.pass { "PASS" } else { "FAIL" };
            println!("  {tag} {} ({})", case.name, case.detail);
            if !case.pass {
                failed += 1;
            }
        }
    }
    if failed > 0 {
        println!("{failed} case(s) failed");
    } else {
        println!("all cases passed");
    }
}
