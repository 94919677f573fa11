//! fedmesh CLI: run scenarios, drive the preset grid, compare runs.
//!
//! Exit codes: 0 success, 1 simulation error, 2 missing file / unknown
//! preset, 3 schema violation or incompatible logs, 4 config invariant
//! violation, 5 output IO error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fedmesh::compare::compare_dirs;
use fedmesh::config::{parse_config, preset, preset_names, ScenarioConfig, PRESET_ROWS};
use fedmesh::error::Error;
use fedmesh::sim::run_simulation;

const EXIT_SIMULATION: u8 = 1;
const EXIT_MISSING: u8 = 2;
const EXIT_SCHEMA: u8 = 3;
const EXIT_INVARIANT: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "fedmesh", version, about = "Peer-to-peer federated learning simulator")]
struct Cli {
    /// Reject unknown config keys instead of warning about them.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario config and write metrics/summary/manifest.
    Run {
        /// Scenario TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for multi-run invocations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run named presets: `<row>_<s1|s2|s3|s4|adaptive>`, a bare row name
    /// (its adaptive variant), or `all`.
    Preset {
        names: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// List the valid preset names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Compare finished run directories (reads their summary.json).
    Compare {
        dirs: Vec<PathBuf>,
        /// Emit the report as JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
}

/// Spec'd run provenance record written next to the metrics.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    config_hash: String,
    seed: u64,
    started_at: String,
    finished_at: String,
    tool_version: String,
    artifacts: ManifestArtifacts,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestArtifacts {
    metrics_csv: String,
    summary_json: String,
    config_resolved: String,
}

fn config_error_code(err: &Error) -> u8 {
    match err {
        Error::NotFound(_) => EXIT_MISSING,
        Error::Schema { .. } => EXIT_SCHEMA,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_INVARIANT,
    }
}

fn fail(err: &Error, code: u8) -> ExitCode {
    match err {
        Error::Simulation { round, client, source } => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": source.to_string(), "round": round, "client": client })
            );
        }
        other => eprintln!("{}", serde_json::json!({ "error": other.to_string() })),
    }
    ExitCode::from(code)
}

/// Executes one scenario and writes metrics.csv, summary.json,
/// manifest.json and the resolved config into `out_dir`.
fn run_one(config: &ScenarioConfig, out_dir: &Path, preset_name: Option<String>) -> Result<(), (Error, u8)> {
    std::fs::create_dir_all(out_dir).map_err(|e| (Error::Io(e), EXIT_IO))?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let log = run_simulation(config).map_err(|e| (e, EXIT_SIMULATION))?;
    let finished_at = chrono::Utc::now().to_rfc3339();

    let hash = config.hash();
    let summary = log.summary(hash.clone(), config.seed, preset_name);
    let manifest = RunManifest {
        config_hash: hash,
        seed: config.seed,
        started_at,
        finished_at,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        artifacts: ManifestArtifacts {
            metrics_csv: "metrics.csv".into(),
            summary_json: "summary.json".into(),
            config_resolved: "config.resolved.toml".into(),
        },
    };

    let write = |name: &str, contents: String| -> Result<(), (Error, u8)> {
        std::fs::write(out_dir.join(name), contents).map_err(|e| (Error::Io(e), EXIT_IO))
    };
    write("metrics.csv", log.to_csv())?;
    write(
        "summary.json",
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write(
        "manifest.json",
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    write(
        "config.resolved.toml",
        toml::to_string_pretty(config).expect("config serializes"),
    )?;
    Ok(())
}

/// Runs (name, config, dir) jobs on up to `jobs` worker threads.
fn run_parallel(tasks: Vec<(Option<String>, ScenarioConfig, PathBuf)>, jobs: usize) -> Result<(), (Error, u8)> {
    let queue = Mutex::new(tasks.into_iter());
    let failures: Mutex<Vec<(Error, u8)>> = Mutex::new(Vec::new());
    let workers = jobs.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let task = queue.lock().unwrap().next();
                let Some((name, config, dir)) = task else { break };
                if let Err(err) = run_one(&config, &dir, name) {
                    failures.lock().unwrap().push(err);
                    break;
                }
            });
        }
    });
    match failures.into_inner().unwrap().into_iter().next() {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

fn cmd_run(config_path: &Path, out: &Path, seed: Option<u64>, strict: bool) -> ExitCode {
    let parsed = match parse_config(config_path, strict) {
        Ok(p) => p,
        Err(e) => return fail(&e, config_error_code(&e)),
    };
    for warning in &parsed.warnings {
        eprintln!("warning: {warning}");
    }
    let mut config = parsed.config;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    match run_one(&config, out, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, code)) => fail(&e, code),
    }
}

fn cmd_preset(names: &[String], out: &Path, seed: Option<u64>, jobs: usize, list: bool) -> ExitCode {
    if list {
        for name in preset_names() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    if names.is_empty() {
        let err = Error::NotFound(format!(
            "no preset named; valid presets: {}",
            preset_names().join(", ")
        ));
        return fail(&err, EXIT_MISSING);
    }
    let mut expanded: Vec<String> = Vec::new();
    for name in names {
        if name == "all" {
            expanded.extend(preset_names());
        } else if PRESET_ROWS.contains(&name.as_str()) {
            expanded.push(format!("{name}_adaptive"));
        } else {
            expanded.push(name.clone());
        }
    }
    expanded.dedup();

    let mut tasks = Vec::new();
    for name in &expanded {
        let mut config = match preset(name) {
            Ok(c) => c,
            Err(e) => return fail(&e, EXIT_MISSING),
        };
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let dir = if expanded.len() == 1 { out.to_path_buf() } else { out.join(name) };
        tasks.push((Some(name.clone()), config, dir));
    }
    match run_parallel(tasks, jobs) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, code)) => fail(&e, code),
    }
}

fn cmd_compare(dirs: &[PathBuf], json: bool) -> ExitCode {
    if dirs.is_empty() {
        return fail(&Error::config("compare needs at least one run directory"), EXIT_SCHEMA);
    }
    match compare_dirs(dirs) {
        Ok(report) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.to_text_table());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, EXIT_SCHEMA),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config, out, seed, jobs: _ } => cmd_run(config, out, *seed, cli.strict),
        Command::Preset { names, out, seed, jobs, list } => {
            cmd_preset(names, out, *seed, *jobs, *list)
        }
        Command::Compare { dirs, json } => cmd_compare(dirs, *json),
    }
}
