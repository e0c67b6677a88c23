use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use structreason::backend::{Backend, RemoteChat, RemoteConfig, Scripted};
use structreason::db::load_database;
use structreason::eval::{
    load_dataset, persist_run, replay, run_eval, BackendChoice, EvalError, RunManifest,
};
use structreason::orchestrator::{OrchestratorConfig, ReasoningTrace};
use structreason::prompt::TemplateRegistry;
use structreason::sql::execute_sql;
use structreason::Task;

#[derive(Parser)]
#[command(
    name = "structreason",
    version,
    about = "Question answering over knowledge graphs, tables and databases"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Remote,
    Scripted,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Answer every question of a dataset and write traces plus a report.
    Run {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long, value_enum)]
        backend: BackendKind,
        /// JSON file overriding built-in prompt templates.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_hops: Option<usize>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Endpoint and model settings for `--backend remote`.
        #[arg(long)]
        backend_config: Option<PathBuf>,
        /// Response script for `--backend scripted`.
        #[arg(long)]
        script: Option<PathBuf>,
        /// JSON file with orchestrator settings; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-run a stored run from its own traces and compare the outputs.
    Replay {
        #[arg(long)]
        trace_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Execute one query against a database file and print TSV.
    SqlExec { db: PathBuf, query: String },
    /// Pretty-print the steps of a stored trace.
    Inspect {
        #[arg(long)]
        trace: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn config_error(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn data_error(message: impl ToString) -> Failure {
    Failure {
        code: 3,
        message: message.to_string(),
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Manifest(_) => config_error(e),
            _ => data_error(e),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            task,
            data,
            artifacts,
            backend,
            templates,
            out,
            max_hops,
            workers,
            backend_config,
            script,
            config,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| config_error(format!("{}: {e}", p.display())))?;
                    serde_json::from_str::<OrchestratorConfig>(&text)
                        .map_err(|e| config_error(format!("{}: {e}", p.display())))?
                }
                None => OrchestratorConfig::default(),
            };
            if let Some(h) = max_hops {
                cfg.max_hops = h;
            }
            if cfg.max_hops == 0 {
                return Err(config_error("max hops must be at least 1"));
            }
            let registry = load_templates(templates.as_deref())?;
            let owned: Option<Box<dyn Backend>> = match backend {
                BackendKind::Oracle => None,
                BackendKind::Scripted => {
                    let path =
                        script.ok_or_else(|| config_error("--backend scripted needs --script"))?;
                    Some(Box::new(Scripted::from_file(&path).map_err(config_error)?))
                }
                BackendKind::Remote => {
                    let path = backend_config
                        .ok_or_else(|| config_error("--backend remote needs --backend-config"))?;
                    let rc = RemoteConfig::from_file(&path).map_err(config_error)?;
                    Some(Box::new(RemoteChat::new(rc).map_err(config_error)?))
                }
            };
            let choice = match &owned {
                Some(b) => BackendChoice::Shared(b.as_ref()),
                None => BackendChoice::Oracle,
            };
            let backend_name = owned
                .as_ref()
                .map_or_else(|| "gold-oracle".to_string(), |b| b.identity());

            let examples = load_dataset(&data)?;
            if let Some(bad) = examples.iter().find(|e| e.task != task) {
                return Err(data_error(format!(
                    "example `{}` is a {} question, not {task}",
                    bad.id, bad.task
                )));
            }
            let dataset_id = data
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("dataset")
                .to_string();
            let run = run_eval(
                &dataset_id,
                &examples,
                &artifacts,
                choice,
                &registry,
                &cfg,
                workers,
            )?;
            let manifest = RunManifest {
                dataset_id,
                data: absolute(&data),
                artifacts: absolute(&artifacts),
                templates: templates.as_deref().map(absolute),
                config: cfg,
                backend: backend_name,
            };
            persist_run(&out, &run, &manifest)?;
            let r = &run.report;
            println!(
                "{} {}: {:.4} over {} scored ({} excluded), {} LLM calls",
                r.task, r.metric, r.aggregate, r.scored, r.excluded, r.total_llm_calls
            );
            for (category, n) in &r.categories {
                println!("  {category}: {n}");
            }
            Ok(())
        }
        Command::Replay { trace_dir, workers } => {
            let result = replay(&trace_dir, workers)?;
            if result.mismatches.is_empty() {
                println!(
                    "replay identical: {} examples, {} {:.4}",
                    result.report.examples.len(),
                    result.report.metric,
                    result.report.aggregate
                );
                Ok(())
            } else {
                Err(Failure {
                    code: 1,
                    message: format!("replay differs in {}", result.mismatches.join(", ")),
                })
            }
        }
        Command::SqlExec { db, query } => {
            let file = File::open(&db).map_err(|e| data_error(format!("{}: {e}", db.display())))?;
            let database =
                load_database(file).map_err(|e| data_error(format!("{}: {e}", db.display())))?;
            let result = execute_sql(&database, &query).map_err(data_error)?;
            for w in &result.warnings {
                log::warn!("{w}");
            }
            print!("{}", result.to_tsv());
            Ok(())
        }
        Command::Inspect { trace } => {
            let text = std::fs::read_to_string(&trace)
                .map_err(|e| data_error(format!("{}: {e}", trace.display())))?;
            let t = ReasoningTrace::from_json(&text)
                .map_err(|e| data_error(format!("{}: {e}", trace.display())))?;
            print!("{}", render_trace(&t));
            Ok(())
        }
    }
}

fn load_templates(path: Option<&Path>) -> Result<TemplateRegistry, Failure> {
    match path {
        Some(p) => TemplateRegistry::from_file(p).map_err(config_error),
        None => Ok(TemplateRegistry::builtin()),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn render_trace(t: &ReasoningTrace) -> String {
    let mut out = format!("{} [{}] {}\n", t.example_id, t.task, t.question);
    for s in &t.steps {
        out.push_str(&format!(
            "\n#{} {} via {}\n",
            s.step_index, s.stage_tag, s.interface_invoked
        ));
        out.push_str(&format!("  input:    {}\n", s.interface_input));
        out.push_str(&format!(
            "  evidence: {}{}\n",
            s.linearized_evidence,
            if s.truncated { " (truncated)" } else { "" }
        ));
        out.push_str(&format!("  response: {}\n", s.raw_response.trim()));
        out.push_str(&format!(
            "  decision: {}{}\n",
            s.parsed_decision,
            if s.fallback { " (fallback)" } else { "" }
        ));
        if let Some(ms) = s.wall_time_ms {
            out.push_str(&format!("  time:     {ms} ms\n"));
        }
    }
    out.push_str(&format!(
        "\noutcome: {}\n",
        serde_json::to_string(&t.outcome).expect("outcome serializes")
    ));
    out
}
