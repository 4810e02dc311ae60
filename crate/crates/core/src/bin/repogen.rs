use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use repogen::commands::{self, CommandError};
use repogen::config::{ConfigError, RunConfig};
use repogen::gateway::{Mode, StageTag};
use repogen::pipeline::ConditionName;
use repogen::retrieval::SourceMode;

const ENV_HELP: &str = "\
Environment variables:
  REPOGEN_LLM_API_KEY      API key for the chat-completions provider (live and record modes)
  REPOGEN_LLM_BASE_URL     chat-completions base URL [default: https://api.openai.com/v1]
  REPOGEN_EMBED_API_KEY    API key for the http embedding provider
  REPOGEN_EMBED_BASE_URL   embeddings base URL [default: https://api.openai.com/v1]
  RUST_LOG                 log filter, e.g. repogen=debug

Exit codes: 0 success, 1 fatal error, 2 configuration error.";

#[derive(Parser)]
#[command(name = "repogen", version, about = "Repository-level code generation with API retrieval", after_help = ENV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML config file; flags below override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Replay cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Repository root.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Benchmark task directory.
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// `text_description` (default) or `raw_code`.
    #[arg(long)]
    source_mode: Option<SourceMode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Tables,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the repository, describe and embed its APIs, index code windows.
    Index(Overrides),
    /// Generate k samples per task for the chosen conditions.
    Generate {
        #[command(flatten)]
        overrides: Overrides,
        /// Condition name, comma list, `all8` or `all`.
        #[arg(long)]
        condition: Option<String>,
        /// Task id; repeatable. All tasks when omitted.
        #[arg(long = "task")]
        tasks: Vec<String>,
        #[arg(short = 'k', long)]
        k: Option<u32>,
    },
    /// Execute generated candidates and write the reports.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum, default_value = "tables")]
        report: ReportFormat,
    },
    /// Compare Pass@k across evaluated run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Inspect or export a replay cache.
    #[command(subcommand)]
    Cache(CacheCommand),
}

#[derive(Subcommand)]
enum CacheCommand {
    Inspect {
        path: PathBuf,
    },
    Export {
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_stage)]
        stage: Option<StageTag>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_stage(s: &str) -> Result<StageTag, String> {
    StageTag::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown stage `{s}`"))
}

fn load_config(o: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = o.mode {
        cfg.mode = m;
    }
    if let Some(c) = &o.cache {
        cfg.paths.cache = Some(c.clone());
    }
    if let Some(r) = &o.run_dir {
        cfg.paths.run_dir = r.clone();
    }
    if let Some(c) = &o.corpus {
        cfg.paths.corpus_root = c.clone();
    }
    if let Some(b) = &o.bench {
        cfg.paths.benchmark_dir = b.clone();
    }
    if let Some(m) = &o.model {
        cfg.llm.model = m.clone();
    }
    if let Some(t) = o.temperature {
        cfg.llm.temperature = t;
    }
    if let Some(s) = o.source_mode {
        cfg.generation.source_mode = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Index(o) => {
            let out = commands::cmd_index(&load_config(&o)?)?;
            if out.up_to_date {
                println!("index up to date ({} units, {} windows)", out.units, out.windows);
            } else {
                println!(
                    "indexed {} files: {} units, {} descriptions ({} degraded), {} windows; rebuilt {}",
                    out.files,
                    out.units,
                    out.descriptions,
                    out.degraded_descriptions,
                    out.windows,
                    out.rebuilt.join(", ")
                );
            }
            println!("llm calls: {}, cache hits: {}", out.counters.provider_calls, out.counters.cache_hits);
        }
        Command::Generate { overrides, condition, tasks, k } => {
            let mut cfg = load_config(&overrides)?;
            if let Some(spec) = condition {
                cfg.conditions = ConditionName::parse_list(&spec).map_err(CommandError::Usage)?;
            }
            if let Some(k) = k {
                cfg.generation.k_samples = k;
            }
            let out = commands::cmd_generate(&cfg, &tasks)?;
            println!(
                "{} task(s): wrote {} record(s), {} already present; llm calls: {}, cache hits: {}",
                out.tasks, out.written, out.existing, out.counters.provider_calls, out.counters.cache_hits
            );
        }
        Command::Eval { overrides, report } => {
            let out = commands::cmd_eval(&load_config(&overrides)?)?;
            eprintln!("{} record(s): {} executed, {} reused", out.records, out.executed, out.reused);
            match report {
                ReportFormat::Tables => print!("{}", out.report.render()),
                ReportFormat::Json => {
                    println!("{}", serde_json::to_string_pretty(&out.report).expect("report serializes"))
                }
            }
        }
        Command::Report { run_dirs } => {
            let out = commands::cmd_report(&run_dirs)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", out.table.render());
        }
        Command::Cache(CacheCommand::Inspect { path }) => {
            let s = commands::cmd_cache_inspect(&path)?;
            println!("{}: {} record(s)", s.path.display(), s.records);
            for (stage, n) in &s.by_stage {
                println!("  {stage:<13} {n}");
            }
            println!("tokens: {} prompt, {} completion", s.prompt_tokens, s.completion_tokens);
        }
        Command::Cache(CacheCommand::Export { path, out, stage }) => {
            let n = commands::cmd_cache_export(&path, stage, &out)?;
            println!("exported {n} record(s) to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "repogen=warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
