use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use tabprompt_core::metrics::{Metric, MetricsReport};
use tabprompt_core::prompt::{write_prompt_dump, PromptFormat, RenderedPrompt};
use tabprompt_core::runner::{self, RunConfig, RunReport, Session};
use tabprompt_core::splitter::Bucket;
use tabprompt_core::stats::compare_models;

const EXIT_PARTIAL: u8 = 2;
const EXIT_CONFIG: u8 = 3;

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        writeln!(std::io::stdout(), $($arg)*)?
    }};
}

/// Few-shot tabular prompting harness for AD / CN classification.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// More log output (-v info, -vv debug). Prompt and completion text is
    /// never logged.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Args)]
struct Selection {
    /// Restrict to these seeds (default: all configured).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Restrict to these formats, e.g. few_shot_tabular (default: all configured).
    #[arg(long = "format")]
    formats: Vec<PromptFormat>,
}

impl Selection {
    fn resolve(&self, cfg: &RunConfig) -> (Vec<u64>, Vec<PromptFormat>) {
        let seeds = if self.seeds.is_empty() {
            cfg.seeds.clone()
        } else {
            self.seeds.clone()
        };
        let formats = if self.formats.is_empty() {
            cfg.formats.clone()
        } else {
            self.formats.clone()
        };
        (seeds, formats)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build and write the split plan for each seed.
    Split {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Render evaluation prompts to JSONL without calling any backend.
    Prompts {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        select: Selection,
        /// Output directory (default: <run_dir>/prompts).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write fine-tuning JSONL for the training split.
    ExportFinetune {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        select: Selection,
        /// Output directory (default: <run_dir>/finetune).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full (backend x format x seed) matrix and write the report.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Override concurrency_limit.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Few-shot tabular AUROC over k_grid on the validation split.
    AblateK {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Score a backend tuned on one format against prompts of another.
    AblateTransfer {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        backend: String,
        #[arg(long)]
        train_format: PromptFormat,
        #[arg(long)]
        eval_format: PromptFormat,
    },
    /// Metrics per (backend, seed) for existing results files.
    Metrics {
        /// Format the results were produced with, for labelling.
        #[arg(long)]
        format: PromptFormat,
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
    /// Paired comparison of two models from a report.json.
    Stats {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long)]
        format: PromptFormat,
        #[arg(long, default_value = "auroc")]
        metric: Metric,
    },
    /// Rebuild report.{csv,txt,json} from a run directory's stored results.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn load(config: &ConfigArg) -> Result<RunConfig> {
    RunConfig::load(&config.config).with_context(|| format!("loading {}", config.config.display()))
}

fn dump(path: &Path, prompts: &[RenderedPrompt]) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_prompt_dump(prompts, std::io::BufWriter::new(file))?;
    Ok(())
}

fn print_report(report: &RunReport) -> Result<()> {
    use std::io::Write as _;
    std::io::stdout().write_all(report.to_text().as_bytes())?;
    Ok(())
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Split { config } => {
            let session = Session::open(load(&config)?)?;
            for seed in &session.config().seeds {
                let plan = session.plan(*seed)?;
                let counts: Vec<String> = Bucket::ALL
                    .iter()
                    .map(|b| format!("{b}={}", plan.members(*b).len()))
                    .collect();
                out!(
                    "seed {seed}: {}  digest {}",
                    counts.join(" "),
                    &plan.digest()[..12]
                );
            }
        }
        Command::Prompts { config, select, out } => {
            let session = Session::open(load(&config)?)?;
            let cfg = session.config();
            let (seeds, formats) = select.resolve(cfg);
            let out = out.unwrap_or_else(|| cfg.run_dir.join("prompts"));
            std::fs::create_dir_all(&out)?;
            let eval = cfg.eval_split.bucket();
            for format in &formats {
                for seed in &seeds {
                    let k = if format.is_few_shot() { cfg.k } else { 0 };
                    let prompts: Vec<RenderedPrompt> =
                        runner::render_prompts(session.dataset(), session.plan(*seed)?, eval, *format, k, 0)?
                            .into_iter()
                            .map(|(p, _)| p)
                            .collect();
                    let path = out.join(format!("{format}__{}__s{seed}.jsonl", eval.name()));
                    dump(&path, &prompts)?;
                    out!("{}: {} prompts", path.display(), prompts.len());
                }
            }
        }
        Command::ExportFinetune { config, select, out } => {
            let session = Session::open(load(&config)?)?;
            let (seeds, formats) = select.resolve(session.config());
            let out = out.unwrap_or_else(|| session.run_dir().join("finetune"));
            for (path, n) in session.export_finetune(&formats, &seeds, &out)? {
                out!("{}: {n} records", path.display());
            }
        }
        Command::Run { config, threads } => {
            let mut cfg = load(&config)?;
            if let Some(t) = threads {
                cfg.concurrency_limit = t;
            }
            let outcome = Session::open(cfg)?.run_matrix()?;
            print_report(&outcome.report)?;
            eprintln!(
                "{} cells computed, {} reused, {} failed; {} backend calls; {} unparseable",
                outcome.computed.len(),
                outcome.reused.len(),
                outcome.failed.len(),
                outcome.backend_calls,
                outcome.unparseable
            );
            if !outcome.is_complete() {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::AblateK { config } => {
            let series = Session::open(load(&config)?)?.run_k_ablation()?;
            let mut partial = false;
            for s in &series {
                out!("{} ({}, {})", s.backend_id, s.format, s.eval_split.bucket());
                for p in &s.points {
                    let vals: Vec<String> = p.auroc.values().map(|v| format!("{v:.4}")).collect();
                    let mean = p.summary.map(|m| format!("{:.4}", m.mean)).unwrap_or_default();
                    out!("  k={:<3} mean {mean}  [{}]", p.k, vals.join(", "));
                }
                for k in &s.skipped {
                    out!("  k={k:<3} skipped (exceeds ICL pool)");
                }
                partial |= !s.failed.is_empty();
            }
            if partial {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::AblateTransfer {
            config,
            backend,
            train_format,
            eval_format,
        } => {
            let r =
                Session::open(load(&config)?)?.run_transfer_ablation(&backend, train_format, eval_format)?;
            out!(
                "{}: tuned on {train_format}, evaluated on {eval_format}",
                r.backend_id
            );
            for c in &r.cells {
                out!(
                    "  seed {:<4} AUROC {:.4}  accuracy {:.4}  n {}",
                    c.seed,
                    c.auroc,
                    c.accuracy,
                    c.n
                );
            }
            if let (Some(a), Some(acc)) = (r.auroc, r.accuracy) {
                let sd = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
                out!(
                    "  mean AUROC {:.4} (SD {})  mean accuracy {:.4} (SD {})",
                    a.mean,
                    sd(a.sd),
                    acc.mean,
                    sd(acc.sd)
                );
            }
            if !r.failed.is_empty() {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Metrics { format, results } => {
            let cells = runner::metrics_from_results(&results, format)?;
            out!("{}", serde_json::to_string_pretty(&cells)?);
        }
        Command::Stats {
            report,
            a,
            b,
            format,
            metric,
        } => {
            let text =
                std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let parsed: RunReport = serde_json::from_str(&text).context("parsing report")?;
            let metrics: &MetricsReport = &parsed.metrics;
            let c = compare_models(metrics, &a, &b, format, metric)?;
            out!("{}", c.summary_line());
            for n in &c.notes {
                out!("note: {n}");
            }
            out!("{}", serde_json::to_string_pretty(&c)?);
        }
        Command::Report { run_dir } => {
            let report = runner::rebuild_report(&run_dir)?;
            print_report(&report)?;
            if !report.failed_cells.is_empty() {
                return Ok(EXIT_PARTIAL);
            }
        }
    }
    Ok(0)
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        // reader went away (`| head`); nothing left to report
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .chain()
                .find_map(|c| c.downcast_ref::<tabprompt_core::Error>())
                .is_some_and(tabprompt_core::Error::is_config);
            ExitCode::from(if config { EXIT_CONFIG } else { 1 })
        }
    }
}
