use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dedup_core::evaluation::{render_table, ReportRow};
use dedup_core::pipeline::{self, RunConfig, PROPOSED_METHOD};
use dedup_core::Error;

/// Record deduplication by blocked epsilon clustering of sentence embeddings.
#[derive(Debug, Parser)]
#[command(name = "dedup", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "dedup.toml")]
    config: PathBuf,

    /// Override any config key, e.g. `--set cluster.epsilon=0.265`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    metric: Option<String>,

    #[arg(long, global = true)]
    epsilon: Option<f64>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed every record's match sentence.
    Embed,
    /// Cluster the embeddings into match groups.
    Cluster,
    /// Run the blocking + Levenshtein baseline.
    Baseline,
    /// Score an assignment against ground truth.
    Eval,
    /// Score the clustering over a grid of epsilons.
    Sweep,
    /// Export a 2D projection with nearest-neighbor distances.
    Viz,
    /// Embed, cluster and evaluate in one go.
    Run,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let quote = |s: &str| format!("{s:?}");
        let mut out = self.overrides.clone();
        if let Some(p) = &self.dataset {
            out.push(format!("dataset.path={}", quote(&p.to_string_lossy())));
        }
        if let Some(p) = &self.output_dir {
            out.push(format!("output_dir={}", quote(&p.to_string_lossy())));
        }
        if let Some(m) = &self.metric {
            out.push(format!("cluster.metric={}", quote(m)));
        }
        if let Some(e) = self.epsilon {
            out.push(format!("cluster.epsilon={e:?}"));
        }
        if let Some(s) = self.seed {
            out.push(format!("seed={s}"));
        }
        if let Some(w) = self.workers {
            out.push(format!("workers={w}"));
        }
        out
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = RunConfig::load(&cli.common.config, &cli.common.overrides())?;
    pipeline::init_workers(cfg.workers);
    match cli.command {
        Command::Embed => {
            let m = pipeline::cmd_embed(&cfg)?;
            println!(
                "embedded {} records with {}",
                m.dataset.records,
                m.provider_tag.unwrap_or_default()
            );
        }
        Command::Cluster => {
            let (_, stats) = pipeline::cmd_cluster(&cfg)?;
            println!(
                "match groups: {}  max group size: {}",
                stats.num_match_groups, stats.max_group_size
            );
        }
        Command::Baseline => {
            let (_, stats) = pipeline::cmd_baseline(&cfg)?;
            println!(
                "match groups: {}  max group size: {}",
                stats.num_match_groups, stats.max_group_size
            );
        }
        Command::Eval => {
            let (_, report) = pipeline::cmd_eval(&cfg)?;
            print!("{}", render_table(&report.rows));
        }
        Command::Sweep => {
            let (_, sweep) = pipeline::cmd_sweep(&cfg)?;
            print!(
                "{}",
                render_table(&ReportRow::from_sweep(PROPOSED_METHOD, &sweep))
            );
        }
        Command::Viz => {
            let m = pipeline::cmd_viz(&cfg)?;
            println!("projected {} records", m.dataset.records);
        }
        Command::Run => {
            let report = pipeline::run_fused(&cfg)?;
            print!("{}", render_table(&report.rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
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
